#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rigbd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on user-supplied data or configuration does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Reading or writing one of the on-disk formats failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, double loss)
      : Error("training diverged at epoch " + std::to_string(epoch) +
              " (loss = " + std::to_string(loss) + ")"),
        epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace rigbd
