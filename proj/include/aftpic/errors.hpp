#ifndef AFTPIC_ERRORS_HPP_
#define AFTPIC_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace aftpic {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct InvalidInput : Error {
  using Error::Error;
};

// A log-likelihood term hit log(x) with x <= 0; usually theta ~ 0 over the
// data range.
struct LogOfNonPositive : Error {
  std::string subject_id;
  LogOfNonPositive(const std::string& id, const std::string& what)
      : Error("log of non-positive value for subject '" + id + "': " + what),
        subject_id(id) {}
};

struct SingularMatrix : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace aftpic

#endif
