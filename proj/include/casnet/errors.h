// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_ERRORS_H_
#define CASNET_ERRORS_H_

#include <sstream>
#include <stdexcept>
#include <string>

namespace casnet {

// Bad arguments, broken contracts, unsatisfiable configurations.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Anything that went wrong talking to the filesystem or parsing a file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace internal {

template <typename... Args>
std::string StrCat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace internal

#define CASNET_CHECK(cond, ...)                                          \
  do {                                                                   \
    if (!(cond)) {                                                       \
      throw ::casnet::ValidationError(::casnet::internal::StrCat(__VA_ARGS__)); \
    }                                                                    \
  } while (0)

}  // namespace casnet

#endif  // CASNET_ERRORS_H_
