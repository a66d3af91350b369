#pragma once

#include <stdexcept>
#include <string>

namespace dynwin {

// Base of every error the toolkit reports. The CLI maps ConfigError to exit
// status 1 and DataError to exit status 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynwin
