#pragma once

#include <stdexcept>
#include <string>

namespace lipvox {

// Base of every error the library raises for bad inputs, bad files or
// numerical failure. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptData : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotLoaded : public Error {
 public:
  using Error::Error;
};

}  // namespace lipvox
