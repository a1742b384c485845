#pragma once

#include <stdexcept>
#include <string>

namespace semsat {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Channel gain is exactly zero, coherent detection impossible; the frame is erased.
class DeepFadeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class FileErrorCode { BadMagic = 1, DimensionOverflow = 2, Truncated = 3, BadVersion = 4 };

class FileFormatError : public Error {
 public:
  FileFormatError(FileErrorCode code, const std::string& what) : Error(what), code_(code) {}
  FileErrorCode code() const noexcept { return code_; }

 private:
  FileErrorCode code_;
};

class BadMagicError : public FileFormatError {
 public:
  explicit BadMagicError(const std::string& what) : FileFormatError(FileErrorCode::BadMagic, what) {}
};

class DimensionOverflowError : public FileFormatError {
 public:
  explicit DimensionOverflowError(const std::string& what)
      : FileFormatError(FileErrorCode::DimensionOverflow, what) {}
};

class TruncatedFileError : public FileFormatError {
 public:
  explicit TruncatedFileError(const std::string& what)
      : FileFormatError(FileErrorCode::Truncated, what) {}
};

// Meta-learning loss blew past the configured multiple of its starting value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace semsat
