#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fustal {

// Every failure the library reports derives from Error; `kind()` is the
// machine-readable tag the CLI puts in its stderr error object.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept = 0;
};

// Broken precondition: shape mismatch, invalid interval, pairing bug.
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::uint64_t offset, const std::string& what)
      : Error(path + " @ byte " + std::to_string(offset) + ": " + what),
        path_(path),
        offset_(offset) {}
  const char* kind() const noexcept override { return "format"; }
  const std::string& path() const noexcept { return path_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

// Well-formed input carrying unusable values (NaN features, empty labels).
class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const char* kind() const noexcept override { return "config"; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "training"; }
};

class EvalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "eval"; }
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const char* kind() const noexcept override { return "io"; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace fustal
