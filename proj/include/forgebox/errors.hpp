#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace forgebox {

// Root of every error the library raises on purpose. Anything else escaping
// a public call is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Spec documents.
class SyntaxError : public Error {
 public:
  SyntaxError(std::string message, int line)
      : Error(std::move(message)), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string message, int line)
      : Error(std::move(message)), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class DuplicateError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class SelfDependError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

// Planning.
class UnknownDependency : public Error {
 public:
  UnknownDependency(std::string role, std::string dependency)
      : Error("role '" + role + "' depends on unknown role '" + dependency +
              "'"),
        role_(std::move(role)),
        dependency_(std::move(dependency)) {}
  const std::string& role() const { return role_; }
  const std::string& dependency() const { return dependency_; }

 private:
  std::string role_;
  std::string dependency_;
};

class UnknownRole : public Error {
 public:
  explicit UnknownRole(std::string role)
      : Error("unknown role '" + role + "'"), role_(std::move(role)) {}
  const std::string& role() const { return role_; }

 private:
  std::string role_;
};

class CycleError : public Error {
 public:
  explicit CycleError(std::vector<std::string> members);
  const std::vector<std::string>& members() const { return members_; }

 private:
  std::vector<std::string> members_;
};

// Targets and drivers.
class DriverError : public Error {
 public:
  using Error::Error;
};

class DeadTarget : public DriverError {
 public:
  using DriverError::DriverError;
};

class ConfinementError : public DriverError {
 public:
  using DriverError::DriverError;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Content and transfer.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class PackageNotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

class NetworkError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace forgebox
