#pragma once

#include <stdexcept>
#include <string>

namespace nbreplay {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed notebook/bundle documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& message, int line, int column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// Runtime failures while evaluating cell code.
class EvalError : public Error {
 public:
  using Error::Error;
};

class SerializationError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A non-serialisable value could not be rebuilt by re-running its statement.
class ReconstructionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  InputError(const std::string& message, std::string path) : Error(message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class DagError : public Error {
 public:
  using Error::Error;
};

class TaskFailure : public Error {
 public:
  TaskFailure(std::string task_id, const std::string& message, std::string stderr_text = {}, int exit_status = -1)
      : Error("task " + task_id + " failed: " + message),
        task_id_(std::move(task_id)),
        stderr_(std::move(stderr_text)),
        exit_status_(exit_status) {}

  const std::string& task_id() const { return task_id_; }
  const std::string& stderr_text() const { return stderr_; }
  int exit_status() const { return exit_status_; }

 private:
  std::string task_id_;
  std::string stderr_;
  int exit_status_;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class RepeatError : public Error {
 public:
  using Error::Error;
};

class LockError : public Error {
 public:
  using Error::Error;
};

}  // namespace nbreplay
