#pragma once

#include <stdexcept>
#include <string>

namespace hscmae {

/// Failure category. The CLI maps these onto its exit codes.
enum class ErrorKind {
  usage,    // bad arguments or configuration
  shape,    // operand shapes do not conform
  data,     // malformed or inconsistent input files
  numeric,  // non-finite values, rank deficiency
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace hscmae
