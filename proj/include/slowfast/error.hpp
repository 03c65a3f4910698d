#pragma once

#include <stdexcept>
#include <string>

namespace slowfast {

enum class ErrorCode {
  usage,          // malformed input, unknown keys, bad flags
  argument,       // a numerical argument outside its admissible range
  domain,         // a slow state outside its box
  domain_exit,    // an orbit left the region where the system is defined
  precondition,   // an operation's documented precondition does not hold
  capability,     // a required derivative callable is missing
  infeasible,     // certificate budget cannot be met
  contraction,    // a contraction ratio is not below one
  divergence,     // a fixed-point iteration did not converge
  no_decay,       // sampled process norms do not decay
  underdetermined,
  order,          // a dissipative process was asked to run backward
  numeric,        // eigen-solver failure, NaN, step budget exhausted
};

const char* to_string(ErrorCode code);

/// Process exit code for the command-line tool.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace slowfast
