#pragma once

#include <stdexcept>
#include <string>

namespace sali {

enum class ErrorKind {
  Config,       // invalid configuration value
  Lookup,       // unknown id / key
  Transition,   // illegal agent transition
  Validation,   // file or invariant validation failure
  Shape,        // tensor dimension mismatch
  Encoding,     // bad input to an encoder
  Supervision,  // training target outside candidate set
  Fusion,       // score fusion impossible
  Routing,      // no route through real edges
  NoPath,       // disconnected pair in a graph query
  Domain,       // value outside operation domain
  Generation,   // instruction category unsatisfiable
  Numeric,      // non-finite value where finite required
  Training      // divergence during optimization
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace sali
