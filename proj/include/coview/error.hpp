#pragma once

#include <stdexcept>
#include <string>

namespace coview {

enum class ErrorKind {
  Parameter,   // argument outside its documented domain
  Shape,       // tensor / raster size mismatch
  Config,      // invalid configuration
  Integrity,   // on-disk data failed a consistency check
  Io,          // filesystem failure
  Lookup,      // unknown id
  EmptyData,   // nothing to operate on
  Generation,  // synthetic scene could not be generated as specified
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace coview
