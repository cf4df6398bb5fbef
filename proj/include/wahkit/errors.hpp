#pragma once

#include <stdexcept>
#include <string>

namespace wahkit {

// Failure classes double as CLI exit codes.
enum class ErrorClass : int {
  config = 2,
  numerical = 3,
  barrier = 4,
  expansion_cap = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, std::string tag, const std::string& what)
      : std::runtime_error(tag + ": " + what), cls_(cls), tag_(std::move(tag)) {}

  ErrorClass error_class() const { return cls_; }
  int exit_code() const { return static_cast<int>(cls_); }
  const std::string& tag() const { return tag_; }

 private:
  ErrorClass cls_;
  std::string tag_;
};

inline Error config_error(const std::string& what) { return {ErrorClass::config, "configuration error", what}; }
inline Error usage_error(const std::string& what) { return {ErrorClass::config, "usage error", what}; }
inline Error domain_error(const std::string& what) { return {ErrorClass::config, "domain error", what}; }
inline Error shape_error(const std::string& what) { return {ErrorClass::config, "shape error", what}; }
inline Error catalog_error(const std::string& what) { return {ErrorClass::config, "catalog error", what}; }
inline Error validation_error(const std::string& what) { return {ErrorClass::config, "validation error", what}; }
inline Error numerical_error(const std::string& what) { return {ErrorClass::numerical, "numerical error", what}; }
inline Error barrier_error(const std::string& what) { return {ErrorClass::barrier, "barrier failure", what}; }
inline Error cap_error(const std::string& what) { return {ErrorClass::expansion_cap, "expansion cap", what}; }

}  // namespace wahkit
