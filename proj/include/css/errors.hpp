#pragma once

#include <stdexcept>
#include <string>

namespace css {

/// Raised when a computation produces NaN or Inf where finite values are required.
class non_finite_error : public std::runtime_error {
 public:
  explicit non_finite_error(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset file carries an unsupported version header.
class dataset_version_error : public std::runtime_error {
 public:
  explicit dataset_version_error(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset payload does not match the digest recorded in the header.
class dataset_digest_error : public std::runtime_error {
 public:
  explicit dataset_digest_error(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset record is structurally malformed (bad JSON, wrong field shapes, ...).
class dataset_format_error : public std::runtime_error {
 public:
  explicit dataset_format_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace css
