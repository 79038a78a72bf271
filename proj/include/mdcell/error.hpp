#pragma once

#include <stdexcept>
#include <string>

namespace mdcell {

/// Raised when a caller breaks a documented precondition (shape mismatch,
/// out-of-domain argument, gate set inconsistent with the cell kind).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mdcell
