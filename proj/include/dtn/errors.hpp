#pragma once

#include <stdexcept>
#include <string>

namespace dtn {

/// A factorization step hit a (near-)singular block. `where` names the
/// failing object (box, tree node, matrix block) so build failures can be
/// traced to a location in the hierarchy.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, std::string where)
      : std::runtime_error(what + " [" + where + "]"),
        where_(std::move(where)) {}

  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

}  // namespace dtn
