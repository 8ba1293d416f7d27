#pragma once

#include <string>

#include "bikelab/core.hpp"

namespace bikelab {

/// A majority-vote outcome consumed by preference optimization.
struct PreferencePair {
  std::string pair_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  int vote_margin = 2;  // votes for `chosen` out of 3

  bool operator==(const PreferencePair&) const = default;
};

void to_json(json& j, const PreferencePair& p);
void from_json(const json& j, PreferencePair& p);

}  // namespace bikelab
