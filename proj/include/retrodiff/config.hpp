#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "retrodiff/error.hpp"
#include "retrodiff/noise_model.hpp"

namespace retrodiff {

enum class StageOrder { GroupThenBond, BondThenGroup, Joint };

inline std::string to_string(StageOrder o) {
  switch (o) {
    case StageOrder::GroupThenBond: return "GROUP_THEN_BOND";
    case StageOrder::BondThenGroup: return "BOND_THEN_GROUP";
    case StageOrder::Joint: return "JOINT";
  }
  return "?";
}

inline StageOrder parse_stage_order(std::string_view s) {
  if (s == "GROUP_THEN_BOND") return StageOrder::GroupThenBond;
  if (s == "BOND_THEN_GROUP") return StageOrder::BondThenGroup;
  if (s == "JOINT") return StageOrder::Joint;
  throw ConfigError("unknown stage_order '" + std::string(s) + "'");
}

struct StageConfig {
  std::size_t T1 = 500;
  std::size_t T2 = 50;
  double mu = 0.2;
  std::size_t n_g = 1;
  Prior prior = Prior::Absorbing;
  StageOrder order = StageOrder::GroupThenBond;

  void validate() const {
    if (T1 < 1) throw ConfigError("T1 must be at least 1");
    if (T2 < 1) throw ConfigError("T2 must be at least 1");
    if (n_g < 1) throw ConfigError("n_g must be at least 1");
    if (!(mu >= 0.0)) throw ConfigError("mu must be nonnegative");
  }

  bool operator==(const StageConfig&) const = default;
};

}  // namespace retrodiff
