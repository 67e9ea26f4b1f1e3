#include "odenet/integrate.hpp"

#include <cmath>

namespace odenet {

std::string_view to_string(SchemeId id) {
  switch (id) {
    case SchemeId::Euler:
      return "euler";
    case SchemeId::Midpoint:
      return "midpoint";
    case SchemeId::RK4:
      return "rk4";
  }
  return "unknown";
}

std::optional<SchemeId> parse_scheme(std::string_view name) {
  if (name == "euler") return SchemeId::Euler;
  if (name == "midpoint") return SchemeId::Midpoint;
  if (name == "rk4") return SchemeId::RK4;
  return std::nullopt;
}

void ButcherTableau::validate() const {
  if (stages == 0 || a.size() != stages * stages || b.size() != stages || c.size() != stages) {
    throw ConfigError("Butcher tableau has inconsistent sizes");
  }
  double bsum = 0.0;
  for (double v : b) bsum += v;
  if (std::abs(bsum - 1.0) > 1e-14) throw ConfigError("Butcher weights do not sum to 1");
  for (std::size_t i = 0; i < stages; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < stages; ++j) {
      if (j >= i && coeff(i, j) != 0.0) throw ConfigError("Butcher matrix is not strictly lower");
      row += coeff(i, j);
    }
    if (std::abs(row - c[i]) > 1e-14) throw ConfigError("Butcher nodes differ from row sums");
  }
}

ButcherTableau make_tableau(SchemeId id) {
  switch (id) {
    case SchemeId::Euler:
      return ButcherTableau{1, {0.0}, {1.0}, {0.0}, 1};
    case SchemeId::Midpoint:
      return ButcherTableau{2, {0.0, 0.0, 0.5, 0.0}, {0.0, 1.0}, {0.0, 0.5}, 2};
    case SchemeId::RK4:
      return ButcherTableau{4,
                            {0.0, 0.0, 0.0, 0.0,  //
                             0.5, 0.0, 0.0, 0.0,  //
                             0.0, 0.5, 0.0, 0.0,  //
                             0.0, 0.0, 1.0, 0.0},
                            {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0},
                            {0.0, 0.5, 0.5, 1.0},
                            4};
  }
  throw ConfigError("unknown scheme");
}

}  // namespace odenet
