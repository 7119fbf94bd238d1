#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gestalt/model.hpp"

namespace gestalt {

/// Read-only name -> chart map.
class ReferenceRegistry {
 public:
  explicit ReferenceRegistry(std::vector<GrowthChart> charts);

  /// Charts published with the first-trimester CRL study plus the literature
  /// curves it was compared against.
  static const ReferenceRegistry& builtin();

  /// Throws Error(kNotFound) listing the available names.
  const GrowthChart& lookup(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, GrowthChart, std::less<>> charts_;
};

/// The two regimes of the mixture-of-regressions fit of CRL on FA, early then
/// late. The early quadratic coefficient is stored as 2.820e-3 (printed without
/// its exponent in the source); with that reading the curves cross at 45.56 d.
std::pair<MeanModel, MeanModel> published_mixture_components();

}  // namespace gestalt
