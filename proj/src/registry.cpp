#include "gestalt/registry.hpp"

#include "gestalt/error.hpp"

namespace gestalt {

namespace {

constexpr Interval kFaDomain{26.0, 85.0};
constexpr Interval kCrlDomain{1.0, 84.0};

GrowthChart growth_chart(std::string name, MeanModel mean,
                         std::optional<VarianceModel> variance, std::string citation) {
  GrowthChart c{.name = std::move(name),
                .mean = std::move(mean),
                .variance = std::move(variance),
                .domain = kFaDomain,
                .predicts = Predicts::kCrlFromFa,
                .response = Variable::kCRL,
                .citation = std::move(citation)};
  return c;
}

GrowthChart dating_chart(std::string name, MeanModel mean,
                         std::optional<VarianceModel> variance, Variable response,
                         std::string citation) {
  GrowthChart c{.name = std::move(name),
                .mean = std::move(mean),
                .variance = std::move(variance),
                .domain = kCrlDomain,
                .predicts = Predicts::kFaFromCrl,
                .response = response,
                .citation = std::move(citation)};
  return c;
}

std::vector<GrowthChart> builtin_charts() {
  const auto fa2 = BasisSpec::quadratic(Variable::kFA);
  const auto ga2 = BasisSpec::quadratic(Variable::kGA);
  const auto crl2 = BasisSpec::quadratic(Variable::kCRL);
  const auto dating = BasisSpec::dating(Variable::kCRL);

  std::vector<GrowthChart> out;

  out.push_back(growth_chart(
      "eq1_ivf_crl", MeanModel(fa2, {-3.3108, -0.2087, 1.5250e-2}),
      VarianceModel(fa2, {46.2354, -2.0194, 0.0230}),
      "CRL from FA, IVF pregnancies (robust fit). "
      "CRL = -3.3108 - 0.2087 FA + 1.5250e-2 FA^2; var = 46.2354 - 2.0194 FA + 0.0230 FA^2."));

  auto eq2 = growth_chart(
      "eq2_spont_crl", MeanModel(fa2, {-4.1212, -0.1824, 0.014829}),
      VarianceModel(fa2, {-53.1054, 2.5634, -0.0189}),
      "CRL from FA, spontaneous pregnancies (heteroskedastic fit). "
      "Printed as CRL = -4.1212 - 0.1824 FA + 0.0148 FA^2; the FA^2 coefficient carries "
      "the extra digits (0.014829) implied by the published tabulation. "
      "var = -53.1054 + 2.5634 FA - 0.0189 FA^2. kappa 1.85 calibrated for 95% coverage; "
      "the published band plot uses kappa 1.96.");
  eq2.kappa = 1.85;
  out.push_back(std::move(eq2));

  out.push_back(dating_chart(
      "eq3_spont_fa", MeanModel(dating, {19.1732, 6.0266, 0.0955}),
      VarianceModel(dating, {33.1275, -4.9440, 0.2270}), Variable::kFA,
      "FA from CRL, spontaneous pregnancies (heteroskedastic fit)."));
  out.push_back(dating_chart(
      "eq4_ivf_fa", MeanModel(dating, {18.0739, 5.6925, 0.1549}),
      VarianceModel(dating, {7.3281, -1.6397, 0.1688}), Variable::kFA,
      "FA from CRL, IVF pregnancies (heteroskedastic fit)."));
  out.push_back(dating_chart(
      "eq7_ivf_fa_robust", MeanModel(dating, {17.8994, 5.7617, 0.1471}),
      VarianceModel(dating, {7.3281, -1.6397, 0.1688}), Variable::kFA,
      "FA from CRL, IVF pregnancies (robust fit)."));
  out.push_back(dating_chart(
      "eq8_spont_fa_robust", MeanModel(dating, {19.2702, 5.7804, 0.1271}),
      VarianceModel(dating, {41.8353, -8.3486, 0.5198}), Variable::kFA,
      "FA from CRL, spontaneous pregnancies (robust fit)."));

  auto robinson = growth_chart("robinson_crl", MeanModel(ga2, {7.295, -0.6444, 0.0144}),
                               std::nullopt,
                               "Robinson (1973): CRL = 7.295 - 0.6444 GA + 0.0144 GA^2. "
                               "A corrective factor of (1 mm + 3.7%) is available as an "
                               "evaluation option.");
  robinson.correction = CorrectiveFactor{1.0, 0.037};
  out.push_back(std::move(robinson));

  out.push_back(dating_chart(
      "robinson_fa",
      MeanModel(BasisSpec(Variable::kCRL, {Term::kOne, Term::kSqrtX}), {23.73, 8.052}),
      std::nullopt, Variable::kGA, "Robinson (1975): GA = 8.052 sqrt(CRL) + 23.73."));

  auto papaioannou =
      growth_chart("papaioannou_crl",
                   MeanModel(ga2, {-6.662367, 0.246741, -0.001046}, ResponseTransform::kSquare),
                   std::nullopt,
                   "Papaioannou et al. (2010): sqrt(CRL) = -6.662367 + 0.246741 GA - "
                   "0.001046 GA^2, valid for GA <= 75 d.");
  papaioannou.domain = Interval{26.0, 61.0};
  out.push_back(std::move(papaioannou));

  out.push_back(dating_chart(
      "papaioannou_ga", MeanModel(crl2, {39.811963, 1.155896, -0.006429}), std::nullopt,
      Variable::kGA,
      "Papaioannou et al. (2010): GA = 39.811963 + 1.155896 CRL - 0.006429 CRL^2."));

  out.push_back(growth_chart("pexsters_crl", MeanModel(ga2, {-9.09, -0.26, 0.012}),
                             std::nullopt,
                             "Pexsters et al. (2010): CRL = -9.09 - 0.26 GA + 0.012 GA^2."));

  out.push_back(growth_chart(
      "verwoerd_crl", MeanModel(ga2, {9.0963, -0.751165, 0.015508}),
      VarianceModel(ga2, {0.2814, -0.006087, 0.000043}),
      "Verwoerd-Dikkeboom et al. (2010): CRL = 9.0963 - 0.751165 GA + 0.015508 GA^2; "
      "var = 0.2814 - 0.006087 GA + 0.000043 GA^2."));

  return out;
}

}  // namespace

ReferenceRegistry::ReferenceRegistry(std::vector<GrowthChart> charts) {
  for (auto& c : charts) {
    validate(c);
    auto name = c.name;
    if (!charts_.emplace(std::move(name), std::move(c)).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate chart name");
    }
  }
}

const ReferenceRegistry& ReferenceRegistry::builtin() {
  static const ReferenceRegistry registry(builtin_charts());
  return registry;
}

const GrowthChart& ReferenceRegistry::lookup(std::string_view name) const {
  auto it = charts_.find(name);
  if (it == charts_.end()) {
    std::string msg = "no chart named '" + std::string(name) + "'; available:";
    for (const auto& [n, _] : charts_) msg += " " + n;
    throw Error(ErrorCode::kNotFound, msg);
  }
  return it->second;
}

bool ReferenceRegistry::contains(std::string_view name) const {
  return charts_.find(name) != charts_.end();
}

std::vector<std::string> ReferenceRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : charts_) out.push_back(n);
  return out;
}

std::pair<MeanModel, MeanModel> published_mixture_components() {
  const auto fa2 = BasisSpec::quadratic(Variable::kFA);
  return {MeanModel(fa2, {-21.15, 0.7642, 2.820e-3}),
          MeanModel(fa2, {-28.1408, 0.7106, 7.364e-3})};
}

}  // namespace gestalt
