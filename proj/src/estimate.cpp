#include "hs/estimate.hpp"

#include <limits>
#include <stdexcept>

namespace hs {

Estimate combine(std::span<const Estimate> parts, std::span<const double> coefficients) {
  if (parts.size() != coefficients.size()) throw std::invalid_argument("coefficient count mismatch");
  Estimate out;
  double var = 0.0;
  double norm_rel = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double c = coefficients[i];
    out.value += c * parts[i].value;
    var += c * c * parts[i].std_error * parts[i].std_error;
    out.n_samples += parts[i].n_samples;
    out.n_rejected += parts[i].n_rejected;
    out.envelope_violations += parts[i].envelope_violations;
    norm_rel = std::max(norm_rel, parts[i].norm_rel_error);
    if (i == 0) out.seed = parts[i].seed;
  }
  out.std_error = std::sqrt(var);
  out.norm_rel_error = norm_rel;
  return out;
}

double z_score(const Estimate& a, const Estimate& b) {
  const double diff = std::abs(a.value - b.value);
  const double se = std::hypot(a.std_error, b.std_error);
  if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / se;
}

}  // namespace hs
