#include "hs/densities.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "hs/errors.hpp"

namespace hs {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Relative slack for contact configurations on the boundary of Gamma.
constexpr double kContactSlack = 1e-9;

double log_factorial(int k) { return std::lgamma(static_cast<double>(k) + 1.0); }

bool hard_core_ok(std::span<const ParticleState> z, const Vec3& q, std::size_t upto, double a2) {
  for (std::size_t i = 0; i < upto; ++i)
    if (norm2(z[i].q - q) < a2) return false;
  return true;
}

}  // namespace

double GaussianEnvelope::log_value(const Vec3& p) const {
  return 1.5 * std::log(beta / (2.0 * std::numbers::pi)) - 0.5 * beta * norm2(p);
}

Vec3 GaussianEnvelope::sample(Rng& rng) const {
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(beta));
  const double x = nd(rng);
  const double y = nd(rng);
  const double z = nd(rng);
  return {x, y, z};
}

std::string_view to_string(MeasureKind k) {
  switch (k) {
    case MeasureKind::PerturbedProduct:
      return "perturbed";
    case MeasureKind::GrandCanonical:
      return "grand_canonical";
    case MeasureKind::Equilibrium:
      break;
  }
  return "equilibrium";
}

std::string_view to_string(SpatialProfile p) {
  return p == SpatialProfile::Rough ? "rough" : "smooth";
}

MeasureKind parse_measure_kind(std::string_view s) {
  if (s == "equilibrium") return MeasureKind::Equilibrium;
  if (s == "perturbed") return MeasureKind::PerturbedProduct;
  if (s == "grand_canonical") return MeasureKind::GrandCanonical;
  throw ConfigError("unknown measure '" + std::string(s) + "'");
}

SpatialProfile parse_spatial_profile(std::string_view s) {
  if (s == "smooth") return SpatialProfile::Smooth;
  if (s == "rough") return SpatialProfile::Rough;
  throw ConfigError("unknown profile '" + std::string(s) + "'");
}

int packing_bound(const BoxSpec& box) {
  const double a = box.diameter;
  return static_cast<int>(std::floor(3.0 * box.volume() / (4.0 * std::numbers::pi * a * a * a)));
}

InitialMeasure::InitialMeasure(const MeasureSpec& spec, const BoxSpec& box) : spec_(spec), box_(box) {
  box_.validate();
  if (!(spec_.beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(std::abs(spec_.lambda) < 1.0)) throw ConfigError("|lambda| must be below 1");
  if (spec_.kind == MeasureKind::GrandCanonical) {
    if (!(spec_.activity > 0.0)) throw ConfigError("activity must be positive");
    if (spec_.N_max < 0) throw ConfigError("N_max must be non-negative");
    if (spec_.N_max > packing_bound(box_))
      throw PackingTooTight("N_max exceeds the hard-core packing bound");
  } else if (spec_.N < 1) {
    throw ConfigError("N must be at least 1");
  }
  norm_ = 1.0;
}

int InitialMeasure::max_particles() const {
  return grand_canonical() ? spec_.N_max : spec_.N;
}

double InitialMeasure::single_factor(const Vec3& q) const {
  if (spec_.kind == MeasureKind::Equilibrium || spec_.lambda == 0.0) return 1.0;
  double phase = 0.0;
  for (int d = 0; d < 3; ++d) phase += spec_.wavevector[d] * q[d] / box_.lengths[d];
  const double c = std::cos(2.0 * std::numbers::pi * phase);
  if (spec_.profile == SpatialProfile::Rough) return 1.0 + spec_.lambda * (c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0));
  return 1.0 + spec_.lambda * c;
}

double InitialMeasure::spatial_factor(std::span<const ParticleState> z) const {
  if (!is_admissible(box_, z, kContactSlack * box_.diameter)) return 0.0;
  double g = 1.0;
  for (const auto& s : z) g *= single_factor(s.q);
  return g;
}

double InitialMeasure::density_f0(std::span<const ParticleState> z) const {
  const double l = log_density_f0(z);
  return l == kNegInf ? 0.0 : std::exp(l);
}

double InitialMeasure::log_density_f0(std::span<const ParticleState> z) const {
  const int j = static_cast<int>(z.size());
  if (!grand_canonical() && j != spec_.N) throw ConfigError("canonical density needs exactly N particles");
  if (grand_canonical() && j > spec_.N_max) return kNegInf;
  if (!is_admissible(box_, z, kContactSlack * box_.diameter)) return kNegInf;
  // Per-particle terms summed in sorted order, so relabeling leaves the value bit-identical.
  const GaussianEnvelope h = envelope();
  std::vector<double> terms;
  terms.reserve(z.size());
  for (const auto& s : z) terms.push_back(std::log(single_factor(s.q)) + h.log_value(s.p));
  std::sort(terms.begin(), terms.end());
  double l = -std::log(norm_);
  if (grand_canonical()) l += j * std::log(spec_.activity);
  for (double x : terms) l += x;
  return l;
}

double InitialMeasure::envelope_constant(int j) const {
  const double lam = spec_.kind == MeasureKind::Equilibrium ? 0.0 : std::abs(spec_.lambda);
  double a = std::pow(1.0 + lam, j) / norm_;
  if (grand_canonical()) a *= std::pow(spec_.activity, j);
  return a;
}

Vec3 InitialMeasure::uniform_position(Rng& rng) const {
  Vec3 q;
  for (int d = 0; d < 3; ++d) {
    std::uniform_real_distribution<double> u(box_.lower(d), box_.upper(d));
    q[d] = u(rng);
  }
  return q;
}

Completion InitialMeasure::sample_conditional(std::span<const ParticleState> z, int k, Rng& rng) const {
  Completion c;
  c.states.assign(z.begin(), z.end());
  const GaussianEnvelope h = envelope();
  for (int i = 0; i < k; ++i) c.states.push_back({uniform_position(rng), h.sample(rng)});
  const double g = spatial_factor(c.states);
  c.admissible = g > 0.0;
  c.weight = c.admissible ? std::pow(box_.accessible_volume(), k) * g : 0.0;
  return c;
}

double InitialMeasure::prefix_sum(std::span<const ParticleState> z, std::span<const Vec3> completion) const {
  // Sum over k of |Lambda'|^k / k! * zeta^(n+k) * g 1_Gamma of (z, y_1..y_k),
  // stopping at the first prefix that leaves Gamma.
  const double a2 = box_.diameter * box_.diameter;
  const double vol = box_.accessible_volume();
  const int n = static_cast<int>(z.size());
  std::vector<ParticleState> all(z.begin(), z.end());
  double g = 1.0;
  for (const auto& s : z) g *= single_factor(s.q);
  double coef = std::pow(spec_.activity, n);
  double total = coef * g;
  for (std::size_t k = 0; k < completion.size(); ++k) {
    const Vec3& y = completion[k];
    if (!hard_core_ok(all, y, all.size(), a2)) break;
    all.push_back({y, {}});
    g *= single_factor(y);
    coef *= spec_.activity * vol / static_cast<double>(k + 1);
    total += coef * g;
  }
  return total;
}

Rho0Sample InitialMeasure::rho0_given(std::span<const ParticleState> z, std::span<const Vec3> completion) const {
  Rho0Sample out;
  const int n = static_cast<int>(z.size());
  if (n > max_particles()) return out;
  if (!is_admissible(box_, z, kContactSlack * box_.diameter)) return out;
  const GaussianEnvelope h = envelope();
  for (const auto& s : z) out.log_kinetic += h.log_value(s.p);
  if (grand_canonical()) {
    out.spatial = prefix_sum(z, completion) / norm_;
    return out;
  }
  const int k = spec_.N - n;
  if (static_cast<int>(completion.size()) != k) throw std::invalid_argument("completion size must be N-n");
  const double a2 = box_.diameter * box_.diameter;
  std::vector<ParticleState> all(z.begin(), z.end());
  double g = 1.0;
  for (const auto& s : z) g *= single_factor(s.q);
  for (const Vec3& y : completion) {
    if (!hard_core_ok(all, y, all.size(), a2)) return out;
    all.push_back({y, {}});
    g *= single_factor(y);
  }
  const double log_pref = log_factorial(spec_.N) - log_factorial(k) + k * std::log(box_.accessible_volume());
  out.spatial = std::exp(log_pref) * g / norm_;
  return out;
}

Rho0Sample InitialMeasure::rho0_sample(std::span<const ParticleState> z, Rng& rng) const {
  const int n = static_cast<int>(z.size());
  if (n > max_particles()) return {};
  std::vector<Vec3> y(max_particles() - n);
  for (auto& q : y) q = uniform_position(rng);
  return rho0_given(z, y);
}

double InitialMeasure::rho0_spatial_bound(int n) const {
  const double lam = spec_.kind == MeasureKind::Equilibrium ? 0.0 : std::abs(spec_.lambda);
  const double vol = box_.accessible_volume();
  if (grand_canonical()) {
    double total = 0.0;
    double coef = std::pow(spec_.activity * (1.0 + lam), n);
    for (int k = 0; k <= spec_.N_max - n; ++k) {
      total += coef;
      coef *= spec_.activity * (1.0 + lam) * vol / static_cast<double>(k + 1);
    }
    return total / norm_;
  }
  const int k = spec_.N - n;
  return std::exp(log_factorial(spec_.N) - log_factorial(k) + k * std::log(vol)) *
         std::pow(1.0 + lam, spec_.N) / norm_;
}

void InitialMeasure::calibrate(std::uint64_t samples, std::uint64_t seed, int threads) {
  const int count = max_particles();
  const double vol = box_.accessible_volume();
  SamplingPlan plan{samples, seed, stream_id("normalization"), threads, 0};
  std::atomic<std::uint64_t> accepted{0};
  Accumulator acc = run_samples(plan, [&](Rng& rng) {
    std::vector<Vec3> y(count);
    for (auto& q : y) q = uniform_position(rng);
    SampleOutcome out;
    if (grand_canonical()) {
      out.value = prefix_sum({}, y);
      accepted.fetch_add(1, std::memory_order_relaxed);
      return out;
    }
    std::vector<ParticleState> all;
    all.reserve(count);
    double g = 1.0;
    for (const Vec3& q : y) {
      if (!hard_core_ok(all, q, all.size(), box_.diameter * box_.diameter)) return out;
      all.push_back({q, {}});
      g *= single_factor(q);
    }
    accepted.fetch_add(1, std::memory_order_relaxed);
    out.value = std::pow(vol, count) * g;
    return out;
  });
  if (acc.n > 0 && static_cast<double>(accepted.load()) < 0.01 * static_cast<double>(acc.n))
    throw PackingTooTight("fewer than 1% of uniform configurations are admissible");
  const double mean = acc.mean();
  if (!(mean > 0.0)) throw PackingTooTight("normalization estimate vanished");
  set_normalization(mean, acc.std_error() / mean);
}

void InitialMeasure::set_normalization(double value, double rel_error) {
  if (!(value > 0.0)) throw ConfigError("normalization must be positive");
  norm_ = value;
  norm_rel_err_ = rel_error;
}

Estimate rho0_oracle(const InitialMeasure& measure, const Configuration& z, std::uint64_t samples,
                     std::uint64_t seed, int threads) {
  const int n = static_cast<int>(z.size());
  if (n > measure.max_particles()) {
    Estimate e;
    e.seed = seed;
    return e;
  }
  const bool exact = !measure.grand_canonical() && n == measure.max_particles();
  SamplingPlan plan{exact ? 1 : samples, seed, stream_id("rho0"), threads, 0};
  Estimate e = run_samples(plan, [&](Rng& rng) {
                 return SampleOutcome{measure.rho0_sample(z, rng).value(), false, false};
               }).finish(seed);
  if (exact) e.std_error = 0.0;
  e.norm_rel_error = measure.normalization_rel_error();
  return e;
}

}  // namespace hs
