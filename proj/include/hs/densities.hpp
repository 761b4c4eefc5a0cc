#pragma once

// Initial measures with a Gaussian momentum envelope and time-zero
// correlation functions.
//
// Canonical variants (N particles):
//   f_N(z) = prod_j h(p_j) * g(q) * 1_Gamma(z) / Z,   Z = int g 1_Gamma dq.
// Grand canonical (at most N_max particles, activity zeta):
//   f_j(z) = zeta^j prod h(p) g(q) 1_Gamma / Xi,      Xi = sum_j zeta^j/j! int g 1_Gamma dq.
// Positions range over the accessible region [a/2, L-a/2]^3.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "hs/dynamics.hpp"
#include "hs/estimate.hpp"

namespace hs {

struct GaussianEnvelope {
  double beta = 1.0;

  double log_value(const Vec3& p) const;
  double operator()(const Vec3& p) const { return std::exp(log_value(p)); }
  Vec3 sample(Rng& rng) const;
};

enum class MeasureKind { Equilibrium, PerturbedProduct, GrandCanonical };
enum class SpatialProfile { Smooth, Rough };

std::string_view to_string(MeasureKind k);
std::string_view to_string(SpatialProfile p);
MeasureKind parse_measure_kind(std::string_view s);
SpatialProfile parse_spatial_profile(std::string_view s);

struct MeasureSpec {
  MeasureKind kind = MeasureKind::Equilibrium;
  double beta = 1.0;
  // Perturbation amplitude, |lambda| < 1. Ignored for Equilibrium.
  double lambda = 0.0;
  SpatialProfile profile = SpatialProfile::Smooth;
  std::array<int, 3> wavevector{1, 0, 0};
  int N = 2;
  double activity = 1.0;
  int N_max = 3;
};

// Largest particle number compatible with the hard core, [3|box|/(4 pi a^3)].
int packing_bound(const BoxSpec& box);

struct Completion {
  Configuration states;
  bool admissible = false;
  // |Lambda'|^k g(z_n, y) for admissible draws, 0 otherwise.
  double weight = 0.0;
};

// One fused draw of the time-zero correlation function integrand.
// The estimate is exp(log_kinetic) * spatial.
struct Rho0Sample {
  double log_kinetic = 0.0;
  double spatial = 0.0;

  double value() const { return spatial == 0.0 ? 0.0 : spatial * std::exp(log_kinetic); }
};

class InitialMeasure {
 public:
  InitialMeasure(const MeasureSpec& spec, const BoxSpec& box);

  const MeasureSpec& spec() const { return spec_; }
  const BoxSpec& box() const { return box_; }
  GaussianEnvelope envelope() const { return {spec_.beta}; }
  bool grand_canonical() const { return spec_.kind == MeasureKind::GrandCanonical; }
  // N, or N_max for the grand-canonical variant.
  int max_particles() const;

  // Monte Carlo estimate of Z (or Xi) over uniform positions.
  void calibrate(std::uint64_t samples, std::uint64_t seed, int threads = 1);
  void set_normalization(double value, double rel_error);
  double normalization() const { return norm_; }
  double normalization_rel_error() const { return norm_rel_err_; }

  // Position factor g(q) times the indicator of Gamma (walls and hard core).
  double spatial_factor(std::span<const ParticleState> z) const;
  double single_factor(const Vec3& q) const;

  // Normalized density f_j at a j-particle configuration (j = N for canonical).
  double density_f0(std::span<const ParticleState> z) const;
  // -inf where the density vanishes.
  double log_density_f0(std::span<const ParticleState> z) const;

  // Pointwise bound A with |f_j| <= A prod h(p).
  double envelope_constant(int j) const;

  // Completion positions uniform in the accessible box, momenta from h.
  Completion sample_conditional(std::span<const ParticleState> z, int k, Rng& rng) const;

  // Fused integrand for rho^0_n at z (n = z.size()): completion positions are
  // drawn uniformly and their momenta integrated exactly. Exact 0 for n beyond
  // max_particles().
  Rho0Sample rho0_sample(std::span<const ParticleState> z, Rng& rng) const;
  // Same with the completion positions supplied (size max_particles() - n).
  Rho0Sample rho0_given(std::span<const ParticleState> z, std::span<const Vec3> completion) const;
  // Largest possible spatial part of rho0_given for n particles.
  double rho0_spatial_bound(int n) const;

  Vec3 uniform_position(Rng& rng) const;

 private:
  double prefix_sum(std::span<const ParticleState> z, std::span<const Vec3> completion) const;

  MeasureSpec spec_;
  BoxSpec box_;
  double norm_ = 1.0;
  double norm_rel_err_ = 0.0;
};

// Estimate of rho^0_n(z) by plain averaging of rho0_sample.
Estimate rho0_oracle(const InitialMeasure& measure, const Configuration& z, std::uint64_t samples,
                     std::uint64_t seed, int threads = 1);

}  // namespace hs
