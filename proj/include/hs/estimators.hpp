#pragma once

// Signed Monte Carlo estimators for correlation functions, tree values and
// the identities relating them.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hs/densities.hpp"
#include "hs/dynamics.hpp"
#include "hs/estimate.hpp"
#include "hs/histories.hpp"
#include "hs/trees.hpp"

namespace hs {

struct ExperimentSpec {
  BoxSpec box;
  std::shared_ptr<const InitialMeasure> measure;
  Configuration z;  // evaluation point z_n
  double t = 1.0;
  std::uint64_t samples = 100000;
  std::uint64_t seed = 1;
  // Mixed into every stream id so that estimates sharing a seed stay independent.
  std::uint64_t stream_salt = 0;
  int threads = 1;
  std::uint64_t chunks = 0;
  std::optional<Tolerances> tolerances;

  int n() const { return static_cast<int>(z.size()); }
  Tolerances tol() const;
  // Throws ConfigError on inconsistent settings.
  void validate() const;
  ExperimentSpec at(const Configuration& point, double time, std::uint64_t salt) const;
};

double mean_free_time(const BoxSpec& box, int N, double beta);

// Uniform positions at least `margin` inside the accessible box, momenta from h.
Configuration sample_evaluation_point(const BoxSpec& box, int n, double beta, double margin, Rng& rng);

// Smallest distance of any centre to the boundary of the accessible box along
// the forward flow over [0, duration]; negative when the flow is singular.
double trajectory_clearance(const BoxSpec& box, const Configuration& z, double duration,
                            const Tolerances& tol);

// Node variables from the tree-value proposal. log_weight receives
// log(t^m/m! (4 pi)^m) - sum_k log h(p_k).
NodeVars draw_node_vars(int m, double t, const GaussianEnvelope& h, Rng& rng, double& log_weight);

struct TreeDraw {
  History history;
  double log_weight = 0.0;
  SampleOutcome outcome;
  std::vector<Vec3> completion;
};

// One signed sample of the tree value integrand at (z, t); log_extra is added
// to the log weight.
TreeDraw draw_tree_sample(const Tree& tree, const Configuration& z, double t,
                          const InitialMeasure& measure, const Tolerances& tol, Rng& rng,
                          double log_extra = 0.0);

// One sample of the direct marginalization integrand at (z, t).
SampleOutcome draw_direct_sample(const Configuration& z, double t, const InitialMeasure& measure,
                                 const Tolerances& tol, Rng& rng, double log_extra = 0.0);

Estimate rho_direct(const ExperimentSpec& spec);
Estimate tree_value(const Tree& tree, const ExperimentSpec& spec);
Estimate rho_series(const ExperimentSpec& spec);

struct StepCheck {
  Estimate lhs;
  Estimate rhs;
  std::vector<BreakdownEntry> terms;
  double z() const { return z_score(lhs, rhs); }
};

// Integration step for a source tree with root count n+1 (canonical measures).
StepCheck verify_integration_step(const Tree& source, const ExperimentSpec& spec);

struct CancellationReport {
  Estimate minus_part;  // V restricted to R- at node k
  Estimate plus_part;   // sum of V restricted to the matching R+ domains
  Estimate sum;
  std::uint64_t draws = 0;
  std::uint64_t r_minus = 0;
  std::uint64_t tolerance_rejections = 0;
  std::uint64_t antisymmetry_ok = 0;
  std::uint64_t round_trip_ok = 0;
  std::uint64_t shared_final_ok = 0;
  std::uint64_t partner_in_r_plus = 0;
  double max_relative_violation = 0.0;
  std::vector<std::string> log;
};

// Cancellation between R- histories of tree (n, js) at node k and their
// partners. pair_samples bounds the number of R- histories checked one by one.
CancellationReport verify_cancellation(const Tree& tree, int k, const ExperimentSpec& spec,
                                       std::uint64_t pair_samples);

enum class InnerEstimator { Direct, Series };

Estimate collision_operator(const ExperimentSpec& spec, InnerEstimator inner);

struct BbgkyPoint {
  double t = 0.0;
  Estimate lhs;
  Estimate rhs;
  double quadrature_bound = 0.0;
  double residual = 0.0;
  double sigma = 0.0;
  bool pass = false;
};

struct BbgkyReport {
  std::vector<BbgkyPoint> points;
  bool pass() const;
};

// t_grid must start at 0 and increase. Q is also evaluated at grid midpoints
// to bound the trapezoid error.
BbgkyReport bbgky_residual(const ExperimentSpec& spec, const std::vector<double>& t_grid,
                           double sigmas = 3.0);

}  // namespace hs
