#pragma once

#include <memory>

#include "hs/densities.hpp"
#include "hs/dynamics.hpp"
#include "hs/estimate.hpp"
#include "hs/estimators.hpp"

namespace hs::test {

inline BoxSpec unit_box(double a = 0.1) {
  BoxSpec b;
  b.diameter = a;
  return b;
}

inline std::shared_ptr<InitialMeasure> calibrated(MeasureSpec ms, const BoxSpec& box,
                                                  std::uint64_t samples = 200000, std::uint64_t seed = 11) {
  auto m = std::make_shared<InitialMeasure>(ms, box);
  m->calibrate(samples, seed);
  return m;
}

inline MeasureSpec perturbed(int N, double lambda = 0.3, SpatialProfile profile = SpatialProfile::Smooth) {
  MeasureSpec ms;
  ms.kind = MeasureKind::PerturbedProduct;
  ms.lambda = lambda;
  ms.profile = profile;
  ms.N = N;
  return ms;
}

inline MeasureSpec equilibrium(int N) {
  MeasureSpec ms;
  ms.N = N;
  return ms;
}

inline ExperimentSpec experiment(std::shared_ptr<const InitialMeasure> m, const Configuration& z, double t,
                                 std::uint64_t samples, std::uint64_t seed = 5) {
  ExperimentSpec s;
  s.box = m->box();
  s.measure = std::move(m);
  s.z = z;
  s.t = t;
  s.samples = samples;
  s.seed = seed;
  return s;
}

inline Configuration random_point(const BoxSpec& box, int n, std::uint64_t seed, std::uint64_t index,
                                  double margin = 0.0) {
  Rng rng = block_rng(seed, stream_id("test-point"), index);
  return sample_evaluation_point(box, n, 1.0, margin, rng);
}

}  // namespace hs::test
