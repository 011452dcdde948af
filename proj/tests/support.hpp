#pragma once

#include "oed/dopt.hpp"

#include <gtest/gtest.h>

#include <random>

namespace oed::test {

// Small stable configuration: moderate diffusion keeps the mesh Peclet number low.
inline ExperimentConfig small_config(int nx = 8, int cols = 3, int rows = 3, double kappa = 0.05) {
  ExperimentConfig c;
  c.nx = nx;
  c.kappa = kappa;
  c.n_steps = 20;
  c.final_time = 1.0;
  c.obs_times = {0.25, 0.5, 1.0};
  c.grid_cols = cols;
  c.grid_rows = rows;
  c.bumps = {{0.4, 0.6, 0.15, 1.0}};
  c.sketch = {5, 5, 1, 3};
  c.frozen_k = 5;
  c.z_cache = false;
  c.seed = 11;
  return c;
}

struct Instance {
  std::unique_ptr<Problem> p;
  DataBundle data;
};

inline Instance make_instance(const ExperimentConfig &c) {
  Instance in;
  in.p = build_problem(c);
  in.data = make_data(*in.p, c.seed);
  return in;
}

inline Vec random_vec(Index n, std::mt19937_64 &rng) { return gaussian_vector(n, rng); }

inline Vec random_weights(Index n, std::mt19937_64 &rng, double lo = 0.0) {
  std::uniform_real_distribution<double> u(lo, 1.0);
  Vec w(n);
  for (Index i = 0; i < n; ++i)
    w[i] = u(rng);
  return w;
}

// Random symmetric PSD matrix with a prescribed spectrum.
inline Mat psd_with_spectrum(const Vec &lambda, std::uint64_t seed) {
  const Mat Q = random_orthogonal(lambda.size(), seed);
  return Q * lambda.asDiagonal() * Q.transpose();
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace oed::test
