#pragma once

#include "oed/config.hpp"
#include "oed/inverse.hpp"
#include "oed/transport.hpp"

#include <memory>

namespace oed {

inline Vec gaussian_bumps(const Mesh &mesh, const std::vector<Bump> &bumps) {
  Vec theta = Vec::Zero(mesh.num_nodes());
  for (Index i = 0; i < mesh.num_nodes(); ++i)
    for (const auto &b : bumps) {
      const double dx = mesh.nodes[i][0] - b.x, dy = mesh.nodes[i][1] - b.y;
      theta[i] += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2 * b.width * b.width));
    }
  return theta;
}

/// The full operator stack of one configuration. Members reference each other,
/// so instances live behind a unique_ptr and are never moved.
struct Problem {
  ExperimentConfig config;
  Mesh mesh;
  AssembledOperators ops;
  MassFactor mass;
  std::unique_ptr<AdvectionDiffusion> forward;
  std::unique_ptr<PriorOperator> prior;
  std::unique_ptr<WhitenedForwardMap> G;
  Vec theta_true;

  Problem() = default;
  Problem(const Problem &) = delete;
  Problem &operator=(const Problem &) = delete;

  Index n() const { return mesh.num_nodes(); }
  Index num_sensors() const { return forward->observation().num_sensors(); }
  Index num_times() const { return forward->observation().num_times(); }
};

inline std::unique_ptr<Problem> build_problem(const ExperimentConfig &cfg) {
  validate(cfg);
  auto p = std::make_unique<Problem>();
  p->config = cfg;
  p->mesh = build_mesh(cfg.nx, cfg.holes);
  p->ops = assemble(p->mesh, VelocityField{cfg.amplitude, cfg.holes});
  p->mass = MassFactor(p->ops.M, cfg.mass_mode);
  const double pe = mesh_peclet(1.0 / cfg.nx, cfg.amplitude, cfg.kappa);
  if (pe > 20)
    warn("mesh Peclet number " + std::to_string(pe) +
         " exceeds 20; the unstabilized Galerkin solution may oscillate");
  ObservationSetup obs = make_observation_setup(p->mesh, cfg.sensors(), cfg.obs_times,
                                                cfg.final_time, cfg.n_steps, cfg.kappa);
  p->forward =
      std::make_unique<AdvectionDiffusion>(p->mass.mass(), p->ops.K, p->ops.N, std::move(obs));
  p->prior = std::make_unique<PriorOperator>(p->ops.K, p->mass, cfg.alpha, cfg.beta);
  p->G = std::make_unique<WhitenedForwardMap>(*p->forward, *p->prior);
  p->theta_true = gaussian_bumps(p->mesh, cfg.bumps);
  return p;
}

/// Synthetic data and the matching noise model for a problem.
struct DataBundle {
  SyntheticData data;
  NoiseModel noise;
};

inline DataBundle make_data(const Problem &p, std::uint64_t seed) {
  DataBundle b;
  b.data = synthesize_data(*p.forward, p.theta_true, p.config.noise_pct, seed);
  require(p.config.noise_pct > 0,
          "noise.pct = 0 gives zero noise standard deviations; design and inversion need noise.pct > 0");
  b.noise = NoiseModel(b.data.sigma);
  return b;
}

/// Objective/gradient oracle for the configured estimator. The returned
/// function keeps references into p, zc and fz.
inline EstimatorFn make_estimator(const Problem &p, const NoiseModel &noise,
                                  const SensorDerivConstants &zc, EstimatorMethod method,
                                  const std::shared_ptr<const FrozenSVD> &fz = nullptr,
                                  const std::shared_ptr<const DenseOracle> &dense = nullptr) {
  const ExperimentConfig &c = p.config;
  switch (method) {
  case EstimatorMethod::Eig: {
    ExactEigOptions opt;
    opt.tol = c.eig_tol;
    const Index k = c.sketch.k;
    return [&p, &noise, &zc, k, opt](const Vec &w) {
      return objective_grad_eig(*p.G, noise, zc, w, k, opt);
    };
  }
  case EstimatorMethod::Rand: {
    const SketchConfig sk = c.sketch;
    const bool reuse = c.reuse_products;
    return [&p, &noise, &zc, sk, reuse](const Vec &w) {
      return objective_grad_rand(*p.G, noise, zc, w, sk, reuse);
    };
  }
  case EstimatorMethod::Frozen: {
    require(fz != nullptr, "frozen estimator needs a frozen factorization");
    return [fz, &noise](const Vec &w) { return objective_grad_frozen(*fz, noise, w); };
  }
  case EstimatorMethod::Dense:
  default: {
    require(dense != nullptr, "dense estimator needs a dense oracle");
    return [dense](const Vec &w) { return dense->evaluate(w); };
  }
  }
}

} // namespace oed
