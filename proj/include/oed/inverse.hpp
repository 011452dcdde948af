#pragma once

#include "oed/estimators.hpp"

#include <variant>

namespace oed {

struct MapSolveReport {
  Vec theta;      // nodal field theta_post
  Vec x;          // whitened coordinates, theta_post = theta_pr + L^{-1} R x
  int iterations = 0;
  double relative_residual = 0;
  bool converged = false;

  // c(theta_post - theta_pr, theta_post - theta_pr) = ||x||^2
  double prior_norm_sq() const { return x.squaredNorm(); }
};

namespace detail {
template <class G> Vec prior_mean_of(const G &g) {
  if constexpr (requires { g.prior_mean(); })
    return g.prior_mean();
  else
    return Vec::Zero(g.param_dim());
}
template <class G> Vec mean_observation_of(const G &g) {
  if constexpr (requires { g.mean_observation(); })
    return g.mean_observation();
  else
    return Vec::Zero(g.obs_dim());
}
} // namespace detail

/// MAP point from the whitened normal equations (I + G^T W G) x = G^T W (y - F theta_pr),
/// solved matrix-free by CG (one forward and one adjoint solve per iteration).
template <WhitenedMap G>
MapSolveReport map_estimate(const G &g, const NoiseModel &noise, const Vec &w, const Vec &y_obs,
                            double tol = 1e-8, int max_iter = 20000) {
  require(tol > 0, "MAP tolerance must be positive");
  require(y_obs.size() == g.obs_dim(), "observation vector has wrong length");
  const Vec d = weighted_precision(w, noise, g.num_times());
  const Vec b = g.apply_transpose(d.cwiseProduct(y_obs - detail::mean_observation_of(g)));
  auto apply = [&](const Vec &x) -> Vec { return x + g.apply_transpose(d.cwiseProduct(g.apply(x))); };
  const CgReport cg = conjugate_gradient(apply, b, tol, max_iter);
  if (!cg.converged)
    throw NumericalError("MAP solve: CG stopped after " + std::to_string(cg.iterations) +
                         " iterations at relative residual " +
                         std::to_string(cg.relative_residual));
  MapSolveReport rep;
  rep.x = cg.x;
  rep.theta = detail::prior_mean_of(g) + g.to_field(cg.x);
  rep.iterations = cg.iterations;
  rep.relative_residual = cg.relative_residual;
  rep.converged = true;
  return rep;
}

/// Prior nodal variance minus the low-rank correction, floored at zero.
template <WhitenedMap G>
Vec posterior_pointwise_variance(const G &g, const LowRankEig &lr, const Vec &prior_variance) {
  require(prior_variance.size() == g.param_dim(), "prior variance has wrong length");
  Vec var = prior_variance;
  for (Index m = 0; m < lr.rank(); ++m) {
    const double c = lr.lambda[m] / (1 + lr.lambda[m]);
    if (c == 0)
      continue;
    const Vec f = g.to_field(lr.U.col(m));
    var -= c * f.cwiseAbs2();
  }
  return var.cwiseMax(0.0);
}

template <WhitenedMap G> Vec posterior_pointwise_variance(const G &g, const LowRankEig &lr) {
  return posterior_pointwise_variance(g, lr, g.prior_pointwise_variance());
}

// (I + U L U^T)^{-1/2} xi = xi - U (1 - (1+L)^{-1/2}) U^T xi
inline Vec inverse_sqrt_update(const LowRankEig &lr, const Vec &xi) {
  const Vec shrink = (1.0 - (1.0 + lr.lambda.array()).rsqrt()).matrix();
  return xi - lr.U * shrink.cwiseProduct(lr.U.transpose() * xi);
}

template <WhitenedMap G>
Vec sample_posterior(const G &g, const LowRankEig &lr, const Vec &theta_post, const Vec &xi) {
  require(xi.size() == g.param_dim() && theta_post.size() == g.param_dim(),
          "posterior sample: wrong vector length");
  return theta_post + g.to_field(inverse_sqrt_update(lr, xi));
}

struct KlEig {
  Index k;
  ExactEigOptions options{};
};
struct KlRand {
  SketchConfig sketch;
};
struct KlExactDense {
  Index guard = 600;
};
using KlMethod = std::variant<KlEig, KlRand, KlExactDense>;

struct KlResult {
  double kl = 0;
  Vec spectrum;
  MapSolveReport map;
};

/// KL divergence from posterior to prior for data y_obs under design w.
template <WhitenedMap G>
KlResult kl_estimate(const G &g, const NoiseModel &noise, const Vec &w, const Vec &y_obs,
                     const KlMethod &method, double map_tol = 1e-10) {
  KlResult out;
  out.map = map_estimate(g, noise, w, y_obs, map_tol);
  const MisfitHessianOp<G> H(g, w, noise);
  if (const auto *m = std::get_if<KlEig>(&method)) {
    out.spectrum = exact_eigs(H, g.param_dim(), m->k, m->options).eig.lambda;
  } else if (const auto *m = std::get_if<KlRand>(&method)) {
    const SketchResult sk = subspace_iteration(H, g.param_dim(), m->sketch);
    out.spectrum = sym_eigvals_desc(sk.T).cwiseMax(0.0);
  } else {
    const auto &dense = std::get<KlExactDense>(method);
    out.spectrum = DenseOracle(g, noise, dense.guard).evaluate(w).spectrum;
  }
  out.kl = kl_from_spectrum(out.spectrum, out.map.prior_norm_sq());
  return out;
}

} // namespace oed
