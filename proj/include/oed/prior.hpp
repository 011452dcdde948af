#pragma once

#include "oed/mass_factor.hpp"
#include "oed/transport.hpp"

#include <concepts>
#include <memory>
#include <random>

namespace oed {

/// Laplacian-like prior: precision square root L = alpha K + beta M with
/// nodal covariance L^{-1} M L^{-1}. The covariance is never formed.
class PriorOperator {
public:
  PriorOperator(const SpMat &K, const MassFactor &mass, double alpha, double beta,
                Vec mean = Vec())
      : alpha_(alpha), beta_(beta), mass_(&mass) {
    require(alpha >= 0 && beta > 0, "prior requires alpha >= 0 and beta > 0");
    L_ = alpha * K + beta * mass.mass();
    L_.makeCompressed();
    llt_.compute(L_);
    if (llt_.info() != Eigen::Success)
      throw NumericalError("factorization of the prior operator failed (not SPD)");
    mean_ = mean.size() ? std::move(mean) : Vec::Zero(L_.rows());
    require(mean_.size() == L_.rows(), "prior mean has wrong length");
  }

  Index size() const { return L_.rows(); }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  const SpMat &L() const { return L_; }
  const Vec &mean() const { return mean_; }
  const MassFactor &mass_factor() const { return *mass_; }

  Vec solve_L(const Vec &b) const { return llt_.solve(b); }

  // Gamma_prior^{1/2} v = L^{-1} M v
  Vec apply_sqrt(const Vec &v) const {
    require(v.size() == size(), "apply_prior_sqrt: wrong length");
    return solve_L(mass_->mass() * v);
  }

  // theta^T L M^{-1} L theta = ||R^{-1} L theta||^2
  double weighted_norm_sq(const Vec &theta) const {
    require(theta.size() == size(), "prior_weighted_norm_sq: wrong length");
    return mass_->solve_R(L_ * theta).squaredNorm();
  }

  // mean + L^{-1} R xi, nodal covariance L^{-1} M L^{-1}
  Vec sample(const Vec &xi) const {
    require(xi.size() == size(), "sample_prior: wrong length");
    return mean_ + solve_L(mass_->apply_R(xi));
  }

  // Diagonal of L^{-1} M L^{-1}: ||R^T L^{-1} e_i||^2, one solve per node.
  Vec pointwise_variance() const {
    Vec var(size());
    parallel_for(size(), [&](Index i) {
      Vec e = Vec::Zero(size());
      e[i] = 1.0;
      var[i] = mass_->apply_Rt(solve_L(e)).squaredNorm();
    });
    return var;
  }

private:
  double alpha_, beta_;
  const MassFactor *mass_;
  SpMat L_;
  Eigen::SimplicialLLT<SpMat> llt_;
  Vec mean_;
};

// A whitened forward map G: R^n -> R^{ns*nt} with observations stacked
// time-major. All estimators are written against this interface.
template <class G>
concept WhitenedMap = requires(const G &g, const Vec &v) {
  { g.param_dim() } -> std::convertible_to<Index>;
  { g.obs_dim() } -> std::convertible_to<Index>;
  { g.num_sensors() } -> std::convertible_to<Index>;
  { g.num_times() } -> std::convertible_to<Index>;
  { g.apply(v) } -> std::convertible_to<Vec>;
  { g.apply_transpose(v) } -> std::convertible_to<Vec>;
  { g.to_field(v) } -> std::convertible_to<Vec>;
};

template <WhitenedMap G> Mat apply_block(const G &g, const Mat &X) {
  Mat Y(g.obs_dim(), X.cols());
  parallel_for(X.cols(), [&](Index c) { Y.col(c) = g.apply(X.col(c)); });
  return Y;
}

template <WhitenedMap G> Mat apply_transpose_block(const G &g, const Mat &Y) {
  Mat X(g.param_dim(), Y.cols());
  parallel_for(Y.cols(), [&](Index c) { X.col(c) = g.apply_transpose(Y.col(c)); });
  return X;
}

/// G = F L^{-1} R. Each application costs one PDE solve plus sparse solves.
class WhitenedForwardMap {
public:
  WhitenedForwardMap(const AdvectionDiffusion &forward, const PriorOperator &prior)
      : forward_(&forward), prior_(&prior) {
    require(forward.param_dim() == prior.size(), "forward map and prior dimensions differ");
  }

  Index param_dim() const { return prior_->size(); }
  Index obs_dim() const { return forward_->obs_dim(); }
  Index num_sensors() const { return forward_->observation().num_sensors(); }
  Index num_times() const { return forward_->observation().num_times(); }

  Vec apply(const Vec &x) const {
    require(x.size() == param_dim(), "apply_G: wrong length");
    return forward_->forward(to_field(x));
  }

  Vec apply_transpose(const Vec &y) const {
    require(y.size() == obs_dim(), "apply_Gt: wrong length");
    return prior_->mass_factor().apply_Rt(prior_->solve_L(forward_->adjoint(y)));
  }

  // Whitened coordinates to a nodal field (without the prior mean).
  Vec to_field(const Vec &x) const { return prior_->solve_L(prior_->mass_factor().apply_R(x)); }

  Vec prior_pointwise_variance() const { return prior_->pointwise_variance(); }
  const Vec &prior_mean() const { return prior_->mean(); }
  Vec mean_observation() const {
    if (prior_->mean().isZero(0.0))
      return Vec::Zero(obs_dim());
    return forward_->forward(prior_->mean());
  }

  const AdvectionDiffusion &forward() const { return *forward_; }
  const PriorOperator &prior() const { return *prior_; }

private:
  const AdvectionDiffusion *forward_;
  const PriorOperator *prior_;
};

/// Explicit whitened map, for synthetic instances and dense oracles.
class DenseWhitenedMap {
public:
  DenseWhitenedMap(Mat G, Index num_sensors, Index num_times)
      : G_(std::move(G)), ns_(num_sensors), nt_(num_times) {
    require(G_.rows() == ns_ * nt_, "dense map rows must equal ns * nt");
  }

  Index param_dim() const { return G_.cols(); }
  Index obs_dim() const { return G_.rows(); }
  Index num_sensors() const { return ns_; }
  Index num_times() const { return nt_; }
  Vec apply(const Vec &x) const { return G_ * x; }
  Vec apply_transpose(const Vec &y) const { return G_.transpose() * y; }
  Vec to_field(const Vec &x) const { return x; }
  Vec prior_pointwise_variance() const { return Vec::Ones(param_dim()); }
  const Mat &matrix() const { return G_; }

private:
  Mat G_;
  Index ns_, nt_;
};

/// Materializes G: by columns (n applications of G) or, when n_y < n, by rows
/// (n_y applications of G^T).
template <WhitenedMap G> Mat materialize(const G &g) {
  if (g.obs_dim() < g.param_dim())
    return apply_transpose_block(g, Mat::Identity(g.obs_dim(), g.obs_dim())).transpose();
  return apply_block(g, Mat::Identity(g.param_dim(), g.param_dim()));
}

} // namespace oed
