#pragma once

#include "oed/prior.hpp"
#include "oed/sketch.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

namespace oed {

inline void check_weights(const Vec &w, Index num_sensors) {
  require(w.size() == num_sensors, "design weights have length " + std::to_string(w.size()) +
                                       ", expected " + std::to_string(num_sensors));
  for (Index i = 0; i < w.size(); ++i)
    require(w[i] >= 0 && w[i] <= 1, "design weight " + std::to_string(i) + " outside [0, 1]");
}

/// Diagonal observation noise, one standard deviation per sensor.
struct NoiseModel {
  Vec sigma;

  NoiseModel() = default;
  explicit NoiseModel(Vec s) : sigma(std::move(s)) {
    require(sigma.size() > 0, "noise model needs at least one sensor");
    require((sigma.array() > 0).all(), "noise standard deviations must be strictly positive");
  }

  Index num_sensors() const { return sigma.size(); }
  Vec inv_var() const { return sigma.array().square().inverse(); }
};

// Diagonal of W^sigma in the stacked observation ordering: w_j / sigma_j^2 at m*ns + j.
inline Vec weighted_precision(const Vec &w, const NoiseModel &noise, Index num_times) {
  const Index ns = noise.num_sensors();
  check_weights(w, ns);
  const Vec d = w.cwiseProduct(noise.inv_var());
  Vec out(ns * num_times);
  for (Index m = 0; m < num_times; ++m)
    out.segment(m * ns, ns) = d;
  return out;
}

/// x -> G^T W^sigma G x, never formed.
template <WhitenedMap G> class MisfitHessianOp {
public:
  MisfitHessianOp(const G &g, const Vec &w, const NoiseModel &noise)
      : g_(&g), d_(weighted_precision(w, noise, g.num_times())) {
    require(noise.num_sensors() == g.num_sensors(), "noise model and forward map disagree on n_s");
  }

  Index size() const { return g_->param_dim(); }

  Mat operator()(const Mat &X) const { return apply(X, nullptr); }

  // Optionally hands back G X, which the randomized estimator may reuse.
  Mat apply(const Mat &X, Mat *GX) const {
    Mat Y = apply_block(*g_, X);
    Mat out = apply_transpose_block(*g_, d_.asDiagonal() * Y);
    if (GX)
      *GX = std::move(Y);
    return out;
  }

  Vec apply(const Vec &x) const { return operator()(Mat(x)).col(0); }

private:
  const G *g_;
  Vec d_;
};

/// z_j = tr(Z_j) with Z_j = sigma_j^{-2} sum_m f_jm f_jm^T and f_jm = G^T(v_m (x) e_j);
/// spectral norms of Z_j are kept for the gradient error bounds.
struct SensorDerivConstants {
  Vec z;
  Vec z_norm;
  bool frozen = false; // true when derived from a truncated SVD of G
};

template <WhitenedMap G>
SensorDerivConstants precompute_z(const G &g, const NoiseModel &noise) {
  const Index ns = g.num_sensors(), nt = g.num_times(), n = g.param_dim();
  require(noise.num_sensors() == ns, "noise model and forward map disagree on n_s");
  std::vector<Mat> F(ns, Mat(n, nt));
  parallel_for(ns * nt, [&](Index idx) {
    const Index j = idx / nt, m = idx % nt;
    Vec e = Vec::Zero(g.obs_dim());
    e[m * ns + j] = 1.0;
    F[j].col(m) = g.apply_transpose(e);
  });
  const Vec iv = noise.inv_var();
  SensorDerivConstants out;
  out.z.resize(ns);
  out.z_norm.resize(ns);
  for (Index j = 0; j < ns; ++j) {
    out.z[j] = iv[j] * F[j].squaredNorm();
    out.z_norm[j] = iv[j] * sym_eigvals_desc(F[j].transpose() * F[j])[0];
  }
  return out;
}

namespace detail {
inline constexpr char kZCacheMagic[8] = {'O', 'E', 'D', 'Z', 'C', 'A', 'C', 'H'};
inline constexpr std::uint32_t kZCacheVersion = 1;
} // namespace detail

inline void write_z_cache(const std::filesystem::path &path, std::uint64_t hash,
                          const SensorDerivConstants &zc) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw NumericalError("cannot write z cache " + path.string());
  const std::uint64_t ns = static_cast<std::uint64_t>(zc.z.size());
  os.write(detail::kZCacheMagic, 8);
  os.write(reinterpret_cast<const char *>(&detail::kZCacheVersion), sizeof(std::uint32_t));
  os.write(reinterpret_cast<const char *>(&hash), sizeof hash);
  os.write(reinterpret_cast<const char *>(&ns), sizeof ns);
  os.write(reinterpret_cast<const char *>(zc.z.data()), static_cast<std::streamsize>(ns * 8));
  os.write(reinterpret_cast<const char *>(zc.z_norm.data()), static_cast<std::streamsize>(ns * 8));
}

// Returns false (and leaves zc untouched) when the file is missing, malformed,
// from another version, or keyed by a different hash.
inline bool read_z_cache(const std::filesystem::path &path, std::uint64_t hash, Index ns,
                         SensorDerivConstants &zc) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    return false;
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t stored_hash = 0, stored_ns = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char *>(&version), sizeof version);
  is.read(reinterpret_cast<char *>(&stored_hash), sizeof stored_hash);
  is.read(reinterpret_cast<char *>(&stored_ns), sizeof stored_ns);
  if (!is || std::memcmp(magic, detail::kZCacheMagic, 8) != 0 ||
      version != detail::kZCacheVersion || stored_hash != hash ||
      stored_ns != static_cast<std::uint64_t>(ns))
    return false;
  SensorDerivConstants tmp;
  tmp.z.resize(ns);
  tmp.z_norm.resize(ns);
  is.read(reinterpret_cast<char *>(tmp.z.data()), static_cast<std::streamsize>(ns * 8));
  is.read(reinterpret_cast<char *>(tmp.z_norm.data()), static_cast<std::streamsize>(ns * 8));
  if (!is)
    return false;
  zc = std::move(tmp);
  return true;
}

/// Cached precompute_z. A stale or foreign cache is recomputed with a warning.
template <WhitenedMap G>
SensorDerivConstants load_or_compute_z(const G &g, const NoiseModel &noise,
                                       const std::filesystem::path &path, std::uint64_t hash) {
  SensorDerivConstants zc;
  if (read_z_cache(path, hash, g.num_sensors(), zc))
    return zc;
  if (std::filesystem::exists(path))
    warn("z cache " + path.string() + " does not match this configuration; recomputing");
  zc = precompute_z(g, noise);
  write_z_cache(path, hash, zc);
  return zc;
}

/// Objective, gradient and the spectrum behind them, plus PDE solves spent.
struct Estimate {
  double J = 0;
  Vec grad;
  Vec spectrum;
  SolveCount cost;
  Index numerical_rank = -1; // randomized sketch only
};

namespace detail {

// z_j - sum_i c_i sigma_j^{-2} sum_m q_i[m*ns+j]^2, with q_i = G u_i.
inline Vec gradient_from_pairs(const Vec &z, const Vec &inv_var, const Mat &GU, const Vec &lambda,
                               Index ns, Index nt) {
  Vec grad = z;
  for (Index i = 0; i < lambda.size(); ++i) {
    const double c = lambda[i] / (1 + lambda[i]);
    if (c == 0)
      continue;
    for (Index m = 0; m < nt; ++m)
      for (Index j = 0; j < ns; ++j)
        grad[j] -= c * inv_var[j] * GU(m * ns + j, i) * GU(m * ns + j, i);
  }
  return grad;
}

} // namespace detail

/// Eig-k: top-k exact eigenpairs of the misfit Hessian.
template <WhitenedMap G>
Estimate objective_grad_eig(const G &g, const NoiseModel &noise, const SensorDerivConstants &zc,
                            const Vec &w, Index k, const ExactEigOptions &opt = {}) {
  require(k >= 1 && k <= std::min(g.obs_dim(), g.param_dim()),
          "eig estimator requires 1 <= k <= min(n_y, n)");
  const SolveCount start = solve_snapshot();
  const MisfitHessianOp<G> H(g, w, noise);
  const ExactEigResult eig = exact_eigs(H, g.param_dim(), k, opt);
  const Mat GU = apply_block(g, eig.eig.U);
  Estimate out;
  out.spectrum = eig.eig.lambda;
  out.J = logdet_ip_spectrum(out.spectrum);
  out.grad = detail::gradient_from_pairs(zc.z, noise.inv_var(), GU, out.spectrum,
                                         g.num_sensors(), g.num_times());
  out.cost = solve_snapshot() - start;
  return out;
}

/// Randomized estimator: J = logdet(I + T) from the sketch, gradient via the
/// Woodbury form with q_i = G u_i. With reuse_products, G Q from the final
/// Hessian application is recycled instead of paying ell more forward solves.
template <WhitenedMap G>
Estimate objective_grad_rand(const G &g, const NoiseModel &noise, const SensorDerivConstants &zc,
                             const Vec &w, const SketchConfig &cfg, bool reuse_products = false) {
  const SolveCount start = solve_snapshot();
  const MisfitHessianOp<G> H(g, w, noise);
  Mat last_GX;
  auto op = [&](const Mat &X) { return H.apply(X, &last_GX); };
  const SketchResult sk = subspace_iteration(op, g.param_dim(), cfg);
  const SymEig te = sym_eig_desc(sk.T);
  Estimate out;
  out.spectrum = te.values.cwiseMax(0.0);
  out.J = logdet_ip_spectrum(out.spectrum);
  out.numerical_rank = sk.numerical_rank;
  const Mat GU = reuse_products ? Mat(last_GX * te.vectors) : apply_block(g, Mat(sk.Q * te.vectors));
  out.grad = detail::gradient_from_pairs(zc.z, noise.inv_var(), GU, out.spectrum,
                                         g.num_sensors(), g.num_times());
  out.cost = solve_snapshot() - start;
  return out;
}

/// Truncated SVD of G, G ~ U diag(s) V^T, reused for every design.
struct FrozenSVD {
  Mat U;  // n_y x k_f
  Vec s;  // descending
  Vec discarded; // singular values beyond k_f that the factorization saw
  Index num_sensors = 0, num_times = 0;
  SolveCount cost;

  Index rank() const { return s.size(); }
};

struct FrozenOptions {
  Index p = 5;
  int q = 1;
  std::uint64_t seed = 0;
  bool exact = false; // dense SVD of the materialized G (n forward solves)
};

template <WhitenedMap G>
FrozenSVD build_frozen(const G &g, Index k_f, const FrozenOptions &opt = {}) {
  const Index ny = g.obs_dim(), n = g.param_dim();
  require(k_f >= 1 && k_f <= std::min(ny, n), "frozen rank must satisfy 1 <= k_f <= min(n_y, n)");
  require(opt.p >= 0 && opt.q >= 0, "frozen sketch needs p >= 0 and q >= 0");
  const SolveCount start = solve_snapshot();
  FrozenSVD out;
  out.num_sensors = g.num_sensors();
  out.num_times = g.num_times();
  Mat Uall;
  Vec sall;
  if (opt.exact) {
    Eigen::JacobiSVD<Mat> svd(materialize(g), Eigen::ComputeThinU);
    Uall = svd.matrixU();
    sall = svd.singularValues();
  } else {
    const Index ell = std::min({k_f + opt.p, ny, n});
    Mat Q = thin_q(apply_block(g, gaussian_matrix(n, ell, opt.seed)));
    for (int i = 0; i < opt.q; ++i) {
      const Mat Z = thin_q(apply_transpose_block(g, Q));
      Q = thin_q(apply_block(g, Z));
    }
    const Mat B = apply_transpose_block(g, Q).transpose(); // Q^T G
    Eigen::JacobiSVD<Mat> svd(B, Eigen::ComputeThinU);
    Uall = Q * svd.matrixU();
    sall = svd.singularValues();
  }
  out.U = Uall.leftCols(k_f);
  out.s = sall.head(k_f);
  out.discarded = sall.tail(sall.size() - k_f);
  out.cost = solve_snapshot() - start;
  return out;
}

/// Frozen estimator: logdet(I + S U^T W^sigma U S); no PDE solves.
inline Estimate objective_grad_frozen(const FrozenSVD &fz, const NoiseModel &noise, const Vec &w) {
  const Index ns = fz.num_sensors, nt = fz.num_times;
  require(noise.num_sensors() == ns, "noise model and frozen SVD disagree on n_s");
  const Vec d = weighted_precision(w, noise, nt);
  const Mat B = fz.U * fz.s.asDiagonal();
  const Index k = B.cols();
  Mat A = Mat::Identity(k, k) + B.transpose() * d.asDiagonal() * B;
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("frozen estimator: I + S U^T W U S is not positive definite");
  Estimate out;
  out.J = 2 * llt.matrixLLT().diagonal().array().log().sum();
  out.spectrum = (sym_eigvals_desc(A).array() - 1.0).cwiseMax(0.0);
  const Mat X = llt.solve(Mat(B.transpose()));
  const Vec iv = noise.inv_var();
  out.grad = Vec::Zero(ns);
  for (Index m = 0; m < nt; ++m)
    for (Index j = 0; j < ns; ++j) {
      const Index r = m * ns + j;
      out.grad[j] += iv[j] * B.row(r).dot(X.col(r));
    }
  return out;
}

/// Sensor constants implied by the frozen factorization (zero PDE solves).
inline SensorDerivConstants frozen_z(const FrozenSVD &fz, const NoiseModel &noise) {
  SensorDerivConstants zc;
  zc.z = objective_grad_frozen(fz, noise, Vec::Zero(fz.num_sensors)).grad;
  zc.z_norm = Vec::Zero(fz.num_sensors);
  zc.frozen = true;
  return zc;
}

/// 1/2 [sum log(1+l) - sum l/(1+l) + c(theta_post, theta_post)]
inline double kl_from_spectrum(const Vec &lambda, double prior_norm_sq) {
  double s = 0;
  for (Index i = 0; i < lambda.size(); ++i) {
    const double l = std::max(lambda[i], 0.0);
    s += std::log1p(l) - l / (1 + l);
  }
  return 0.5 * (s + prior_norm_sq);
}

/// Dense oracle on a materialized G; n <= guard.
class DenseOracle {
public:
  template <WhitenedMap G>
  DenseOracle(const G &g, const NoiseModel &noise, Index guard = 600)
      : ns_(g.num_sensors()), nt_(g.num_times()), noise_(noise) {
    require(g.param_dim() <= guard, "dense reference refused: n = " +
                                        std::to_string(g.param_dim()) + " exceeds the guard " +
                                        std::to_string(guard));
    require(noise.num_sensors() == ns_, "noise model and forward map disagree on n_s");
    const SolveCount start = solve_snapshot();
    G_ = materialize(g);
    cost_ = solve_snapshot() - start;
  }

  DenseOracle(Mat G, Index ns, Index nt, const NoiseModel &noise)
      : G_(std::move(G)), ns_(ns), nt_(nt), noise_(noise) {
    require(G_.rows() == ns * nt, "dense oracle: G rows must equal ns * nt");
  }

  const Mat &G() const { return G_; }
  Index param_dim() const { return G_.cols(); }
  Index num_sensors() const { return ns_; }
  Index num_times() const { return nt_; }
  const NoiseModel &noise() const { return noise_; }
  SolveCount materialization_cost() const { return cost_; }

  Mat hessian(const Vec &w) const {
    const Vec d = weighted_precision(w, noise_, nt_);
    Mat H = G_.transpose() * d.asDiagonal() * G_;
    return 0.5 * (H + H.transpose());
  }

  // Z_j = sigma_j^{-2} sum_m g_r g_r^T over rows r = m*ns + j
  Mat Z(Index j) const {
    Mat Zj = Mat::Zero(param_dim(), param_dim());
    for (Index m = 0; m < nt_; ++m) {
      const Vec r = G_.row(m * ns_ + j).transpose();
      Zj += r * r.transpose();
    }
    return Zj / (noise_.sigma[j] * noise_.sigma[j]);
  }

  SensorDerivConstants z() const {
    SensorDerivConstants zc;
    zc.z.resize(ns_);
    zc.z_norm.resize(ns_);
    for (Index j = 0; j < ns_; ++j) {
      const Mat Zj = Z(j);
      zc.z[j] = Zj.trace();
      zc.z_norm[j] = sym_eigvals_desc(Zj)[0];
    }
    return zc;
  }

  // Eigenvalues of H(w) as squared singular values of W^{1/2} G, padded to n.
  // Small eigenvalues keep far better accuracy than from the formed Hessian.
  Vec spectrum(const Vec &w) const {
    const Vec d = weighted_precision(w, noise_, nt_);
    const Mat B = d.cwiseSqrt().asDiagonal() * G_;
    const Vec s = Eigen::BDCSVD<Mat>(B).singularValues();
    Vec out = Vec::Zero(param_dim());
    out.head(s.size()) = s.cwiseAbs2();
    return out;
  }

  Estimate evaluate(const Vec &w) const {
    const Mat H = hessian(w);
    const Index n = param_dim();
    Estimate out;
    out.spectrum = spectrum(w);
    out.J = logdet_ip_spectrum(out.spectrum);
    Eigen::LLT<Mat> llt(Mat::Identity(n, n) + H);
    if (llt.info() != Eigen::Success)
      throw NumericalError("dense reference: I + H is not positive definite");
    const Mat X = llt.solve(Mat(G_.transpose()));
    const Vec iv = noise_.inv_var();
    out.grad = Vec::Zero(ns_);
    for (Index m = 0; m < nt_; ++m)
      for (Index j = 0; j < ns_; ++j) {
        const Index r = m * ns_ + j;
        out.grad[j] += iv[j] * G_.row(r).dot(X.col(r));
      }
    return out;
  }

  double objective(const Vec &w) const { return logdet_ip_spectrum(spectrum(w)); }

  // Whitened MAP coordinates (I + H)^{-1} G^T W y for a zero prior mean.
  Vec map_whitened(const Vec &w, const Vec &y) const {
    const Vec d = weighted_precision(w, noise_, nt_);
    const Index n = param_dim();
    Eigen::LLT<Mat> llt(Mat::Identity(n, n) + hessian(w));
    return llt.solve(G_.transpose() * d.cwiseProduct(y));
  }

  // Exact KL divergence from posterior to prior for data y.
  double kl(const Vec &w, const Vec &y) const {
    return kl_from_spectrum(spectrum(w), map_whitened(w, y).squaredNorm());
  }

private:
  Mat G_;
  Index ns_, nt_;
  NoiseModel noise_;
  SolveCount cost_;
};

template <WhitenedMap G>
Estimate dense_reference(const G &g, const NoiseModel &noise, const Vec &w, Index guard = 600) {
  const SolveCount start = solve_snapshot();
  Estimate e = DenseOracle(g, noise, guard).evaluate(w);
  e.cost = solve_snapshot() - start;
  return e;
}

inline double expected_info_gain(double J) { return 0.5 * J; }

enum class EstimatorMethod { Eig, Rand, Frozen, Dense };

inline EstimatorMethod parse_estimator(const std::string &s) {
  if (s == "eig")
    return EstimatorMethod::Eig;
  if (s == "rand")
    return EstimatorMethod::Rand;
  if (s == "frozen")
    return EstimatorMethod::Frozen;
  if (s == "dense")
    return EstimatorMethod::Dense;
  throw ValidationError("opt.method must be one of eig, rand, frozen, dense; got '" + s + "'");
}

inline std::string to_string(EstimatorMethod m) {
  switch (m) {
  case EstimatorMethod::Eig:
    return "eig";
  case EstimatorMethod::Rand:
    return "rand";
  case EstimatorMethod::Frozen:
    return "frozen";
  case EstimatorMethod::Dense:
    return "dense";
  }
  return "?";
}

// Objective/gradient oracle as consumed by the optimizer.
using EstimatorFn = std::function<Estimate(const Vec &)>;

} // namespace oed
