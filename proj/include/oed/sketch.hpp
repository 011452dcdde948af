#pragma once

#include "oed/linalg.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace oed {

// A symmetric operator is any callable mapping an n x m block to an n x m block.
template <class Op>
concept BlockOperator = requires(const Op &op, const Mat &X) {
  { op(X) } -> std::convertible_to<Mat>;
};

struct SketchConfig {
  Index k = 20;          // target rank
  Index p = 5;           // oversampling
  int q = 1;             // power iterations
  std::uint64_t seed = 0;

  Index ell() const { return k + p; }

  void validate(Index n) const {
    require(k >= 1, "sketch.k must be >= 1");
    require(p >= 0, "sketch.p must be >= 0");
    require(q >= 1, "sketch.q must be >= 1");
    require(ell() <= n, "sketch: k + p = " + std::to_string(ell()) +
                            " exceeds the operator dimension " + std::to_string(n));
  }
};

struct SketchResult {
  Mat Q; // n x ell, orthonormal columns
  Mat T; // ell x ell, Q^T op Q symmetrized
  Index numerical_rank = 0;
};

/// Randomized subspace iteration. The basis is re-orthonormalized after every
/// operator application; op is applied q + 1 times to ell columns.
template <BlockOperator Op>
SketchResult subspace_iteration(const Op &op, Index n, const SketchConfig &cfg) {
  cfg.validate(n);
  SketchResult out;
  Mat Y = gaussian_matrix(n, cfg.ell(), cfg.seed);
  out.numerical_rank = cfg.ell();
  for (int i = 0; i < cfg.q; ++i)
    Y = thin_q(op(Y), &out.numerical_rank);
  // ell is kept; the surplus columns span a numerically null space. Reported
  // once per process, and only when even the target rank k is not reached.
  static std::atomic<bool> reported{false};
  if (out.numerical_rank < cfg.k && !reported.exchange(true)) {
    std::ostringstream msg;
    msg << "subspace iteration: sketch has numerical rank " << out.numerical_rank << " < k = "
        << cfg.k << "; surplus basis vectors span the operator's numerical null space";
    warn(msg.str());
  }
  out.Q = std::move(Y);
  const Mat T = out.Q.transpose() * op(out.Q);
  out.T = 0.5 * (T + T.transpose());
  return out;
}

struct LowRankEig {
  Mat U;      // orthonormal columns
  Vec lambda; // non-negative, descending

  Index rank() const { return lambda.size(); }

  // U diag(lambda) U^T x
  Vec apply(const Vec &x) const { return U * lambda.cwiseProduct(U.transpose() * x); }
};

/// U = Q U_T, lambda = eig(T) clipped at zero, descending.
inline LowRankEig low_rank_eig(const Mat &Q, const Mat &T) {
  const SymEig e = sym_eig_desc(T);
  return {Q * e.vectors, e.values.cwiseMax(0.0)};
}

enum class EigMethod { Auto, Lanczos, Dense };

struct ExactEigOptions {
  double tol = 1e-10;       // Ritz residual relative to 1 + the Ritz value
  Index max_dim = 0;        // Krylov dimension cap; 0 means n
  std::uint64_t seed = 7;
  EigMethod method = EigMethod::Auto;
  Index dense_limit = 600;  // largest n for the dense fallback
};

struct ExactEigResult {
  LowRankEig eig;
  Vec residuals;            // Ritz residual estimates, one per returned pair
  Index applications = 0;   // operator applications used
};

namespace detail {

template <BlockOperator Op>
ExactEigResult dense_eigs(const Op &op, Index n, Index k) {
  const Mat A = op(Mat::Identity(n, n));
  const SymEig e = sym_eig_desc(A);
  ExactEigResult out;
  out.eig.U = e.vectors.leftCols(k);
  out.eig.lambda = e.values.head(k).cwiseMax(0.0);
  out.applications = n;
  out.residuals.resize(k);
  const Mat R = A * out.eig.U - out.eig.U * e.values.head(k).asDiagonal();
  for (Index i = 0; i < k; ++i)
    out.residuals[i] = R.col(i).norm();
  return out;
}

// Lanczos with full (twice-applied) reorthogonalization. On breakdown the
// recurrence restarts from a random vector orthogonal to the current basis.
// Convergence is judged on the tridiagonal recurrence; the returned pairs come
// from an explicit Rayleigh-Ritz step on the stored products, which keeps small
// eigenvalues accurate when the spectrum spans many orders of magnitude.
template <BlockOperator Op>
ExactEigResult lanczos_eigs(const Op &op, Index n, Index k, const ExactEigOptions &opt) {
  const Index cap = opt.max_dim > 0 ? std::min(opt.max_dim, n) : n;
  std::mt19937_64 rng(opt.seed);
  Mat V(n, cap);
  Mat AV(n, std::min<Index>(cap, 64));
  std::vector<double> alpha, beta;
  Vec v = gaussian_vector(n, rng);
  v.normalize();
  double scale = 0;
  Index next_check = k;
  Vec best_res;
  Index block_start = 0;
  int closed_blocks = 0;

  auto orthogonalize = [&](Vec &w, Index cols) {
    for (int pass = 0; pass < 2; ++pass)
      w -= V.leftCols(cols) * (V.leftCols(cols).transpose() * w);
  };

  for (Index j = 0; j < cap; ++j) {
    V.col(j) = v;
    Vec w = op(Mat(v)).col(0);
    if (j == AV.cols())
      AV.conservativeResize(Eigen::NoChange, std::min(cap, 2 * AV.cols()));
    AV.col(j) = w;
    const double a = v.dot(w);
    w -= a * v;
    if (j > 0)
      w -= beta.back() * V.col(j - 1);
    orthogonalize(w, j + 1);
    alpha.push_back(a);
    double b = w.norm();
    scale = std::max({scale, std::abs(a), b});
    const Index m = j + 1;
    const bool full = (m == n);
    bool breakdown = false;
    double block_max = 0;
    if (!full) {
      if (b <= 1e-15 * std::max(scale, 1e-300)) {
        breakdown = true;
        // Ritz values of the block just closed; a later block that adds nothing
        // above the k-th value means the missing multiplicities were found.
        const Index len = m - block_start;
        Mat Tb = Mat::Zero(len, len);
        for (Index i = 0; i < len; ++i) {
          Tb(i, i) = alpha[block_start + i];
          if (i + 1 < len)
            Tb(i, i + 1) = Tb(i + 1, i) = beta[block_start + i];
        }
        block_max = sym_eigvals_desc(Tb)[0];
        ++closed_blocks;
        block_start = m;
        b = 0;
        Vec r = gaussian_vector(n, rng);
        orthogonalize(r, m);
        v = r.normalized();
      } else {
        v = w / b;
      }
    }
    beta.push_back(full ? 0.0 : b);

    if (m >= k && (m >= next_check || full || breakdown || m == cap)) {
      next_check = m + std::max<Index>(5, m / 10);
      Mat Tm = Mat::Zero(m, m);
      for (Index i = 0; i < m; ++i) {
        Tm(i, i) = alpha[i];
        if (i + 1 < m)
          Tm(i, i + 1) = Tm(i + 1, i) = beta[i];
      }
      const SymEig e = sym_eig_desc(Tm);
      const double ref = std::max(std::abs(e.values[0]), 1e-300);
      Vec res(k);
      for (Index i = 0; i < k; ++i)
        res[i] = std::abs(beta[m - 1] * e.vectors(m - 1, i));
      best_res = res;
      bool done = full;
      if (breakdown)
        done = done || (closed_blocks > 1 && (block_max <= e.values[k - 1] - opt.tol * ref ||
                                              block_max <= 1e-14 * ref));
      else
        done = done || (res.array() <= opt.tol * (1.0 + e.values.head(k).array().abs())).all();
      if (done) {
        const Mat P = V.leftCols(m).transpose() * AV.leftCols(m);
        const SymEig rr = sym_eig_desc(0.5 * (P + P.transpose()));
        ExactEigResult out;
        out.eig.U = V.leftCols(m) * rr.vectors.leftCols(k);
        out.eig.lambda = rr.values.head(k).cwiseMax(0.0);
        out.residuals = res;
        out.applications = m;
        return out;
      }
    }
  }
  std::ostringstream msg;
  msg << "Lanczos did not converge within " << cap << " steps; best Ritz residuals:";
  for (Index i = 0; i < best_res.size(); ++i)
    msg << ' ' << best_res[i];
  throw NumericalError(msg.str());
}

} // namespace detail

/// Top-k eigenpairs of a symmetric positive semidefinite operator.
template <BlockOperator Op>
ExactEigResult exact_eigs(const Op &op, Index n, Index k, const ExactEigOptions &opt = {}) {
  require(k >= 1 && k <= n, "exact_eigs: need 1 <= k <= n");
  switch (opt.method) {
  case EigMethod::Dense:
    require(n <= opt.dense_limit, "exact_eigs: dense method refused above the size guard");
    return detail::dense_eigs(op, n, k);
  case EigMethod::Lanczos:
    return detail::lanczos_eigs(op, n, k, opt);
  case EigMethod::Auto:
  default:
    try {
      return detail::lanczos_eigs(op, n, k, opt);
    } catch (const NumericalError &) {
      if (n > opt.dense_limit)
        throw;
      warn("Lanczos failed to converge; falling back to the dense eigensolver");
      return detail::dense_eigs(op, n, k);
    }
  }
}

/// Gaussian-sketch constant of the expectation bounds; requires p >= 2.
inline double cge_constant(Index k, Index p, Index n) {
  require(p >= 2, "C_ge requires oversampling p >= 2");
  require(k >= 1 && n >= k, "C_ge requires 1 <= k <= n");
  using std::numbers::e;
  using std::numbers::pi;
  const double kp = static_cast<double>(k + p), p1 = static_cast<double>(p + 1);
  const double mu = std::sqrt(static_cast<double>(n - k)) + std::sqrt(kp);
  return e * e * kp / (p1 * p1) * std::pow(1.0 / (2 * pi * p1), 2.0 / p1) *
         std::pow(mu + std::numbers::sqrt2, 2) * (p1 / (p - 1.0));
}

struct SpectrumSplit {
  Vec dominant; // top-k eigenvalues
  Vec tail;     // remaining eigenvalues
  double gap_ratio = 0; // lambda_{k+1} / lambda_k
};

inline SpectrumSplit split_spectrum(const Vec &spectrum_desc, Index k) {
  require(k >= 1 && k <= spectrum_desc.size(), "split_spectrum: k out of range");
  SpectrumSplit s;
  const Vec clipped = spectrum_desc.cwiseMax(0.0);
  s.dominant = clipped.head(k);
  s.tail = clipped.tail(clipped.size() - k);
  const double lk = s.dominant[k - 1];
  const double lk1 = s.tail.size() ? s.tail[0] : 0.0;
  s.gap_ratio = lk > 0 ? lk1 / lk : (lk1 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  return s;
}

enum class BoundKind {
  KlEig,             // 1/2 [logdet(I + L2) + tr L2]
  KlRand,            // expected KL error, randomized
  LogdetEig,         // logdet(I + L2), attained with equality by Eig-k
  LogdetRand,        // expected objective error, randomized
  GradRandComponent, // ||Z_j|| (1 + g C) tr L2
  GradEigComponent,  // ||Z_j|| sum l/(1+l)
  GradNormEig,       // sqrt(sum ||Z_j||^2) sum l/(1+l)
  GradNormRand,      // (sum ||Z_j||) (1 + g C) tr L2
  Frozen             // logdet(I + Sigma_2^2)
};

struct BoundInputs {
  SpectrumSplit split;
  SketchConfig sketch; // k, p, q for the randomized kinds
  Index n = 0;         // operator dimension for C_ge
  double z_norm = 0;   // ||Z_j||_2 for component kinds
  Vec z_norms;         // all ||Z_j||_2 for norm kinds
  Vec discarded_singular_values; // frozen kind
};

inline bool is_randomized(BoundKind kind) {
  return kind == BoundKind::KlRand || kind == BoundKind::LogdetRand ||
         kind == BoundKind::GradRandComponent || kind == BoundKind::GradNormRand;
}

inline double error_bound(BoundKind kind, const BoundInputs &in) {
  const Vec &tail = in.split.tail;
  const double tr = tail.sum();
  const double ld = logdet_ip_spectrum(tail);
  const double damp = (tail.array() / (1.0 + tail.array())).sum();

  double amp = 0; // gamma^{2q-1} C_ge
  if (is_randomized(kind)) {
    require(in.split.gap_ratio < 1, "randomized bounds require gap ratio < 1");
    const double cge = cge_constant(in.sketch.k, in.sketch.p, in.n);
    amp = std::pow(in.split.gap_ratio, 2 * in.sketch.q - 1) * cge;
  }

  switch (kind) {
  case BoundKind::KlEig:
    return 0.5 * (ld + tr);
  case BoundKind::KlRand:
    return 0.5 * ((1 + amp) * tr + ld + logdet_ip_spectrum(amp * tail));
  case BoundKind::LogdetEig:
    return ld;
  case BoundKind::LogdetRand:
    return ld + logdet_ip_spectrum(amp * tail);
  case BoundKind::GradRandComponent:
    return in.z_norm * (1 + amp) * tr;
  case BoundKind::GradEigComponent:
    return in.z_norm * damp;
  case BoundKind::GradNormEig:
    return in.z_norms.norm() * damp;
  case BoundKind::GradNormRand:
    return in.z_norms.sum() * (1 + amp) * tr;
  case BoundKind::Frozen:
    return logdet_ip_spectrum(in.discarded_singular_values.array().square().matrix());
  }
  return 0;
}

} // namespace oed
