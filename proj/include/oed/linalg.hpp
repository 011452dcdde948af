#pragma once

#include "oed/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <random>

namespace oed {

// Eigenvalues of a symmetric matrix in descending order, with matching vectors.
struct SymEig {
  Vec values;
  Mat vectors;
};

inline SymEig sym_eig_desc(const Mat &A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
  if (es.info() != Eigen::Success)
    throw NumericalError("symmetric eigensolver failed");
  SymEig out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  return out;
}

inline Vec sym_eigvals_desc(const Mat &A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericalError("symmetric eigensolver failed");
  return es.eigenvalues().reverse();
}

// sum log(1 + max(l,0)) over a spectrum
inline double logdet_ip_spectrum(const Vec &lambda) {
  double s = 0;
  for (Index i = 0; i < lambda.size(); ++i)
    s += std::log1p(std::max(lambda[i], 0.0));
  return s;
}

// log det(I + A) for symmetric positive semidefinite A
inline double logdet_ip(const Mat &A) { return logdet_ip_spectrum(sym_eigvals_desc(A)); }

// Orthonormal basis with as many columns as Y whose span contains range(Y).
// numerical_rank receives the column-pivoted QR rank estimate.
inline Mat thin_q(const Mat &Y, Index *numerical_rank = nullptr) {
  Eigen::ColPivHouseholderQR<Mat> qr(Y);
  if (numerical_rank) {
    const double scale = qr.maxPivot();
    qr.setThreshold(scale > 0 ? 1e-12 : 0.0);
    *numerical_rank = scale > 0 ? qr.rank() : 0;
  }
  return qr.householderQ() * Mat::Identity(Y.rows(), Y.cols());
}

// One standard Gaussian column per index, each from its own seeded stream, so
// the draw does not depend on evaluation order or thread count.
inline Mat gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  Mat G(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    for (Index r = 0; r < rows; ++r)
      G(r, c) = normal(rng);
  }
  return G;
}

inline Vec gaussian_vector(Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal;
  Vec v(n);
  for (Index i = 0; i < n; ++i)
    v[i] = normal(rng);
  return v;
}

// Random orthogonal matrix from the QR of a Gaussian matrix (test fixtures).
inline Mat random_orthogonal(Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<Mat> qr(gaussian_matrix(n, n, seed));
  return qr.householderQ() * Mat::Identity(n, n);
}

struct CgReport {
  Vec x;
  int iterations = 0;
  double relative_residual = 0;
  bool converged = false;
};

/// Conjugate gradients for a symmetric positive definite operator.
/// on_iterate(k, x_k) is called after every update when provided.
inline CgReport conjugate_gradient(const std::function<Vec(const Vec &)> &apply, const Vec &b,
                                   double tol, int max_iter,
                                   const std::function<void(int, const Vec &)> &on_iterate = {}) {
  CgReport rep;
  rep.x = Vec::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0) {
    rep.converged = true;
    return rep;
  }
  Vec r = b, p = r;
  double rr = r.squaredNorm();
  for (int k = 0; k < max_iter; ++k) {
    const Vec Ap = apply(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0))
      throw NumericalError("conjugate gradients: operator is not positive definite");
    const double alpha = rr / pAp;
    rep.x += alpha * p;
    r -= alpha * Ap;
    const double rr_new = r.squaredNorm();
    rep.iterations = k + 1;
    if (on_iterate)
      on_iterate(k + 1, rep.x);
    rep.relative_residual = std::sqrt(rr_new) / bnorm;
    if (rep.relative_residual <= tol) {
      rep.converged = true;
      return rep;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return rep;
}

} // namespace oed
