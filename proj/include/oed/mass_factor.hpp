#pragma once

#include "oed/assembly.hpp"

#include <Eigen/SparseCholesky>

namespace oed {

enum class MassMode { Lumped, Cholesky };

inline MassMode parse_mass_mode(const std::string &s) {
  if (s == "lumped")
    return MassMode::Lumped;
  if (s == "cholesky")
    return MassMode::Cholesky;
  throw ValidationError("mass.mode must be 'lumped' or 'cholesky', got '" + s + "'");
}

inline std::string to_string(MassMode m) { return m == MassMode::Lumped ? "lumped" : "cholesky"; }

// Factor R with M = R R^T. Lumped mode: R = diag(sqrt(row sums of M)), and the
// lumped matrix replaces M everywhere downstream. Cholesky mode: R is the
// lower-triangular Cholesky factor of the consistent M (natural ordering, so no
// permutation is hidden in R).
class MassFactor {
public:
  MassFactor() = default;

  MassFactor(const SpMat &M, MassMode mode) : mode_(mode) {
    require(M.rows() == M.cols(), "mass matrix must be square");
    if (mode == MassMode::Lumped) {
      mass_ = lump(M);
      diag_ = mass_.diagonal();
      if ((diag_.array() <= 0).any())
        throw NumericalError("lumped mass has a non-positive row sum");
      diag_ = diag_.cwiseSqrt();
      R_ = SpMat(M.rows(), M.cols());
      R_.reserve(Eigen::VectorXi::Constant(M.cols(), 1));
      for (Index i = 0; i < M.rows(); ++i)
        R_.insert(i, i) = diag_[i];
      R_.makeCompressed();
    } else {
      mass_ = M;
      Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::NaturalOrdering<int>> llt(M);
      if (llt.info() != Eigen::Success)
        throw NumericalError("Cholesky factorization of the mass matrix failed (not SPD)");
      R_ = llt.matrixL();
      R_.makeCompressed();
    }
  }

  MassMode mode() const { return mode_; }
  Index size() const { return R_.rows(); }

  // The mass matrix consistent with this factor (lumped or consistent).
  const SpMat &mass() const { return mass_; }
  const SpMat &R() const { return R_; }

  Vec apply_R(const Vec &x) const { return R_ * x; }
  Vec apply_Rt(const Vec &x) const { return R_.transpose() * x; }

  Vec solve_R(const Vec &b) const {
    if (mode_ == MassMode::Lumped)
      return b.cwiseQuotient(diag_);
    return R_.triangularView<Eigen::Lower>().solve(b);
  }

  Vec solve_Rt(const Vec &b) const {
    if (mode_ == MassMode::Lumped)
      return b.cwiseQuotient(diag_);
    return R_.transpose().triangularView<Eigen::Upper>().solve(b);
  }

  // ||R R^T - M||_F / ||M||_F against the mode's own mass matrix.
  double factor_residual() const {
    const SpMat diff = SpMat(R_ * SpMat(R_.transpose())) - mass_;
    return diff.norm() / mass_.norm();
  }

private:
  MassMode mode_ = MassMode::Lumped;
  SpMat mass_;
  SpMat R_;
  Vec diag_;
};

} // namespace oed
