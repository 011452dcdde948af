#pragma once

#include "oed/mesh.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace oed {

// Double-gyre field from the stream function psi = (V0/pi) sin(pi x) sin(pi y),
// v = (d psi/dy, -d psi/dx). Divergence free with v.n = 0 on the unit square.
// Points strictly inside a hole get zero velocity.
struct VelocityField {
  double amplitude = 1.0;
  std::vector<Rect> holes;

  std::array<double, 2> operator()(double x, double y) const {
    for (const auto &h : holes)
      if (h.contains_strictly(x, y))
        return {0.0, 0.0};
    using std::numbers::pi;
    return {amplitude * std::sin(pi * x) * std::cos(pi * y),
            -amplitude * std::cos(pi * x) * std::sin(pi * y)};
  }
};

struct AssembledOperators {
  SpMat M; // consistent mass
  SpMat K; // stiffness for -Laplace, natural boundary conditions
  SpMat N; // advection (v . grad phi_j, phi_i)
  Index n = 0;
};

/// Linear-element assembly. M and K are integrated exactly; N uses the
/// one-point centroid rule.
inline AssembledOperators assemble(const Mesh &mesh, const VelocityField &velocity) {
  const Index n = mesh.num_nodes();
  std::vector<Triplet> tm, tk, tn;
  tm.reserve(9 * mesh.triangles.size());
  tk.reserve(9 * mesh.triangles.size());
  tn.reserve(9 * mesh.triangles.size());

  for (Index t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    if (!(area > 1e-14))
      throw NumericalError("degenerate or inverted triangle " + std::to_string(t));
    const auto &v = mesh.triangles[t];
    std::array<double, 3> x{}, y{};
    for (int a = 0; a < 3; ++a) {
      x[a] = mesh.nodes[v[a]][0];
      y[a] = mesh.nodes[v[a]][1];
    }
    // Gradients of the barycentric coordinates.
    std::array<double, 3> gx{}, gy{};
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, c = (a + 2) % 3;
      gx[a] = (y[b] - y[c]) / (2 * area);
      gy[a] = (x[c] - x[b]) / (2 * area);
    }
    const double cx = (x[0] + x[1] + x[2]) / 3, cy = (y[0] + y[1] + y[2]) / 3;
    const auto vel = velocity(cx, cy);

    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        tm.emplace_back(v[a], v[b], area / 12.0 * (a == b ? 2.0 : 1.0));
        tk.emplace_back(v[a], v[b], area * (gx[a] * gx[b] + gy[a] * gy[b]));
        const double adv = area / 3.0 * (vel[0] * gx[b] + vel[1] * gy[b]);
        if (adv != 0.0)
          tn.emplace_back(v[a], v[b], adv);
      }
    }
  }

  AssembledOperators ops;
  ops.n = n;
  ops.M.resize(n, n);
  ops.K.resize(n, n);
  ops.N.resize(n, n);
  ops.M.setFromTriplets(tm.begin(), tm.end());
  ops.K.setFromTriplets(tk.begin(), tk.end());
  ops.N.setFromTriplets(tn.begin(), tn.end());
  return ops;
}

/// Row-sum lumped mass as a diagonal sparse matrix.
inline SpMat lump(const SpMat &M) {
  const Vec rows = M * Vec::Ones(M.cols());
  SpMat D(M.rows(), M.cols());
  D.reserve(Eigen::VectorXi::Constant(M.cols(), 1));
  for (Index i = 0; i < M.rows(); ++i)
    D.insert(i, i) = rows[i];
  D.makeCompressed();
  return D;
}

} // namespace oed
