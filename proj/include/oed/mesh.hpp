#pragma once

#include "oed/core.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace oed {

// Axis-aligned rectangle [x0,x1] x [y0,y1] removed from the unit square.
struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains_strictly(double x, double y) const {
    return x > x0 && x < x1 && y > y0 && y < y1;
  }
};

struct Mesh {
  std::vector<std::array<double, 2>> nodes;
  std::vector<std::array<Index, 3>> triangles;
  std::vector<bool> boundary;
  std::vector<Rect> holes;
  int nx = 0;

  Index num_nodes() const { return static_cast<Index>(nodes.size()); }
  Index num_triangles() const { return static_cast<Index>(triangles.size()); }

  double signed_area(Index t) const {
    const auto &[a, b, c] = triangles[t];
    const auto &pa = nodes[a], &pb = nodes[b], &pc = nodes[c];
    return 0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]));
  }

  double area() const {
    double s = 0;
    for (Index t = 0; t < num_triangles(); ++t)
      s += signed_area(t);
    return s;
  }

  Index nearest_node(double x, double y) const {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < num_nodes(); ++i) {
      const double d = std::hypot(nodes[i][0] - x, nodes[i][1] - y);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  bool in_hole(double x, double y) const {
    return std::any_of(holes.begin(), holes.end(),
                       [&](const Rect &r) { return r.contains_strictly(x, y); });
  }
};

namespace detail {
inline bool on_grid(double v, int nx) {
  const double s = v * nx;
  return std::abs(s - std::round(s)) <= 1e-9;
}
} // namespace detail

/// Structured right-angle triangulation of [0,1]^2 with nx cells per side.
/// Each retained cell is split along its (i,j)-(i+1,j+1) diagonal into two
/// counter-clockwise triangles. Cells inside a hole are dropped, along with
/// nodes no longer touched by any triangle.
inline Mesh build_mesh(int nx, const std::vector<Rect> &holes = {}) {
  require(nx >= 2, "mesh.nx must be >= 2, got " + std::to_string(nx));
  for (const auto &h : holes) {
    require(h.x0 > 0 && h.y0 > 0 && h.x1 < 1 && h.y1 < 1 && h.x0 < h.x1 && h.y0 < h.y1,
            "hole must lie strictly inside (0,1)^2 with positive extent");
    require(detail::on_grid(h.x0, nx) && detail::on_grid(h.x1, nx) &&
                detail::on_grid(h.y0, nx) && detail::on_grid(h.y1, nx),
            "hole corners must be aligned to the 1/" + std::to_string(nx) + " grid");
  }

  const double h = 1.0 / nx;
  const auto gid = [nx](int i, int j) { return static_cast<Index>(j) * (nx + 1) + i; };

  std::vector<std::array<Index, 3>> tris;
  for (int j = 0; j < nx; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double cx = (i + 0.5) * h, cy = (j + 0.5) * h;
      const bool removed = std::any_of(holes.begin(), holes.end(), [&](const Rect &r) {
        return r.contains_strictly(cx, cy);
      });
      if (removed)
        continue;
      const Index p00 = gid(i, j), p10 = gid(i + 1, j), p11 = gid(i + 1, j + 1),
                  p01 = gid(i, j + 1);
      tris.push_back({p00, p10, p11});
      tris.push_back({p00, p11, p01});
    }
  }

  const Index total = static_cast<Index>(nx + 1) * (nx + 1);
  std::vector<Index> renumber(total, -1);
  Mesh mesh;
  mesh.nx = nx;
  mesh.holes = holes;
  for (auto &t : tris)
    for (auto &v : t)
      renumber[v] = 0;
  for (Index g = 0; g < total; ++g) {
    if (renumber[g] < 0)
      continue;
    renumber[g] = mesh.num_nodes();
    const int i = static_cast<int>(g % (nx + 1)), j = static_cast<int>(g / (nx + 1));
    mesh.nodes.push_back({i * h, j * h});
  }
  for (auto &t : tris)
    mesh.triangles.push_back({renumber[t[0]], renumber[t[1]], renumber[t[2]]});

  // Boundary edges belong to exactly one triangle.
  std::map<std::pair<Index, Index>, int> edge_count;
  for (const auto &t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      Index a = t[e], b = t[(e + 1) % 3];
      if (a > b)
        std::swap(a, b);
      ++edge_count[{a, b}];
    }
  mesh.boundary.assign(mesh.nodes.size(), false);
  for (const auto &[edge, count] : edge_count)
    if (count == 1) {
      mesh.boundary[edge.first] = true;
      mesh.boundary[edge.second] = true;
    }
  return mesh;
}

/// Node table followed by a blank line and the triangle table.
inline void write_mesh_csv(std::ostream &os, const Mesh &mesh) {
  os.precision(17);
  os << "id,x,y\n";
  for (Index i = 0; i < mesh.num_nodes(); ++i)
    os << i << ',' << mesh.nodes[i][0] << ',' << mesh.nodes[i][1] << '\n';
  os << "\nid,n0,n1,n2\n";
  for (Index t = 0; t < mesh.num_triangles(); ++t) {
    const auto &tri = mesh.triangles[t];
    os << t << ',' << tri[0] << ',' << tri[1] << ',' << tri[2] << '\n';
  }
}

} // namespace oed
