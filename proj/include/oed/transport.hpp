#pragma once

#include "oed/assembly.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <random>

namespace oed {

struct ObservationSetup {
  std::vector<Index> sensor_nodes;              // snapped to mesh nodes, distinct
  std::vector<std::array<double, 2>> sensor_xy; // snapped coordinates
  std::vector<int> obs_steps;                   // strictly increasing, in [1, n_steps]
  std::vector<double> obs_times;                // snapped times
  int n_steps = 50;
  double final_time = 5.0;
  double kappa = 1e-3;

  Index num_sensors() const { return static_cast<Index>(sensor_nodes.size()); }
  Index num_times() const { return static_cast<Index>(obs_steps.size()); }
  Index obs_dim() const { return num_sensors() * num_times(); }
  double dt() const { return final_time / n_steps; }

  // Position of (time block m, sensor j) in the stacked observation vector.
  Index obs_index(Index m, Index j) const { return m * num_sensors() + j; }
};

/// Snaps sensors to nearest nodes and times to the uniform time grid.
inline ObservationSetup make_observation_setup(const Mesh &mesh,
                                               const std::vector<std::array<double, 2>> &sensors,
                                               const std::vector<double> &times, double final_time,
                                               int n_steps, double kappa) {
  require(!sensors.empty(), "sensor candidate set is empty");
  require(!times.empty(), "observation time list is empty");
  require(final_time > 0, "pde.T must be positive");
  require(n_steps >= 1, "pde.n_steps must be >= 1");
  require(kappa >= 0, "pde.kappa must be non-negative");

  ObservationSetup obs;
  obs.n_steps = n_steps;
  obs.final_time = final_time;
  obs.kappa = kappa;
  const double dt = final_time / n_steps;

  for (const auto &p : sensors) {
    require(p[0] >= 0 && p[0] <= 1 && p[1] >= 0 && p[1] <= 1,
            "sensor location outside the unit square");
    const Index node = mesh.nearest_node(p[0], p[1]);
    require(std::find(obs.sensor_nodes.begin(), obs.sensor_nodes.end(), node) ==
                obs.sensor_nodes.end(),
            "two sensors snap to the same mesh node; refine the mesh or thin the grid");
    obs.sensor_nodes.push_back(node);
    obs.sensor_xy.push_back(mesh.nodes[node]);
  }
  for (double t : times) {
    require(t > 0 && t <= final_time + 1e-12, "observation time outside (0, T]");
    const int step = static_cast<int>(std::lround(t / dt));
    require(step >= 1, "observation time snaps to t = 0");
    require(obs.obs_steps.empty() || step > obs.obs_steps.back(),
            "observation times must be strictly increasing after snapping to the time grid");
    obs.obs_steps.push_back(step);
    obs.obs_times.push_back(step * dt);
  }
  return obs;
}

inline double mesh_peclet(double h, double amplitude, double kappa) {
  return kappa > 0 ? std::abs(amplitude) * h / (2 * kappa) : std::numeric_limits<double>::infinity();
}

/// Parameter-to-observable map of the implicit-Euler advection-diffusion
/// discretization, (M + dt(kappa K + N)) u^m = M u^{m-1}, and its exact
/// discrete transpose. The step matrix is factored once.
class AdvectionDiffusion {
public:
  AdvectionDiffusion(const SpMat &M, const SpMat &K, const SpMat &N, ObservationSetup obs)
      : obs_(std::move(obs)), M_(M) {
    require(M.rows() == K.rows() && M.rows() == N.rows(), "operator dimension mismatch");
    const double dt = obs_.dt();
    step_ = M + dt * (obs_.kappa * K + N);
    step_.makeCompressed();
    step_t_ = step_.transpose();
    step_t_.makeCompressed();
    lu_.compute(step_);
    lu_t_.compute(step_t_);
    if (lu_.info() != Eigen::Success || lu_t_.info() != Eigen::Success)
      throw NumericalError("factorization of the time-step matrix failed");
    last_step_ = obs_.obs_steps.empty() ? 0 : obs_.obs_steps.back();
  }

  const ObservationSetup &observation() const { return obs_; }
  Index param_dim() const { return M_.rows(); }
  Index obs_dim() const { return obs_.obs_dim(); }

  Vec forward(const Vec &theta) const {
    require(theta.size() == param_dim(), "forward: initial state has wrong length");
    ++solve_counter().forward;
    Vec y(obs_dim());
    Vec u = theta;
    std::size_t m = 0;
    for (int s = 1; s <= last_step_; ++s) {
      u = step_solve(M_ * u);
      if (m < obs_.obs_steps.size() && obs_.obs_steps[m] == s) {
        extract(u, static_cast<Index>(m), y);
        ++m;
      }
    }
    return y;
  }

  // Full trajectory u^0..u^{n_steps}; counts as one forward solve.
  std::vector<Vec> trajectory(const Vec &theta, Vec *y = nullptr) const {
    require(theta.size() == param_dim(), "trajectory: initial state has wrong length");
    ++solve_counter().forward;
    std::vector<Vec> states{theta};
    if (y)
      y->resize(obs_dim());
    std::size_t m = 0;
    for (int s = 1; s <= obs_.n_steps; ++s) {
      states.push_back(step_solve(M_ * states.back()));
      if (m < obs_.obs_steps.size() && obs_.obs_steps[m] == s) {
        if (y)
          extract(states.back(), static_cast<Index>(m), *y);
        ++m;
      }
    }
    return states;
  }

  // F^T ybar by a reverse sweep with transposed step solves.
  Vec adjoint(const Vec &ybar) const {
    require(ybar.size() == obs_dim(), "adjoint: observation vector has wrong length");
    ++solve_counter().adjoint;
    Vec p = Vec::Zero(param_dim());
    auto m = static_cast<std::ptrdiff_t>(obs_.obs_steps.size()) - 1;
    for (int s = last_step_; s >= 1; --s) {
      if (m >= 0 && obs_.obs_steps[m] == s) {
        for (Index j = 0; j < obs_.num_sensors(); ++j)
          p[obs_.sensor_nodes[j]] += ybar[obs_.obs_index(m, j)];
        --m;
      }
      p = M_ * step_transpose_solve(p);
    }
    return p;
  }

  const SpMat &step_matrix() const { return step_; }

private:
  Vec step_solve(const Vec &b) const {
    Vec x = lu_.solve(b);
    if (lu_.info() != Eigen::Success)
      throw NumericalError("time-step solve failed");
    return x;
  }
  Vec step_transpose_solve(const Vec &b) const {
    Vec x = lu_t_.solve(b);
    if (lu_t_.info() != Eigen::Success)
      throw NumericalError("transposed time-step solve failed");
    return x;
  }
  void extract(const Vec &u, Index m, Vec &y) const {
    for (Index j = 0; j < obs_.num_sensors(); ++j)
      y[obs_.obs_index(m, j)] = u[obs_.sensor_nodes[j]];
  }

  ObservationSetup obs_;
  SpMat M_;
  SpMat step_, step_t_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_, lu_t_;
  int last_step_ = 0;
};

struct SyntheticData {
  Vec y_clean;
  Vec y_obs;
  Vec sigma; // per sensor
};

/// y_obs = F theta_true + eta with sigma_j = noise_pct * max|F theta_true| for
/// every sensor. noise_pct = 0 returns the clean data and a zero sigma.
inline SyntheticData synthesize_data(const AdvectionDiffusion &forward, const Vec &theta_true,
                                     double noise_pct, std::uint64_t seed) {
  require(noise_pct >= 0 && noise_pct < 1, "noise.pct must lie in [0, 1)");
  SyntheticData data;
  data.y_clean = forward.forward(theta_true);
  const double peak = data.y_clean.cwiseAbs().maxCoeff();
  require(peak > 0, "clean observations are identically zero; noise level undefined");
  const Index ns = forward.observation().num_sensors();
  data.sigma = Vec::Constant(ns, noise_pct * peak);
  data.y_obs = data.y_clean;
  if (noise_pct > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < data.y_obs.size(); ++i)
      data.y_obs[i] += data.sigma[i % ns] * normal(rng);
  }
  return data;
}

inline void write_field_csv(std::ostream &os, const Vec &field) {
  os.precision(17);
  os << "node_id,value\n";
  for (Index i = 0; i < field.size(); ++i)
    os << i << ',' << field[i] << '\n';
}

} // namespace oed
