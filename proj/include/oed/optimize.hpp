#pragma once

#include "oed/estimators.hpp"

#include <chrono>
#include <deque>

namespace oed {

enum class PenaltyKind { L1, Continuation };

inline PenaltyKind parse_penalty(const std::string &s) {
  if (s == "l1")
    return PenaltyKind::L1;
  if (s == "cont")
    return PenaltyKind::Continuation;
  throw ValidationError("opt.penalty must be 'l1' or 'cont', got '" + s + "'");
}

inline std::vector<double> default_schedule(int stages = 6) {
  require(stages >= 1, "opt.cont_stages must be >= 1");
  std::vector<double> eps;
  for (int i = 1; i <= stages; ++i)
    eps.push_back(std::ldexp(1.0, -i));
  return eps;
}

struct PenaltyConfig {
  PenaltyKind kind = PenaltyKind::L1;
  double gamma = 1.0; // penalty_gamma
  std::vector<double> schedule = default_schedule();
  double round_tol = 1e-2;

  void validate() const {
    require(gamma >= 0, "penalty gamma must be >= 0");
    if (kind == PenaltyKind::Continuation) {
      require(!schedule.empty(), "continuation schedule is empty");
      for (std::size_t i = 0; i < schedule.size(); ++i) {
        require(schedule[i] > 0, "continuation epsilons must be positive");
        require(i == 0 || schedule[i] < schedule[i - 1],
                "continuation epsilons must be strictly decreasing");
      }
    }
  }
};

struct OptOptions {
  double tol = 1e-5;  // projected-gradient infinity norm
  int max_iters = 200;
  int memory = 10;
  int nonmonotone_window = 1; // 1 is a plain monotone Armijo search
  double armijo_c = 1e-4;
  int max_backtracks = 40;
};

struct IterationRecord {
  int stage = 0;
  int iter = 0;
  double objective = 0; // penalized
  double J = 0;
  double grad_norm = 0; // projected gradient, infinity norm
  double wall_time = 0;
  std::uint64_t pde_solves = 0; // cumulative
};

struct StageRecord {
  double epsilon = 0;
  int iterations = 0;
  double objective = 0;
  double distance_to_binary = 0;
  bool converged = false;
};

struct DesignResult {
  Vec w_opt;
  Vec binary;
  bool is_binary = false; // continuation: all weights within round_tol of {0, 1}
  std::vector<IterationRecord> log;
  std::vector<StageRecord> stages;
  bool converged = false;
  std::string status;

  Index active_count() const { return static_cast<Index>((binary.array() > 0.5).count()); }
};

inline double distance_to_binary(const Vec &w) {
  return w.size() ? w.cwiseMin((1.0 - w.array()).matrix()).maxCoeff() : 0.0;
}

/// Sensor i is active iff w_i / sum(w) >= tau_rel.
inline Vec threshold(const Vec &w, double tau_rel = 3e-2) {
  require(tau_rel >= 0, "threshold must be non-negative");
  Vec out = Vec::Zero(w.size());
  const double total = w.sum();
  if (!(total > 0)) {
    warn("threshold: all weights are zero; the design is empty");
    return out;
  }
  for (Index i = 0; i < w.size(); ++i)
    out[i] = (w[i] / total >= tau_rel) ? 1.0 : 0.0;
  return out;
}

// Penalty value and gradient; eps <= 0 selects the l1 penalty.
struct Penalty {
  double gamma = 0;
  double eps = 0;

  double value(const Vec &w) const {
    if (eps <= 0)
      return gamma * w.sum();
    return gamma * (w.array() / (w.array() + eps)).sum();
  }
  Vec grad(const Vec &w) const {
    if (eps <= 0)
      return Vec::Constant(w.size(), gamma);
    return gamma * (eps / (w.array() + eps).square()).matrix();
  }
};

namespace detail {

inline Vec clamp01(const Vec &x) { return x.cwiseMax(0.0).cwiseMin(1.0); }

inline double projected_grad_norm(const Vec &x, const Vec &g) {
  return x.size() ? (x - clamp01(x - g)).cwiseAbs().maxCoeff() : 0.0;
}

// Projected limited-memory BFGS on [0,1]^n. Directions come from the two-loop
// recursion restricted to the variables not held at an active bound, and steps
// are backtracked along the projection arc.
inline StageRecord minimize_box(const EstimatorFn &estimator, const Penalty &penalty, Vec &x,
                                const OptOptions &opt, int stage,
                                std::vector<IterationRecord> &log) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto eval = [&](const Vec &w, double &J) {
    Estimate e = estimator(w);
    J = e.J;
    return std::pair<double, Vec>{-e.J + penalty.value(w), -e.grad + penalty.grad(w)};
  };

  StageRecord rec;
  rec.epsilon = penalty.eps;
  double J = 0;
  auto first = eval(x, J);
  double f = first.first;
  Vec g = std::move(first.second);
  std::deque<Vec> S, Y;
  std::deque<double> history{f};

  auto record = [&](int it) {
    IterationRecord r;
    r.stage = stage;
    r.iter = it;
    r.objective = f;
    r.J = J;
    r.grad_norm = projected_grad_norm(x, g);
    r.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
    r.pde_solves = solve_snapshot().total();
    log.push_back(r);
  };
  record(0);

  int it = 0;
  for (; it < opt.max_iters; ++it) {
    if (projected_grad_norm(x, g) <= opt.tol) {
      rec.converged = true;
      break;
    }
    Vec free = Vec::Ones(x.size());
    for (Index i = 0; i < x.size(); ++i)
      if ((x[i] <= 0 && g[i] > 0) || (x[i] >= 1 && g[i] < 0))
        free[i] = 0;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vec d;
      const Vec gf = g.cwiseProduct(free);
      if (S.empty()) {
        d = -gf / std::max(1.0, gf.cwiseAbs().maxCoeff());
      } else {
        const std::size_t m = S.size();
        std::vector<double> alpha(m), rho(m);
        Vec q = gf;
        for (std::size_t i = m; i-- > 0;) {
          const Vec s = S[i].cwiseProduct(free), y = Y[i].cwiseProduct(free);
          rho[i] = 1.0 / Y[i].dot(S[i]);
          alpha[i] = rho[i] * s.dot(q);
          q -= alpha[i] * y;
        }
        q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        for (std::size_t i = 0; i < m; ++i) {
          const Vec s = S[i].cwiseProduct(free), y = Y[i].cwiseProduct(free);
          const double beta = rho[i] * y.dot(q);
          q += (alpha[i] - beta) * s;
        }
        d = -q.cwiseProduct(free);
        if (!(d.dot(gf) < 0)) {
          S.clear();
          Y.clear();
          d = -gf / std::max(1.0, gf.cwiseAbs().maxCoeff());
        }
      }

      const double f_ref = *std::max_element(history.begin(), history.end());
      double t = 1.0;
      for (int bt = 0; bt < opt.max_backtracks; ++bt, t *= 0.5) {
        const Vec xt = clamp01(x + t * d);
        const Vec step = xt - x;
        if (step.cwiseAbs().maxCoeff() == 0)
          break;
        double Jt = 0;
        auto [ft, gt] = eval(xt, Jt);
        if (ft <= f_ref + opt.armijo_c * g.dot(step)) {
          const Vec yv = gt - g;
          if (step.dot(yv) > 1e-12 * step.norm() * yv.norm()) {
            S.push_back(step);
            Y.push_back(yv);
            if (static_cast<int>(S.size()) > opt.memory) {
              S.pop_front();
              Y.pop_front();
            }
          }
          x = xt;
          f = ft;
          g = std::move(gt);
          J = Jt;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (S.empty())
          break;
        S.clear();
        Y.clear();
      }
    }
    if (!accepted)
      break; // no decrease along the steepest-descent arc either
    history.push_back(f);
    if (static_cast<int>(history.size()) > std::max(1, opt.nonmonotone_window))
      history.pop_front();
    record(it + 1);
  }
  if (!rec.converged && projected_grad_norm(x, g) <= opt.tol)
    rec.converged = true;
  rec.iterations = it;
  rec.objective = f;
  rec.distance_to_binary = distance_to_binary(x);
  return rec;
}

} // namespace detail

/// min -J(w) + gamma sum(w) over [0,1]^{n_s}.
inline DesignResult solve_l1(const EstimatorFn &estimator, double gamma, const Vec &w0,
                             const OptOptions &opt = {}, double tau_rel = 3e-2) {
  require(gamma >= 0, "penalty gamma must be >= 0");
  check_weights(w0, w0.size());
  DesignResult res;
  res.w_opt = w0;
  const StageRecord st =
      detail::minimize_box(estimator, Penalty{gamma, 0.0}, res.w_opt, opt, 0, res.log);
  res.stages.push_back(st);
  res.converged = st.converged;
  res.status = st.converged ? "converged" : "stopped before the projected-gradient tolerance";
  res.binary = threshold(res.w_opt, tau_rel);
  res.is_binary = distance_to_binary(res.w_opt) <= 1e-2;
  return res;
}

/// Warm-started stages with P_eps(w) = sum w_i / (w_i + eps); weights within
/// round_tol of a bound are rounded at exit.
inline DesignResult solve_continuation(const EstimatorFn &estimator, const PenaltyConfig &pc,
                                       const Vec &w0, const OptOptions &opt = {},
                                       double tau_rel = 3e-2) {
  pc.validate();
  require(pc.kind == PenaltyKind::Continuation, "solve_continuation needs a continuation config");
  check_weights(w0, w0.size());
  DesignResult res;
  res.w_opt = w0;
  res.converged = true;
  for (std::size_t s = 0; s < pc.schedule.size(); ++s) {
    const StageRecord st = detail::minimize_box(estimator, Penalty{pc.gamma, pc.schedule[s]},
                                                res.w_opt, opt, static_cast<int>(s + 1), res.log);
    res.stages.push_back(st);
    res.converged = res.converged && st.converged;
  }
  Vec rounded = res.w_opt;
  res.is_binary = true;
  for (Index i = 0; i < rounded.size(); ++i) {
    if (rounded[i] <= pc.round_tol)
      rounded[i] = 0;
    else if (rounded[i] >= 1 - pc.round_tol)
      rounded[i] = 1;
    else
      res.is_binary = false;
  }
  if (res.is_binary) {
    res.w_opt = rounded;
    res.binary = rounded;
    res.status = "binary";
  } else {
    warn("continuation did not reach a binary design; active set taken by thresholding");
    res.binary = threshold(res.w_opt, tau_rel);
    res.status = "not binary within tolerance";
  }
  return res;
}

} // namespace oed
