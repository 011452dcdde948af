#pragma once

#include "oed/problem.hpp"

#include <cstdio>
#include <filesystem>
#include <numeric>

namespace oed {

namespace fs = std::filesystem;

struct RunOptions {
  fs::path out_dir = "out";
  bool timing = true;   // false writes wall_time = 0 so logs are byte-identical
  fs::path weights;     // evaluate / compare-random input
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const fs::path &path) {
  std::ofstream os(path);
  if (!os)
    throw NumericalError("cannot write " + path.string());
  return os;
}

inline void write_json(const fs::path &path, const Json &j) { open_out(path) << j.dump(2) << '\n'; }

inline void write_resolved(const RunOptions &run, const ExperimentConfig &cfg) {
  Json j;
  j["config"] = to_json(cfg);
  j["hash"] = hex64(config_hash(cfg));
  write_json(run.out_dir / "resolved_config.json", j);
}

inline double rel_err(double approx, double exact) {
  const double diff = std::abs(approx - exact);
  return exact != 0 ? diff / std::abs(exact) : diff;
}

inline double rel_err(const Vec &approx, const Vec &exact) {
  const double diff = (approx - exact).norm();
  return exact.norm() != 0 ? diff / exact.norm() : diff;
}

} // namespace detail

inline void write_observations_csv(std::ostream &os, const Vec &y, Index ns) {
  os << "index,time_id,sensor_id,value\n";
  for (Index i = 0; i < y.size(); ++i)
    os << i << ',' << i / ns << ',' << i % ns << ',' << detail::fmt(y[i]) << '\n';
}

inline void write_weights_csv(std::ostream &os, const ObservationSetup &obs, const Vec &w,
                              const Vec &active) {
  os << "sensor_id,x,y,weight,active\n";
  for (Index j = 0; j < w.size(); ++j)
    os << j << ',' << detail::fmt(obs.sensor_xy[j][0]) << ',' << detail::fmt(obs.sensor_xy[j][1])
       << ',' << detail::fmt(w[j]) << ',' << (active[j] > 0.5 ? 1 : 0) << '\n';
}

struct WeightsFile {
  Vec weight;
  Vec active;
};

/// Reads a weights CSV with at least a 'weight' column; 'active' is optional.
inline WeightsFile read_weights_csv(const fs::path &path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open weights file '" + path.string() + "'");
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "weights file is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      header.push_back(cell);
  }
  auto col = [&](const std::string &name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int wcol = col("weight"), acol = col("active");
  require(wcol >= 0, "weights file has no 'weight' column");
  std::vector<double> w, a;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    require(static_cast<int>(cells.size()) > std::max(wcol, acol), "malformed weights row: " + line);
    try {
      w.push_back(std::stod(cells[wcol]));
      if (acol >= 0)
        a.push_back(std::stod(cells[acol]));
    } catch (const std::exception &) {
      throw ValidationError("non-numeric entry in weights row: " + line);
    }
  }
  WeightsFile out;
  out.weight = Eigen::Map<Vec>(w.data(), static_cast<Index>(w.size()));
  if (acol >= 0)
    out.active = Eigen::Map<Vec>(a.data(), static_cast<Index>(a.size()));
  return out;
}

/// y_obs, sigma, theta_true and the mesh for the configured problem.
inline void cmd_synthesize(const ExperimentConfig &cfg, const RunOptions &run) {
  fs::create_directories(run.out_dir);
  auto p = build_problem(cfg);
  const SyntheticData data = synthesize_data(*p->forward, p->theta_true, cfg.noise_pct, cfg.seed);
  const Index ns = p->num_sensors();
  {
    auto os = detail::open_out(run.out_dir / "y_obs.csv");
    write_observations_csv(os, data.y_obs, ns);
  }
  {
    auto os = detail::open_out(run.out_dir / "sigma.csv");
    os << "sensor_id,sigma\n";
    for (Index j = 0; j < ns; ++j)
      os << j << ',' << detail::fmt(data.sigma[j]) << '\n';
  }
  {
    auto os = detail::open_out(run.out_dir / "theta_true.csv");
    write_field_csv(os, p->theta_true);
  }
  {
    auto os = detail::open_out(run.out_dir / "mesh.csv");
    write_mesh_csv(os, p->mesh);
  }
  detail::write_resolved(run, cfg);
}

/// Operator stack, data, and the estimator-specific precomputations.
struct Session {
  std::unique_ptr<Problem> problem;
  DataBundle data;
  SensorDerivConstants z;
  std::shared_ptr<const FrozenSVD> frozen;
  std::shared_ptr<const DenseOracle> dense;
  SolveCount z_cost;

  EstimatorFn estimator(EstimatorMethod m) const {
    return make_estimator(*problem, data.noise, z, m, frozen, dense);
  }
};

inline Session open_session(const ExperimentConfig &cfg, const RunOptions &run,
                            std::initializer_list<EstimatorMethod> methods) {
  Session s;
  s.problem = build_problem(cfg);
  s.data = make_data(*s.problem, cfg.seed);
  const auto needs = [&](EstimatorMethod m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };
  const SolveCount start = solve_snapshot();
  if (needs(EstimatorMethod::Eig) || needs(EstimatorMethod::Rand)) {
    if (cfg.z_cache) {
      fs::create_directories(run.out_dir);
      s.z = load_or_compute_z(*s.problem->G, s.data.noise, run.out_dir / "z_cache.bin",
                              z_cache_hash(cfg));
    } else {
      s.z = precompute_z(*s.problem->G, s.data.noise);
    }
  }
  s.z_cost = solve_snapshot() - start;
  if (needs(EstimatorMethod::Frozen))
    s.frozen = std::make_shared<FrozenSVD>(build_frozen(
        *s.problem->G, std::min(cfg.frozen_k, std::min(s.problem->G->obs_dim(), s.problem->n())),
        FrozenOptions{cfg.sketch.p, cfg.sketch.q, cfg.sketch.seed, cfg.frozen_exact}));
  if (needs(EstimatorMethod::Dense) && s.problem->n() <= cfg.dense_guard)
    s.dense = std::make_shared<DenseOracle>(*s.problem->G, s.data.noise, cfg.dense_guard);
  return s;
}

inline DesignResult run_design(const ExperimentConfig &cfg, const EstimatorFn &est, Index ns) {
  const Vec w0 = Vec::Constant(ns, cfg.w0);
  if (cfg.penalty == PenaltyKind::L1)
    return solve_l1(est, cfg.gamma, w0, cfg.opt_options(), cfg.threshold);
  return solve_continuation(est, cfg.penalty_config(), w0, cfg.opt_options(), cfg.threshold);
}

/// Optimal design with the configured estimator and penalty.
inline DesignResult cmd_oed(const ExperimentConfig &cfg, const RunOptions &run) {
  fs::create_directories(run.out_dir);
  const Session s = open_session(cfg, run, {cfg.method});
  const Problem &p = *s.problem;
  const SolveCount before = solve_snapshot();
  const DesignResult res = run_design(cfg, s.estimator(cfg.method), p.num_sensors());
  const SolveCount spent = solve_snapshot() - before;
  {
    auto os = detail::open_out(run.out_dir / "weights.csv");
    write_weights_csv(os, p.forward->observation(), res.w_opt, res.binary);
  }
  {
    auto os = detail::open_out(run.out_dir / "iterations.csv");
    os << "iter,objective,grad_norm,wall_time,pde_solves\n";
    const std::uint64_t base = res.log.empty() ? 0 : res.log.front().pde_solves;
    for (std::size_t i = 0; i < res.log.size(); ++i) {
      const auto &r = res.log[i];
      os << i << ',' << detail::fmt(r.objective) << ',' << detail::fmt(r.grad_norm) << ','
         << detail::fmt(run.timing ? r.wall_time : 0.0) << ',' << (r.pde_solves - base) << '\n';
    }
  }
  {
    auto os = detail::open_out(run.out_dir / "stages.csv");
    os << "stage,epsilon,iterations,objective,distance_to_binary,converged\n";
    for (std::size_t i = 0; i < res.stages.size(); ++i) {
      const auto &st = res.stages[i];
      os << i << ',' << detail::fmt(st.epsilon) << ',' << st.iterations << ','
         << detail::fmt(st.objective) << ',' << detail::fmt(st.distance_to_binary) << ','
         << (st.converged ? 1 : 0) << '\n';
    }
  }
  Json summary;
  summary["method"] = to_string(cfg.method);
  summary["penalty"] = penalty_name(cfg.penalty);
  summary["status"] = res.status;
  summary["converged"] = res.converged;
  summary["binary"] = res.is_binary;
  summary["active_count"] = res.active_count();
  summary["J_final"] = res.log.empty() ? 0.0 : res.log.back().J;
  summary["pde_solves_optimization"] = spent.total();
  summary["pde_solves_z_precompute"] = s.z_cost.total();
  detail::write_json(run.out_dir / "oed_summary.json", summary);
  detail::write_resolved(run, cfg);
  return res;
}

// --weights, else weights.csv left in the output directory by a previous oed run.
inline fs::path design_path(const RunOptions &run) {
  if (!run.weights.empty())
    return run.weights;
  const fs::path fallback = run.out_dir / "weights.csv";
  return fs::exists(fallback) ? fallback : fs::path();
}

/// All ones when no weights file is available.
inline Vec load_design(const RunOptions &run, Index ns) {
  const fs::path path = design_path(run);
  if (path.empty())
    return Vec::Ones(ns);
  const WeightsFile wf = read_weights_csv(path);
  check_weights(wf.weight, ns);
  return wf.weight;
}

/// J, information gain and KL for a design, with errors against the dense
/// reference when the problem is small enough.
inline Json cmd_evaluate(const ExperimentConfig &cfg, const RunOptions &run) {
  fs::create_directories(run.out_dir);
  const Session s = open_session(cfg, run,
                                 {EstimatorMethod::Eig, EstimatorMethod::Rand,
                                  EstimatorMethod::Frozen, EstimatorMethod::Dense});
  const Problem &p = *s.problem;
  const Vec w = load_design(run, p.num_sensors());
  const Vec &y = s.data.data.y_obs;

  Json m;
  m["method"] = to_string(cfg.method);
  const Estimate main_est = s.estimator(cfg.method)(w);
  m["J"] = main_est.J;
  m["info_gain"] = expected_info_gain(main_est.J);
  const KlResult kl = kl_estimate(*p.G, s.data.noise, w, y, KlRand{cfg.sketch});
  m["D_KL"] = kl.kl;
  m["map_cg_iterations"] = kl.map.iterations;

  if (s.dense) {
    const Estimate ref = s.dense->evaluate(w);
    const double kl_ref = s.dense->kl(w, y);
    m["dense"] = {{"J", ref.J}, {"info_gain", expected_info_gain(ref.J)}, {"D_KL", kl_ref}};
    Json errs;
    for (EstimatorMethod em :
         {EstimatorMethod::Eig, EstimatorMethod::Rand, EstimatorMethod::Frozen}) {
      const Estimate e = s.estimator(em)(w);
      errs[to_string(em)] = {{"J_rel_err", detail::rel_err(e.J, ref.J)},
                             {"grad_rel_err", detail::rel_err(e.grad, ref.grad)}};
    }
    errs["rand"]["D_KL_rel_err"] = detail::rel_err(kl.kl, kl_ref);
    m["errors_vs_dense"] = errs;
  }
  detail::write_json(run.out_dir / "metrics.json", m);
  detail::write_resolved(run, cfg);
  return m;
}

/// Random binary designs with the optimal design's cardinality, against the optimum.
inline Json cmd_compare_random(const ExperimentConfig &cfg, const RunOptions &run) {
  fs::create_directories(run.out_dir);
  const Session s = open_session(cfg, run, {cfg.method, EstimatorMethod::Dense});
  const Problem &p = *s.problem;
  const Index ns = p.num_sensors();
  Vec optimal;
  const fs::path path = design_path(run);
  if (path.empty()) {
    optimal = run_design(cfg, s.estimator(cfg.method), ns).binary;
  } else {
    const WeightsFile wf = read_weights_csv(path);
    check_weights(wf.weight, ns);
    optimal = wf.active.size() ? wf.active : threshold(wf.weight, cfg.threshold);
  }
  const Index card = static_cast<Index>((optimal.array() > 0.5).count());
  require(card >= 1, "compare-random: the optimal design has no active sensors");
  optimal = (optimal.array() > 0.5).cast<double>();

  std::mt19937_64 rng(cfg.seed);
  std::vector<Vec> designs{optimal};
  std::vector<Index> ids(ns);
  for (int d = 0; d < cfg.compare_n; ++d) {
    std::iota(ids.begin(), ids.end(), Index{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    Vec w = Vec::Zero(ns);
    for (Index i = 0; i < card; ++i)
      w[ids[i]] = 1.0;
    designs.push_back(w);
  }

  const Vec &y = s.data.data.y_obs;
  std::vector<double> negJ(designs.size()), gain(designs.size());
  if (s.dense) {
    parallel_for(static_cast<Index>(designs.size()), [&](Index d) {
      negJ[d] = -s.dense->objective(designs[d]);
      gain[d] = s.dense->kl(designs[d], y);
    });
  } else {
    const EstimatorFn est = s.estimator(cfg.method);
    for (std::size_t d = 0; d < designs.size(); ++d) {
      negJ[d] = -est(designs[d]).J;
      gain[d] = kl_estimate(*p.G, s.data.noise, designs[d], y, KlRand{cfg.sketch}).kl;
    }
  }
  {
    auto os = detail::open_out(run.out_dir / "cloud.csv");
    os << "design_id,neg_J,info_gain_from_data\n";
    for (std::size_t d = 0; d < designs.size(); ++d)
      os << d << ',' << detail::fmt(negJ[d]) << ',' << detail::fmt(gain[d]) << '\n';
  }
  const double best_random = *std::min_element(negJ.begin() + 1, negJ.end());
  Json summary;
  summary["cardinality"] = card;
  summary["n_random"] = cfg.compare_n;
  summary["optimal_neg_J"] = negJ[0];
  summary["best_random_neg_J"] = best_random;
  summary["optimal_beats_all"] = negJ[0] <= best_random;
  summary["estimator"] = s.dense ? "dense" : to_string(cfg.method);
  detail::write_json(run.out_dir / "compare_summary.json", summary);
  detail::write_resolved(run, cfg);
  return summary;
}

struct RankSweepRow {
  Index k = 0;
  double eig_J = 0, rand_J = 0;       // relative errors
  double eig_grad = 0, rand_grad = 0; // relative gradient norm errors
  double eig_kl = 0, rand_kl = 0;     // relative KL errors
};

/// Error of the Eig-k and randomized estimators against the dense reference
/// for each k; randomized errors are averaged over sketch seeds.
inline std::vector<RankSweepRow> rank_sweep(const DenseOracle &dense, const Vec &w, const Vec &y,
                                            const std::vector<Index> &ks, const SketchConfig &base,
                                            int seeds) {
  const DenseWhitenedMap g(dense.G(), dense.num_sensors(), dense.num_times());
  const NoiseModel &noise = dense.noise();
  const SensorDerivConstants zc = dense.z();
  const Estimate ref = dense.evaluate(w);
  const double c = dense.map_whitened(w, y).squaredNorm();
  const double kl_ref = kl_from_spectrum(ref.spectrum, c);
  const Index n = dense.param_dim();
  std::vector<RankSweepRow> rows(ks.size());
  parallel_for(static_cast<Index>(ks.size()), [&](Index r) {
    RankSweepRow row;
    row.k = ks[r];
    ExactEigOptions eo;
    eo.method = EigMethod::Dense;
    eo.dense_limit = n;
    const Estimate e = objective_grad_eig(g, noise, zc, w, row.k, eo);
    row.eig_J = detail::rel_err(e.J, ref.J);
    row.eig_grad = detail::rel_err(e.grad, ref.grad);
    row.eig_kl = detail::rel_err(kl_from_spectrum(e.spectrum, c), kl_ref);
    for (int sd = 0; sd < seeds; ++sd) {
      SketchConfig sk = base;
      sk.k = row.k;
      sk.p = std::min(base.p, n - row.k);
      sk.seed = base.seed + static_cast<std::uint64_t>(sd);
      const Estimate er = objective_grad_rand(g, noise, zc, w, sk);
      row.rand_J += detail::rel_err(er.J, ref.J) / seeds;
      row.rand_grad += detail::rel_err(er.grad, ref.grad) / seeds;
      row.rand_kl += detail::rel_err(kl_from_spectrum(er.spectrum, c), kl_ref) / seeds;
    }
    rows[r] = row;
  });
  return rows;
}

inline std::vector<Index> default_ks(Index full_rank) {
  std::vector<Index> ks;
  for (Index k = 5; k < full_rank; k += 5)
    ks.push_back(k);
  ks.push_back(full_rank);
  return ks;
}

// Exact J for w = 1 via the n_y x n_y Gram matrix, which shares the nonzero
// spectrum of G^T W G.
inline double gram_objective(const Mat &G, const NoiseModel &noise, Index nt, const Vec &w) {
  const Vec d = weighted_precision(w, noise, nt).cwiseSqrt();
  const Mat A = d.asDiagonal() * G;
  return logdet_ip(A * A.transpose());
}

struct MeshSweepRow {
  int nx = 0;
  Index n = 0;
  double J = 0;
  double rand_rel_err = 0;
};

/// Randomized-estimator relative error at fixed (k, p, q) on each mesh level.
inline std::vector<MeshSweepRow> mesh_sweep(const ExperimentConfig &cfg) {
  std::vector<MeshSweepRow> rows;
  for (int nx : cfg.bench_levels) {
    ExperimentConfig c = cfg;
    c.nx = nx;
    auto p = build_problem(c);
    const DataBundle data = make_data(*p, c.seed);
    const Mat G = materialize(*p->G);
    const Vec w = Vec::Ones(p->num_sensors());
    MeshSweepRow row;
    row.nx = nx;
    row.n = p->n();
    row.J = gram_objective(G, data.noise, p->num_times(), w);
    const DenseWhitenedMap g(G, p->num_sensors(), p->num_times());
    const MisfitHessianOp<DenseWhitenedMap> H(g, w, data.noise);
    for (int sd = 0; sd < c.bench_seeds; ++sd) {
      SketchConfig sk = c.sketch;
      sk.k = c.bench_mesh_k;
      sk.seed = c.sketch.seed + static_cast<std::uint64_t>(sd);
      const SketchResult res = subspace_iteration(H, g.param_dim(), sk);
      row.rand_rel_err += detail::rel_err(logdet_ip(res.T), row.J) / c.bench_seeds;
    }
    rows.push_back(row);
  }
  return rows;
}

inline Json cmd_bench(const ExperimentConfig &cfg, const RunOptions &run) {
  fs::create_directories(run.out_dir);
  const Session s = open_session(cfg, run, {EstimatorMethod::Dense});
  require(s.dense != nullptr, "bench needs n <= dense.guard on the base mesh");
  const Problem &p = *s.problem;
  const Vec w = Vec::Ones(p.num_sensors());
  const Index full = std::min(p.G->obs_dim(), p.n());
  const std::vector<Index> ks = cfg.bench_ks.empty() ? default_ks(full) : cfg.bench_ks;
  for (Index k : ks)
    require(k >= 1 && k <= full, "bench.ks entries must lie in [1, min(n_y, n)]");
  const auto rows = rank_sweep(*s.dense, w, s.data.data.y_obs, ks, cfg.sketch, cfg.bench_seeds);
  {
    auto os = detail::open_out(run.out_dir / "rank_sweep.csv");
    os << "k,eig_J_err,rand_J_err,eig_grad_err,rand_grad_err,eig_kl_err,rand_kl_err\n";
    for (const auto &r : rows)
      os << r.k << ',' << detail::fmt(r.eig_J) << ',' << detail::fmt(r.rand_J) << ','
         << detail::fmt(r.eig_grad) << ',' << detail::fmt(r.rand_grad) << ','
         << detail::fmt(r.eig_kl) << ',' << detail::fmt(r.rand_kl) << '\n';
  }
  const auto mesh_rows = mesh_sweep(cfg);
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  {
    auto os = detail::open_out(run.out_dir / "mesh_sweep.csv");
    os << "nx,n,J,rand_rel_err\n";
    for (const auto &r : mesh_rows) {
      os << r.nx << ',' << r.n << ',' << detail::fmt(r.J) << ',' << detail::fmt(r.rand_rel_err)
         << '\n';
      lo = std::min(lo, r.rand_rel_err);
      hi = std::max(hi, r.rand_rel_err);
    }
  }
  Json summary;
  summary["full_rank"] = full;
  summary["full_rank_kl_err_eig"] = rows.back().eig_kl;
  summary["full_rank_kl_err_rand"] = rows.back().rand_kl;
  summary["mesh_error_ratio"] = lo > 0 ? hi / lo : (hi == 0 ? 1.0 : std::numeric_limits<double>::infinity());
  detail::write_json(run.out_dir / "bench_summary.json", summary);
  detail::write_resolved(run, cfg);
  return summary;
}

} // namespace oed
