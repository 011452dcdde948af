#pragma once

#include "oed/estimators.hpp"
#include "oed/mass_factor.hpp"
#include "oed/mesh.hpp"
#include "oed/optimize.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace oed {

using Json = nlohmann::ordered_json;

struct Bump {
  double x = 0.5, y = 0.5, width = 0.1, amplitude = 1.0;
};

struct ExperimentConfig {
  // mesh
  int nx = 16;
  std::vector<Rect> holes;
  MassMode mass_mode = MassMode::Lumped;
  // pde
  double kappa = 1e-3;
  double final_time = 5.0;
  int n_steps = 50;
  double amplitude = 1.0;
  // prior
  double alpha = 2e-3;
  double beta = 0.1;
  // observations
  int grid_cols = 7, grid_rows = 5;
  std::vector<std::array<double, 2>> sensor_points; // overrides the grid when non-empty
  std::vector<double> obs_times{1.0, 2.0, 3.5};
  double noise_pct = 0.02;
  std::vector<Bump> bumps{{0.35, 0.7, 0.1, 1.0}, {0.7, 0.3, 0.08, 0.6}};
  // estimators
  SketchConfig sketch{20, 5, 1, 0};
  bool reuse_products = false;
  Index frozen_k = 20;
  bool frozen_exact = false;
  double eig_tol = 1e-10;
  Index dense_guard = 600;
  // optimization
  EstimatorMethod method = EstimatorMethod::Rand;
  PenaltyKind penalty = PenaltyKind::L1;
  double gamma = 1.0;
  int cont_stages = 6;
  double opt_tol = 1e-5;
  int max_iters = 200;
  double threshold = 3e-2;
  double w0 = 0.5;
  // drivers
  int compare_n = 200;
  std::vector<Index> bench_ks;       // empty: 5, 10, ... up to full rank
  std::vector<int> bench_levels{16, 32, 64};
  Index bench_mesh_k = 10; // sketch rank of the mesh-refinement sweep
  int bench_seeds = 10;
  bool z_cache = true;
  std::uint64_t seed = 0;

  std::vector<std::array<double, 2>> sensors() const {
    if (!sensor_points.empty())
      return sensor_points;
    std::vector<std::array<double, 2>> pts;
    for (int j = 0; j < grid_rows; ++j)
      for (int i = 0; i < grid_cols; ++i)
        pts.push_back({(i + 1.0) / (grid_cols + 1), (j + 1.0) / (grid_rows + 1)});
    return pts;
  }

  PenaltyConfig penalty_config() const {
    PenaltyConfig pc;
    pc.kind = penalty;
    pc.gamma = gamma;
    pc.schedule = default_schedule(cont_stages);
    return pc;
  }

  OptOptions opt_options() const {
    OptOptions o;
    o.tol = opt_tol;
    o.max_iters = max_iters;
    o.nonmonotone_window = method == EstimatorMethod::Rand ? 5 : 1;
    return o;
  }
};

namespace detail {

inline void reject_unknown(const Json &obj, const std::string &section,
                           std::initializer_list<const char *> allowed) {
  require(obj.is_object(), "config section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto &[key, value] : obj.items())
    require(ok.count(key) > 0, "unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T> void read(const Json &obj, const char *key, T &out, const std::string &section) {
  if (!obj.contains(key))
    return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw ValidationError("config key '" + section + "." + key + "' has the wrong type");
  }
}

inline const Json &section_of(const Json &root, const char *name) {
  static const Json empty = Json::object();
  return root.contains(name) ? root.at(name) : empty;
}

} // namespace detail

inline void validate(const ExperimentConfig &c) {
  require(c.nx >= 2, "mesh.nx must be >= 2");
  require(c.kappa >= 0, "pde.kappa must be >= 0");
  require(c.final_time > 0, "pde.T must be positive");
  require(c.n_steps >= 1, "pde.n_steps must be >= 1");
  require(c.alpha >= 0 && c.beta > 0, "prior needs alpha >= 0 and beta > 0");
  require(c.sensor_points.size() || (c.grid_cols >= 1 && c.grid_rows >= 1),
          "sensor candidate set is empty");
  require(!c.obs_times.empty(), "obs.times is empty");
  require(c.noise_pct >= 0 && c.noise_pct < 1, "noise.pct must lie in [0, 1)");
  require(!c.bumps.empty(), "truth.bumps is empty");
  for (const auto &b : c.bumps)
    require(b.width > 0, "truth bump width must be positive");
  require(c.sketch.k >= 1 && c.sketch.p >= 0 && c.sketch.q >= 1, "sketch needs k >= 1, p >= 0, q >= 1");
  require(c.frozen_k >= 1, "frozen.k must be >= 1");
  require(c.eig_tol > 0, "eig.tol must be positive");
  require(c.gamma >= 0, "opt.gamma must be >= 0");
  require(c.cont_stages >= 1, "opt.cont_stages must be >= 1");
  require(c.opt_tol > 0 && c.max_iters >= 1, "opt.tol must be positive and opt.max_iters >= 1");
  require(c.threshold >= 0 && c.threshold <= 1, "opt.threshold must lie in [0, 1]");
  require(c.w0 >= 0 && c.w0 <= 1, "opt.w0 must lie in [0, 1]");
  require(c.compare_n >= 1, "compare.n must be >= 1");
  require(c.bench_seeds >= 1, "bench.seeds must be >= 1");
  require(c.bench_mesh_k >= 1, "bench.mesh_k must be >= 1");
  for (int l : c.bench_levels)
    require(l >= 2, "bench.mesh_levels entries must be >= 2");
}

inline ExperimentConfig parse_config(const Json &root) {
  using detail::read;
  using detail::section_of;
  detail::reject_unknown(root, "", {"mesh", "mass", "pde", "velocity", "prior", "sensors", "obs",
                                    "noise", "truth", "sketch", "frozen", "eig", "dense", "opt",
                                    "compare", "bench", "cache", "seed"});
  ExperimentConfig c;

  const Json &mesh = section_of(root, "mesh");
  detail::reject_unknown(mesh, "mesh", {"nx", "holes"});
  read(mesh, "nx", c.nx, "mesh");
  if (mesh.contains("holes")) {
    std::vector<std::array<double, 4>> hs;
    read(mesh, "holes", hs, "mesh");
    for (const auto &h : hs)
      c.holes.push_back({h[0], h[1], h[2], h[3]});
  }

  const Json &mass = section_of(root, "mass");
  detail::reject_unknown(mass, "mass", {"mode"});
  std::string mode = to_string(c.mass_mode);
  read(mass, "mode", mode, "mass");
  c.mass_mode = parse_mass_mode(mode);

  const Json &pde = section_of(root, "pde");
  detail::reject_unknown(pde, "pde", {"kappa", "T", "n_steps"});
  read(pde, "kappa", c.kappa, "pde");
  read(pde, "T", c.final_time, "pde");
  read(pde, "n_steps", c.n_steps, "pde");

  const Json &vel = section_of(root, "velocity");
  detail::reject_unknown(vel, "velocity", {"amplitude"});
  read(vel, "amplitude", c.amplitude, "velocity");

  const Json &prior = section_of(root, "prior");
  detail::reject_unknown(prior, "prior", {"alpha", "beta"});
  read(prior, "alpha", c.alpha, "prior");
  read(prior, "beta", c.beta, "prior");

  const Json &sens = section_of(root, "sensors");
  detail::reject_unknown(sens, "sensors", {"grid", "points"});
  if (sens.contains("grid")) {
    std::array<int, 2> g{};
    read(sens, "grid", g, "sensors");
    c.grid_cols = g[0];
    c.grid_rows = g[1];
  }
  read(sens, "points", c.sensor_points, "sensors");

  const Json &obs = section_of(root, "obs");
  detail::reject_unknown(obs, "obs", {"times"});
  read(obs, "times", c.obs_times, "obs");

  const Json &noise = section_of(root, "noise");
  detail::reject_unknown(noise, "noise", {"pct"});
  read(noise, "pct", c.noise_pct, "noise");

  const Json &truth = section_of(root, "truth");
  detail::reject_unknown(truth, "truth", {"bumps"});
  if (truth.contains("bumps")) {
    require(truth.at("bumps").is_array(), "truth.bumps must be an array");
    c.bumps.clear();
    for (const auto &b : truth.at("bumps")) {
      detail::reject_unknown(b, "truth.bumps[]", {"x", "y", "width", "amplitude"});
      Bump bump;
      read(b, "x", bump.x, "truth.bumps[]");
      read(b, "y", bump.y, "truth.bumps[]");
      read(b, "width", bump.width, "truth.bumps[]");
      read(b, "amplitude", bump.amplitude, "truth.bumps[]");
      c.bumps.push_back(bump);
    }
  }

  const Json &sk = section_of(root, "sketch");
  detail::reject_unknown(sk, "sketch", {"k", "p", "q", "seed", "reuse_products"});
  read(sk, "k", c.sketch.k, "sketch");
  read(sk, "p", c.sketch.p, "sketch");
  read(sk, "q", c.sketch.q, "sketch");
  read(sk, "seed", c.sketch.seed, "sketch");
  read(sk, "reuse_products", c.reuse_products, "sketch");

  const Json &fz = section_of(root, "frozen");
  detail::reject_unknown(fz, "frozen", {"k", "exact"});
  read(fz, "k", c.frozen_k, "frozen");
  read(fz, "exact", c.frozen_exact, "frozen");

  const Json &eig = section_of(root, "eig");
  detail::reject_unknown(eig, "eig", {"tol"});
  read(eig, "tol", c.eig_tol, "eig");

  const Json &dense = section_of(root, "dense");
  detail::reject_unknown(dense, "dense", {"guard"});
  read(dense, "guard", c.dense_guard, "dense");

  const Json &opt = section_of(root, "opt");
  detail::reject_unknown(opt, "opt", {"method", "penalty", "gamma", "cont_stages", "tol",
                                      "max_iters", "threshold", "w0"});
  std::string method = to_string(c.method), penalty = "l1";
  read(opt, "method", method, "opt");
  read(opt, "penalty", penalty, "opt");
  c.method = parse_estimator(method);
  c.penalty = parse_penalty(penalty);
  read(opt, "gamma", c.gamma, "opt");
  read(opt, "cont_stages", c.cont_stages, "opt");
  read(opt, "tol", c.opt_tol, "opt");
  read(opt, "max_iters", c.max_iters, "opt");
  read(opt, "threshold", c.threshold, "opt");
  read(opt, "w0", c.w0, "opt");

  const Json &cmp = section_of(root, "compare");
  detail::reject_unknown(cmp, "compare", {"n"});
  read(cmp, "n", c.compare_n, "compare");

  const Json &bench = section_of(root, "bench");
  detail::reject_unknown(bench, "bench", {"ks", "mesh_levels", "mesh_k", "seeds"});
  read(bench, "ks", c.bench_ks, "bench");
  read(bench, "mesh_levels", c.bench_levels, "bench");
  read(bench, "mesh_k", c.bench_mesh_k, "bench");
  read(bench, "seeds", c.bench_seeds, "bench");

  const Json &cache = section_of(root, "cache");
  detail::reject_unknown(cache, "cache", {"z"});
  read(cache, "z", c.z_cache, "cache");

  if (root.contains("seed"))
    read(root, "seed", c.seed, "");

  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string &path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open config file '" + path + "'");
  Json root;
  try {
    root = Json::parse(is);
  } catch (const nlohmann::json::parse_error &e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(root);
}

inline std::string penalty_name(PenaltyKind k) { return k == PenaltyKind::L1 ? "l1" : "cont"; }

/// Every setting with its resolved value.
inline Json to_json(const ExperimentConfig &c) {
  Json j;
  Json holes = Json::array();
  for (const auto &h : c.holes)
    holes.push_back({h.x0, h.y0, h.x1, h.y1});
  j["mesh"] = {{"nx", c.nx}, {"holes", holes}};
  j["mass"] = {{"mode", to_string(c.mass_mode)}};
  j["pde"] = {{"kappa", c.kappa}, {"T", c.final_time}, {"n_steps", c.n_steps}};
  j["velocity"] = {{"amplitude", c.amplitude}};
  j["prior"] = {{"alpha", c.alpha}, {"beta", c.beta}};
  j["sensors"] = {{"grid", {c.grid_cols, c.grid_rows}}, {"points", c.sensor_points}};
  j["obs"] = {{"times", c.obs_times}};
  j["noise"] = {{"pct", c.noise_pct}};
  Json bumps = Json::array();
  for (const auto &b : c.bumps)
    bumps.push_back({{"x", b.x}, {"y", b.y}, {"width", b.width}, {"amplitude", b.amplitude}});
  j["truth"] = {{"bumps", bumps}};
  j["sketch"] = {{"k", c.sketch.k},
                 {"p", c.sketch.p},
                 {"q", c.sketch.q},
                 {"seed", c.sketch.seed},
                 {"reuse_products", c.reuse_products}};
  j["frozen"] = {{"k", c.frozen_k}, {"exact", c.frozen_exact}};
  j["eig"] = {{"tol", c.eig_tol}};
  j["dense"] = {{"guard", c.dense_guard}};
  j["opt"] = {{"method", to_string(c.method)}, {"penalty", penalty_name(c.penalty)},
              {"gamma", c.gamma},              {"cont_stages", c.cont_stages},
              {"tol", c.opt_tol},              {"max_iters", c.max_iters},
              {"threshold", c.threshold},      {"w0", c.w0}};
  j["compare"] = {{"n", c.compare_n}};
  j["bench"] = {{"ks", c.bench_ks}, {"mesh_levels", c.bench_levels},
                {"mesh_k", c.bench_mesh_k}, {"seeds", c.bench_seeds}};
  j["cache"] = {{"z", c.z_cache}};
  j["seed"] = c.seed;
  return j;
}

inline std::uint64_t config_hash(const ExperimentConfig &c) { return fnv1a(to_json(c).dump()); }

// Hash of the settings the sensor constants depend on.
inline std::uint64_t z_cache_hash(const ExperimentConfig &c) {
  const Json j = to_json(c);
  Json sub;
  for (const char *key : {"mesh", "mass", "pde", "velocity", "prior", "sensors", "obs", "noise", "truth"})
    sub[key] = j.at(key);
  return fnv1a(sub.dump());
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

} // namespace oed
