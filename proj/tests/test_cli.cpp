#include "support.hpp"

#include "oed/experiments.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace oed;
using namespace oed::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string &name) {
  const fs::path d = fs::temp_directory_path() / ("oed_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path &p, const std::string &s) { std::ofstream(p) << s; }

// Small, fast problem written as a config file.
Json small_json() {
  return Json::parse(R"({
    "mesh": {"nx": 8},
    "pde": {"kappa": 0.05, "T": 1, "n_steps": 20},
    "prior": {"alpha": 0.5, "beta": 5},
    "sensors": {"grid": [3, 3]},
    "obs": {"times": [0.25, 0.5, 1.0]},
    "noise": {"pct": 0.02},
    "truth": {"bumps": [{"x": 0.4, "y": 0.6, "width": 0.15, "amplitude": 1.0}]},
    "sketch": {"k": 5, "p": 5, "q": 1, "seed": 3},
    "frozen": {"k": 5},
    "opt": {"method": "rand", "penalty": "l1", "gamma": 2.0},
    "compare": {"n": 20},
    "bench": {"mesh_levels": [8, 16], "seeds": 2},
    "seed": 11
  })");
}

fs::path write_config(const fs::path &dir, const Json &j, const std::string &name = "cfg.json") {
  const fs::path p = dir / name;
  write_text(p, j.dump(2));
  return p;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(OED_DOPT_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const ExperimentConfig c = parse_config(Json::object());
  const ExperimentConfig d;
  EXPECT_EQ(to_json(c).dump(), to_json(d).dump());
  EXPECT_EQ(c.nx, 16);
  EXPECT_EQ(c.alpha, 2e-3);
  EXPECT_EQ(c.beta, 0.1);
  EXPECT_EQ(c.kappa, 1e-3);
  EXPECT_EQ(c.sensors().size(), 35u);
  EXPECT_EQ(c.opt_options().nonmonotone_window, 5);
}

TEST(Config, RoundTripAndHash) {
  const ExperimentConfig c = parse_config(small_json());
  const ExperimentConfig back = parse_config(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");

  ExperimentConfig g = c;
  g.gamma = 5.0;
  EXPECT_NE(config_hash(g), config_hash(c));
  EXPECT_EQ(z_cache_hash(g), z_cache_hash(c));
  ExperimentConfig pr = c;
  pr.beta = 4.0;
  EXPECT_NE(z_cache_hash(pr), z_cache_hash(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto bad = [](const std::function<void(Json &)> &edit) {
    Json j = small_json();
    edit(j);
    EXPECT_THROW(parse_config(j), ValidationError) << j.dump();
  };
  bad([](Json &j) { j["colour"] = 1; });
  bad([](Json &j) { j["mesh"]["nz"] = 4; });
  bad([](Json &j) { j["mesh"]["nx"] = "sixteen"; });
  bad([](Json &j) { j["mesh"]["nx"] = 1; });
  bad([](Json &j) { j["noise"]["pct"] = 1.5; });
  bad([](Json &j) { j["sensors"]["grid"] = {0, 5}; });
  bad([](Json &j) { j["obs"]["times"] = Json::array(); });
  bad([](Json &j) { j["opt"]["method"] = "svd"; });
  bad([](Json &j) { j["opt"]["penalty"] = "l0"; });
  bad([](Json &j) { j["sketch"]["q"] = 0; });
  bad([](Json &j) { j["prior"]["beta"] = 0; });
  bad([](Json &j) { j["mass"] = {{"mode", "consistent"}}; });
  bad([](Json &j) { j["bench"]["mesh_k"] = 0; });
}

TEST(Config, LoadErrors) {
  const fs::path d = scratch_dir("load");
  EXPECT_THROW(load_config((d / "missing.json").string()), ValidationError);
  write_text(d / "broken.json", "{ not json");
  EXPECT_THROW(load_config((d / "broken.json").string()), ValidationError);
  fs::remove_all(d);
}

TEST(Csv, WeightsRoundTrip) {
  const fs::path d = scratch_dir("csv");
  const Mesh m = build_mesh(4);
  const auto obs = make_observation_setup(m, {{0.25, 0.25}, {0.5, 0.75}, {1.0, 0.0}}, {1.0}, 1.0,
                                          10, 0.1);
  Vec w(3), a(3);
  w << 0.1234567890123, 1.0, 0.0;
  a << 1, 1, 0;
  {
    std::ofstream os(d / "w.csv");
    write_weights_csv(os, obs, w, a);
  }
  const WeightsFile f = read_weights_csv(d / "w.csv");
  EXPECT_EQ(f.weight, w);
  EXPECT_EQ(f.active, a);
  write_text(d / "nohdr.csv", "a,b\n1,2\n");
  EXPECT_THROW(read_weights_csv(d / "nohdr.csv"), ValidationError);
  write_text(d / "text.csv", "weight\nabc\n");
  EXPECT_THROW(read_weights_csv(d / "text.csv"), ValidationError);
  fs::remove_all(d);
}

TEST(Csv, ObservationsLayout) {
  std::ostringstream os;
  Vec y(4);
  y << 1, 2, 3, 4;
  write_observations_csv(os, y, 2);
  EXPECT_EQ(os.str(), "index,time_id,sensor_id,value\n0,0,0,1\n1,0,1,2\n2,1,0,3\n3,1,1,4\n");
}

TEST(Cli, ExitCodes) {
  const fs::path d = scratch_dir("exit");
  const fs::path cfg = write_config(d, small_json());
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("oed"), 2);
  EXPECT_EQ(run_cli("frobnicate --config " + cfg.string()), 2);
  EXPECT_EQ(run_cli("synthesize --config " + (d / "missing.json").string()), 2);

  Json unknown = small_json();
  unknown["opt"]["gamm"] = 1;
  EXPECT_EQ(run_cli("oed --config " + write_config(d, unknown, "unknown.json").string()), 2);

  Json empty = small_json();
  empty["sensors"]["grid"] = {0, 0};
  EXPECT_EQ(run_cli("oed --config " + write_config(d, empty, "empty.json").string()), 2);

  Json quiet = small_json();
  quiet["noise"]["pct"] = 0;
  const fs::path qcfg = write_config(d, quiet, "quiet.json");
  EXPECT_EQ(run_cli("synthesize --config " + qcfg.string() + " --out " + (d / "q").string()), 0);
  EXPECT_EQ(run_cli("oed --config " + qcfg.string() + " --out " + (d / "q").string()), 2);

  // An unwritable output location is a runtime failure, not a validation error.
  EXPECT_EQ(run_cli("synthesize --config " + cfg.string() + " --out /proc/oed_cli_forbidden"), 1);
  EXPECT_EQ(run_cli("synthesize --config " + cfg.string() + " --out " + (d / "ok").string()), 0);
  fs::remove_all(d);
}

TEST(Cli, ZeroNoiseGivesCleanData) {
  const fs::path d = scratch_dir("clean");
  Json quiet = small_json();
  quiet["noise"]["pct"] = 0;
  const fs::path cfg = write_config(d, quiet);
  ASSERT_EQ(run_cli("synthesize --config " + cfg.string() + " --out " + d.string()), 0);
  const ExperimentConfig c = parse_config(quiet);
  const auto p = build_problem(c);
  const Vec y = p->forward->forward(p->theta_true);
  std::ifstream is(d / "y_obs.csv");
  std::string line;
  std::getline(is, line);
  Index i = 0;
  while (std::getline(is, line)) {
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_EQ(v, y[i]) << i;
    ++i;
  }
  EXPECT_EQ(i, y.size());
  fs::remove_all(d);
}

TEST(Cli, DeterministicOutputs) {
  const fs::path d = scratch_dir("det");
  const fs::path cfg = write_config(d, small_json());
  const fs::path a = d / "a", b = d / "b";
  for (const auto &out : {a, b}) {
    ASSERT_EQ(run_cli("synthesize --config " + cfg.string() + " --out " + out.string()), 0);
    ASSERT_EQ(run_cli("oed --no-timing --config " + cfg.string() + " --out " + out.string()), 0);
  }
  for (const char *f : {"y_obs.csv", "sigma.csv", "theta_true.csv", "mesh.csv", "weights.csv",
                        "iterations.csv", "stages.csv", "oed_summary.json",
                        "resolved_config.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  // The iteration log starts from zero solves and records none of the wall clock.
  std::ifstream is(a / "iterations.csv");
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "iter,objective,grad_norm,wall_time,pde_solves");
  EXPECT_EQ(first.substr(first.size() - 4), ",0,0");

  const fs::path c = d / "c";
  ASSERT_EQ(run_cli("synthesize --seed 99 --config " + cfg.string() + " --out " + c.string()), 0);
  EXPECT_NE(slurp(a / "y_obs.csv"), slurp(c / "y_obs.csv"));
  const Json resolved = Json::parse(slurp(c / "resolved_config.json"));
  EXPECT_EQ(resolved["config"]["seed"], 99);
  fs::remove_all(d);
}

TEST(Cli, EvaluateMetrics) {
  const fs::path d = scratch_dir("eval");
  const fs::path cfg = write_config(d, small_json());
  write_text(d / "zero.csv", "sensor_id,weight\n0,0\n1,0\n2,0\n3,0\n4,0\n5,0\n6,0\n7,0\n8,0\n");
  ASSERT_EQ(run_cli("evaluate --config " + cfg.string() + " --out " + (d / "z").string() +
                    " --weights " + (d / "zero.csv").string()),
            0);
  const Json z = Json::parse(slurp(d / "z" / "metrics.json"));
  EXPECT_EQ(z["J"].get<double>(), 0.0);
  EXPECT_EQ(z["info_gain"].get<double>(), 0.0);
  EXPECT_EQ(z["D_KL"].get<double>(), 0.0);
  EXPECT_EQ(z["dense"]["J"].get<double>(), 0.0);

  ASSERT_EQ(run_cli("evaluate --config " + cfg.string() + " --out " + (d / "one").string()), 0);
  const Json m = Json::parse(slurp(d / "one" / "metrics.json"));
  EXPECT_EQ(m["info_gain"].get<double>(), 0.5 * m["J"].get<double>());
  EXPECT_GT(m["J"].get<double>(), 0.0);
  EXPECT_LT(m["errors_vs_dense"]["rand"]["J_rel_err"].get<double>(), 0.1);

  write_text(d / "short.csv", "weight\n0.5\n");
  EXPECT_EQ(run_cli("evaluate --config " + cfg.string() + " --out " + (d / "s").string() +
                    " --weights " + (d / "short.csv").string()),
            2);
  fs::remove_all(d);
}

TEST(Cli, OedThenCompareRandom) {
  const fs::path d = scratch_dir("cmp");
  const fs::path cfg = write_config(d, small_json());
  ASSERT_EQ(run_cli("oed --config " + cfg.string() + " --out " + d.string()), 0);
  const WeightsFile wf = read_weights_csv(d / "weights.csv");
  ASSERT_EQ(wf.weight.size(), 9);
  ASSERT_EQ(run_cli("compare-random --config " + cfg.string() + " --out " + d.string()), 0);
  const Json s = Json::parse(slurp(d / "compare_summary.json"));
  EXPECT_EQ(s["cardinality"].get<Index>(), static_cast<Index>((wf.active.array() > 0.5).count()));
  EXPECT_TRUE(s["optimal_beats_all"].get<bool>());
  std::ifstream is(d / "cloud.csv");
  std::string line;
  int rows = 0;
  while (std::getline(is, line))
    ++rows;
  EXPECT_EQ(rows, 1 + 1 + 20);
  fs::remove_all(d);
}

TEST(Cli, Bench) {
  const fs::path d = scratch_dir("bench");
  const fs::path cfg = write_config(d, small_json());
  ASSERT_EQ(run_cli("bench --config " + cfg.string() + " --out " + d.string()), 0);
  const Json s = Json::parse(slurp(d / "bench_summary.json"));
  EXPECT_LE(s["full_rank_kl_err_eig"].get<double>(), 1e-8);
  EXPECT_LE(s["full_rank_kl_err_rand"].get<double>(), 1e-8);
  EXPECT_TRUE(fs::exists(d / "rank_sweep.csv"));
  EXPECT_TRUE(fs::exists(d / "mesh_sweep.csv"));
  fs::remove_all(d);
}

TEST(Cli, ShippedConfigsParse) {
  for (const auto &entry : fs::directory_iterator(OED_CONFIG_DIR))
    if (entry.path().extension() == ".json")
      EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
}
