#include "support.hpp"

using namespace oed;
using namespace oed::test;

namespace {

struct Stack {
  Mesh mesh;
  AssembledOperators ops;
  MassFactor mass;
  std::unique_ptr<AdvectionDiffusion> fwd;
};

Stack make_stack(int nx, double amplitude, double kappa, int n_steps, double T,
                 std::vector<double> times, int grid = 3) {
  Stack s;
  s.mesh = build_mesh(nx);
  s.ops = assemble(s.mesh, VelocityField{amplitude, {}});
  s.mass = MassFactor(s.ops.M, MassMode::Lumped);
  std::vector<std::array<double, 2>> sensors;
  for (int j = 0; j < grid; ++j)
    for (int i = 0; i < grid; ++i)
      sensors.push_back({(i + 1.0) / (grid + 1), (j + 1.0) / (grid + 1)});
  s.fwd = std::make_unique<AdvectionDiffusion>(
      s.mass.mass(), s.ops.K, s.ops.N,
      make_observation_setup(s.mesh, sensors, times, T, n_steps, kappa));
  return s;
}

// Dense F built column by column from unit initial states.
Mat dense_forward(const AdvectionDiffusion &fwd) {
  Mat F(fwd.obs_dim(), fwd.param_dim());
  for (Index i = 0; i < fwd.param_dim(); ++i)
    F.col(i) = fwd.forward(Vec::Unit(fwd.param_dim(), i));
  return F;
}

} // namespace

TEST(Observation, StackingIsTimeMajor) {
  const Stack s = make_stack(4, 0.0, 0.1, 3, 0.3, {0.1, 0.2, 0.3});
  const auto &obs = s.fwd->observation();
  EXPECT_EQ(obs.num_sensors(), 9);
  EXPECT_EQ(obs.num_times(), 3);
  EXPECT_EQ(obs.obs_index(0, 4), 4);
  EXPECT_EQ(obs.obs_index(2, 1), 2 * 9 + 1);
  EXPECT_EQ(obs.obs_steps, (std::vector<int>{1, 2, 3}));
}

TEST(Observation, Validation) {
  const Mesh m = build_mesh(4);
  const std::vector<std::array<double, 2>> one{{0.5, 0.5}};
  EXPECT_THROW(make_observation_setup(m, {}, {1.0}, 1.0, 10, 0.1), ValidationError);
  EXPECT_THROW(make_observation_setup(m, one, {}, 1.0, 10, 0.1), ValidationError);
  EXPECT_THROW(make_observation_setup(m, one, {1.5}, 1.0, 10, 0.1), ValidationError);
  EXPECT_THROW(make_observation_setup(m, one, {0.5, 0.5}, 1.0, 10, 0.1), ValidationError);
  EXPECT_THROW(make_observation_setup(m, {{0.5, 0.5}, {0.51, 0.5}}, {1.0}, 1.0, 10, 0.1),
               ValidationError);
  const auto obs = make_observation_setup(m, {{0.26, 0.74}}, {0.33}, 1.0, 10, 0.1);
  EXPECT_DOUBLE_EQ(obs.sensor_xy[0][0], 0.25);
  EXPECT_DOUBLE_EQ(obs.sensor_xy[0][1], 0.75);
  EXPECT_EQ(obs.obs_steps[0], 3);
}

TEST(Forward, ZeroInZeroOut) {
  const Stack s = make_stack(4, 1.0, 0.05, 5, 1.0, {0.4, 1.0});
  EXPECT_EQ(s.fwd->forward(Vec::Zero(s.fwd->param_dim())).norm(), 0.0);
  EXPECT_EQ(s.fwd->adjoint(Vec::Zero(s.fwd->obs_dim())).norm(), 0.0);
}

TEST(Forward, PureDiffusionPreservesConstants) {
  const Stack s = make_stack(6, 0.0, 0.2, 10, 1.0, {0.3, 0.7, 1.0});
  const Vec y = s.fwd->forward(Vec::Constant(s.fwd->param_dim(), 2.5));
  EXPECT_LE((y.array() - 2.5).abs().maxCoeff(), 1e-10);
}

TEST(Forward, PureDiffusionConservesMass) {
  const Stack s = make_stack(6, 0.0, 0.2, 10, 1.0, {1.0});
  std::mt19937_64 rng(3);
  const Vec theta = random_vec(s.fwd->param_dim(), rng);
  const auto traj = s.fwd->trajectory(theta);
  const Vec one = Vec::Ones(theta.size());
  const double m0 = one.dot(s.mass.mass() * traj.front());
  for (const auto &u : traj)
    EXPECT_NEAR(one.dot(s.mass.mass() * u), m0, 1e-10 * std::abs(m0));
}

TEST(Forward, UnitStatesGiveDenseColumns) {
  const Stack s = make_stack(4, 1.0, 0.05, 3, 0.3, {0.1, 0.2, 0.3});
  // Independent oracle: dense step matrix inverse applied explicitly.
  const Mat A = Mat(s.fwd->step_matrix());
  const Mat M = Mat(s.mass.mass());
  const Mat step = A.partialPivLu().solve(M);
  const auto &obs = s.fwd->observation();
  for (Index i : {Index{0}, Index{7}, Index{24}}) {
    Vec u = Vec::Unit(s.fwd->param_dim(), i);
    Vec y_ref(s.fwd->obs_dim());
    for (int st = 1; st <= 3; ++st) {
      u = step * u;
      for (Index j = 0; j < obs.num_sensors(); ++j)
        y_ref[obs.obs_index(st - 1, j)] = u[obs.sensor_nodes[j]];
    }
    const Vec y = s.fwd->forward(Vec::Unit(s.fwd->param_dim(), i));
    EXPECT_LE((y - y_ref).norm(), 1e-12 * std::max(1.0, y_ref.norm()));
  }
}

TEST(Forward, AdjointRowsMatchDenseF) {
  const Stack s = make_stack(4, 1.0, 0.05, 3, 0.3, {0.1, 0.3});
  const Mat F = dense_forward(*s.fwd);
  for (Index r : {Index{0}, Index{5}, Index{17}}) {
    const Vec row = s.fwd->adjoint(Vec::Unit(s.fwd->obs_dim(), r));
    EXPECT_LE((row - F.row(r).transpose()).norm(), 1e-12 * F.row(r).norm());
  }
}

TEST(Forward, Linearity) {
  const Stack s = make_stack(8, 1.0, 0.05, 10, 1.0, {0.5, 1.0});
  std::mt19937_64 rng(9);
  const Vec a = random_vec(s.fwd->param_dim(), rng), b = random_vec(s.fwd->param_dim(), rng);
  const Vec lhs = s.fwd->forward(2.0 * a - 3.0 * b);
  const Vec rhs = 2.0 * s.fwd->forward(a) - 3.0 * s.fwd->forward(b);
  EXPECT_LE((lhs - rhs).norm(), 1e-12 * rhs.norm());
}

struct AdjointCase {
  int nx;
  double amplitude, kappa;
  int steps;
  double T;
  std::vector<double> times;
};

class AdjointConsistency : public ::testing::TestWithParam<AdjointCase> {};

TEST_P(AdjointConsistency, FiftyRandomPairs) {
  const auto c = GetParam();
  const Stack s = make_stack(c.nx, c.amplitude, c.kappa, c.steps, c.T, c.times);
  std::mt19937_64 rng(c.nx);
  for (int t = 0; t < 50; ++t) {
    const Vec theta = random_vec(s.fwd->param_dim(), rng);
    const Vec ybar = random_vec(s.fwd->obs_dim(), rng);
    const Vec Ft = s.fwd->forward(theta);
    EXPECT_LE(std::abs(Ft.dot(ybar) - theta.dot(s.fwd->adjoint(ybar))),
              1e-10 * Ft.norm() * ybar.norm());
  }
}

INSTANTIATE_TEST_SUITE_P(
    Configs, AdjointConsistency,
    ::testing::Values(AdjointCase{4, 1.0, 0.05, 3, 0.3, {0.1, 0.2, 0.3}},
                      AdjointCase{8, 1.0, 0.01, 20, 2.0, {0.5, 1.0, 1.5}},
                      AdjointCase{12, 0.5, 0.02, 15, 1.0, {0.2, 0.6}}));

TEST(Forward, SolveCounterCountsMarches) {
  const Stack s = make_stack(4, 1.0, 0.05, 5, 1.0, {0.4, 1.0});
  const SolveCount before = solve_snapshot();
  s.fwd->forward(Vec::Ones(s.fwd->param_dim()));
  s.fwd->adjoint(Vec::Ones(s.fwd->obs_dim()));
  s.fwd->adjoint(Vec::Ones(s.fwd->obs_dim()));
  const SolveCount d = solve_snapshot() - before;
  EXPECT_EQ(d.forward, 1u);
  EXPECT_EQ(d.adjoint, 2u);
}

TEST(Synthesize, NoiseLevelAndDeterminism) {
  const Stack s = make_stack(8, 1.0, 0.05, 10, 1.0, {0.5, 1.0});
  const Vec theta = Vec::LinSpaced(s.fwd->param_dim(), 0.0, 1.0);
  const SyntheticData a = synthesize_data(*s.fwd, theta, 0.02, 7);
  const SyntheticData b = synthesize_data(*s.fwd, theta, 0.02, 7);
  const double peak = a.y_clean.cwiseAbs().maxCoeff();
  EXPECT_TRUE((a.sigma.array() == 0.02 * peak).all());
  EXPECT_EQ(a.y_obs, b.y_obs);
  EXPECT_NE(a.y_obs, a.y_clean);
  const SyntheticData c = synthesize_data(*s.fwd, theta, 0.0, 7);
  EXPECT_EQ(c.y_obs, c.y_clean);
  EXPECT_THROW(synthesize_data(*s.fwd, Vec::Zero(theta.size()), 0.02, 7), ValidationError);
  EXPECT_THROW(synthesize_data(*s.fwd, theta, 1.5, 7), ValidationError);
}

TEST(Synthesize, NoiseStatistics) {
  const Stack s = make_stack(8, 1.0, 0.05, 10, 1.0, {0.25, 0.5, 0.75, 1.0}, 5);
  const Vec theta = Vec::LinSpaced(s.fwd->param_dim(), 0.0, 1.0);
  const SyntheticData d = synthesize_data(*s.fwd, theta, 0.1, 3);
  const Vec eta = (d.y_obs - d.y_clean) / d.sigma[0];
  const double n = static_cast<double>(eta.size());
  EXPECT_LE(std::abs(eta.mean()), 5 / std::sqrt(n));
  EXPECT_NEAR(eta.squaredNorm() / n, 1.0, 5 * std::sqrt(2.0 / n));
}

TEST(Transport, PecletNumber) {
  EXPECT_DOUBLE_EQ(mesh_peclet(0.1, 1.0, 0.001), 50.0);
  EXPECT_TRUE(std::isinf(mesh_peclet(0.1, 1.0, 0.0)));
}
