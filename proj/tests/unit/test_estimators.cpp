#include "mlmcvi/estimators.hpp"
#include "mlmcvi/optimizers.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace mlmcvi;
namespace mt = mlmcvi::testing;

namespace {

std::shared_ptr<const Dataset> breast_cancer() {
  CsvOptions options;
  options.target_column = "class";
  options.positive_label = "malignant";
  options.require_binary = true;
  return std::make_shared<const Dataset>(load_uci_csv(mt::breast_cancer_path(), options));
}

VariationalParams shifted(const VariationalParams& p, const Vector& direction, double h) {
  return VariationalParams::from_flat(p.flat() + h * direction);
}

double trace_variance(const std::vector<Vector>& draws) {
  Vector mean = Vector::Zero(draws.front().size());
  for (const auto& d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  double acc = 0.0;
  for (const auto& d : draws) acc += (d - mean).squaredNorm();
  return acc / static_cast<double>(draws.size() - 1);
}

}  // namespace

TEST(CoupledDifference, EqualParamsGiveExactZero) {
  const auto data = breast_cancer();
  const auto model = blr_model(data, Split::Train);
  const auto params = VariationalParams::constant(12, 0.3, -0.5);
  const auto diff = coupled_difference(*model, params, params, mc_normal_batch(1, 2, 25, 12));
  EXPECT_EQ(diff.flat(), Vector::Zero(24));
  EXPECT_EQ(diff.kind, EstimatorKind::MRG);
  EXPECT_EQ(diff.n_samples, 25);
}

TEST(CoupledDifference, ShrinksLinearlyWithParameterGap) {
  const auto data = breast_cancer();
  const auto model = blr_model(data, Split::Train);
  const auto base = VariationalParams::constant(12, 0.1, -1.0);
  std::mt19937_64 rng(3);
  const Vector dir = mt::random_vector(rng, 24, 1.0).normalized();
  const auto batch = mc_normal_batch(5, 0, 10, 12);
  std::vector<double> norms;
  for (double h : {1e-3, 5e-4, 2.5e-4}) {
    norms.push_back(coupled_difference(*model, shifted(base, dir, h), base, batch).flat().norm());
  }
  EXPECT_NEAR(norms[0] / norms[1], 2.0, 0.02);
  EXPECT_NEAR(norms[1] / norms[2], 2.0, 0.02);
}

TEST(CoupledDifference, VarianceBelowUncoupled) {
  const auto data = breast_cancer();
  const auto model = blr_model(data, Split::Train);
  const auto prev = VariationalParams::constant(12, 0.1, -1.0);
  std::mt19937_64 rng(6);
  const auto curr = shifted(prev, mt::random_vector(rng, 24, 1.0).normalized(), 0.05);
  std::vector<Vector> coupled, uncoupled;
  for (int r = 0; r < 500; ++r) {
    const auto a = mc_normal_batch(7, r, 4, 12);
    const auto b = mc_normal_batch(8, r, 4, 12);
    coupled.push_back(coupled_difference(*model, curr, prev, a).flat());
    uncoupled.push_back(uncoupled_difference(*model, curr, prev, a, b).flat());
  }
  EXPECT_LT(trace_variance(coupled), trace_variance(uncoupled));
}

TEST(LevelProbe, ZeroForEqualParamsAndQuadraticInGap) {
  const auto data = breast_cancer();
  const auto model = blr_model(data, Split::Train);
  const auto prev = VariationalParams::constant(12, 0.0, -1.5);
  const auto eps = mc_normal_batch(9, 1, 1, 12);
  EXPECT_EQ(probe_one_sample_variance(*model, prev, prev, eps).v_t, 0.0);
  std::mt19937_64 rng(10);
  const Vector dir = mt::random_vector(rng, 24, 1.0).normalized();
  const double v1 = probe_one_sample_variance(*model, shifted(prev, dir, 1e-3), prev, eps).v_t;
  const double v2 = probe_one_sample_variance(*model, shifted(prev, dir, 2e-3), prev, eps).v_t;
  EXPECT_GT(v1, 0.0);
  EXPECT_NEAR(v2 / v1, 4.0, 0.4);
  EXPECT_EQ(probe_one_sample_variance(*model, prev, prev, eps).eps_used, eps.stream);
}

TEST(InitialLevel, VZeroIsCovarianceTrace) {
  const auto model = conjugate_gaussian_model(0.5);
  const auto params = VariationalParams::constant(1, 0.2, -0.1);
  const auto batch = mc_normal_batch(3, 0, 50, 1);
  const auto level = initial_level(*model, params, batch);
  std::vector<Vector> draws;
  for (Index i = 0; i < batch.n(); ++i) draws.push_back(per_sample_gradient(*model, params, batch.row(i)).flat());
  EXPECT_NEAR(level.v_zero, trace_variance(draws), 1e-12);
  EXPECT_LT((level.estimate.flat() - batch_gradient(*model, params, batch).flat()).norm(), 1e-14);
}

TEST(SampleSize, VarianceRatioExamples) {
  EXPECT_EQ(estimate_n_variance_ratio(1, 2.0, 0.0, 2.0, 100, 100), 71);
  EXPECT_EQ(estimate_n_variance_ratio(2, 0.3, 0.3, 9.0, 50, 100), 50);
  EXPECT_EQ(estimate_n_variance_ratio(3, 0.25, 1.0, 9.0, 40, 100), 20);
  EXPECT_EQ(estimate_n_variance_ratio(5, 0.4, 0.0, 9.0, 40, 100), 1);
}

TEST(SampleSize, ScheduleRatioExamples) {
  EXPECT_EQ(estimate_n_schedule_ratio(1, 1.0, 1.0, 0.5, 100, 100), 100);
  EXPECT_EQ(estimate_n_schedule_ratio(7, 0.25, 0.25, 3.0, 33, 100), 33);
  ScheduleConfig step;
  const long t = 102;  // eta drops between t-2 = 100 and t-1 = 101
  EXPECT_EQ(estimate_n_schedule_ratio(t, eta(step, t - 1), eta(step, t - 2), 3.0, 40, 100), 20);
}

TEST(SampleSize, RandomizedInputsMatchHighPrecisionOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> log_v(-6.0, 3.0);
  std::uniform_int_distribution<Index> n0_dist(1, 500);
  std::uniform_int_distribution<long> t_dist(1, 4);
  for (int i = 0; i < 20; ++i) {
    const Index n0 = n0_dist(rng);
    const Index n_prev = std::uniform_int_distribution<Index>(1, n0)(rng);
    const long t = t_dist(rng);
    const double v_t = std::pow(10.0, log_v(rng));
    const double v_prev = std::pow(10.0, log_v(rng));
    const double v_zero = std::pow(10.0, log_v(rng));
    EXPECT_EQ(estimate_n_variance_ratio(t, v_t, v_prev, v_zero, n_prev, n0),
              mt::oracle_variance_ratio(t, v_t, v_prev, v_zero, n_prev, n0));
    const double eta_prev2 = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const double eta_prev = eta_prev2 * std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    EXPECT_EQ(estimate_n_schedule_ratio(t, eta_prev, eta_prev2, v_zero, n_prev, n0),
              mt::oracle_schedule_ratio(t, eta_prev, eta_prev2, v_zero, n_prev, n0));
  }
}

TEST(SampleSize, OutputsAlwaysClamped) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> log_v(-12.0, 12.0);
  for (int i = 0; i < 5000; ++i) {
    const Index n0 = std::uniform_int_distribution<Index>(1, 1000)(rng);
    const Index n_prev = std::uniform_int_distribution<Index>(1, n0)(rng);
    const long t = std::uniform_int_distribution<long>(1, 50)(rng);
    const double a = std::pow(10.0, log_v(rng)), b = std::pow(10.0, log_v(rng));
    const double c = std::pow(10.0, log_v(rng));
    const Index nv = estimate_n_variance_ratio(t, a, b, c, n_prev, n0);
    const Index ns = estimate_n_schedule_ratio(t, std::min(a, 1.0), std::min(b, 1.0), c, n_prev, n0);
    ASSERT_GE(nv, 1);
    ASSERT_LE(nv, n0);
    ASSERT_GE(ns, 1);
    ASSERT_LE(ns, n0);
  }
}

TEST(SampleSize, ScheduleRatioIsMonotoneAndReachesOne) {
  const std::vector<ScheduleConfig> schedules = {
      {ScheduleKind::TimeBased, 0.1, 1, 0.01, StepRounding::Ceil},
      {ScheduleKind::StepBased, 0.5, 100, 0.01, StepRounding::Ceil},
      {ScheduleKind::StepBased, 0.5, 10, 0.01, StepRounding::Floor},
      {ScheduleKind::Exponential, 0.05, 1, 0.01, StepRounding::Ceil},
  };
  for (const auto& schedule : schedules) {
    // Time-based decay slows down faster than ceil can shed a sample, so N stalls.
    const bool must_reach_one = schedule.kind != ScheduleKind::TimeBased;
    Index n = estimate_n_schedule_ratio(1, 1.0, 1.0, 0.5, 100, 100);
    bool reached_one = false;
    for (long t = 2; t < 20000 && !reached_one; ++t) {
      const Index next =
          estimate_n_schedule_ratio(t, eta(schedule, t - 1), eta(schedule, t - 2), 0.5, n, 100);
      ASSERT_LE(next, n) << to_string(schedule.kind) << " t=" << t;
      n = next;
      reached_one = n == 1;
    }
    if (must_reach_one) EXPECT_TRUE(reached_one) << to_string(schedule.kind);
  }
}

TEST(SampleSize, PlanRecordsProbeAsPreviousVariance) {
  MrgState state{VariationalParams::constant(1, 0, 0), VariationalParams::constant(1, 0, 0)};
  state.v_zero = 2.0;
  state.n_initial = 100;
  state.n_curr = 100;
  state.t = 1;
  EXPECT_EQ(plan_sample_size(state, SampleSizeRule::VarianceRatio, 2.0), 71);
  EXPECT_EQ(state.v_prev, 2.0);
  EXPECT_EQ(state.n_curr, 71);
  EXPECT_THROW(plan_sample_size(state, SampleSizeRule::VarianceRatio, std::nullopt),
               std::invalid_argument);
}

TEST(MrgUpdate, WorkedExample) {
  const Vector out = mrg_update(Vector::Constant(1, 1.0), Vector::Constant(1, 0.0), 0.5, 0.1,
                                Vector::Constant(1, 2.0));
  EXPECT_NEAR(out(0), 1.3, 1e-15);
}

TEST(MrgUpdate, MomentumVanishesForEqualIterates) {
  Vector lambda(3), g(3);
  lambda << 1, -2, 0.5;
  g << 0.3, 0.1, -4;
  const Vector out = mrg_update(lambda, lambda, 0.7, 0.01, g);
  EXPECT_LT((out - (lambda - 0.01 * g)).norm(), 1e-15);
}

TEST(MrgStep, ZeroDifferenceOnPlateauExtrapolates) {
  const mt::FlatModel model(2);
  ScheduleConfig schedule;  // StepBased beta 0.5, r 100, Ceil
  MrgState state{VariationalParams::constant(2, 0.0, -1.0), VariationalParams::constant(2, 0.5, -0.8)};
  state.t = 5;
  state.eta_prev = eta(schedule, 4);
  const auto result = mrg_step(state, model, schedule, mc_normal_batch(1, 5, 3, 2));
  const Vector want = 2 * state.params_curr.flat() - state.params_prev.flat();
  EXPECT_LT((result.params.flat() - want).norm(), 1e-15);
  EXPECT_EQ(result.correction.flat(), Vector::Zero(4));
}

TEST(MrgStep, ShiftsRecycledState) {
  const auto model = conjugate_gaussian_model(1.0);
  ScheduleConfig schedule;
  schedule.alpha0 = 0.1;
  // A consistent state: lambda_t - lambda_{t-1} = alpha_{t-1} * previous effective gradient.
  const Vector last = Vector::Constant(2, 0.7);
  const VariationalParams prev = VariationalParams::constant(1, 0.0, 0.0);
  const VariationalParams curr =
      VariationalParams::from_flat(prev.flat() + schedule.alpha0 * eta(schedule, 2) * last);
  MrgState state{prev, curr};
  state.t = 3;
  state.eta_prev = eta(schedule, 2);
  state.eta_prev2 = eta(schedule, 1);
  state.last_effective_gradient = last;
  const auto batch = mc_normal_batch(2, 3, 4, 1);
  const auto r = mrg_step(state, *model, schedule, batch);
  EXPECT_EQ(r.state.t, 4);
  EXPECT_EQ(r.state.params_prev, state.params_curr);
  EXPECT_EQ(r.state.params_curr, r.params);
  EXPECT_EQ(r.state.eta_prev, eta(schedule, 3));
  EXPECT_EQ(r.state.eta_prev2, eta(schedule, 2));
  EXPECT_EQ(r.state.n_curr, 4);
  // Effective gradient = previous effective gradient + coupled difference.
  const Vector expected = state.last_effective_gradient + r.correction.flat();
  EXPECT_LT((r.estimate.flat() - expected).norm(), 1e-12);
  // And the step is lambda_t + alpha_t * effective gradient.
  const double alpha = schedule.alpha0 * eta(schedule, 3);
  EXPECT_LT((r.params.flat() - (state.params_curr.flat() + alpha * expected)).norm(), 1e-14);
}

TEST(MrgStep, NonFiniteResultIsDivergence) {
  const mt::QuadraticModel model(Vector::Constant(1, 1e300), Vector::Zero(1));
  ScheduleConfig schedule;
  schedule.alpha0 = 1e300;
  MrgState state{VariationalParams::constant(1, 0.0, 0.0), VariationalParams::constant(1, 1.0, 0.0)};
  state.t = 2;
  try {
    mrg_step(state, model, schedule, mc_normal_batch(1, 2, 1, 1));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 2);
  }
}

TEST(Telescoped, EmptyAndZeroCorrections) {
  const auto initial = GradientEstimate::from_flat(Vector::Constant(4, 1.5), 10, EstimatorKind::MC, 0);
  EXPECT_EQ(mrg_telescoped_estimate({}, initial).flat(), initial.flat());
  const auto zero = GradientEstimate::from_flat(Vector::Zero(4), 3, EstimatorKind::MRG, 1);
  EXPECT_EQ(mrg_telescoped_estimate({zero}, initial).flat(), initial.flat());
  const auto bad = GradientEstimate::from_flat(Vector::Zero(2), 3, EstimatorKind::MRG, 1);
  EXPECT_THROW(mrg_telescoped_estimate({bad}, initial), std::invalid_argument);
}

TEST(Telescoped, MatchesDirectGradientOnConjugateModel) {
  const double x = 0.8;
  const auto model = conjugate_gaussian_model(x);
  const std::vector<VariationalParams> path = {
      VariationalParams::constant(1, 0.0, 0.0), VariationalParams::constant(1, 0.3, -0.2),
      VariationalParams::constant(1, 0.45, -0.35)};
  const Index n = 100000;
  // Per-level sample variance of the d_mean component gives the standard error.
  auto level_variance = [&](std::size_t t, const NoiseBatch& batch) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
      double g = per_sample_gradient(*model, path[t], batch.row(i)).d_mean(0);
      if (t > 0) g -= per_sample_gradient(*model, path[t - 1], batch.row(i)).d_mean(0);
      v(i) = g;
    }
    return (v.array() - v.mean()).square().sum() / static_cast<double>(n - 1);
  };
  const auto batch0 = mc_normal_batch(31, 0, n, 1);
  const auto initial = batch_gradient(*model, path[0], batch0);
  double var_sum = level_variance(0, batch0);
  std::vector<GradientEstimate> corrections;
  for (std::size_t t = 1; t < path.size(); ++t) {
    const auto batch = mc_normal_batch(31, t, n, 1);
    corrections.push_back(coupled_difference(*model, path[t], path[t - 1], batch));
    var_sum += level_variance(t, batch);
  }
  const auto telescoped = mrg_telescoped_estimate(corrections, initial);
  const double se = std::sqrt(var_sum / static_cast<double>(n));
  EXPECT_LT(std::abs(telescoped.d_mean(0) - (x - 2 * path.back().mean()(0))), 3 * se);

  const auto direct_batch = mc_normal_batch(32, 0, n, 1);
  const auto direct = batch_gradient(*model, path.back(), direct_batch);
  double direct_var = 0.0;
  {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = per_sample_gradient(*model, path.back(), direct_batch.row(i)).d_mean(0);
    direct_var = (v.array() - v.mean()).square().sum() / static_cast<double>(n - 1);
  }
  const double se_diff = std::sqrt(se * se + direct_var / static_cast<double>(n));
  EXPECT_LT(std::abs(telescoped.d_mean(0) - direct.d_mean(0)), 3 * se_diff);
}
