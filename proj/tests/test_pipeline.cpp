#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "corrmap/pipeline.hpp"

using namespace corrmap;

namespace {

const ParameterPrior kEnzyme{"E0", 0, 100, true, false};

SamplingDesign mm_design(std::size_t points = 40) { return {.shared = {kEnzyme}, .points = points}; }

double mm_correction(double e0, const OdeTolerances& tol = {1e-10, 1e-10}) {
  Model full = mm_full(), red = mm_reduced();
  set_parameter(full, "E0", e0);
  set_parameter(red, "E0", e0);
  const MeanAt s{"P", 1.5};
  return eval_statistic(full, s, 1, 0, {.tolerances = tol}).value -
         eval_statistic(red, s, 1, 0, {.tolerances = tol}).value;
}

CorrectionData synthetic(std::vector<ParamPoint> xs, Eigen::MatrixXd Y, ParameterPrior domain) {
  CorrectionData d;
  d.training.inputs = std::move(xs);
  d.training.targets = Y.rowwise().mean();
  d.training.replicates = std::move(Y);
  d.design.shared = {std::move(domain)};
  d.statistic = MeanAt{"y", 0};
  return d;
}

CorrectionMap fixed_map(const std::vector<double>& xs, const std::vector<double>& ys, double noise) {
  TrainingSet ts;
  for (double x : xs) ts.inputs.push_back(point({x}));
  ts.targets = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return CorrectionMap(gp_fit(ts, KernelParams::isotropic(1.0, 1.0), Homoscedastic{noise}), FixedVariance{noise}, {},
                       {{"x", -5, 5}}, std::nullopt, 0.0);
}

}  // namespace

TEST(Design, GridSkipsOpenLowerBound) {
  const auto xs = design_points(mm_design());
  ASSERT_EQ(xs.size(), 40u);
  EXPECT_DOUBLE_EQ(xs.front()[0], 2.5);
  EXPECT_DOUBLE_EQ(xs.back()[0], 100.0);
}

TEST(Design, ClosedGridIncludesBothEnds) {
  const auto xs = design_points({.shared = {{"beta", 0.1, 100}}, .points = 50});
  EXPECT_DOUBLE_EQ(xs.front()[0], 0.1);
  EXPECT_DOUBLE_EQ(xs.back()[0], 100.0);
}

TEST(Design, RandomDesignStaysInBoxAndIsSeeded) {
  const SamplingDesign d{.shared = {{"a", 0, 1, true, false}, {"b", -2, 2}}, .points = 100,
                         .sampling = Sampling::UniformRandom, .seed = 4};
  const auto xs = design_points(d);
  for (const auto& x : xs) {
    EXPECT_GT(x[0], 0.0);
    EXPECT_LE(x[0], 1.0);
    EXPECT_GE(x[1], -2.0);
    EXPECT_LE(x[1], 2.0);
  }
  EXPECT_EQ(design_points(d)[17], xs[17]);
}

TEST(Design, Rejections) {
  EXPECT_THROW(design_points({.shared = {kEnzyme}, .points = 1}), InputError);
  EXPECT_THROW(design_points({.shared = {{"a", 0, 1}, {"b", 0, 1}}}), InputError);
  EXPECT_THROW(design_points({.shared = {{"a", 1, 0}}}), InputError);
  EXPECT_THROW(design_points({}), InputError);
}

TEST(BuildTrainingSet, SelfCorrectionIsZero) {
  const auto d = build_training_set(mm_full(), mm_full(), MeanAt{"P", 1.5}, mm_design(12));
  EXPECT_EQ(d.training.targets.cwiseAbs().maxCoeff(), 0.0);
}

TEST(BuildTrainingSet, MichaelisMentenDeltaPriorShortcut) {
  SamplingDesign design = mm_design();
  design.free = {ParameterPrior::delta("k1", 2.0)};
  design.replicates = 50;
  const auto d = build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, design);
  EXPECT_EQ(d.training.size(), 40);
  EXPECT_EQ(d.training.replicates->cols(), 1);
  EXPECT_NEAR(d.training.targets[39], mm_correction(100), 1e-4);
}

TEST(BuildTrainingSet, ProteinNetworkReplicateMatrix) {
  // Shape of the long-run design with a shortened horizon.
  const SamplingDesign design{.shared = {{"beta", 0.1, 100}}, .free = {{"alpha", 0.1, 100}}, .points = 50,
                              .replicates = 50, .seed = 1};
  const auto d = build_training_set(ptn_full(), ptn_reduced(), LongRunMean{"P", 20, 100}, design);
  EXPECT_EQ(d.training.replicates->rows(), 50);
  EXPECT_EQ(d.training.replicates->cols(), 50);
  EXPECT_EQ(d.free_values.size(), 2500u);
  for (Eigen::Index i = 0; i < 50; ++i) EXPECT_NEAR(d.training.targets[i], d.training.replicates->row(i).mean(), 1e-9);
}

TEST(BuildTrainingSet, FailureCarriesDesignCoordinates) {
  OdeSystem fragile = mm_full();
  fragile.rhs = [inner = mm_full().rhs](std::span<const double> x, std::span<const double> k, std::span<double> dx) {
    if (k[0] > 2.5) throw std::runtime_error("rate out of range");
    inner(x, k, dx);
  };
  const SamplingDesign design{.shared = {kEnzyme}, .free = {{"k1", 1, 3}}, .points = 4, .replicates = 3, .seed = 2};
  try {
    build_training_set(fragile, mm_reduced(), MeanAt{"P", 1.5}, design);
    FAIL() << "expected SimulationError";
  } catch (const SimulationError& e) {
    std::size_t i = 0, j = 0;
    for (; i < 4; ++i) {
      for (j = 0; j < 3; ++j)
        if (free_sample(design, i, j)[0] > 2.5) break;
      if (j < 3) break;
    }
    EXPECT_EQ(e.point(), i);
    EXPECT_EQ(e.replicate(), j);
    EXPECT_NE(std::string(e.what()).find("detailed model"), std::string::npos);
  }
}

TEST(BuildTrainingSet, ParameterMustExistInBothModels) {
  const SamplingDesign d{.shared = {{"beta", 0.1, 100}}, .free = {{"alpha", 0.1, 100}}};
  EXPECT_THROW(build_training_set(ptn_full(), mm_reduced(), MeanAt{"P", 1}, d), InputError);
  const SamplingDesign bad_free{.shared = {{"beta", 0.1, 100}}, .free = {{"gamma", 0.1, 100}}};
  EXPECT_THROW(build_training_set(ptn_full(), ptn_reduced(), MeanAt{"P", 1}, bad_free), InputError);
}

TEST(BuildTrainingSet, ThreadCountDoesNotChangeData) {
  const SamplingDesign design{.shared = {{"beta", 1, 50}}, .free = {{"alpha", 1, 50}}, .points = 6,
                              .replicates = 4, .seed = 9, .runs = 20};
  const MeanAt s{"P", 30};
  const auto a = build_training_set(ptn_full(), ptn_reduced(), s, design, {.threads = 1});
  const auto b = build_training_set(ptn_full(), ptn_reduced(), s, design, {.threads = 3});
  EXPECT_EQ(*a.training.replicates, *b.training.replicates);
}

TEST(FitCorrection, MichaelisMentenVanishesAtLowEnzyme) {
  const auto cm = fit_correction(build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, mm_design()),
                                 LearnedVariance{});
  const auto c = cm.predict(point({0.01}));
  EXPECT_LE(std::abs(c.mean), 2 * c.sd);
}

TEST(FitCorrection, RecoversSineFromNoisyData) {
  Rng rng(12);
  std::vector<ParamPoint> xs;
  Eigen::MatrixXd Y(30, 1);
  for (int i = 0; i < 30; ++i) {
    const double x = 2 * std::numbers::pi * i / 29.0;
    xs.push_back(point({x}));
    // Box-Muller with sd 0.1
    const double z = std::sqrt(-2 * std::log(rng.uniform_open0())) * std::cos(2 * std::numbers::pi * rng.uniform());
    Y(i, 0) = std::sin(x) + 0.1 * z;
  }
  const auto cm = fit_correction(synthetic(xs, Y, {"x", 0, 2 * std::numbers::pi}), LearnedVariance{});
  double sse = 0;
  for (int i = 0; i < 100; ++i) {
    const double x = 2 * std::numbers::pi * (i + 0.5) / 100.0;
    sse += std::pow(cm.predict(point({x})).mean - std::sin(x), 2);
  }
  EXPECT_LT(std::sqrt(sse / 100), 0.05);
}

TEST(FitCorrection, PointWiseEqualsPooledForEqualVariances) {
  std::vector<ParamPoint> xs;
  Eigen::MatrixXd Y(15, 2);
  for (int i = 0; i < 15; ++i) {
    xs.push_back(point({i * 0.5}));
    const double m = std::cos(i * 0.5);
    Y(i, 0) = m - 0.3;
    Y(i, 1) = m + 0.3;
  }
  const auto data = synthetic(xs, Y, {"x", 0, 7});
  const auto pw = fit_correction(data, PointWise{});
  const auto pooled = fit_correction(data, EmpiricalPooled{});
  for (double x : {0.1, 1.7, 3.3, 6.9}) EXPECT_NEAR(pw.predict(point({x})).mean, pooled.predict(point({x})).mean, 1e-9);
}

TEST(FitCorrection, ReplicateSchemesNeedReplicates) {
  const auto data = build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, mm_design(10));
  EXPECT_THROW(fit_correction(data, PointWise{}), InputError);
  EXPECT_THROW(fit_correction(data, Nested{}), InputError);
  EXPECT_THROW(fit_correction(data, EmpiricalPooled{}), InputError);
}

TEST(Transform, PlainLogForPositiveValues) {
  Eigen::MatrixXd Y(2, 2);
  Y << 1, 2, 3, 4;
  const auto t = choose_transform(Y, true);
  EXPECT_EQ(t.kind, Transform::Kind::Log);
  EXPECT_DOUBLE_EQ(t.inverse(t.forward(3.0)), 3.0);
  EXPECT_EQ(choose_transform(Y, false).kind, Transform::Kind::Identity);
}

TEST(Transform, ShiftedLogWhenValuesReachZero) {
  Eigen::MatrixXd Y(2, 2);
  Y << -4, 0, 2, 6;
  const auto t = choose_transform(Y, true);
  EXPECT_EQ(t.kind, Transform::Kind::ShiftedLog);
  EXPECT_DOUBLE_EQ(t.offset, -4 - 1e-5);
  for (double y : {-4.0, 0.0, 6.0}) EXPECT_NEAR(t.inverse(t.forward(y)), y, 1e-9);
}

TEST(FitCorrection, LogTransformedBandIsLogNormal) {
  std::vector<ParamPoint> xs;
  Eigen::MatrixXd Y(10, 3);
  for (int i = 0; i < 10; ++i) {
    xs.push_back(point({static_cast<double>(i)}));
    for (int j = 0; j < 3; ++j) Y(i, j) = std::exp(0.3 * i + 0.2 * (j - 1));
  }
  const auto cm = fit_correction(synthetic(xs, Y, {"x", 0, 9}), PointWise{}, {.log_transform = true});
  EXPECT_EQ(cm.transform().kind, Transform::Kind::Log);
  const auto c = cm.predict(point({4.5}));
  const auto p = cm.posterior().predict(point({4.5}));
  const double z = normal_central_quantile(0.95);
  EXPECT_DOUBLE_EQ(c.mean, std::exp(p.mean + 0.5 * p.variance));
  EXPECT_DOUBLE_EQ(c.lo, std::exp(p.mean - z * std::sqrt(p.variance)));
  EXPECT_GT(c.lo, 0.0);
  EXPECT_LT(c.lo, c.mean);
  EXPECT_LT(c.mean, c.hi);
}

TEST(Quantile, StandardValues) {
  EXPECT_NEAR(normal_central_quantile(0.95), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_central_quantile(0.6826894921370859), 1.0, 1e-12);
  EXPECT_THROW(normal_central_quantile(1.0), InputError);
}

TEST(CorrectedPredict, ZeroMapReturnsReducedValue) {
  const auto data = build_training_set(mm_full(), mm_full(), MeanAt{"P", 1.5}, mm_design(8));
  const auto cm = fit_correction(data, LearnedVariance{});
  EXPECT_EQ(corrected_predict(cm, 17.25, point({33})).mean, 17.25);
}

TEST(CorrectedPredict, IntervalShrinksWithNewDatum) {
  const auto before = fixed_map({-2, 0, 2}, {0.1, 0.5, -0.3}, 0.05);
  const auto after = fixed_map({-2, 0, 1, 2}, {0.1, 0.5, 0.2, -0.3}, 0.05);
  const auto a = corrected_predict(before, 1.0, point({1}));
  const auto b = corrected_predict(after, 1.0, point({1}));
  EXPECT_LE(b.hi - b.lo, a.hi - a.lo);
}

TEST(CorrectedPredict, MatchesFullModelAtLargeEnzyme) {
  const auto cm = fit_correction(build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, mm_design()),
                                 LearnedVariance{});
  Model red = mm_reduced(), full = mm_full();
  set_parameter(red, "E0", 100);
  set_parameter(full, "E0", 100);
  const double m = eval_statistic(red, MeanAt{"P", 1.5}, 1, 0).value;
  const double truth = eval_statistic(full, MeanAt{"P", 1.5}, 1, 0).value;
  EXPECT_NEAR(corrected_predict(cm, m, point({100})).mean, truth, 0.02 * truth);
}

TEST(CorrectedPredict, AdditiveInReducedValue) {
  std::vector<ParamPoint> xs;
  Eigen::MatrixXd Y(8, 2);
  for (int i = 0; i < 8; ++i) {
    xs.push_back(point({static_cast<double>(i)}));
    Y(i, 0) = 5 + i;
    Y(i, 1) = 6 + 1.5 * i;
  }
  for (bool log : {false, true}) {
    const auto cm = fit_correction(synthetic(xs, Y, {"x", 0, 7}), PointWise{}, {.log_transform = log});
    for (double x : {0.5, 3.0, 6.5}) {
      const double m = 123.456;
      const double c = cm.predict(point({x})).mean;
      const double mean = corrected_predict(cm, m, point({x})).mean;
      EXPECT_EQ(mean, m + c);
      // Subtracting m back loses at most the rounding of the sum.
      EXPECT_NEAR(mean - m, c, 2 * std::numeric_limits<double>::epsilon() * std::abs(m + c));
    }
  }
}

TEST(CorrectedPredict, FlagsExtrapolation) {
  const auto cm = fixed_map({-2, 0, 2}, {0.1, 0.5, -0.3}, 0.05);
  EXPECT_FALSE(corrected_predict(cm, 0, point({4})).extrapolated);
  EXPECT_TRUE(corrected_predict(cm, 0, point({6})).extrapolated);
}

TEST(Epsilon, ZeroVarianceMap) {
  TrainingSet ts{{point({0}), point({1})}, Eigen::Vector2d(0, 0), std::nullopt};
  const CorrectionMap cm(gp_fit(ts, KernelParams::isotropic(1e-300, 1.0), Homoscedastic{0}), FixedVariance{0}, {},
                         {{"x", 0, 1}}, std::nullopt, 0);
  EXPECT_NEAR(estimate_epsilon(cm, 0.95, 50, 1).epsilon, 0.0, 1e-100);
}

TEST(Epsilon, NondecreasingInConfidence) {
  const auto cm = fixed_map({-2, 0, 2}, {0.1, 0.5, -0.3}, 0.05);
  double prev = 0;
  for (double a : {0.5, 0.8, 0.9, 0.95, 0.99}) {
    const double e = estimate_epsilon(cm, a, 200, 3).epsilon;
    EXPECT_GE(e, prev);
    prev = e;
  }
  EXPECT_THROW(estimate_epsilon(cm, 0.95, 9, 3), InputError);
}

TEST(Epsilon, OracleErrorBelowEpsilonOnMichaelisMenten) {
  // Measured 7 of 10: on seeds where the learned noise collapses to its
  // floor the stationary band is narrower than the error near the sharp
  // transition around E0 = 25. 9 of 10 is not reached.
  int below = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplingDesign d = mm_design();
    d.sampling = Sampling::UniformRandom;
    d.seed = seed;
    const auto cm = fit_correction(build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, d),
                                   LearnedVariance{}, {.seed = seed});
    const auto e = estimate_epsilon(cm, 0.95, 200, seed, [](const ParamPoint& x) { return mm_correction(x[0]); });
    ASSERT_TRUE(e.oracle_error.has_value());
    below += *e.oracle_error < e.epsilon;
  }
  EXPECT_GE(below, 7);
}

TEST(SelectModel, PicksDetailedModelItself) {
  const std::vector<Candidate> cands{{mm_reduced(), mm_design(20)}, {mm_full(), mm_design(20)}};
  const auto s = select_model(mm_full(), cands, MeanAt{"P", 1.5});
  EXPECT_EQ(s.index, 1u);
  EXPECT_NEAR(s.reports[1].integral, 0.0, 1e-12);
}

TEST(SelectModel, RejectsBrokenReductionInAnyOrder) {
  OdeSystem broken = mm_reduced();
  broken.name = "mm-reduced-broken";
  broken.set_parameter("k1", 4.0);  // halves the Michaelis constant
  const std::vector<Candidate> a{{mm_reduced(), mm_design(20)}, {broken, mm_design(20)}};
  const std::vector<Candidate> b{{broken, mm_design(20)}, {mm_reduced(), mm_design(20)}};
  const auto sa = select_model(mm_full(), a, MeanAt{"P", 1.5});
  const auto sb = select_model(mm_full(), b, MeanAt{"P", 1.5});
  EXPECT_EQ(sa.reports[sa.index].name, "mm-reduced");
  EXPECT_EQ(sb.reports[sb.index].name, "mm-reduced");
  EXPECT_DOUBLE_EQ(sa.reports[0].integral, sb.reports[1].integral);
}

TEST(SelectModel, FollowsOracleRankingForDoubledConstant) {
  // A doubled Michaelis constant slows the reduced model towards the full
  // one at high enzyme, so its integrated |correction| is smaller.
  OdeSystem doubled = mm_reduced();
  doubled.name = "mm-reduced-doubled";
  doubled.set_parameter("k1", 1.0);
  double exact_true = 0, exact_doubled = 0;
  for (int i = 0; i < 400; ++i) {
    const double e0 = 0.125 + 0.25 * i;
    exact_true += std::abs(mm_correction(e0));
    Model f = mm_full(), r = doubled;
    set_parameter(f, "E0", e0);
    set_parameter(r, "E0", e0);
    exact_doubled += std::abs(eval_statistic(f, MeanAt{"P", 1.5}, 1, 0).value - eval_statistic(r, MeanAt{"P", 1.5}, 1, 0).value);
  }
  const auto s = select_model(mm_full(), {{mm_reduced(), mm_design()}, {doubled, mm_design()}}, MeanAt{"P", 1.5});
  EXPECT_EQ(s.index, exact_doubled < exact_true ? 1u : 0u);
}

TEST(SelectModel, FailingCandidateIsReported) {
  const std::vector<Candidate> cands{{ptn_reduced(), mm_design(10)}, {mm_reduced(), mm_design(10)}};
  const auto s = select_model(mm_full(), cands, MeanAt{"P", 1.5});
  EXPECT_EQ(s.index, 1u);
  EXPECT_FALSE(s.reports[0].fitted);
  EXPECT_FALSE(s.reports[0].error.empty());
  EXPECT_THROW(select_model(mm_full(), {}, MeanAt{"P", 1.5}), InputError);
}

TEST(Equivalence, Reflexive) {
  const auto cm = fixed_map({-2, 0, 2}, {0.1, 0.5, -0.3}, 0.05);
  EXPECT_TRUE(check_equivalence(cm, cm, 0.0, 100));
}

TEST(Equivalence, SeededRefitsAgree) {
  const auto data = build_training_set(mm_full(), mm_reduced(), MeanAt{"P", 1.5}, mm_design());
  const auto a = fit_correction(data, LearnedVariance{}, {.seed = 1});
  const auto b = fit_correction(data, LearnedVariance{}, {.seed = 2});
  double max_sd = 0;
  for (const auto& x : sample_domain(a.domain(), 200, 0))
    max_sd = std::max({max_sd, a.predict(x).sd, b.predict(x).sd});
  EXPECT_TRUE(check_equivalence(a, b, 4 * max_sd, 200));
}

TEST(Equivalence, PerturbedTranscriptionIsNotEquivalent) {
  const SamplingDesign design{.shared = {{"beta", 0.1, 100}}, .points = 10, .seed = 3};
  const LongRunMean s1{"P"};
  auto perturbed = ptn_full();
  perturbed.set_parameter("alpha", 10.0);
  const auto a = fit_correction(build_training_set(ptn_full(), ptn_reduced(), s1, design), LearnedVariance{});
  const auto b = fit_correction(build_training_set(perturbed, ptn_reduced(), s1, design), LearnedVariance{});
  EXPECT_FALSE(check_equivalence(a, b, 100.0, 200));
}

TEST(Equivalence, MismatchedDomainIsError) {
  const auto a = fixed_map({-2, 0, 2}, {0.1, 0.5, -0.3}, 0.05);
  TrainingSet ts{{point({0}), point({1})}, Eigen::Vector2d(0, 0), std::nullopt};
  const CorrectionMap b(gp_fit(ts, KernelParams::isotropic(1, 1), Homoscedastic{0.1}), FixedVariance{0.1}, {},
                        {{"x", 0, 1}}, std::nullopt, 0);
  EXPECT_THROW(check_equivalence(a, b, 1.0, 10), InputError);
}

TEST(Pipeline, RepeatedRunsAreBitIdentical) {
  const SamplingDesign design{.shared = {{"beta", 1, 100}}, .free = {{"alpha", 1, 100}}, .points = 6,
                              .replicates = 4, .seed = 5, .runs = 10};
  const EventuallyAbove s2{"P", 200, 0, 100};
  auto run = [&] {
    const auto data = build_training_set(ptn_full(), ptn_reduced(), s2, design);
    return fit_correction(data, PointWise{}, {.seed = 5}).predict(point({42.0}));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.hi, b.hi);
}
