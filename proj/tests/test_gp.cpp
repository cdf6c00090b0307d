#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "corrmap/gp.hpp"
#include "oracles.hpp"

using namespace corrmap;

namespace {

struct Instance {
  TrainingSet ts;
  KernelParams p;
  Eigen::VectorXd noise;
};

Instance random_instance(std::uint64_t seed, int n, int dim) {
  Rng rng(seed);
  Instance in;
  for (int i = 0; i < n; ++i) {
    ParamPoint x(dim);
    for (int d = 0; d < dim; ++d) x[d] = rng.uniform(-3.0, 3.0);
    in.ts.inputs.push_back(x);
  }
  in.ts.targets.resize(n);
  for (int i = 0; i < n; ++i) in.ts.targets[i] = rng.uniform(-2.0, 2.0);
  in.p.signal_variance = rng.uniform(0.5, 2.0);
  in.p.lengthscale.resize(dim);
  for (int d = 0; d < dim; ++d) in.p.lengthscale[d] = rng.uniform(0.5, 2.0);
  in.noise.resize(n);
  for (int i = 0; i < n; ++i) in.noise[i] = rng.uniform(0.05, 0.5);
  return in;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Kernel, ZeroDistanceGivesSignalVariance) {
  EXPECT_DOUBLE_EQ(kernel_eval(point({0.3}), point({0.3}), KernelParams::isotropic(1.0, 0.7)), 1.0);
}

TEST(Kernel, InfiniteLengthscaleLimit) {
  const auto p = KernelParams::isotropic(2.5, 1e12, 2);
  EXPECT_NEAR(kernel_eval(point({-4, 1}), point({3, 8}), p), 2.5, 1e-9);
}

TEST(Kernel, ClosedFormUnitDistance) {
  // exp(-1/2) evaluated by hand.
  EXPECT_NEAR(kernel_eval(point({0}), point({1}), KernelParams::isotropic(1.0, 1.0)),
              0.6065306597126334, 1e-15);
}

TEST(Kernel, SymmetricAndRejectsDimensionMismatch) {
  KernelParams p{1.3, point({0.5, 2.0})};
  const auto a = point({0.1, -1.0}), b = point({1.7, 0.4});
  EXPECT_EQ(kernel_eval(a, b, p), kernel_eval(b, a, p));
  EXPECT_THROW(kernel_eval(point({1}), b, p), InputError);
}

TEST(Kernel, MatrixIsExactlySymmetric) {
  auto in = random_instance(3, 15, 2);
  const auto K = kernel_matrix(in.ts.inputs, in.p);
  EXPECT_EQ((K - K.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GpFit, InterpolatesSinglePoint) {
  TrainingSet ts{{point({0})}, point({1.0}), {}};
  const auto g = gp_fit(ts, KernelParams::isotropic(1.0, 1.0), Homoscedastic{1e-12});
  EXPECT_NEAR(g.predict(point({0})).mean, 1.0, 1e-6);
}

TEST(GpFit, RevertsToPriorFarAway) {
  auto in = random_instance(11, 6, 1);
  const auto g = gp_fit(in.ts, in.p, Heteroscedastic{in.noise});
  const auto far = g.predict(point({1e4}));
  EXPECT_NEAR(far.mean, 0.0, 1e-12);
  EXPECT_NEAR(far.variance, in.p.signal_variance, 1e-12);
}

TEST(GpFit, NoiselessQueryAtTrainingInputReturnsTarget) {
  TrainingSet ts{{point({0}), point({1.5}), point({3})}, point({0.2, -1.0, 0.7}), {}};
  const auto g = gp_fit(ts, KernelParams::isotropic(1.0, 1.0), Homoscedastic{0.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g.predict(ts.inputs[i]).mean, ts.targets[i], 1e-8);
}

TEST(GpFit, VarianceSmallerAtDatumThanFarAway) {
  TrainingSet ts{{point({0}), point({1})}, point({1.0, 2.0}), {}};
  const auto p = KernelParams::isotropic(1.0, 0.5);
  const auto g = gp_fit(ts, p, Homoscedastic{0.01});
  EXPECT_LE(g.predict(point({0})).variance, g.predict(point({5.0})).variance);
}

TEST(GpFit, ThreePointMidpointMatchesDirectFormula) {
  oracle::DenseGp o{{point({0}), point({1}), point({2})}, point({1.0, -0.5, 0.25}), 1.2, point({0.8}),
                    Eigen::VectorXd::Constant(3, 0.1)};
  TrainingSet ts{o.xs, o.y, {}};
  const auto g = gp_fit(ts, KernelParams{o.sf2, o.ell}, Homoscedastic{0.1});
  const auto [m, v] = o.predict(point({1.5}));
  const auto pr = g.predict(point({1.5}));
  EXPECT_NEAR(pr.mean, m, 1e-10);
  EXPECT_NEAR(pr.variance, v, 1e-10);
}

TEST(GpFit, MatchesDenseInverseOracleOnRandomInstances) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const int n = 1 + static_cast<int>(s % 20), dim = 1 + static_cast<int>(s % 3);
    auto in = random_instance(100 + s, n, dim);
    const auto g = gp_fit(in.ts, in.p, Heteroscedastic{in.noise});
    oracle::DenseGp o{in.ts.inputs, in.ts.targets, in.p.signal_variance, in.p.lengthscale, in.noise};
    Rng rng(s);
    for (int q = 0; q < 5; ++q) {
      ParamPoint x(dim);
      for (int d = 0; d < dim; ++d) x[d] = rng.uniform(-4, 4);
      const auto [m, v] = o.predict(x);
      const auto pr = g.predict(x);
      EXPECT_LE(rel(pr.mean, m), 1e-8) << "seed " << s;
      EXPECT_LE(rel(pr.variance, v), 1e-8) << "seed " << s;
      EXPECT_GE(pr.variance, 0.0);
    }
  }
}

TEST(GpFit, EqualHeteroscedasticNoiseMatchesHomoscedastic) {
  auto in = random_instance(7, 12, 2);
  const auto a = gp_fit(in.ts, in.p, Homoscedastic{0.3});
  const auto b = gp_fit(in.ts, in.p, Heteroscedastic{Eigen::VectorXd::Constant(12, 0.3)});
  for (double t : {-2.0, 0.0, 1.3}) {
    const auto x = point({t, -t});
    EXPECT_NEAR(a.predict(x).mean, b.predict(x).mean, 1e-10);
    EXPECT_NEAR(a.predict(x).variance, b.predict(x).variance, 1e-10);
  }
  EXPECT_NEAR(log_marginal_likelihood(in.ts, in.p, Homoscedastic{0.3}),
              log_marginal_likelihood(in.ts, in.p, Heteroscedastic{Eigen::VectorXd::Constant(12, 0.3)}),
              1e-10);
}

TEST(GpFit, JitterRescuesDuplicateInputs) {
  TrainingSet ts{{point({1}), point({1}), point({2})}, point({0.5, 0.5, 1.0}), {}};
  const auto g = gp_fit(ts, KernelParams::isotropic(1.0, 1.0), Homoscedastic{0.0});
  EXPECT_GT(g.jitter(), 0.0);
  EXPECT_NEAR(g.predict(point({1})).mean, 0.5, 1e-3);
}

TEST(GpFit, NonPdAfterMaxJitterReportsLadder) {
  TrainingSet ts{{point({0}), point({1})}, point({0.0, 0.0}), {}};
  // A huge negative-definite perturbation cannot be rescued by the ladder.
  try {
    GpPosterior(ts.inputs, ts.targets, KernelParams::isotropic(1.0, 1.0), point({-10.0, -10.0}));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    ASSERT_EQ(e.attempted_jitters().size(), 7u);
    EXPECT_NEAR(e.attempted_jitters().back() / e.attempted_jitters().front(), 1e6, 1.0);
  }
}

TEST(GpFit, RejectsMismatchedNoise) {
  TrainingSet ts{{point({0}), point({1})}, point({0.0, 1.0}), {}};
  EXPECT_THROW(gp_fit(ts, KernelParams::isotropic(1, 1), Heteroscedastic{point({0.1})}), InputError);
  EXPECT_THROW(gp_fit(ts, KernelParams::isotropic(1, 1), Homoscedastic{-1.0}), InputError);
  TrainingSet empty;
  EXPECT_THROW(gp_fit(empty, KernelParams::isotropic(1, 1), Homoscedastic{0.1}), InputError);
}

TEST(GpFit, JsonRoundTripReproducesPredictions) {
  auto in = random_instance(21, 8, 2);
  const auto g = gp_fit(in.ts, in.p, Heteroscedastic{in.noise});
  const auto h = gp_from_json(nlohmann::json::parse(to_json(g).dump()));
  for (double t : {-1.0, 0.5, 2.0}) {
    EXPECT_EQ(g.predict(point({t, t})).mean, h.predict(point({t, t})).mean);
    EXPECT_EQ(g.predict(point({t, t})).variance, h.predict(point({t, t})).variance);
  }
}

TEST(Lml, SinglePointClosedForm) {
  TrainingSet ts{{point({0})}, point({0.0}), {}};
  EXPECT_NEAR(log_marginal_likelihood(ts, KernelParams::isotropic(0.75, 1.0), Homoscedastic{0.25}),
              -0.9189385332046727, 1e-14);
}

TEST(Lml, PermutationInvariant) {
  auto in = random_instance(5, 9, 2);
  const double base = log_marginal_likelihood(in.ts, in.p, Heteroscedastic{in.noise});
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 gen(1);
  std::shuffle(perm.begin(), perm.end(), gen);
  TrainingSet shuffled;
  Eigen::VectorXd noise(9);
  shuffled.targets.resize(9);
  for (int i = 0; i < 9; ++i) {
    shuffled.inputs.push_back(in.ts.inputs[perm[i]]);
    shuffled.targets[i] = in.ts.targets[perm[i]];
    noise[i] = in.noise[perm[i]];
  }
  EXPECT_NEAR(log_marginal_likelihood(shuffled, in.p, Heteroscedastic{noise}), base, 1e-10);
}

TEST(Lml, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto in = random_instance(500 + s, 4, 1 + static_cast<int>(s % 3));
    oracle::DenseGp o{in.ts.inputs, in.ts.targets, in.p.signal_variance, in.p.lengthscale, in.noise};
    EXPECT_LE(rel(log_marginal_likelihood(in.ts, in.p, Heteroscedastic{in.noise}), o.lml()), 1e-8);
  }
}

TEST(Lml, GradientMatchesCentralDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const int dim = 1 + static_cast<int>(s % 3);
    auto in = random_instance(900 + s, 10, dim);
    const double sn2 = 0.2;
    const auto e = log_marginal_likelihood_with_gradient(in.ts, in.p, Homoscedastic{sn2}, true);
    auto lml_at = [&](int k, double delta) {
      KernelParams p = in.p;
      double noise = sn2;
      if (k == 0) p.signal_variance *= std::exp(delta);
      else if (k <= dim) p.lengthscale[k - 1] *= std::exp(delta);
      else noise *= std::exp(delta);
      return log_marginal_likelihood(in.ts, p, Homoscedastic{noise});
    };
    const double h = 1e-5;
    for (int k = 0; k < dim + 2; ++k) {
      const double fd = (lml_at(k, h) - lml_at(k, -h)) / (2 * h);
      EXPECT_LE(std::abs(fd - e.gradient[k]), 1e-4 * std::max(1.0, std::abs(fd))) << "seed " << s << " k " << k;
    }
  }
}

TEST(Hyperparameters, RecoversGeneratingLengthscale) {
  // Draw one sample path of a GP with lengthscale 2 and small noise.
  const int n = 200;
  Rng rng(2024);
  TrainingSet ts;
  for (int i = 0; i < n; ++i) ts.inputs.push_back(point({rng.uniform(0.0, 40.0)}));
  const auto truth = KernelParams::isotropic(1.0, 2.0);
  Eigen::MatrixXd K = kernel_matrix(ts.inputs, truth);
  K.diagonal().array() += 0.01;
  const Eigen::MatrixXd L = K.llt().matrixL();
  std::normal_distribution<double> z;
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = z(rng);
  ts.targets = L * w;
  const auto fit = optimize_hyperparams(ts, Homoscedastic{0.01}, KernelParams::isotropic(1.0, 5.0),
                                        {.seed = 1});
  EXPECT_GE(fit.params.lengthscale[0], 1.4);
  EXPECT_LE(fit.params.lengthscale[0], 2.8);
}

TEST(Hyperparameters, ZeroTargetsDriveSignalVarianceToLowerBound) {
  TrainingSet ts{{point({0}), point({1}), point({2}), point({3})}, Eigen::VectorXd::Zero(4), {}};
  HyperparameterOptions opt;
  const auto fit = optimize_hyperparams(ts, Homoscedastic{0.1}, KernelParams::isotropic(1.0, 1.0), opt);
  // The likelihood gradient vanishes like s^2 near the bound, so expect
  // collapse to within a few multiples of it.
  EXPECT_LE(fit.params.signal_variance, opt.signal_variance_min * 10);
}

TEST(Hyperparameters, NeverWorseThanInitialization) {
  for (std::uint64_t s = 0; s < 8; ++s) {
    auto in = random_instance(40 + s, 10, 1 + static_cast<int>(s % 2));
    const NoiseModel noise = Heteroscedastic{in.noise};
    const auto fit = optimize_hyperparams(in.ts, noise, in.p, {.seed = s, .ard = true});
    EXPECT_GE(fit.log_likelihood, log_marginal_likelihood(in.ts, in.p, noise) - 1e-9);
    EXPECT_NEAR(fit.log_likelihood, log_marginal_likelihood(in.ts, fit.params, fit.noise), 1e-8);
  }
}

TEST(Hyperparameters, LearnsHomoscedasticNoise) {
  Rng rng(9);
  std::normal_distribution<double> z;
  TrainingSet ts;
  ts.targets.resize(60);
  for (int i = 0; i < 60; ++i) {
    const double x = 0.1 * i;
    ts.inputs.push_back(point({x}));
    ts.targets[i] = std::sin(x) + 0.3 * z(rng);
  }
  const auto fit = optimize_hyperparams(ts, Homoscedastic{1.0}, KernelParams::isotropic(1.0, 1.0),
                                        {.learn_noise = true});
  const double sn2 = std::get<Homoscedastic>(fit.noise).variance;
  EXPECT_GT(sn2, 0.03);
  EXPECT_LT(sn2, 0.2);
}

TEST(Hyperparameters, RequiresTwoPoints) {
  TrainingSet ts{{point({0})}, point({1.0}), {}};
  EXPECT_THROW(optimize_hyperparams(ts, Homoscedastic{0.1}, KernelParams::isotropic(1, 1)), InputError);
}
