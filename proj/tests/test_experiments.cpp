#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maskpos/analytic.hpp"
#include "maskpos/experiments.hpp"

using namespace maskpos;
using namespace maskpos::experiments;

namespace {

ExperimentSpec small_spec(Mode mode, std::size_t trials) {
  ExperimentSpec s;
  s.mode = mode;
  s.n = 8;
  s.d = 16;
  s.layers = 3;
  s.trials = trials;
  s.master_seed = 99;
  return s;
}

void expect_identical(const AttentionStats& a, const AttentionStats& b) {
  ASSERT_EQ(a.layers.size(), b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (Quantity q : {Quantity::attention, Quantity::scores, Quantity::gram, Quantity::attention_dn,
                       Quantity::scores_dn}) {
      EXPECT_EQ(a.layers[l].get(q).mean, b.layers[l].get(q).mean);
      EXPECT_EQ(a.layers[l].get(q).std_error, b.layers[l].get(q).std_error);
    }
}

}  // namespace

TEST(ExperimentSpec, Validation) {
  ExperimentSpec s;
  EXPECT_NO_THROW(s.validate());
  s.theta = 500.0;
  EXPECT_THROW(s.validate(), Error);

  ExperimentSpec odd;
  odd.mode = Mode::rope_decoder;
  odd.d = 63;
  EXPECT_THROW(odd.validate(), Error);

  ExperimentSpec bad_alpha;
  bad_alpha.alpha = 1.0;
  EXPECT_THROW(bad_alpha.validate(), Error);

  ExperimentSpec none;
  none.trials = 0;
  EXPECT_THROW(none.validate(), Error);
}

TEST(ExperimentSpec, ModeDrivesMaskAndRope) {
  ExperimentSpec s;
  EXPECT_TRUE(s.masked());
  EXPECT_FALSE(s.layer_spec().rope_theta.has_value());
  s.mode = Mode::rope_encoder;
  EXPECT_FALSE(s.masked());
  EXPECT_EQ(s.layer_spec().mask, sim::MaskKind::none);
  EXPECT_EQ(*s.layer_spec().rope_theta, kDefaultTheta);
  s.mode = Mode::rope_decoder;
  s.theta = 500.0;
  EXPECT_EQ(s.layer_spec().mask, sim::MaskKind::causal);
  EXPECT_EQ(*s.layer_spec().rope_theta, 500.0);
}

TEST(ExperimentSpec, NamesRoundTrip) {
  for (Mode m : {Mode::nope, Mode::rope_decoder, Mode::rope_encoder}) EXPECT_EQ(parse_mode(to_string(m)), m);
  for (sim::Norm n : {sim::Norm::l2, sim::Norm::layernorm}) EXPECT_EQ(parse_norm(to_string(n)), n);
  for (sim::ScoreScale s : {sim::ScoreScale::one, sim::ScoreScale::sqrt_d, sim::ScoreScale::d})
    EXPECT_EQ(parse_scale(to_string(s)), s);
  EXPECT_THROW(parse_mode("alibi"), Error);
}

TEST(TrialSeed, DistinctAndStable) {
  EXPECT_EQ(trial_seed(1, 2), trial_seed(1, 2));
  EXPECT_NE(trial_seed(1, 2), trial_seed(1, 3));
  EXPECT_NE(trial_seed(1, 2), trial_seed(2, 2));
}

TEST(RunningMatrix, MergeMatchesSequential) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<Matrix> samples;
  for (int k = 0; k < 37; ++k) {
    Matrix m(2, 3);
    for (auto& v : m.values()) v = g(rng);
    samples.push_back(m);
  }
  RunningMatrix all(2, 3), left(2, 3), right(2, 3);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    all.push(samples[k]);
    (k < 15 ? left : right).push(samples[k]);
  }
  left.merge(right);
  EXPECT_EQ(left.count(), all.count());
  const Matrix se_a = all.std_error();
  const Matrix se_b = left.std_error();
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_NEAR(left.mean().values()[k], all.mean().values()[k], 1e-14);
    EXPECT_NEAR(se_b.values()[k], se_a.values()[k], 1e-14);
  }

  // Sample standard error, direct formula.
  double mean = 0.0;
  for (const auto& s : samples) mean += s(1, 2);
  mean /= 37.0;
  double ss = 0.0;
  for (const auto& s : samples) ss += (s(1, 2) - mean) * (s(1, 2) - mean);
  EXPECT_NEAR(se_a(1, 2), std::sqrt(ss / 36.0 / 37.0), 1e-14);
}

TEST(RunExperiment, SingleTrialHasZeroStdError) {
  for (Mode mode : {Mode::nope, Mode::rope_decoder, Mode::rope_encoder}) {
    const AttentionStats st = run_experiment(small_spec(mode, 1));
    EXPECT_EQ(st.trials, 1u);
    for (const auto& layer : st.layers)
      for (double v : layer.attention.std_error.values()) ASSERT_EQ(v, 0.0);
  }
}

TEST(RunExperiment, WorkerCountDoesNotChangeResults) {
  for (Mode mode : {Mode::nope, Mode::rope_decoder, Mode::rope_encoder}) {
    const ExperimentSpec spec = small_spec(mode, 700);
    const AttentionStats one = run_experiment(spec, RunOptions{1, {}});
    const AttentionStats three = run_experiment(spec, RunOptions{3, {}});
    const AttentionStats again = run_experiment(spec, RunOptions{1, {}});
    expect_identical(one, three);
    expect_identical(one, again);
  }
}

TEST(RunExperiment, MeanAttentionIsRowStochastic) {
  for (Mode mode : {Mode::nope, Mode::rope_decoder, Mode::rope_encoder}) {
    const AttentionStats st = run_experiment(small_spec(mode, 200));
    EXPECT_EQ(st.masked, mode != Mode::rope_encoder);
    for (const auto& layer : st.layers) {
      const Matrix& m = layer.attention.mean;
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
          total += m(i, j);
          if (st.masked && j > i) ASSERT_EQ(m(i, j), 0.0);
        }
        ASSERT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(RunExperiment, ProbeMatchesCellAverage) {
  ExperimentSpec spec = small_spec(Mode::rope_decoder, 300);
  RegionProbe probe{2, Quantity::scores, {{3, 0}, {5, 1}}};
  const AttentionStats st = run_experiment(spec, RunOptions{1, {probe}});
  ASSERT_EQ(st.probes.size(), 1u);
  const Matrix& m = st.layers[1].scores.mean;
  EXPECT_NEAR(st.probes[0].mean, (m(3, 0) + m(5, 1)) / 2.0, 1e-12);
  EXPECT_GT(st.probes[0].std_error, 0.0);
}

TEST(Layer2GramStats, MatchesAnalyticCell) {
  ExperimentSpec spec;
  spec.n = 8;
  spec.layers = 2;
  spec.trials = 20000;
  spec.master_seed = 1;
  const MatrixStats st = layer2_gram_stats(spec);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(st.mean(i, i), 1.0, 1e-12);
  const double oracle = analytic::layer2_inner(analytic::PositionIndex{3}, analytic::PositionIndex{1},
                                               analytic::Alpha{0.0});
  EXPECT_NEAR(st.mean(2, 0), oracle, std::max(0.01, 3.0 * st.std_error(2, 0)));
}

TEST(DiagonalNormalize, ToeplitzBecomesZero) {
  Matrix t(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) t(i, j) = 0.1 * (static_cast<double>(i) - static_cast<double>(j)) + 3.0;
  for (bool masked : {true, false}) {
    Matrix in = t;
    if (masked)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j) in(i, j) = 0.0;
    const Matrix out = diagonal_normalize(in, masked);
    for (double v : out.values()) EXPECT_NEAR(v, 0.0, 1e-14);
  }
}

TEST(DiagonalNormalize, SmallExample) {
  Matrix a(2, 2);
  a(0, 0) = 1.0;
  a(1, 0) = 0.5;
  a(1, 1) = 3.0;
  const Matrix out = diagonal_normalize(a, true);
  EXPECT_DOUBLE_EQ(out(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(out(1, 0), 0.0);
  EXPECT_EQ(out(0, 1), 0.0);
}

TEST(DiagonalNormalize, IdempotentAndZeroMeanPerOffset) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (bool masked : {true, false})
    for (int rep = 0; rep < 10; ++rep) {
      Matrix a(7, 7);
      for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j) a(i, j) = (masked && j > i) ? 0.0 : u(rng);
      const Matrix once = diagonal_normalize(a, masked);
      const Matrix twice = diagonal_normalize(once, masked);
      for (std::size_t k = 0; k < 49; ++k) ASSERT_NEAR(once.values()[k], twice.values()[k], 1e-14);
      for (int off = masked ? 0 : -6; off <= 6; ++off) {
        double total = 0.0;
        for (std::size_t i = 0; i < 7; ++i) {
          const long long j = static_cast<long long>(i) - off;
          if (j >= 0 && j < 7) total += once(i, static_cast<std::size_t>(j));
        }
        ASSERT_NEAR(total, 0.0, 1e-13);
      }
    }
}

TEST(QuantileClip, Examples) {
  Matrix seq(10, 10);
  for (std::size_t k = 0; k < 100; ++k) seq.values()[k] = static_cast<double>(k + 1);
  const Matrix clipped = quantile_clip(seq, false, 0.01, 0.99);
  EXPECT_EQ(clipped.values()[0], 1.0);
  EXPECT_EQ(clipped.values()[99], 99.0);
  EXPECT_EQ(clipped.values()[50], 51.0);

  EXPECT_EQ(quantile_clip(seq, false, 0.0, 1.0), seq);
  const Matrix flat(4, 4, 0.25);
  EXPECT_EQ(quantile_clip(flat, false, 0.1, 0.9), flat);
}

TEST(QuantileClip, MaskedCellsIgnored) {
  Matrix a(3, 3);
  a(0, 0) = 1.0;
  a(1, 0) = 2.0;
  a(1, 1) = 3.0;
  a(2, 0) = 4.0;
  a(2, 1) = 5.0;
  a(2, 2) = 6.0;
  a(0, 2) = 1000.0;  // above the diagonal, not part of the sample
  const Matrix out = quantile_clip(a, true, 0.0, 0.5);
  EXPECT_EQ(out(2, 2), 3.0);
  EXPECT_EQ(out(0, 2), 1000.0);
}

TEST(NearestRank, Definition) {
  std::vector<double> v{5, 1, 4, 2, 3};
  EXPECT_EQ(nearest_rank(v, 0.0), 1.0);
  EXPECT_EQ(nearest_rank(v, 0.2), 1.0);
  EXPECT_EQ(nearest_rank(v, 0.21), 2.0);
  EXPECT_EQ(nearest_rank(v, 1.0), 5.0);
}

TEST(Compare, SelfAndCorrupted) {
  const Matrix oracle = analytic::analytic_gram(6, analytic::Alpha{0.2}, true);
  const ComparisonReport self = compare_to_analytic(oracle, Matrix{}, oracle, 0.01);
  EXPECT_EQ(self.max_abs_error, 0.0);
  EXPECT_TRUE(self.all_pass());

  Matrix bad = oracle;
  bad(4, 2) += 0.5;
  const ComparisonReport rep = compare_to_analytic(bad, Matrix{}, oracle, 0.01);
  EXPECT_EQ(rep.failed_cells, 1u);
  EXPECT_EQ(rep.worst_cell, (std::pair<std::size_t, std::size_t>{5, 3}));
  EXPECT_NEAR(rep.max_abs_error, 0.5, 1e-15);
  EXPECT_FALSE(rep.per_cell_pass[4][2]);

  // A wide stderr widens the band.
  const Matrix se(6, 6, 0.2);
  EXPECT_TRUE(compare_to_analytic(bad, se, oracle, 0.01).all_pass());
}

TEST(Compare, DimensionMismatch) {
  try {
    compare_to_analytic(Matrix(3, 3), Matrix{}, Matrix(4, 4), 0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}
