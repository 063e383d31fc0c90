#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "msf/errors.hpp"
#include "msf/nnfilter.hpp"
#include "support.hpp"

namespace msf {
namespace {

constexpr double kWidth = 1280.0;
constexpr double kHeight = 720.0;

MinimalSample random_sample(Rng& rng, int m) {
  MinimalSample s;
  for (int i = 0; i < m; ++i) {
    s.push_back({test::uniform(rng, 0, kWidth), test::uniform(rng, 0, kHeight), test::uniform(rng, 0, kWidth),
                 test::uniform(rng, 0, kHeight)});
  }
  return s;
}

LabeledSample random_labeled(Rng& rng, int m, bool with_expert) {
  LabeledSample s;
  s.sample = random_sample(rng, m);
  s.l1 = test::uniform(rng, 0, 1) < 0.5 ? 1.0 : test::uniform(rng, 0, 1);
  s.l2_valid = s.l1 == 1.0;
  s.l2 = test::uniform(rng, 0, 1);
  if (with_expert) s.l_expert = test::uniform(rng, 0, 1);
  return s;
}

FilterNetwork random_network(int m, int branches, std::uint64_t seed) {
  FilterNetwork net = FilterNetwork::create(m, branches, kWidth, kHeight, seed);
  Rng rng(seed ^ 0x5eedULL);
  for (Eigen::Index i = 0; i < net.exponent_params.size(); ++i) net.exponent_params(i) = test::uniform(rng, -1, 1);
  return net;
}

double reference_ce(double p, double label) {
  p = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

double sample_loss(const FilterNetwork& net, const LabeledSample& s, const ClassWeights& w, double aggregate_weight) {
  return loss(forward(net, s.sample), s, w, aggregate_weight).total;
}

TEST(FilterNetwork, InvariantToPermutationAndImageSwap) {
  Rng rng(70);
  for (int trial = 0; trial < 200; ++trial) {
    const FilterNetwork net = random_network(5, 3, 700 + trial % 10);
    MinimalSample s = random_sample(rng, 5);
    const ScoreOutput a = forward(net, s);
    std::shuffle(s.begin(), s.end(), rng);
    for (auto& c : s) c = c.swapped();
    const ScoreOutput b = forward(net, s);
    for (std::size_t i = 0; i < a.branches.size(); ++i) EXPECT_NEAR(a.branches[i], b.branches[i], 1e-12);
    EXPECT_NEAR(a.aggregate, b.aggregate, 1e-12);
  }
}

TEST(FilterNetwork, ZeroNetworkGivesHalfAndClosedFormAggregate) {
  FilterNetwork net = FilterNetwork::create(7, 3, kWidth, kHeight, 1).zeros_like();
  Rng rng(71);
  net.exponent_params << 0.3, -1.2, 2.0;
  const ScoreOutput out = forward(net, random_sample(rng, 7));
  for (double b : out.branches) EXPECT_EQ(b, 0.5);
  EXPECT_NEAR(out.aggregate, std::pow(0.5, net.exponents().sum()), 1e-14);
  EXPECT_NEAR(net.exponents()(0), std::log1p(std::exp(0.3)), 1e-14);
}

TEST(FilterNetwork, FreshExponentsAreOne) {
  const FilterNetwork net = FilterNetwork::create(5, 3, kWidth, kHeight, 2);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(net.exponents()(i), 1.0, 1e-12);
  EXPECT_EQ(net.n_branches(), 3);
  EXPECT_EQ(net.flatten().size(), static_cast<Eigen::Index>(net.parameter_count()));
}

TEST(FilterNetwork, WrongSampleSizeThrows) {
  const FilterNetwork net = FilterNetwork::create(5, 2, kWidth, kHeight, 3);
  Rng rng(72);
  EXPECT_THROW(forward(net, random_sample(rng, 7)), ShapeMismatch);
}

TEST(ScoreBatch, MatchesForward) {
  const FilterNetwork net = random_network(5, 3, 73);
  Rng rng(73);
  std::vector<MinimalSample> samples;
  for (int i = 0; i < 300; ++i) samples.push_back(random_sample(rng, 5));
  const auto scores = score_batch(net, samples);
  ASSERT_EQ(scores.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_NEAR(scores[i], forward(net, samples[i]).aggregate, 1e-12);

  std::vector<Correspondence> points = random_sample(rng, 100);
  std::vector<SampleIndices> indices;
  for (int i = 0; i < 300; ++i) indices.push_back(draw_uniform(points.size(), 5, rng));
  const auto by_index = score_batch(net, points, indices);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    EXPECT_NEAR(by_index[i], forward(net, gather(points, indices[i])).aggregate, 1e-12);
  }
  EXPECT_TRUE(score_batch(net, std::vector<MinimalSample>{}).empty());
}

TEST(Loss, MatchesIndependentFormula) {
  Rng rng(74);
  const FilterNetwork net = random_network(5, 3, 74);
  ClassCounter counter(3, 1.0);
  std::vector<LabeledSample> data;
  for (int i = 0; i < 200; ++i) {
    data.push_back(random_labeled(rng, 5, i % 2 == 0));
    counter.add(data.back());
  }
  const ClassWeights w = counter.weights();
  for (const auto& s : data) {
    const ScoreOutput out = forward(net, s.sample);
    double expected = w.weight(0, s.l1) * reference_ce(out.branches[0], s.l1);
    if (s.l2_valid) expected += w.weight(1, s.l2) * reference_ce(out.branches[1], s.l2);
    if (s.l_expert) expected += w.weight(2, *s.l_expert) * reference_ce(out.branches[2], *s.l_expert);
    const double agg = s.l1 * s.l2;
    expected += 0.7 * w.weight(3, agg) * reference_ce(out.aggregate, agg);
    EXPECT_NEAR(loss(out, s, w, 0.7).total, expected, 1e-9 * std::max(1.0, expected));
  }
}

TEST(Loss, NearPerfectPredictionIsSmallAndOutlierGatesPose) {
  ScoreOutput out{{1.0, 0.3}, 1.0};
  LabeledSample good;
  good.l1 = 1.0;
  good.l2 = 1.0;
  good.l2_valid = true;
  good.sample.resize(5);
  out.branches[1] = 1.0;
  EXPECT_LT(loss(out, good, ClassWeights::uniform(2)).total, 1e-5);

  LabeledSample bad = good;
  bad.l1 = 0.0;
  bad.l2_valid = false;
  ScoreOutput a{{0.0, 0.9}, 0.0};
  ScoreOutput b{{0.0, 0.1}, 0.0};
  const LossTerms la = loss(a, bad, ClassWeights::uniform(2));
  EXPECT_EQ(la.branch[1], 0.0);
  EXPECT_EQ(la.total, loss(b, bad, ClassWeights::uniform(2)).total);
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(75);
  const double h = 1e-5;
  int checked = 0, mismatched = 0, kinks = 0;
  for (int n = 0; n < 20; ++n) {
    const int branches = 2 + n % 2;
    const int m = n % 3 == 0 ? 7 : 5;
    FilterNetwork net = random_network(m, branches, 750 + n);
    const LabeledSample s = random_labeled(rng, m, branches == 3);
    ClassWeights w = ClassWeights::uniform(branches);
    for (auto& t : w.terms) t = {test::uniform(rng, 0.5, 2), test::uniform(rng, 0.5, 2)};
    const Eigen::VectorXd analytic = backward(net, s, w, 0.8).flatten();
    const Eigen::VectorXd params = net.flatten();
    ASSERT_EQ(analytic.size(), params.size());
    const Eigen::Index body = params.size() - branches;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      // The aggregate term is stopped at the branch outputs, so body
      // parameters see only the branch terms.
      const double agg = i < body ? 0.0 : 0.8;
      Eigen::VectorXd p = params;
      p(i) += h;
      net.unflatten(p);
      const double up = sample_loss(net, s, w, agg);
      p(i) -= 2 * h;
      net.unflatten(p);
      const double down = sample_loss(net, s, w, agg);
      net.unflatten(params);
      const double mid = sample_loss(net, s, w, agg);
      const double numeric = (up - down) / (2 * h);
      const double right = (up - mid) / h;
      const double left = (mid - down) / h;
      // One-sided slopes that disagree mean a ReLU or max-pool switch lies
      // within h; the central difference is meaningless there.
      if (std::abs(right - left) > 1e-3 * std::max(std::abs(right), std::abs(left)) + 1e-5) {
        ++kinks;
        continue;
      }
      ++checked;
      if (std::abs(analytic(i) - numeric) > 1e-4 * std::max(std::abs(analytic(i)), std::abs(numeric)) + 1e-7) {
        ++mismatched;
        ADD_FAILURE() << "net " << n << " param " << i << " analytic " << analytic(i) << " numeric " << numeric;
      }
    }
    net.unflatten(params);
  }
  EXPECT_EQ(mismatched, 0) << "of " << checked;
  EXPECT_LT(kinks, checked / 1000 + 5);
}

TEST(Gradient, AggregateTermReachesOnlyExponents) {
  Rng rng(76);
  const FilterNetwork net = random_network(5, 3, 76);
  const LabeledSample s = random_labeled(rng, 5, true);
  const ClassWeights w = ClassWeights::uniform(3);
  const Eigen::VectorXd a = backward(net, s, w, 0.0).flatten();
  const Eigen::VectorXd b = backward(net, s, w, 1.0).flatten();
  const Eigen::Index body = a.size() - 3;
  EXPECT_EQ(a.head(body), b.head(body));
  EXPECT_EQ(a.tail(3), Eigen::VectorXd::Zero(3));
  EXPECT_NE(b.tail(3), Eigen::VectorXd::Zero(3));
}

TEST(Gradient, PositiveAggregateLabelPushesExponentsDown) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const FilterNetwork net = random_network(5, 2, 770 + trial);
    LabeledSample s = random_labeled(rng, 5, false);
    s.l1 = 1.0;
    s.l2 = 1.0;
    s.l2_valid = true;
    const Eigen::VectorXd g = backward(net, s, ClassWeights::uniform(2)).flatten();
    // d(loss)/d(raw) > 0 so descent lowers the exponents and raises B^w.
    EXPECT_GT(g(g.size() - 1), 0.0);
    EXPECT_GT(g(g.size() - 2), 0.0);
  }
}

TEST(Aggregate, MonotoneInBranchesAndExponents) {
  for (double b = 0.05; b < 1.0; b += 0.05) {
    for (double w = 0.1; w < 3.0; w += 0.1) {
      EXPECT_LT(std::pow(b, w), std::pow(b + 0.04, w));
      EXPECT_GT(std::pow(b, w), std::pow(b, w + 0.05));
    }
  }
  FilterNetwork net = FilterNetwork::create(5, 2, kWidth, kHeight, 5).zeros_like();
  Rng rng(78);
  const auto sample = random_sample(rng, 5);
  double previous = 1.0;
  for (double raw = -3; raw <= 3; raw += 0.5) {
    net.exponent_params.setConstant(raw);
    const double a = forward(net, sample).aggregate;
    EXPECT_LT(a, previous);
    previous = a;
  }
}

TEST(ClassCounter, BalancesSkewedLabels) {
  ClassCounter counter(2, 1.0);
  LabeledSample pos;
  pos.l1 = 1.0;
  pos.l2 = 1.0;
  pos.l2_valid = true;
  LabeledSample neg;
  for (int i = 0; i < 100; ++i) counter.add(neg);
  counter.add(pos);
  EXPECT_EQ(counter.count(0, 0), 100.0);
  EXPECT_EQ(counter.count(0, 1), 1.0);
  EXPECT_EQ(counter.count(1, 1), 1.0);
  const ClassWeights w = counter.weights();
  const double total_pos = w.weight(0, 1.0) * (1.0 + 1.0);
  const double total_neg = w.weight(0, 0.0) * (100.0 + 1.0);
  EXPECT_NEAR(total_pos / total_neg, 1.0, 0.1);
}

std::vector<LabeledSample> separable_dataset(std::uint64_t seed, int count) {
  Rng rng(seed);
  std::vector<LabeledSample> data;
  for (int i = 0; i < count; ++i) {
    LabeledSample s;
    const bool positive = i % 2 == 0;
    for (int j = 0; j < 5; ++j) {
      const double u = positive ? test::uniform(rng, 0, kWidth / 2 - 40) : test::uniform(rng, 0, kWidth);
      s.sample.push_back({u, test::uniform(rng, 0, kHeight), u + test::uniform(rng, -5, 5), test::uniform(rng, 0, kHeight)});
    }
    if (!positive) {
      auto& c = s.sample[static_cast<std::size_t>(i % 5)];
      c.u1 = test::uniform(rng, kWidth / 2 + 40, kWidth);
      c.u2 = c.u1;
    }
    s.l1 = positive ? 1.0 : 0.0;
    s.l2 = s.l1;
    s.l2_valid = positive;
    data.push_back(std::move(s));
  }
  return data;
}

TEST(Train, LearnsSeparableLabels) {
  TrainConfig config;
  config.epochs = 15;
  config.batch_size = 64;
  config.learning_rate = 3e-3;
  config.seed = 3;
  const auto data = separable_dataset(79, 2000);
  const TrainResult result = train(data, config);
  EXPECT_FALSE(result.history.empty());
  const auto test_data = separable_dataset(80, 500);
  int correct = 0;
  for (const auto& s : test_data) {
    const double b = forward(result.network, s.sample).branches[0];
    correct += (b >= 0.5) == (s.l1 == 1.0);
  }
  EXPECT_GT(correct, 475);
}

TEST(Train, DeterministicAndRejectsEmptyData) {
  TrainConfig config;
  config.epochs = 2;
  config.seed = 4;
  const auto data = separable_dataset(81, 300);
  EXPECT_EQ(train(data, config).network.flatten(), train(data, config).network.flatten());
  EXPECT_THROW(train({}, config), EmptyDataset);
  config.batch_size = 0;
  EXPECT_THROW(train(data, config), ConfigError);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(Weights, RoundTripIsBitwise) {
  const FilterNetwork net = random_network(7, 3, 82);
  const std::string path = temp_path("msf_weights_rt.nefs");
  save_weights(net, path);
  const FilterNetwork loaded = load_weights(path, 7);
  EXPECT_EQ(loaded.flatten(), net.flatten());
  EXPECT_EQ(loaded.m, 7);
  EXPECT_EQ(loaded.n_branches(), 3);
  EXPECT_EQ(loaded.image_width, net.image_width);
}

TEST(Weights, TruncatedAndMismatchedFilesAreRejected) {
  const FilterNetwork net = random_network(5, 2, 83);
  const std::string path = temp_path("msf_weights_bad.nefs");
  save_weights(net, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  EXPECT_THROW(load_weights(path), FormatError);

  save_weights(net, path);
  try {
    load_weights(path, 7);
    ADD_FAILURE() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find('5'), std::string::npos) << what;
    EXPECT_NE(what.find('7'), std::string::npos) << what;
  }
  {
    std::ofstream out(path, std::ios::binary);
    out << "JUNKJUNKJUNK";
  }
  EXPECT_THROW(load_weights(path), FormatError);
  EXPECT_THROW(load_weights(temp_path("msf_no_such_weights.nefs")), IoError);
}

}  // namespace
}  // namespace msf
