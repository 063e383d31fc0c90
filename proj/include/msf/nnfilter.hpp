#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "msf/geometry.hpp"
#include "msf/labels.hpp"
#include "msf/sampler.hpp"

namespace msf {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Minimal-sample scoring network. Each correspondence goes through a shared
/// backbone (4 -> 32 -> 64 -> 64, leaky ReLU), features are max-pooled over
/// the sample, once as given and once with the two images exchanged, and the
/// element-wise max of both feeds the head (64 -> 32 leaky ReLU -> branches,
/// sigmoid). The aggregate score is prod_i B_i^{w_i} with w = softplus(raw).
struct FilterNetwork {
  static constexpr double kLeakySlope = 0.01;
  static constexpr std::array<int, 4> kBackboneSizes{4, 32, 64, 64};
  static constexpr int kHeadHidden = 32;

  std::vector<DenseLayer> backbone;
  std::vector<DenseLayer> head;
  Eigen::VectorXd exponent_params;  // raw, one per branch
  int m = 5;
  double image_width = 1280.0;
  double image_height = 720.0;

  /// He-initialized network; exponents start at softplus(raw) = 1.
  static FilterNetwork create(int m, int n_branches, double image_width, double image_height,
                              std::uint64_t seed);

  int n_branches() const { return head.empty() ? 0 : static_cast<int>(head.back().weight.rows()); }
  Eigen::VectorXd exponents() const;

  /// Throws ShapeMismatch when layer shapes are inconsistent or values are
  /// not finite.
  void validate() const;

  std::size_t parameter_count() const;
  /// All parameters in a fixed order: backbone, head, exponent params.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& params);
  /// A network of the same shape with every parameter zero.
  FilterNetwork zeros_like() const;
};

struct ScoreOutput {
  std::vector<double> branches;
  double aggregate = 0.0;
};

/// Throws ShapeMismatch if the sample size differs from net.m.
ScoreOutput forward(const FilterNetwork& net, std::span<const Correspondence> sample);

/// Aggregate scores, element-wise equal to forward().
std::vector<double> score_batch(const FilterNetwork& net, std::span<const MinimalSample> samples);

/// Same, for samples given as indices into `points`.
std::vector<double> score_batch(const FilterNetwork& net, std::span<const Correspondence> points,
                                std::span<const SampleIndices> samples);

/// Per-term class weights: one {negative, positive} pair per branch followed
/// by one for the aggregate term.
struct ClassWeights {
  std::vector<std::array<double, 2>> terms;

  static ClassWeights uniform(int n_branches);
  double weight(std::size_t term, double label) const { return terms[term][label >= 0.5 ? 1 : 0]; }
};

/// Running positive/negative label counts per term with additive smoothing;
/// weights are inverse class frequencies normalized so that both classes
/// carry equal total weight.
class ClassCounter {
 public:
  ClassCounter(int n_branches, double smoothing);
  void add(const LabeledSample& sample);
  ClassWeights weights() const;
  double count(std::size_t term, int cls) const { return counts_[term][static_cast<std::size_t>(cls)]; }

 private:
  std::vector<std::array<double, 2>> counts_;
  double smoothing_;
};

struct LossTerms {
  double total = 0.0;
  std::vector<double> branch;  // one per branch, 0 when excluded
  double aggregate = 0.0;
};

/// Class-weighted soft cross-entropy per branch plus the aggregate term
/// against l1 * l2. The pose branch counts only when l2_valid; the expert
/// branch whenever its label is present. Probabilities are clamped to
/// [1e-7, 1 - 1e-7].
LossTerms loss(const ScoreOutput& output, const LabeledSample& labels, const ClassWeights& weights,
               double aggregate_weight = 1.0);

/// Analytic gradient of loss() for one sample, shaped like the network. The
/// aggregate term reaches only the exponent parameters. Max pooling routes
/// gradient to the arg-max (lowest correspondence index, then the unswapped
/// copy, on ties).
FilterNetwork backward(const FilterNetwork& net, const LabeledSample& sample,
                       const ClassWeights& weights, double aggregate_weight = 1.0);

/// Mean loss and gradient over a batch.
double loss_and_gradient(const FilterNetwork& net, std::span<const LabeledSample> batch,
                         const ClassWeights& weights, double aggregate_weight,
                         FilterNetwork* gradient);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 40;
  int batch_size = 128;
  std::uint64_t seed = 0;
  double class_smoothing = 1.0;
  int patience = 5;
  double validation_fraction = 0.1;
  double aggregate_weight = 1.0;
  double image_width = 1280.0;
  double image_height = 720.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  std::vector<double> validation_branch;  // per-branch validation loss terms
  double validation_aggregate = 0.0;
};

struct TrainResult {
  FilterNetwork network;
  std::vector<EpochLog> history;
  int best_epoch = 0;
};

/// Adam on mini-batches; returns the network with the lowest validation
/// loss. Throws EmptyDataset, ShapeMismatch on mixed sample sizes.
TrainResult train(const std::vector<LabeledSample>& dataset, const TrainConfig& config);

/// Binary weight file, little-endian, magic "NEFS". Throws IoError and
/// FormatError.
void save_weights(const FilterNetwork& net, const std::string& path);
FilterNetwork load_weights(const std::string& path);
/// Additionally checks the sample size the network was trained for.
FilterNetwork load_weights(const std::string& path, int expected_m);

}  // namespace msf
