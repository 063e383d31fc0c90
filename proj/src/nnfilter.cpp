#include "msf/nnfilter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "msf/errors.hpp"

namespace msf {

static_assert(std::endian::native == std::endian::little, "weight files assume little-endian");

namespace {

constexpr double kProbClamp = 1e-7;
constexpr int kInferenceChunk = 256;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double log_sigmoid(double z) { return -softplus(-z); }

Eigen::MatrixXd leaky(const Eigen::MatrixXd& x) {
  return x.cwiseMax(FilterNetwork::kLeakySlope * x);
}

Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& upstream) {
  return (pre.array() > 0.0).select(upstream, FilterNetwork::kLeakySlope * upstream);
}

double soft_cross_entropy(double p, double label) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -label * std::log(q) - (1.0 - label) * std::log(1.0 - q);
}

bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }

// Activations of one batch. Column b * 2m + 2j + s holds correspondence j
// of sample b, with s = 1 for the image-swapped copy.
struct Activations {
  int batch = 0;
  Eigen::MatrixXd input;
  std::array<Eigen::MatrixXd, 3> pre;
  std::array<Eigen::MatrixXd, 3> act;
  Eigen::MatrixXd pooled;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax;
  Eigen::MatrixXd head_pre;
  Eigen::MatrixXd head_act;
  Eigen::MatrixXd logits;
};

template <typename Fill>
void fill_input(const FilterNetwork& net, int batch, Fill fill, Eigen::MatrixXd& input) {
  const int m = net.m;
  const double sx = 2.0 / net.image_width;
  const double sy = 2.0 / net.image_height;
  input.resize(4, static_cast<Eigen::Index>(batch) * 2 * m);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < m; ++j) {
      const Correspondence& c = fill(b, j);
      const double u1 = c.u1 * sx - 1.0;
      const double v1 = c.v1 * sy - 1.0;
      const double u2 = c.u2 * sx - 1.0;
      const double v2 = c.v2 * sy - 1.0;
      const Eigen::Index col = static_cast<Eigen::Index>(b) * 2 * m + 2 * j;
      input.col(col) << u1, v1, u2, v2;
      input.col(col + 1) << u2, v2, u1, v1;
    }
  }
}

void run_forward(const FilterNetwork& net, Activations& a, bool track_argmax) {
  const Eigen::Index group = 2 * net.m;
  const Eigen::MatrixXd* x = &a.input;
  for (std::size_t l = 0; l < 3; ++l) {
    a.pre[l].noalias() = net.backbone[l].weight * *x;
    a.pre[l].colwise() += net.backbone[l].bias;
    a.act[l] = leaky(a.pre[l]);
    x = &a.act[l];
  }
  const Eigen::MatrixXd& feat = a.act[2];
  const Eigen::Index channels = feat.rows();
  a.pooled.resize(channels, a.batch);
  if (track_argmax) {
    a.argmax.resize(channels, a.batch);
    for (Eigen::Index b = 0; b < a.batch; ++b) {
      for (Eigen::Index f = 0; f < channels; ++f) {
        Eigen::Index best = b * group;
        for (Eigen::Index c = best + 1; c < (b + 1) * group; ++c) {
          if (feat(f, c) > feat(f, best)) best = c;
        }
        a.argmax(f, b) = best;
        a.pooled(f, b) = feat(f, best);
      }
    }
  } else {
    for (Eigen::Index b = 0; b < a.batch; ++b) {
      a.pooled.col(b) = feat.middleCols(b * group, group).rowwise().maxCoeff();
    }
  }
  a.head_pre.noalias() = net.head[0].weight * a.pooled;
  a.head_pre.colwise() += net.head[0].bias;
  a.head_act = leaky(a.head_pre);
  a.logits.noalias() = net.head[1].weight * a.head_act;
  a.logits.colwise() += net.head[1].bias;
}

double aggregate_from_logits(const Eigen::VectorXd& exponents, const Eigen::Ref<const Eigen::VectorXd>& z) {
  double log_a = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) log_a += exponents(i) * log_sigmoid(z(i));
  return std::exp(log_a);
}

template <typename Fill>
std::vector<double> score_all(const FilterNetwork& net, std::size_t count, Fill fill) {
  std::vector<double> out(count);
  const Eigen::VectorXd w = net.exponents();
  Activations a;
  for (std::size_t start = 0; start < count; start += kInferenceChunk) {
    const int batch = static_cast<int>(std::min<std::size_t>(kInferenceChunk, count - start));
    a.batch = batch;
    fill_input(net, batch, [&](int b, int j) -> const Correspondence& {
      return fill(start + static_cast<std::size_t>(b), j);
    }, a.input);
    run_forward(net, a, false);
    for (int b = 0; b < batch; ++b) out[start + static_cast<std::size_t>(b)] = aggregate_from_logits(w, a.logits.col(b));
  }
  return out;
}

void check_sample_size(const FilterNetwork& net, std::size_t size) {
  if (static_cast<int>(size) != net.m) {
    throw ShapeMismatch("network expects samples of " + std::to_string(net.m) +
                        " correspondences, got " + std::to_string(size));
  }
}

// Per-sample loss and the gradient it sends into the logits and the raw
// exponent parameters.
double sample_terms(const Eigen::Ref<const Eigen::VectorXd>& z, const Eigen::VectorXd& raw,
                    const LabeledSample& s, const ClassWeights& cw, double aggregate_weight,
                    LossTerms* terms, Eigen::Ref<Eigen::VectorXd> dz, Eigen::VectorXd* draw) {
  const Eigen::Index n = z.size();
  double total = 0.0;
  if (terms) terms->branch.assign(static_cast<std::size_t>(n), 0.0);
  double log_a = 0.0;
  Eigen::VectorXd log_b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    log_b(i) = log_sigmoid(z(i));
    log_a += softplus(raw(i)) * log_b(i);
    double label;
    bool included;
    if (i == 0) {
      label = s.l1;
      included = true;
    } else if (i == 1) {
      label = s.l2;
      included = s.l2_valid;
    } else {
      label = s.l_expert.value_or(0.0);
      included = s.l_expert.has_value();
    }
    if (!included) {
      dz(i) = 0.0;
      continue;
    }
    const double p = sigmoid(z(i));
    const double w = cw.weight(static_cast<std::size_t>(i), label);
    const double term = w * soft_cross_entropy(p, label);
    total += term;
    if (terms) terms->branch[static_cast<std::size_t>(i)] = term;
    dz(i) = clamped(p) ? 0.0 : w * (p - label);
  }

  const double a = std::exp(log_a);
  const double label = s.l1 * s.l2;
  const double w = aggregate_weight * cw.weight(static_cast<std::size_t>(n), label);
  const double term = w * soft_cross_entropy(a, label);
  total += term;
  if (terms) {
    terms->aggregate = term;
    terms->total = total;
  }
  if (draw) {
    // Branch scores are constants here: only the exponents learn from the
    // aggregate term.
    const double dloss_da = clamped(a) ? 0.0 : w * (a - label) / (a * (1.0 - a));
    for (Eigen::Index i = 0; i < n; ++i) {
      (*draw)(i) += dloss_da * a * log_b(i) * sigmoid(raw(i));
    }
  }
  return total;
}

// Mean loss over the batch; accumulates the mean gradient when requested.
double batch_loss(const FilterNetwork& net, std::span<const LabeledSample* const> batch,
                  const ClassWeights& cw, double aggregate_weight, FilterNetwork* grad,
                  std::vector<LossTerms>* per_sample) {
  const int n = net.n_branches();
  if (static_cast<int>(cw.terms.size()) != n + 1) {
    throw ShapeMismatch("class weights have " + std::to_string(cw.terms.size()) +
                        " terms, network needs " + std::to_string(n + 1));
  }
  Activations a;
  a.batch = static_cast<int>(batch.size());
  for (const LabeledSample* s : batch) check_sample_size(net, s->sample.size());
  fill_input(net, a.batch, [&](int b, int j) -> const Correspondence& {
    return batch[static_cast<std::size_t>(b)]->sample[static_cast<std::size_t>(j)];
  }, a.input);
  run_forward(net, a, grad != nullptr);

  Eigen::MatrixXd dz(n, a.batch);
  Eigen::VectorXd draw = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  if (per_sample) per_sample->resize(batch.size());
  for (int b = 0; b < a.batch; ++b) {
    LossTerms* terms = per_sample ? &(*per_sample)[static_cast<std::size_t>(b)] : nullptr;
    total += sample_terms(a.logits.col(b), net.exponent_params, *batch[static_cast<std::size_t>(b)],
                          cw, aggregate_weight, terms, dz.col(b), grad ? &draw : nullptr);
  }
  const double scale = 1.0 / std::max(1, a.batch);
  if (!grad) return total * scale;

  dz *= scale;
  *grad = net.zeros_like();
  grad->exponent_params = draw * scale;
  grad->head[1].weight.noalias() = dz * a.head_act.transpose();
  grad->head[1].bias = dz.rowwise().sum();
  const Eigen::MatrixXd dhead = leaky_grad(a.head_pre, net.head[1].weight.transpose() * dz);
  grad->head[0].weight.noalias() = dhead * a.pooled.transpose();
  grad->head[0].bias = dhead.rowwise().sum();
  const Eigen::MatrixXd dpooled = net.head[0].weight.transpose() * dhead;

  Eigen::MatrixXd dact = Eigen::MatrixXd::Zero(a.act[2].rows(), a.act[2].cols());
  for (Eigen::Index b = 0; b < a.batch; ++b) {
    for (Eigen::Index f = 0; f < dact.rows(); ++f) dact(f, a.argmax(f, b)) += dpooled(f, b);
  }
  for (int l = 2; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::MatrixXd dpre = leaky_grad(a.pre[li], dact);
    const Eigen::MatrixXd& below = l > 0 ? a.act[li - 1] : a.input;
    grad->backbone[li].weight.noalias() = dpre * below.transpose();
    grad->backbone[li].bias = dpre.rowwise().sum();
    if (l > 0) dact.noalias() = net.backbone[li].weight.transpose() * dpre;
  }
  return total * scale;
}

DenseLayer make_layer(int in, int out, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
  }
  return layer;
}

// Binary helpers for the weight file.
void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void put_f64(std::string& buf, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  double f64() {
    double v;
    take(&v, 8);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void take(void* out, std::size_t n) {
    if (data_.size() - pos_ < n) throw FormatError("weight file is truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'N', 'E', 'F', 'S'};
constexpr std::uint32_t kWeightVersion = 1;

}  // namespace

FilterNetwork FilterNetwork::create(int m, int n_branches, double image_width, double image_height,
                                    std::uint64_t seed) {
  if (m < 1) throw ShapeMismatch("sample size must be positive");
  if (n_branches < 2) throw ShapeMismatch("network needs at least 2 branches");
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw ShapeMismatch("image size must be positive");
  }
  Rng rng(seed);
  FilterNetwork net;
  net.m = m;
  net.image_width = image_width;
  net.image_height = image_height;
  for (std::size_t l = 0; l + 1 < kBackboneSizes.size(); ++l) {
    const int in = kBackboneSizes[l];
    net.backbone.push_back(make_layer(in, kBackboneSizes[l + 1], std::sqrt(6.0 / in), rng));
  }
  const int features = kBackboneSizes.back();
  net.head.push_back(make_layer(features, kHeadHidden, std::sqrt(6.0 / features), rng));
  net.head.push_back(
      make_layer(kHeadHidden, n_branches, std::sqrt(6.0 / (kHeadHidden + n_branches)), rng));
  net.exponent_params = Eigen::VectorXd::Constant(n_branches, std::log(std::exp(1.0) - 1.0));
  return net;
}

Eigen::VectorXd FilterNetwork::exponents() const {
  return exponent_params.unaryExpr([](double r) { return softplus(r); });
}

void FilterNetwork::validate() const {
  if (backbone.size() != 3 || head.size() != 2) {
    throw ShapeMismatch("network must have 3 backbone and 2 head layers");
  }
  Eigen::Index in = 4;
  auto check = [&](const DenseLayer& layer) {
    if (layer.weight.cols() != in || layer.bias.size() != layer.weight.rows()) {
      throw ShapeMismatch("inconsistent layer shapes");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw ShapeMismatch("non-finite network weights");
    }
    in = layer.weight.rows();
  };
  for (const auto& layer : backbone) check(layer);
  for (const auto& layer : head) check(layer);
  if (n_branches() < 2) throw ShapeMismatch("network needs at least 2 branches");
  if (exponent_params.size() != n_branches() || !exponent_params.allFinite()) {
    throw ShapeMismatch("exponent parameters do not match branch count");
  }
  if (m < 1 || !(image_width > 0.0) || !(image_height > 0.0)) {
    throw ShapeMismatch("invalid sample size or image normalization");
  }
}

std::size_t FilterNetwork::parameter_count() const {
  std::size_t count = static_cast<std::size_t>(exponent_params.size());
  for (const auto* layers : {&backbone, &head}) {
    for (const auto& l : *layers) count += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return count;
}

Eigen::VectorXd FilterNetwork::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto* layers : {&backbone, &head}) {
    for (const auto& l : *layers) {
      out.segment(pos, l.weight.size()) = l.weight.reshaped();
      pos += l.weight.size();
      out.segment(pos, l.bias.size()) = l.bias;
      pos += l.bias.size();
    }
  }
  out.segment(pos, exponent_params.size()) = exponent_params;
  return out;
}

void FilterNetwork::unflatten(const Eigen::VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw ShapeMismatch("parameter vector has the wrong length");
  }
  Eigen::Index pos = 0;
  for (auto* layers : {&backbone, &head}) {
    for (auto& l : *layers) {
      l.weight.reshaped() = params.segment(pos, l.weight.size());
      pos += l.weight.size();
      l.bias = params.segment(pos, l.bias.size());
      pos += l.bias.size();
    }
  }
  exponent_params = params.segment(pos, exponent_params.size());
}

FilterNetwork FilterNetwork::zeros_like() const {
  FilterNetwork z = *this;
  z.unflatten(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count())));
  return z;
}

ScoreOutput forward(const FilterNetwork& net, std::span<const Correspondence> sample) {
  check_sample_size(net, sample.size());
  Activations a;
  a.batch = 1;
  fill_input(net, 1, [&](int, int j) -> const Correspondence& {
    return sample[static_cast<std::size_t>(j)];
  }, a.input);
  run_forward(net, a, false);
  ScoreOutput out;
  for (Eigen::Index i = 0; i < a.logits.rows(); ++i) out.branches.push_back(sigmoid(a.logits(i, 0)));
  out.aggregate = aggregate_from_logits(net.exponents(), a.logits.col(0));
  return out;
}

std::vector<double> score_batch(const FilterNetwork& net, std::span<const MinimalSample> samples) {
  for (const auto& s : samples) check_sample_size(net, s.size());
  return score_all(net, samples.size(), [&](std::size_t b, int j) -> const Correspondence& {
    return samples[b][static_cast<std::size_t>(j)];
  });
}

std::vector<double> score_batch(const FilterNetwork& net, std::span<const Correspondence> points,
                                std::span<const SampleIndices> samples) {
  for (const auto& s : samples) check_sample_size(net, s.size());
  return score_all(net, samples.size(), [&](std::size_t b, int j) -> const Correspondence& {
    return points[samples[b][static_cast<std::size_t>(j)]];
  });
}

ClassWeights ClassWeights::uniform(int n_branches) {
  ClassWeights w;
  w.terms.assign(static_cast<std::size_t>(n_branches) + 1, {1.0, 1.0});
  return w;
}

ClassCounter::ClassCounter(int n_branches, double smoothing)
    : counts_(static_cast<std::size_t>(n_branches) + 1, {0.0, 0.0}), smoothing_(smoothing) {}

void ClassCounter::add(const LabeledSample& s) {
  auto bump = [&](std::size_t term, double label) { counts_[term][label >= 0.5 ? 1 : 0] += 1.0; };
  bump(0, s.l1);
  if (s.l2_valid) bump(1, s.l2);
  if (counts_.size() > 3 && s.l_expert) bump(2, *s.l_expert);
  bump(counts_.size() - 1, s.l1 * s.l2);
}

ClassWeights ClassCounter::weights() const {
  ClassWeights w;
  for (const auto& c : counts_) {
    const double total = c[0] + c[1] + 2.0 * smoothing_;
    w.terms.push_back({total / (2.0 * (c[0] + smoothing_)), total / (2.0 * (c[1] + smoothing_))});
  }
  return w;
}

LossTerms loss(const ScoreOutput& output, const LabeledSample& labels, const ClassWeights& weights,
               double aggregate_weight) {
  const auto n = static_cast<Eigen::Index>(output.branches.size());
  if (static_cast<Eigen::Index>(weights.terms.size()) != n + 1) {
    throw ShapeMismatch("class weights do not match branch count");
  }
  LossTerms terms;
  double total = 0.0;
  terms.branch.assign(output.branches.size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    double label;
    if (i == 0) {
      label = labels.l1;
    } else if (i == 1) {
      if (!labels.l2_valid) continue;
      label = labels.l2;
    } else {
      if (!labels.l_expert) continue;
      label = *labels.l_expert;
    }
    terms.branch[k] = weights.weight(k, label) * soft_cross_entropy(output.branches[k], label);
    total += terms.branch[k];
  }
  const double label = labels.l1 * labels.l2;
  terms.aggregate = aggregate_weight * weights.weight(static_cast<std::size_t>(n), label) *
                    soft_cross_entropy(output.aggregate, label);
  terms.total = total + terms.aggregate;
  return terms;
}

FilterNetwork backward(const FilterNetwork& net, const LabeledSample& sample,
                       const ClassWeights& weights, double aggregate_weight) {
  FilterNetwork grad;
  const LabeledSample* ptr = &sample;
  batch_loss(net, std::span<const LabeledSample* const>(&ptr, 1), weights, aggregate_weight, &grad,
             nullptr);
  return grad;
}

double loss_and_gradient(const FilterNetwork& net, std::span<const LabeledSample> batch,
                         const ClassWeights& weights, double aggregate_weight,
                         FilterNetwork* gradient) {
  std::vector<const LabeledSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return batch_loss(net, ptrs, weights, aggregate_weight, gradient, nullptr);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field) { throw ConfigError(field + ": must be positive"); };
  if (!(learning_rate > 0.0)) fail("learning_rate");
  if (epochs <= 0) fail("epochs");
  if (batch_size <= 0) fail("batch_size");
  if (!(class_smoothing > 0.0)) fail("class_smoothing");
  if (patience <= 0) fail("patience");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction: must be in (0, 1)");
  }
  if (!(aggregate_weight >= 0.0)) throw ConfigError("aggregate_weight: must be >= 0");
  if (!(image_width > 0.0)) fail("image_width");
  if (!(image_height > 0.0)) fail("image_height");
}

TrainResult train(const std::vector<LabeledSample>& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw EmptyDataset("training dataset is empty");
  const std::size_t m = dataset.front().sample.size();
  const bool expert = dataset.front().l_expert.has_value();
  for (const auto& s : dataset) {
    if (s.sample.size() != m) throw ShapeMismatch("training samples have mixed sizes");
    if (s.l_expert.has_value() != expert) {
      throw ShapeMismatch("expert labels must be present on all samples or none");
    }
  }
  const int n_branches = expert ? 3 : 2;

  Rng rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(config.validation_fraction * static_cast<double>(dataset.size())));
  if (dataset.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, dataset.size() - 1);
  else n_val = 0;
  std::vector<const LabeledSample*> val;
  std::vector<const LabeledSample*> tr;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : tr).push_back(&dataset[order[i]]);
  }

  ClassCounter all_counts(n_branches, config.class_smoothing);
  for (const auto* s : tr) all_counts.add(*s);
  const ClassWeights val_weights = all_counts.weights();

  TrainResult result;
  FilterNetwork net = FilterNetwork::create(static_cast<int>(m), n_branches, config.image_width,
                                            config.image_height, config.seed);
  const auto size = static_cast<Eigen::Index>(net.parameter_count());
  Eigen::VectorXd params = net.flatten();
  Eigen::VectorXd moment1 = Eigen::VectorXd::Zero(size);
  Eigen::VectorXd moment2 = Eigen::VectorXd::Zero(size);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  long step = 0;

  ClassCounter running(n_branches, config.class_smoothing);
  auto evaluate = [&](const FilterNetwork& candidate, EpochLog& log) {
    const auto& set = val.empty() ? tr : val;
    std::vector<LossTerms> terms;
    double total = 0.0;
    log.validation_branch.assign(static_cast<std::size_t>(n_branches), 0.0);
    log.validation_aggregate = 0.0;
    for (std::size_t start = 0; start < set.size(); start += 1024) {
      const std::size_t end = std::min(set.size(), start + 1024);
      std::span<const LabeledSample* const> chunk(set.data() + start, end - start);
      batch_loss(candidate, chunk, val_weights, config.aggregate_weight, nullptr, &terms);
      for (const auto& t : terms) {
        total += t.total;
        for (std::size_t i = 0; i < t.branch.size(); ++i) log.validation_branch[i] += t.branch[i];
        log.validation_aggregate += t.aggregate;
      }
    }
    const double scale = 1.0 / static_cast<double>(set.size());
    for (double& v : log.validation_branch) v *= scale;
    log.validation_aggregate *= scale;
    log.validation_loss = total * scale;
  };

  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  FilterNetwork grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(tr.begin(), tr.end(), rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < tr.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(tr.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const LabeledSample* const> batch(tr.data() + start, end - start);
      for (const auto* s : batch) running.add(*s);
      const double l = batch_loss(net, batch, running.weights(), config.aggregate_weight, &grad, nullptr);
      train_total += l * static_cast<double>(batch.size());

      const Eigen::VectorXd g = grad.flatten();
      ++step;
      moment1 = kBeta1 * moment1 + (1.0 - kBeta1) * g;
      moment2 = kBeta2 * moment2 + (1.0 - kBeta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      params.array() -= config.learning_rate * (moment1.array() / c1) /
                        ((moment2.array() / c2).sqrt() + kEps);
      net.unflatten(params);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = train_total / static_cast<double>(tr.size());
    evaluate(net, log);
    result.history.push_back(log);
    if (log.validation_loss < best_loss) {
      best_loss = log.validation_loss;
      result.network = net;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

void save_weights(const FilterNetwork& net, const std::string& path) {
  net.validate();
  std::string buf(kMagic, 4);
  put_u32(buf, kWeightVersion);
  put_u32(buf, static_cast<std::uint32_t>(net.m));
  put_u32(buf, static_cast<std::uint32_t>(net.n_branches()));
  put_u32(buf, static_cast<std::uint32_t>(net.backbone.size() + net.head.size()));
  for (const auto* layers : {&net.backbone, &net.head}) {
    for (const auto& l : *layers) {
      put_u32(buf, static_cast<std::uint32_t>(l.weight.rows()));
      put_u32(buf, static_cast<std::uint32_t>(l.weight.cols()));
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_f64(buf, l.weight(r, c));
      }
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_f64(buf, l.bias(r));
    }
  }
  for (Eigen::Index i = 0; i < net.exponent_params.size(); ++i) put_f64(buf, net.exponent_params(i));
  put_f64(buf, net.image_width);
  put_f64(buf, net.image_height);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weight file '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing weight file '" + path + "'");
}

FilterNetwork load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read weight file '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw FormatError("weight file '" + path + "' does not start with NEFS");
  }
  Reader r(data.substr(4));
  const std::uint32_t version = r.u32();
  if (version != kWeightVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  FilterNetwork net;
  net.m = static_cast<int>(r.u32());
  const std::uint32_t n_branches = r.u32();
  const std::uint32_t layers = r.u32();
  if (layers != 5) throw FormatError("expected 5 layers, found " + std::to_string(layers));
  for (std::uint32_t i = 0; i < layers; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
      throw FormatError("implausible layer shape " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index row = 0; row < layer.weight.rows(); ++row) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(row, c) = r.f64();
    }
    for (Eigen::Index row = 0; row < layer.bias.size(); ++row) layer.bias(row) = r.f64();
    (i < 3 ? net.backbone : net.head).push_back(std::move(layer));
  }
  if (n_branches < 2 || n_branches > 16) throw FormatError("implausible branch count");
  net.exponent_params.resize(n_branches);
  for (std::uint32_t i = 0; i < n_branches; ++i) net.exponent_params(i) = r.f64();
  net.image_width = r.f64();
  net.image_height = r.f64();
  if (!r.done()) throw FormatError("weight file has trailing bytes");
  try {
    net.validate();
  } catch (const ShapeMismatch& e) {
    throw FormatError(std::string("weight file: ") + e.what());
  }
  return net;
}

FilterNetwork load_weights(const std::string& path, int expected_m) {
  FilterNetwork net = load_weights(path);
  if (net.m != expected_m) {
    throw FormatError("weight file is for m = " + std::to_string(net.m) + ", expected m = " +
                      std::to_string(expected_m));
  }
  return net;
}

}  // namespace msf
