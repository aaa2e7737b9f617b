#include "tornado/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "tornado/rng.hpp"

namespace tornado {

ModelParams::ModelParams(std::size_t num_classes, std::size_t feature_dim)
    : num_classes_(num_classes), feature_dim_(feature_dim), values_(num_classes * feature_dim + num_classes, 0.0) {}

ModelParams::ModelParams(std::size_t num_classes, std::size_t feature_dim, std::vector<double> values)
    : num_classes_(num_classes), feature_dim_(feature_dim), values_(std::move(values)) {
  if (values_.size() != num_classes * feature_dim + num_classes)
    throw std::invalid_argument("ModelParams: value count does not match K*d+K");
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<std::uint8_t> ModelParams::serialize() const {
  std::vector<std::uint8_t> out(byte_size());
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values_[i]);
    for (int b = 0; b < 8; ++b) out[8 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

ModelParams ModelParams::deserialize(std::span<const std::uint8_t> bytes, std::size_t num_classes,
                                     std::size_t feature_dim) {
  const std::size_t n = num_classes * feature_dim + num_classes;
  if (bytes.size() != 8 * n) throw std::invalid_argument("ModelParams::deserialize: byte count mismatch");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[8 * i + b]} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return ModelParams(num_classes, feature_dim, std::move(values));
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
  return num_classes_ == other.num_classes_ && feature_dim_ == other.feature_dim_ &&
         values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

void Hyperparams::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("learning rate must be positive");
  if (steps < 1) throw std::invalid_argument("step count must be >= 1");
}

ExampleList select_batch(std::span<const LabeledExample> data, const Hyperparams& hyper, std::size_t step) {
  if (hyper.minibatch == 0 || hyper.minibatch >= data.size()) return {data.begin(), data.end()};
  ExampleList batch;
  batch.reserve(hyper.minibatch);
  const std::size_t start = (step * hyper.minibatch) % data.size();
  for (std::size_t k = 0; k < hyper.minibatch; ++k) batch.push_back(data[(start + k) % data.size()]);
  return batch;
}

namespace {

void check_shape(const ModelParams& params, std::span<const LabeledExample> data) {
  if (data.empty()) throw std::invalid_argument("empty example list");
  if (params.size() != params.num_classes() * params.feature_dim() + params.num_classes() || params.size() == 0)
    throw std::invalid_argument("model has inconsistent shape");
  for (const auto& ex : data) {
    if (ex.features.size() != params.feature_dim())
      throw std::invalid_argument("feature dimension " + std::to_string(ex.features.size()) +
                                  " does not match model dimension " + std::to_string(params.feature_dim()));
    if (ex.label >= params.num_classes()) throw std::invalid_argument("label out of model class range");
  }
}

// Logits W x + b into `z`.
void logits(const ModelParams& params, std::span<const double> x, std::vector<double>& z) {
  const std::size_t k_count = params.num_classes();
  const std::size_t d = params.feature_dim();
  const double* w = params.values().data();
  const double* b = w + k_count * d;
  z.resize(k_count);
  for (std::size_t c = 0; c < k_count; ++c) {
    const double* row = w + c * d;
    double acc = b[c];
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * x[j];
    z[c] = acc;
  }
}

// log sum exp(z), shifted by the max logit.
double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

double loss(const ModelParams& params, std::span<const LabeledExample> data) {
  check_shape(params, data);
  std::vector<double> z;
  double total = 0.0;
  for (const auto& ex : data) {
    logits(params, ex.features, z);
    total += log_sum_exp(z) - z[ex.label];
  }
  return total / static_cast<double>(data.size());
}

void accumulate_tally(const ModelParams& params, std::span<const LabeledExample> data, LossTally& tally) {
  check_shape(params, data);
  std::vector<double> z;
  for (const auto& ex : data) {
    logits(params, ex.features, z);
    tally.loss_sum += log_sum_exp(z) - z[ex.label];
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c)
      if (z[c] > z[best]) best = c;
    if (best == ex.label) ++tally.correct;
    ++tally.count;
  }
}

std::vector<double> gradient(const ModelParams& params, std::span<const LabeledExample> data) {
  check_shape(params, data);
  const std::size_t k_count = params.num_classes();
  const std::size_t d = params.feature_dim();
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> z;
  for (const auto& ex : data) {
    logits(params, ex.features, z);
    const double lse = log_sum_exp(z);
    for (std::size_t c = 0; c < k_count; ++c) {
      const double residual = std::exp(z[c] - lse) - (c == ex.label ? 1.0 : 0.0);
      double* row = grad.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += residual * ex.features[j];
      grad[k_count * d + c] += residual;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (double& g : grad) g *= inv_n;
  return grad;
}

ModelParams sgd_step(const ModelParams& params, std::span<const LabeledExample> data, double eta) {
  const auto grad = gradient(params, data);
  ModelParams next = params;
  auto values = next.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= eta * grad[i];
  return next;
}

ModelParams weighted_average(std::span<const ModelParams* const> models, std::span<const double> weights) {
  if (models.empty()) throw std::invalid_argument("weighted_average: no models");
  if (models.size() != weights.size()) throw std::invalid_argument("weighted_average: weight count mismatch");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("weighted_average: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weighted_average: weights do not sum to 1");
  const ModelParams& first = *models.front();
  for (const ModelParams* m : models)
    if (m->num_classes() != first.num_classes() || m->feature_dim() != first.feature_dim())
      throw std::invalid_argument("weighted_average: dimension mismatch");

  if (models.size() == 1) return first;
  ModelParams out(first.num_classes(), first.feature_dim());
  auto acc = out.values();
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto v = models[m]->values();
    const double w = weights[m];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * v[i];
  }
  return out;
}

ModelParams weighted_average(std::span<const ModelParams> models, std::span<const double> weights) {
  std::vector<const ModelParams*> ptrs;
  ptrs.reserve(models.size());
  for (const auto& m : models) ptrs.push_back(&m);
  return weighted_average(std::span<const ModelParams* const>(ptrs), weights);
}

ModelParams random_model(std::size_t num_classes, std::size_t feature_dim, double scale, std::uint64_t seed) {
  ModelParams params(num_classes, feature_dim);
  Rng rng(seed);
  for (double& v : params.values()) v = scale * rng.normal();
  return params;
}

std::size_t predict(const ModelParams& params, std::span<const double> features) {
  if (features.size() != params.feature_dim()) throw std::invalid_argument("predict: dimension mismatch");
  std::vector<double> z;
  logits(params, features, z);
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.size(); ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

}  // namespace tornado
