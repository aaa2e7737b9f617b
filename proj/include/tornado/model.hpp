#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tornado/dataset.hpp"

namespace tornado {

/// Multinomial logistic regression parameters: a K x d weight matrix stored
/// row-major followed by K biases, in one flat vector.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(std::size_t num_classes, std::size_t feature_dim);
  ModelParams(std::size_t num_classes, std::size_t feature_dim, std::vector<double> values);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> weights_row(std::size_t c) const {
    return std::span<const double>(values_).subspan(c * feature_dim_, feature_dim_);
  }
  double bias(std::size_t c) const { return values_[num_classes_ * feature_dim_ + c]; }

  bool all_finite() const;

  /// Serialized size in bytes (8 per parameter).
  std::size_t byte_size() const { return 8 * values_.size(); }

  /// Little-endian IEEE-754 doubles, weights row-major then bias.
  std::vector<std::uint8_t> serialize() const;
  static ModelParams deserialize(std::span<const std::uint8_t> bytes, std::size_t num_classes,
                                 std::size_t feature_dim);

  /// Bit-level equality (distinguishes -0.0 from 0.0, equal NaN payloads compare equal).
  bool bitwise_equal(const ModelParams& other) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<double> values_;
};

/// Model size M in bytes for the given shape.
inline std::uint64_t model_bytes(std::size_t num_classes, std::size_t feature_dim) {
  return 8ULL * (num_classes * feature_dim + num_classes);
}

struct Hyperparams {
  double eta = 0.03;
  /// 0 selects full-batch gradients; otherwise a cyclic window of this size.
  std::size_t minibatch = 0;
  std::size_t steps = 1000;

  void validate() const;
};

/// Examples used by the local update at `step`: the full list, or the cyclic
/// minibatch window starting at (step * minibatch) mod n.
ExampleList select_batch(std::span<const LabeledExample> data, const Hyperparams& hyper, std::size_t step);

/// Mean softmax cross-entropy.
double loss(const ModelParams& params, std::span<const LabeledExample> data);

/// Summed loss and correct predictions over a span; callers divide by `count`
/// after accumulating across shards so the reduction order stays fixed.
struct LossTally {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;

  double mean_loss() const { return loss_sum / static_cast<double>(count); }
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(count); }
};

void accumulate_tally(const ModelParams& params, std::span<const LabeledExample> data, LossTally& tally);

/// Analytic gradient of `loss`, same layout as ModelParams::values().
std::vector<double> gradient(const ModelParams& params, std::span<const LabeledExample> data);

/// params - eta * gradient(params, data).
ModelParams sgd_step(const ModelParams& params, std::span<const LabeledExample> data, double eta);

/// Coordinate-wise convex combination accumulated in ascending index order.
/// Weights must be non-negative and sum to 1 within 1e-9.
ModelParams weighted_average(std::span<const ModelParams> models, std::span<const double> weights);
ModelParams weighted_average(std::span<const ModelParams* const> models, std::span<const double> weights);

/// Seeded Gaussian initialization with the given standard deviation.
ModelParams random_model(std::size_t num_classes, std::size_t feature_dim, double scale, std::uint64_t seed);

/// argmax of the logits; ties go to the lowest class index.
std::size_t predict(const ModelParams& params, std::span<const double> features);

}  // namespace tornado
