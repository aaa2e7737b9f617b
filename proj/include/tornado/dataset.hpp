#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tornado {

struct LabeledExample {
  std::vector<double> features;
  std::size_t label = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

using ExampleList = std::vector<LabeledExample>;

struct NodeDataset {
  std::size_t node_id = 0;
  ExampleList examples;

  friend bool operator==(const NodeDataset&, const NodeDataset&) = default;
};

/// Per-node shards plus the global class/feature metadata.
struct FederatedDataset {
  std::vector<NodeDataset> nodes;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t total_examples() const;
  std::vector<std::size_t> node_sizes() const;

  /// All examples concatenated in ascending node order.
  ExampleList pooled() const;

  /// Throws std::invalid_argument if ids have gaps, a node is empty, a label is
  /// out of range, dimensions disagree or a feature is not finite.
  void validate() const;

  friend bool operator==(const FederatedDataset&, const FederatedDataset&) = default;
};

/// Empirical label frequencies.
struct ClassDistribution {
  std::vector<double> probs;
};

ClassDistribution class_distribution(std::span<const LabeledExample> examples, std::size_t num_classes);

/// Per-class label counts; the pooled distribution of several nodes is the
/// normalized sum of their counts.
std::vector<double> class_counts(std::span<const LabeledExample> examples, std::size_t num_classes);

/// Synthetic Gaussian-mixture classification shards.
///
/// Node i draws each label from a mixture: with probability `skew` its home
/// class (i mod K), otherwise uniform over all K classes. Features are the
/// class mean plus unit-variance Gaussian noise. Class means are seed-derived
/// unit vectors scaled by `class_separation`.
struct SyntheticSpec {
  std::size_t num_nodes = 20;
  std::size_t num_classes = 10;
  std::size_t feature_dim = 32;
  std::size_t examples_per_node = 200;
  std::size_t test_examples_per_node = 50;
  double skew = 0.8;
  double class_separation = 1.0;

  void validate() const;
};

FederatedDataset generate_synthetic(std::size_t num_nodes, std::size_t num_classes, std::size_t feature_dim,
                                    std::size_t examples_per_node, double skew, std::uint64_t seed);

struct TrainTestSplit {
  FederatedDataset train;
  FederatedDataset test;
};

/// Train and test shards sharing class means and per-node label mixtures.
TrainTestSplit generate_synthetic_split(const SyntheticSpec& spec, std::uint64_t seed);

/// Label-sorted shard partitioning. The pool is stably sorted by label,
/// truncated to a multiple of num_nodes * shards_per_node, cut into contiguous
/// shards, and shards are dealt to nodes by a seeded permutation.
/// `num_classes` = 0 infers K as max label + 1.
FederatedDataset partition_by_shards(ExampleList pool, std::size_t num_nodes, std::size_t shards_per_node,
                                     std::uint64_t seed, std::size_t num_classes = 0);

/// Seeded shuffle followed by an even split (the IID reference partition).
FederatedDataset partition_iid(ExampleList pool, std::size_t num_nodes, std::uint64_t seed,
                               std::size_t num_classes = 0);

/// Reads an IDX image/label file pair. Pixels are scaled by 1/255.
/// Throws parse_error naming the offending field.
ExampleList load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes an IDX pair. Features are mapped back to bytes by round(255 * x),
/// clamped to [0, 255]; `rows * cols` must equal the feature dimension.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const LabeledExample> examples, std::uint32_t rows, std::uint32_t cols);

/// Text dump that round-trips doubles exactly. First line
/// "# tornado-dataset classes=K features=d nodes=N", then
/// "node,label,x0,...,x{d-1}" and one row per example in node order.
void write_dataset_csv(const std::filesystem::path& path, const FederatedDataset& fed);
FederatedDataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace tornado
