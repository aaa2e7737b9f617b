#include "tornado/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tornado/error.hpp"
#include "tornado/rng.hpp"

namespace tornado {

std::size_t FederatedDataset::total_examples() const {
  std::size_t total = 0;
  for (const auto& node : nodes) total += node.examples.size();
  return total;
}

std::vector<std::size_t> FederatedDataset::node_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(nodes.size());
  for (const auto& node : nodes) sizes.push_back(node.examples.size());
  return sizes;
}

ExampleList FederatedDataset::pooled() const {
  ExampleList all;
  all.reserve(total_examples());
  for (const auto& node : nodes) all.insert(all.end(), node.examples.begin(), node.examples.end());
  return all;
}

void FederatedDataset::validate() const {
  if (nodes.empty()) throw std::invalid_argument("dataset has no nodes");
  if (num_classes < 1) throw std::invalid_argument("dataset has no classes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    if (node.node_id != i) throw std::invalid_argument("node ids must be 0..n-1 without gaps");
    if (node.examples.empty()) throw std::invalid_argument("node " + std::to_string(i) + " has no examples");
    for (const auto& ex : node.examples) {
      if (ex.label >= num_classes) throw std::invalid_argument("label out of range on node " + std::to_string(i));
      if (ex.features.size() != feature_dim)
        throw std::invalid_argument("feature dimension mismatch on node " + std::to_string(i));
      for (double v : ex.features)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature on node " + std::to_string(i));
    }
  }
}

std::vector<double> class_counts(std::span<const LabeledExample> examples, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (const auto& ex : examples) {
    if (ex.label >= num_classes) throw std::invalid_argument("class_counts: label out of range");
    counts[ex.label] += 1.0;
  }
  return counts;
}

ClassDistribution class_distribution(std::span<const LabeledExample> examples, std::size_t num_classes) {
  if (examples.empty()) throw std::invalid_argument("class_distribution: empty example list");
  auto counts = class_counts(examples, num_classes);
  const double n = static_cast<double>(examples.size());
  for (double& c : counts) c /= n;
  return {std::move(counts)};
}

void SyntheticSpec::validate() const {
  if (num_nodes < 1) throw std::invalid_argument("synthetic data: num_nodes must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("synthetic data: num_classes must be >= 2");
  if (feature_dim < 1) throw std::invalid_argument("synthetic data: feature_dim must be >= 1");
  if (examples_per_node < 1) throw std::invalid_argument("synthetic data: examples_per_node must be >= 1");
  if (!(skew >= 0.0 && skew <= 1.0)) throw std::invalid_argument("synthetic data: skew must lie in [0, 1]");
  if (!(class_separation > 0.0) || !std::isfinite(class_separation))
    throw std::invalid_argument("synthetic data: class_separation must be positive");
}

namespace {

std::vector<std::vector<double>> class_means(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "means"));
  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.feature_dim));
  for (auto& mean : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : mean) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    const double scale = spec.class_separation / std::sqrt(norm);
    for (double& v : mean) v *= scale;
  }
  return means;
}

FederatedDataset sample_nodes(const SyntheticSpec& spec, const std::vector<std::vector<double>>& means,
                              std::uint64_t seed, std::string_view stream, std::size_t per_node) {
  FederatedDataset fed;
  fed.num_classes = spec.num_classes;
  fed.feature_dim = spec.feature_dim;
  fed.nodes.resize(spec.num_nodes);
  for (std::size_t i = 0; i < spec.num_nodes; ++i) {
    Rng rng(derive_seed(seed, stream, i));
    const std::size_t home = i % spec.num_classes;
    auto& node = fed.nodes[i];
    node.node_id = i;
    node.examples.resize(per_node);
    for (auto& ex : node.examples) {
      const bool pinned = rng.uniform() < spec.skew;
      ex.label = pinned ? home : static_cast<std::size_t>(rng.below(spec.num_classes));
      ex.features = means[ex.label];
      for (double& v : ex.features) v += rng.normal();
    }
  }
  return fed;
}

}  // namespace

FederatedDataset generate_synthetic(std::size_t num_nodes, std::size_t num_classes, std::size_t feature_dim,
                                    std::size_t examples_per_node, double skew, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_nodes = num_nodes;
  spec.num_classes = num_classes;
  spec.feature_dim = feature_dim;
  spec.examples_per_node = examples_per_node;
  spec.test_examples_per_node = 0;
  spec.skew = skew;
  spec.validate();
  return sample_nodes(spec, class_means(spec, seed), seed, "train", examples_per_node);
}

TrainTestSplit generate_synthetic_split(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.test_examples_per_node < 1)
    throw std::invalid_argument("synthetic data: test_examples_per_node must be >= 1");
  const auto means = class_means(spec, seed);
  return {sample_nodes(spec, means, seed, "train", spec.examples_per_node),
          sample_nodes(spec, means, seed, "test", spec.test_examples_per_node)};
}

namespace {

std::size_t infer_classes(const ExampleList& pool, std::size_t num_classes) {
  std::size_t max_label = 0;
  for (const auto& ex : pool) max_label = std::max(max_label, ex.label);
  if (num_classes == 0) return max_label + 1;
  if (max_label >= num_classes) throw std::invalid_argument("partition: label exceeds num_classes");
  return num_classes;
}

}  // namespace

FederatedDataset partition_by_shards(ExampleList pool, std::size_t num_nodes, std::size_t shards_per_node,
                                     std::uint64_t seed, std::size_t num_classes) {
  if (num_nodes < 1 || shards_per_node < 1)
    throw std::invalid_argument("partition_by_shards: num_nodes and shards_per_node must be >= 1");
  const std::size_t num_shards = num_nodes * shards_per_node;
  if (pool.size() < num_shards)
    throw std::invalid_argument("partition_by_shards: pool has fewer examples than shards");

  FederatedDataset fed;
  fed.num_classes = infer_classes(pool, num_classes);
  fed.feature_dim = pool.front().features.size();

  std::stable_sort(pool.begin(), pool.end(),
                   [](const LabeledExample& a, const LabeledExample& b) { return a.label < b.label; });
  const std::size_t shard_size = pool.size() / num_shards;

  std::vector<std::size_t> shard_order(num_shards);
  std::iota(shard_order.begin(), shard_order.end(), 0);
  Rng rng(derive_seed(seed, "shards"));
  rng.shuffle(shard_order);

  fed.nodes.resize(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    auto& node = fed.nodes[i];
    node.node_id = i;
    node.examples.reserve(shard_size * shards_per_node);
    for (std::size_t s = 0; s < shards_per_node; ++s) {
      const std::size_t shard = shard_order[i * shards_per_node + s];
      auto first = pool.begin() + static_cast<std::ptrdiff_t>(shard * shard_size);
      std::move(first, first + static_cast<std::ptrdiff_t>(shard_size), std::back_inserter(node.examples));
    }
  }
  return fed;
}

FederatedDataset partition_iid(ExampleList pool, std::size_t num_nodes, std::uint64_t seed,
                               std::size_t num_classes) {
  if (num_nodes < 1) throw std::invalid_argument("partition_iid: num_nodes must be >= 1");
  if (pool.size() < num_nodes) throw std::invalid_argument("partition_iid: pool has fewer examples than nodes");
  FederatedDataset fed;
  fed.num_classes = infer_classes(pool, num_classes);
  fed.feature_dim = pool.front().features.size();

  Rng rng(derive_seed(seed, "iid"));
  rng.shuffle(pool);
  const std::size_t per_node = pool.size() / num_nodes;
  fed.nodes.resize(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    fed.nodes[i].node_id = i;
    auto first = pool.begin() + static_cast<std::ptrdiff_t>(i * per_node);
    fed.nodes[i].examples.assign(std::make_move_iterator(first),
                                 std::make_move_iterator(first + static_cast<std::ptrdiff_t>(per_node)));
  }
  return fed;
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path, const std::string& field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error(field, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& field) {
  if (bytes.size() < offset + 4) throw parse_error(field, "truncated header: missing " + field);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

ExampleList load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path, "image file");
  const auto labels = read_file(labels_path, "label file");

  if (read_be32(images, 0, "image magic") != kImageMagic) throw parse_error("image magic", "bad image magic");
  const std::uint32_t count = read_be32(images, 4, "image count");
  const std::uint32_t rows = read_be32(images, 8, "image rows");
  const std::uint32_t cols = read_be32(images, 12, "image cols");

  if (read_be32(labels, 0, "label magic") != kLabelMagic) throw parse_error("label magic", "bad label magic");
  const std::uint32_t label_count = read_be32(labels, 4, "label count");
  if (label_count != count)
    throw parse_error("count", "count mismatch: " + std::to_string(count) + " images vs " +
                                   std::to_string(label_count) + " labels");

  const std::size_t pixels = std::size_t{rows} * cols;
  if (images.size() < 16 + std::size_t{count} * pixels) throw parse_error("image data", "truncated image data");
  if (labels.size() < 8 + std::size_t{count}) throw parse_error("label data", "truncated label data");

  ExampleList out(count);
  for (std::size_t n = 0; n < count; ++n) {
    auto& ex = out[n];
    ex.label = labels[8 + n];
    ex.features.resize(pixels);
    const unsigned char* px = images.data() + 16 + n * pixels;
    for (std::size_t p = 0; p < pixels; ++p) ex.features[p] = static_cast<double>(px[p]) / 255.0;
  }
  return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const LabeledExample> examples, std::uint32_t rows, std::uint32_t cols) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("write_idx: cannot open output files");
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(examples.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(examples.size()));
  for (const auto& ex : examples) {
    if (ex.features.size() != std::size_t{rows} * cols) throw std::invalid_argument("write_idx: dimension mismatch");
    if (ex.label > 255) throw std::invalid_argument("write_idx: label does not fit in a byte");
    for (double v : ex.features) {
      const double b = std::clamp(std::round(v * 255.0), 0.0, 255.0);
      img.put(static_cast<char>(static_cast<unsigned char>(b)));
    }
    lab.put(static_cast<char>(static_cast<unsigned char>(ex.label)));
  }
}

}  // namespace tornado

namespace tornado {

void write_dataset_csv(const std::filesystem::path& path, const FederatedDataset& fed) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "# tornado-dataset classes=" << fed.num_classes << " features=" << fed.feature_dim
      << " nodes=" << fed.num_nodes() << "\n";
  out << "node,label";
  for (std::size_t j = 0; j < fed.feature_dim; ++j) out << ",x" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < fed.num_nodes(); ++i) {
    for (const auto& ex : fed.nodes[i].examples) {
      out << i << ',' << ex.label;
      for (double x : ex.features) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FederatedDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw parse_error("header", "missing dataset header in " + path.string());
  std::size_t k = 0, d = 0, n = 0;
  if (std::sscanf(line.c_str(), "# tornado-dataset classes=%zu features=%zu nodes=%zu", &k, &d, &n) != 3)
    throw parse_error("header", "bad dataset header in " + path.string());
  if (!std::getline(in, line) || line.rfind("node,label", 0) != 0)
    throw parse_error("columns", "missing column line in " + path.string());

  FederatedDataset fed;
  fed.num_classes = k;
  fed.feature_dim = d;
  fed.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) fed.nodes[i].node_id = i;
  std::size_t row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string where = "row " + std::to_string(row);
    const char* p = line.c_str();
    char* end = nullptr;
    const unsigned long long node = std::strtoull(p, &end, 10);
    if (end == p || *end != ',' || node >= n) throw parse_error("node", "bad node id at " + where);
    p = end + 1;
    const unsigned long long label = std::strtoull(p, &end, 10);
    if (end == p || label >= k) throw parse_error("label", "bad label at " + where);
    LabeledExample ex;
    ex.label = static_cast<std::size_t>(label);
    ex.features.reserve(d);
    for (std::size_t j = 0; j < d; ++j) {
      if (*end != ',') throw parse_error("features", "too few features at " + where);
      p = end + 1;
      const double x = std::strtod(p, &end);
      if (end == p) throw parse_error("features", "bad feature value at " + where);
      ex.features.push_back(x);
    }
    if (*end != '\0') throw parse_error("features", "too many columns at " + where);
    fed.nodes[node].examples.push_back(std::move(ex));
  }
  return fed;
}

}  // namespace tornado
