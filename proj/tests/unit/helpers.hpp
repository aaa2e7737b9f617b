#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "tornado/dataset.hpp"
#include "tornado/grouping.hpp"
#include "tornado/rng.hpp"
#include "tornado/topology.hpp"

namespace tornado::test {

/// Node i holds `per_node` copies of label labels[i]; features are a one-hot of the label.
inline FederatedDataset one_hot_nodes(const std::vector<std::size_t>& labels, std::size_t num_classes,
                                      std::size_t per_node) {
  FederatedDataset fed;
  fed.num_classes = num_classes;
  fed.feature_dim = num_classes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    NodeDataset node;
    node.node_id = i;
    for (std::size_t j = 0; j < per_node; ++j) {
      LabeledExample ex;
      ex.features.assign(num_classes, 0.0);
      ex.features[labels[i]] = 1.0;
      ex.label = labels[i];
      node.examples.push_back(ex);
    }
    fed.nodes.push_back(std::move(node));
  }
  return fed;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tornado_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct ArchCase {
  ArchitectureConfig cfg;
  GroupAssignment grouping;
  TopologyRings rings;
  std::size_t steps = 0;
};

/// Random valid configuration of `arch` with small intervals and a whole number of rounds.
inline ArchCase random_arch_case(Architecture arch, Rng& rng, std::size_t min_nodes = 2, std::size_t max_nodes = 30) {
  for (;;) {
    ArchCase c;
    c.cfg = ArchitectureConfig::make(arch);
    const std::size_t n = min_nodes + rng.below(max_nodes - min_nodes + 1);
    if (!c.cfg.is_flat()) {
      c.cfg.num_groups = 1 + rng.below(std::min<std::size_t>(n, 6));
      c.cfg.grouping_scheme = GroupingScheme::Random;
    }
    c.cfg.chains = 1 + rng.below(3);
    c.cfg.tau = 1 + rng.below(4);
    c.cfg.tau1 = 1 + rng.below(4);
    c.cfg.tau2 = 1 + rng.below(4);
    try {
      c.cfg.validate(n);
    } catch (const std::invalid_argument&) {
      continue;
    }
    c.grouping = c.cfg.num_groups == 1 ? GroupAssignment::single_group(n)
                                       : random_grouping(n, c.cfg.num_groups, rng.next_u64());
    const auto sizes = c.grouping.group_sizes();
    if (c.cfg.group_level == GroupLevel::Ring && c.cfg.global_level != GlobalLevel::Ring &&
        c.cfg.chains > *std::max_element(sizes.begin(), sizes.end()))
      continue;
    c.rings = build_rings(c.grouping, rng.next_u64());
    c.steps = c.cfg.round_length() * (1 + rng.below(12));
    return c;
  }
}

}  // namespace tornado::test
