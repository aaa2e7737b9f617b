#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "tornado/dataset.hpp"

namespace tornado {

/// Partition of node indices into disjoint, non-empty groups.
class GroupAssignment {
 public:
  GroupAssignment() = default;
  /// Validates: every entry < num_groups and every group non-empty.
  GroupAssignment(std::size_t num_groups, std::vector<std::size_t> membership);

  static GroupAssignment single_group(std::size_t num_nodes);

  std::size_t num_groups() const { return num_groups_; }
  std::size_t num_nodes() const { return membership_.size(); }
  std::size_t group_of(std::size_t node) const { return membership_.at(node); }
  const std::vector<std::size_t>& membership() const { return membership_; }

  /// Node ids per group, ascending.
  std::vector<std::vector<std::size_t>> members() const;
  std::vector<std::size_t> group_sizes() const;

  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;

 private:
  std::size_t num_groups_ = 0;
  std::vector<std::size_t> membership_;
};

struct GroupingCostReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::size_t iterations = 0;
  /// Mean association cost after the initial assignment and after each accepted iteration.
  std::vector<double> cost_trace;

  /// (initial - final) / final: the convention behind the published
  /// "x% reduced" clustering figures. Infinite when final is 0 and initial is not.
  double reduction() const;
};

struct GroupingResult {
  GroupAssignment assignment;
  GroupingCostReport report;
};

/// L1 distance between class histograms, in [0, 2].
double emd(const ClassDistribution& p, const ClassDistribution& q);

/// Mutable search state handed to the cost functions.
struct GroupingState {
  static constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();

  std::size_t num_groups = 0;
  std::vector<ClassDistribution> node_dists;
  std::vector<std::vector<double>> node_counts;
  ClassDistribution global_dist;

  std::vector<std::size_t> medoids;                ///< medoid node per group
  std::vector<std::size_t> membership;             ///< group per node, or kUnassigned
  std::vector<std::vector<double>> group_counts;   ///< summed label counts per group

  std::size_t num_nodes() const { return node_dists.size(); }
  std::vector<std::size_t> members_of(std::size_t group) const;
  void assign(std::size_t node, std::size_t group);
  void unassign(std::size_t node);
};

GroupingState make_grouping_state(const FederatedDataset& fed, std::size_t num_groups);

using GroupCost = std::function<double(std::size_t node, std::size_t group, const GroupingState& state)>;

struct GroupSearch {
  std::size_t max_iters = 100;
  /// Independent medoid draws; the one with the lowest final cost wins (earliest on ties).
  std::size_t restarts = 8;
  /// Medoids stay in their own group during assignment passes.
  bool anchor_medoids = false;
  /// When set, assignment passes minimize this score instead of cost_a.
  GroupCost assign_score;
};

/// Medoid-seeded local search shared by all grouping schemes.
///
/// Medoids are a seeded sample of distinct nodes that also seed their groups.
/// An assignment pass visits every node in ascending order and moves it to
/// argmin_k cost_a (ties: lowest k), updating the state immediately; groups
/// left empty are then repaired. Each iteration recomputes medoids as argmin
/// over members of cost_u (ties: lowest node) and reruns the pass. An
/// iteration is kept only if the mean association cost drops by at least
/// 1e-9; the loop stops otherwise or after `max_iters` iterations. The report
/// describes the winning restart.
GroupingResult group(const FederatedDataset& fed, std::size_t num_groups, const GroupCost& cost_a,
                     const GroupCost& cost_u, std::uint64_t seed, const GroupSearch& search = {});

/// Groups whose pooled label distribution is close to the global one. Medoids
/// are anchored: they only seed groups, since cost_a ignores them.
/// cost_a(i,k) = EMD(pool(N^k \ {i} + {i}), global); cost_u(i,k) = EMD(D^i, global).
GroupingResult group_by_iid(const FederatedDataset& fed, std::size_t num_groups, std::uint64_t seed);

/// k-medoids clustering of node label distributions.
/// cost_a(i,k) = EMD(D^i, D^{medoid_k}); cost_u(i,k) = sum over members j of EMD(D^i, D^j).
GroupingResult cluster(const FederatedDataset& fed, std::size_t num_groups, std::uint64_t seed);

/// Seeded shuffle dealt round-robin: sizes differ by at most one.
GroupAssignment random_grouping(std::size_t num_nodes, std::size_t num_groups, std::uint64_t seed);

/// Group count for a target group size: ceil(num_nodes / group_size).
std::size_t groups_for_size(std::size_t num_nodes, std::size_t group_size);

namespace detail {

/// Moves nodes into empty groups: repeatedly takes the node with the highest
/// association cost from the largest group (lowest index on ties).
void repair_empty_groups(std::vector<std::size_t>& membership, std::size_t num_groups,
                         std::span<const double> association_cost);

}  // namespace detail

}  // namespace tornado
