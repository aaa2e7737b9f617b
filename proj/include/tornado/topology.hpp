#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tornado/grouping.hpp"

namespace tornado {

enum class GlobalLevel { Star, Ring, None };
enum class GroupLevel { Star, Ring, Flat };
enum class GroupingScheme { IID, Cluster, Random, SingleGroup };

/// The eight architectures spanned by (global level) x (group level).
enum class Architecture { STAR, RING, STAR_stars, STAR_rings, RING_stars, RING_rings, stars, rings };

std::string_view to_string(Architecture arch);
std::string_view to_string(GroupingScheme scheme);
/// Accepts "STAR", "star", "STAR-rings", "star-rings", "rings", ... Throws std::invalid_argument.
Architecture parse_architecture(std::string_view name);
GroupingScheme parse_grouping_scheme(std::string_view name);

struct ArchitectureConfig {
  GlobalLevel global_level = GlobalLevel::Star;
  GroupLevel group_level = GroupLevel::Flat;
  GroupingScheme grouping_scheme = GroupingScheme::SingleGroup;
  std::size_t num_groups = 1;
  std::size_t chains = 1;
  std::size_t tau1 = 10;   ///< group interval (consensus group architectures)
  std::size_t tau2 = 10;   ///< group rounds per global interval
  std::size_t tau = 100;   ///< sync interval of flat and pluralistic architectures

  static ArchitectureConfig make(Architecture arch);

  Architecture architecture() const;
  bool is_flat() const { return group_level == GroupLevel::Flat; }
  bool is_pluralistic() const { return global_level == GlobalLevel::None; }
  bool is_consensus_group() const { return !is_flat() && !is_pluralistic(); }

  /// Steps between two global events (flat, consensus) or group events (pluralistic).
  std::size_t round_length() const;

  /// Structural checks independent of the dataset.
  void validate() const;
  /// Adds node-count checks (num_groups <= nodes, flat chains <= nodes).
  void validate(std::size_t num_nodes) const;

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

/// Cyclic order over items; position p maps to order[p mod period].
struct Ring {
  std::vector<std::size_t> order;

  std::size_t period() const { return order.size(); }
  std::size_t at(std::size_t position) const { return order[position % order.size()]; }

  friend bool operator==(const Ring&, const Ring&) = default;
};

/// Seeded uniform permutation of 0..num_items-1.
Ring build_ring(std::size_t num_items, std::uint64_t seed);

/// All rings an architecture may traverse. Group rings hold node ids.
struct TopologyRings {
  Ring flat;                 ///< over all nodes
  Ring global;               ///< over group ids
  std::vector<Ring> groups;  ///< one per group, independent permutations of its members
};

TopologyRings build_rings(const GroupAssignment& grouping, std::uint64_t seed);

enum class SyncKind {
  Aggregate,  ///< data-weighted average of the sources written to every target
  Transfer,   ///< the single source model copied to the targets
};

struct SyncEvent {
  SyncKind kind = SyncKind::Aggregate;
  std::size_t chain = 0;
  std::vector<std::size_t> sources;
  std::vector<std::size_t> targets;

  friend bool operator==(const SyncEvent&, const SyncEvent&) = default;
};

struct ActiveNode {
  std::size_t group = 0;
  std::size_t node = 0;

  friend bool operator==(const ActiveNode&, const ActiveNode&) = default;
};

/// Work for step t (0-based): active nodes take one local update, then the
/// sync events at boundary t+1 are applied. Every event sends one model per
/// source, so bytes = M * total sources.
struct StepPlan {
  std::size_t step = 0;
  std::vector<ActiveNode> active;
  std::vector<SyncEvent> group_syncs;
  std::vector<SyncEvent> global_syncs;
  std::uint64_t bytes = 0;

  friend bool operator==(const StepPlan&, const StepPlan&) = default;
};

/// Per-step activity and communication for one architecture.
class Scheduler {
 public:
  Scheduler(ArchitectureConfig cfg, const GroupAssignment& grouping, TopologyRings rings,
            std::uint64_t model_bytes);

  StepPlan plan(std::size_t step) const;

  /// Chains actually run on group k's ring: min(C, |N^k|).
  std::size_t chains_in_group(std::size_t group) const;

  const ArchitectureConfig& config() const { return cfg_; }
  const std::vector<std::vector<std::size_t>>& members() const { return members_; }

 private:
  void aggregate_all(StepPlan& plan, std::vector<SyncEvent>& out) const;

  ArchitectureConfig cfg_;
  std::vector<std::vector<std::size_t>> members_;
  TopologyRings rings_;
  std::uint64_t model_bytes_;
  std::size_t num_nodes_;
};

std::vector<StepPlan> schedule(const ArchitectureConfig& cfg, const GroupAssignment& grouping,
                               const TopologyRings& rings, std::size_t steps, std::uint64_t model_bytes);

struct CommReport {
  std::uint64_t total_bytes = 0;
  std::size_t rounds = 0;
  double bytes_per_round = 0.0;
  /// Most nodes active at once; each holds one outbound link at the next sync.
  std::uint64_t peak_concurrent_links = 0;
};

/// Closed-form communication totals. `steps` must be a whole number of rounds.
/// Group sizes and the global ring order enter only where groups are unequal.
CommReport comm_cost(const ArchitectureConfig& cfg, std::uint64_t model_bytes, std::size_t steps,
                     const GroupAssignment& grouping, const Ring& global_ring);

/// Sums bytes and peak active count over an explicit schedule.
CommReport measure_schedule(const std::vector<StepPlan>& plans, const ArchitectureConfig& cfg);

}  // namespace tornado
