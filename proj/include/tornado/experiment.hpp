#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tornado/dataset.hpp"
#include "tornado/engine.hpp"
#include "tornado/model.hpp"
#include "tornado/topology.hpp"

namespace tornado {

/// A named architecture recipe. Group count is derived from the node count.
struct Preset {
  std::string name;
  Architecture arch = Architecture::STAR;
  GroupingScheme scheme = GroupingScheme::SingleGroup;
  std::size_t group_size = 0;  ///< 0 for flat architectures
  std::size_t chains = 1;
  std::size_t tau1 = 10;
  std::size_t tau2 = 10;
  std::size_t tau = 100;
};

/// FedAvg, HierFAVG, Astraea, MM-PSGD, Tornado, Tornadoes, IFCA, SemiCyclic, Tornado-rings.
const std::vector<Preset>& standard_presets();
const Preset& find_preset(const std::string& name);

/// Config for `num_nodes` nodes. `num_groups` overrides ceil(num_nodes / group_size).
/// Chains are reduced to the largest count valid at this size.
ArchitectureConfig preset_config(const Preset& preset, std::size_t num_nodes,
                                 std::optional<std::size_t> num_groups = std::nullopt);

enum class DataSource { Synthetic, Csv, Idx };

struct DataSpec {
  DataSource source = DataSource::Synthetic;
  SyntheticSpec synthetic;
  std::string train_csv;
  std::string test_csv;
  std::string idx_train_images;
  std::string idx_train_labels;
  std::string idx_test_images;
  std::string idx_test_labels;
  std::size_t shards_per_node = 2;  ///< IDX pools are label-sharded across nodes
};

/// Train/test shards for the data spec. `num_nodes` overrides the node count
/// for synthetic and IDX sources.
TrainTestSplit load_data(const DataSpec& spec, std::uint64_t seed, std::optional<std::size_t> num_nodes = std::nullopt);

struct ExperimentSpec {
  DataSpec data;
  Hyperparams hyper;
  std::size_t eval_every = 10;

  /// Single-run architecture; `centralized` selects the pooled-data oracle instead.
  ArchitectureConfig arch = default_arch();
  bool centralized = false;

  std::vector<std::string> presets;  ///< comparison set, standard_presets() order by default
  std::vector<std::size_t> sweep_nodes{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<std::string> sweep_presets{"FedAvg", "Tornadoes"};
  std::size_t seeds = 1;
  double target_accuracy = 0.0;  ///< 0: the smallest sweep run's final train accuracy
  std::size_t step_cap = 1000;
  std::size_t threads = 0;  ///< 0: hardware concurrency
  std::size_t diagnose_probes = 64;

  static ArchitectureConfig default_arch();
  static std::vector<std::string> default_presets();

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct PresetOutcome {
  std::string name;
  ArchitectureConfig arch;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  RunResult result;
};

struct SweepRow {
  std::string preset;
  std::size_t nodes = 0;
  std::size_t num_groups = 0;
  double bytes_per_round = 0.0;
  std::uint64_t peak_links = 0;
  double target_accuracy = 0.0;
  bool reached = false;
  std::size_t steps_to_target = 0;
  std::uint64_t bytes_to_target = 0;
  double relative_bytes_per_round = 0.0;  ///< against the smallest node count
  double relative_bytes_to_target = 0.0;
};

struct ComparisonReport {
  std::uint64_t seed = 0;
  std::vector<PresetOutcome> runs;  ///< seed-major, then preset order
  std::vector<SweepRow> sweep;
};

/// Runs every preset on one dataset per seed (seed, seed+1, ...).
ComparisonReport run_comparison(const ExperimentSpec& spec, std::uint64_t seed);

/// Exact bytes per round and bytes until `target_accuracy` train accuracy for
/// each sweep preset and node count. The group count stays at its value for
/// the smallest node count. A non-positive target selects the default.
ComparisonReport run_scalability_sweep(const ExperimentSpec& spec, double target_accuracy, std::uint64_t seed);

/// preset,step,train_loss,train_acc,test_loss,test_acc,cum_bytes,ring_variance
std::string curves_csv(const ComparisonReport& report);
std::string sweep_csv(const ComparisonReport& report);
std::string summary_json(const ComparisonReport& report);

}  // namespace tornado
