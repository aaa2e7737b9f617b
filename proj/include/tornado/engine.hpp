#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tornado/dataset.hpp"
#include "tornado/grouping.hpp"
#include "tornado/model.hpp"
#include "tornado/topology.hpp"

namespace tornado {

/// Divergences at a single model (the readout), weighted by data size.
struct DivergenceSnapshot {
  double delta = 0.0;
  double Delta = 0.0;
  double D = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t cum_comm_bytes = 0;
  double ring_variance = 0.0;
  DivergenceSnapshot divergence;
};

struct RunResult {
  std::vector<EvalRecord> records;
  ModelParams final_model;
  /// One model per group for pluralistic architectures, empty otherwise.
  std::vector<ModelParams> final_group_models;
  /// Every node's model at the last executed step, in node order.
  std::vector<ModelParams> node_models;
  GroupAssignment grouping;
  std::optional<GroupingCostReport> grouping_report;
  std::uint64_t total_bytes = 0;
  std::uint64_t peak_active = 0;
  std::size_t steps_run = 0;
  bool stopped_early = false;
};

/// Called after each step's syncs with the plan and all node models.
using StepObserver = std::function<void(const StepPlan&, std::span<const ModelParams>)>;

struct RunOptions {
  std::size_t eval_every = 10;
  StepObserver observer;
  /// Replaces the grouping the config's scheme would produce.
  std::optional<GroupAssignment> grouping;
  /// Ring variance and divergence snapshot per record.
  bool compute_diagnostics = true;
  /// Checked after every record; returning true ends the run.
  std::function<bool(const EvalRecord&)> stop_when;
};

/// Grouping for cfg.grouping_scheme, seeded from the "grouping" sub-stream.
GroupingResult make_grouping(const ArchitectureConfig& cfg, const FederatedDataset& train, std::uint64_t seed);

/// w0: Gaussian with standard deviation 0.01 from the "init" sub-stream.
ModelParams initial_model(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed);

/// Data-weighted average of node models; a bitwise copy when all are identical.
ModelParams consensus_model(std::span<const ModelParams> node_models, const FederatedDataset& train);

/// Data-weighted average of each group's member models.
std::vector<ModelParams> group_models(std::span<const ModelParams> node_models, const FederatedDataset& train,
                                      const GroupAssignment& grouping);

/// One model over every node shard in ascending order.
LossTally evaluate(const ModelParams& model, const FederatedDataset& data);
LossTally evaluate(const ModelParams& model, std::span<const LabeledExample> data);

/// Each group model over its members' shards, summed before dividing.
LossTally evaluate_pluralistic(std::span<const ModelParams> group_models, const GroupAssignment& grouping,
                               const FederatedDataset& data);

/// Trains `cfg` for hyper.steps steps. `test` holds one shard per node when
/// the architecture is pluralistic; otherwise any shard layout is accepted.
RunResult run(const ArchitectureConfig& cfg, const FederatedDataset& train, const FederatedDataset& test,
              const Hyperparams& hyper, std::uint64_t seed, const RunOptions& options = {});

/// Full-batch gradient descent on the pooled training data.
RunResult run_centralized(const FederatedDataset& train, const FederatedDataset& test, const Hyperparams& hyper,
                          std::uint64_t seed, const RunOptions& options = {});

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<ModelParams> models;
};

/// "TORN", u32 version, u32 K, u32 d_in, u64 step, then each model in node order.
/// The model count follows from the remaining length.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tornado
