#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "tornado/dataset.hpp"
#include "tornado/grouping.hpp"
#include "tornado/model.hpp"
#include "tornado/topology.hpp"

namespace tornado {

struct DivergenceEstimate {
  double delta = 0.0;  ///< local-to-group
  double Delta = 0.0;  ///< group-to-global
  double D = 0.0;      ///< local-to-global
  std::vector<double> per_node_delta;
  std::vector<double> per_group_Delta;
  std::vector<double> per_node_D;
  std::size_t probes = 0;
};

/// Max over probes of gradient gaps between nesting levels, aggregated with
/// data-size weights. Group and global gradients are data-weighted means of
/// node gradients.
DivergenceEstimate estimate_divergences(const FederatedDataset& fed, const GroupAssignment& grouping,
                                        std::span<const ModelParams> probes);

struct SmoothnessEstimate {
  double beta_hat = 0.0;
  double rho_hat = 0.0;
  std::size_t probes = 0;  ///< pairs actually used
};

/// Running maxima of gradient and loss difference quotients of the pooled
/// objective. Pairs with coincident members are skipped.
SmoothnessEstimate estimate_smoothness(const FederatedDataset& fed,
                                       std::span<const std::pair<ModelParams, ModelParams>> pairs);

struct HBound {
  double value = 0.0;
  bool saturated = false;  ///< true when the result overflowed; value is then +inf
};

/// (eta*beta + 1)^t - 1 via expm1(t * log1p(eta*beta)).
HBound h_bound(double eta, double beta, std::size_t t);

enum class VarianceLevel {
  Flat,    ///< nodes over the whole dataset
  Group,   ///< nodes within each group, combined with group data weights
  Global,  ///< groups, each represented by its pooled gradient
};

/// Weighted second moment of per-unit gradients minus the squared norm of
/// their weighted mean. `grouping` is required for Group and Global.
double ring_variance(const FederatedDataset& fed, const ModelParams& params, const GroupAssignment* grouping,
                     VarianceLevel level);

/// Level whose units a ring architecture iterates over.
VarianceLevel variance_level(Architecture arch);

/// `count` Gaussian models with the given scale, one sub-stream per probe.
std::vector<ModelParams> random_probes(std::size_t num_classes, std::size_t feature_dim, std::size_t count,
                                       double scale, std::uint64_t seed);

struct VirtualTrace {
  std::size_t interval = 0;  ///< steps between resynchronizations
  std::vector<std::size_t> steps;
  std::vector<double> federated_loss;
  std::vector<double> virtual_loss;
  std::vector<double> gap;  ///< federated_loss - virtual_loss
  /// Data-weighted node average every `snapshot_every` steps (for probe sets).
  std::vector<ModelParams> snapshots;
};

/// Runs STAR or STAR-stars while co-simulating a virtual model that takes
/// full-batch steps on the pooled objective and is reset to the federated
/// model at every global sync. w_t is the data-weighted node average.
VirtualTrace run_virtual_trace(const ArchitectureConfig& cfg, const FederatedDataset& fed,
                               const std::optional<GroupAssignment>& grouping, const Hyperparams& hyper,
                               std::uint64_t seed, std::size_t snapshot_every = 10);

struct BoundCheck {
  DivergenceEstimate divergence;
  SmoothnessEstimate smoothness;
  HBound h_tau1;
  HBound h_tau1tau2;
  double bound = 0.0;
  double max_gap = 0.0;
  bool gap_zero_at_resync = true;
  bool holds = false;
};

/// Gap-versus-bound check with constants estimated over one probe set:
/// `random_probe_count` random models plus the trace snapshots.
BoundCheck check_gap_bound(const ArchitectureConfig& cfg, const FederatedDataset& fed, const GroupAssignment& grouping,
                           const Hyperparams& hyper, std::uint64_t seed, std::size_t random_probe_count = 64);

}  // namespace tornado
