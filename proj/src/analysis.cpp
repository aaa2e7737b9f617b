#include "tornado/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tornado/engine.hpp"
#include "tornado/rng.hpp"

namespace tornado {

namespace {

using Vec = std::vector<double>;

double norm_sq(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// sum_i w_i v_i in the order given.
Vec weighted_sum(const std::vector<Vec>& vs, std::span<const std::size_t> ids, std::span<const double> w) {
  Vec out(vs[ids.front()].size(), 0.0);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const Vec& v = vs[ids[j]];
    for (std::size_t p = 0; p < out.size(); ++p) out[p] += w[j] * v[p];
  }
  return out;
}

struct Gradients {
  std::vector<Vec> node;
  std::vector<Vec> group;
  Vec global;
  std::vector<double> node_w;   // n_i / N
  std::vector<double> group_w;  // n_k / N
};

void check_dims(const FederatedDataset& fed, const ModelParams& params) {
  if (params.num_classes() != fed.num_classes || params.feature_dim() != fed.feature_dim)
    throw std::invalid_argument("model shape does not match the dataset");
}

Gradients level_gradients(const FederatedDataset& fed, const ModelParams& params, const GroupAssignment& grouping) {
  check_dims(fed, params);
  if (grouping.num_nodes() != fed.num_nodes()) throw std::invalid_argument("grouping does not match the dataset");
  Gradients g;
  const auto sizes = fed.node_sizes();
  const double total = static_cast<double>(fed.total_examples());
  for (const auto& node : fed.nodes) g.node.push_back(gradient(params, node.examples));

  std::vector<std::size_t> all(fed.num_nodes());
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i] = i;
    g.node_w.push_back(static_cast<double>(sizes[i]) / total);
  }
  g.global = weighted_sum(g.node, all, g.node_w);

  for (const auto& members : grouping.members()) {
    double nk = 0.0;
    for (std::size_t i : members) nk += static_cast<double>(sizes[i]);
    std::vector<double> w;
    for (std::size_t i : members) w.push_back(static_cast<double>(sizes[i]) / nk);
    g.group.push_back(weighted_sum(g.node, members, w));
    g.group_w.push_back(nk / total);
  }
  return g;
}

// sum_u w_u |g_u|^2 - |sum_u w_u g_u|^2
double second_moment_gap(const std::vector<Vec>& units, std::span<const std::size_t> ids, std::span<const double> w) {
  double moment = 0.0;
  for (std::size_t j = 0; j < ids.size(); ++j) moment += w[j] * norm_sq(units[ids[j]]);
  return moment - norm_sq(weighted_sum(units, ids, w));
}

}  // namespace

DivergenceEstimate estimate_divergences(const FederatedDataset& fed, const GroupAssignment& grouping,
                                        std::span<const ModelParams> probes) {
  if (probes.empty()) throw std::invalid_argument("estimate_divergences: no probe models");
  DivergenceEstimate est;
  est.per_node_delta.assign(fed.num_nodes(), 0.0);
  est.per_node_D.assign(fed.num_nodes(), 0.0);
  est.per_group_Delta.assign(grouping.num_groups(), 0.0);
  est.probes = probes.size();

  std::vector<double> node_w, group_w;
  for (const auto& probe : probes) {
    const Gradients g = level_gradients(fed, probe, grouping);
    for (std::size_t i = 0; i < fed.num_nodes(); ++i) {
      const Vec& gk = g.group[grouping.group_of(i)];
      est.per_node_delta[i] = std::max(est.per_node_delta[i], dist(g.node[i], gk));
      est.per_node_D[i] = std::max(est.per_node_D[i], dist(g.node[i], g.global));
    }
    for (std::size_t k = 0; k < grouping.num_groups(); ++k)
      est.per_group_Delta[k] = std::max(est.per_group_Delta[k], dist(g.group[k], g.global));
    node_w = g.node_w;
    group_w = g.group_w;
  }
  for (std::size_t i = 0; i < fed.num_nodes(); ++i) {
    est.delta += node_w[i] * est.per_node_delta[i];
    est.D += node_w[i] * est.per_node_D[i];
  }
  for (std::size_t k = 0; k < grouping.num_groups(); ++k) est.Delta += group_w[k] * est.per_group_Delta[k];
  return est;
}

SmoothnessEstimate estimate_smoothness(const FederatedDataset& fed,
                                       std::span<const std::pair<ModelParams, ModelParams>> pairs) {
  const ExampleList pooled = fed.pooled();
  SmoothnessEstimate est;
  for (const auto& [a, b] : pairs) {
    check_dims(fed, a);
    check_dims(fed, b);
    const auto va = a.values();
    const auto vb = b.values();
    double gap = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) gap += (va[i] - vb[i]) * (va[i] - vb[i]);
    gap = std::sqrt(gap);
    if (gap == 0.0) continue;
    est.beta_hat = std::max(est.beta_hat, dist(gradient(a, pooled), gradient(b, pooled)) / gap);
    est.rho_hat = std::max(est.rho_hat, std::abs(loss(a, pooled) - loss(b, pooled)) / gap);
    ++est.probes;
  }
  if (est.probes == 0) throw std::invalid_argument("estimate_smoothness: every probe pair is coincident");
  return est;
}

HBound h_bound(double eta, double beta, std::size_t t) {
  if (!(eta > 0.0) || !(beta > 0.0)) throw std::invalid_argument("h_bound: eta and beta must be positive");
  const double exponent = static_cast<double>(t) * std::log1p(eta * beta);
  const double value = std::expm1(exponent);
  if (std::isinf(value)) return {std::numeric_limits<double>::infinity(), true};
  return {value, false};
}

double ring_variance(const FederatedDataset& fed, const ModelParams& params, const GroupAssignment* grouping,
                     VarianceLevel level) {
  const GroupAssignment single = GroupAssignment::single_group(fed.num_nodes());
  if (level == VarianceLevel::Flat) grouping = &single;
  if (grouping == nullptr) throw std::invalid_argument("ring_variance: grouping required at this level");
  const Gradients g = level_gradients(fed, params, *grouping);

  switch (level) {
    case VarianceLevel::Flat: {
      std::vector<std::size_t> ids(fed.num_nodes());
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
      return second_moment_gap(g.node, ids, g.node_w);
    }
    case VarianceLevel::Group: {
      const auto sizes = fed.node_sizes();
      double total = 0.0;
      const auto members = grouping->members();
      for (std::size_t k = 0; k < members.size(); ++k) {
        double nk = 0.0;
        for (std::size_t i : members[k]) nk += static_cast<double>(sizes[i]);
        std::vector<double> w;
        for (std::size_t i : members[k]) w.push_back(static_cast<double>(sizes[i]) / nk);
        total += g.group_w[k] * second_moment_gap(g.node, members[k], w);
      }
      return total;
    }
    case VarianceLevel::Global: {
      std::vector<std::size_t> ids(g.group.size());
      for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
      return second_moment_gap(g.group, ids, g.group_w);
    }
  }
  throw std::invalid_argument("unknown variance level");
}

VarianceLevel variance_level(Architecture arch) {
  switch (arch) {
    case Architecture::RING: return VarianceLevel::Flat;
    case Architecture::STAR_rings:
    case Architecture::RING_rings:
    case Architecture::rings: return VarianceLevel::Group;
    case Architecture::RING_stars: return VarianceLevel::Global;
    default: return VarianceLevel::Flat;
  }
}

std::vector<ModelParams> random_probes(std::size_t num_classes, std::size_t feature_dim, std::size_t count,
                                       double scale, std::uint64_t seed) {
  std::vector<ModelParams> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(random_model(num_classes, feature_dim, scale, derive_seed(seed, "probe", i)));
  return out;
}

VirtualTrace run_virtual_trace(const ArchitectureConfig& cfg, const FederatedDataset& fed,
                               const std::optional<GroupAssignment>& grouping, const Hyperparams& hyper,
                               std::uint64_t seed, std::size_t snapshot_every) {
  const Architecture arch = cfg.architecture();
  if (arch != Architecture::STAR && arch != Architecture::STAR_stars)
    throw std::invalid_argument("virtual trace needs STAR or STAR-stars");
  if (snapshot_every == 0) throw std::invalid_argument("snapshot_every must be >= 1");

  const ExampleList pooled = fed.pooled();
  VirtualTrace trace;
  trace.interval = cfg.round_length();

  ModelParams v = initial_model(fed.num_classes, fed.feature_dim, seed);
  const double f0 = loss(v, pooled);
  trace.steps.push_back(0);
  trace.federated_loss.push_back(f0);
  trace.virtual_loss.push_back(f0);
  trace.gap.push_back(0.0);
  trace.snapshots.push_back(v);

  RunOptions opts;
  opts.eval_every = std::max<std::size_t>(hyper.steps, 1);
  opts.compute_diagnostics = false;
  opts.grouping = grouping;
  opts.observer = [&](const StepPlan& plan, std::span<const ModelParams> models) {
    const std::size_t b = plan.step + 1;
    const ModelParams w = consensus_model(models, fed);
    if (b % trace.interval == 0)
      v = w;
    else
      v = sgd_step(v, pooled, hyper.eta);
    const double fw = loss(w, pooled);
    const double fv = loss(v, pooled);
    trace.steps.push_back(b);
    trace.federated_loss.push_back(fw);
    trace.virtual_loss.push_back(fv);
    trace.gap.push_back(fw - fv);
    if (b % snapshot_every == 0) trace.snapshots.push_back(w);
  };
  Hyperparams full = hyper;
  full.minibatch = 0;
  run(cfg, fed, fed, full, seed, opts);
  return trace;
}

BoundCheck check_gap_bound(const ArchitectureConfig& cfg, const FederatedDataset& fed, const GroupAssignment& grouping,
                           const Hyperparams& hyper, std::uint64_t seed, std::size_t random_probe_count) {
  BoundCheck out;
  const VirtualTrace trace = run_virtual_trace(cfg, fed, grouping, hyper, seed);

  std::vector<ModelParams> probes =
      random_probes(fed.num_classes, fed.feature_dim, random_probe_count, 0.01, derive_seed(seed, "probes"));
  probes.insert(probes.end(), trace.snapshots.begin(), trace.snapshots.end());
  out.divergence = estimate_divergences(fed, grouping, probes);

  std::vector<std::pair<ModelParams, ModelParams>> pairs;
  const std::size_t n = probes.size();
  for (std::size_t i = 0; i + 1 < n; ++i) pairs.emplace_back(probes[i], probes[i + 1]);
  for (std::size_t i = 0; i < n / 2; ++i) pairs.emplace_back(probes[i], probes[i + n / 2]);
  out.smoothness = estimate_smoothness(fed, pairs);

  const bool two_level = cfg.architecture() == Architecture::STAR_stars;
  const std::size_t inner = two_level ? cfg.tau1 : cfg.tau;
  const std::size_t outer = two_level ? cfg.tau1 * cfg.tau2 : cfg.tau;
  out.h_tau1 = h_bound(hyper.eta, out.smoothness.beta_hat, inner);
  out.h_tau1tau2 = h_bound(hyper.eta, out.smoothness.beta_hat, outer);

  auto term = [](double coeff, const HBound& h) { return coeff == 0.0 ? 0.0 : coeff * h.value; };
  out.bound = out.smoothness.rho_hat / out.smoothness.beta_hat *
              (term(out.divergence.delta, out.h_tau1) + term(out.divergence.Delta, out.h_tau1tau2));

  for (std::size_t j = 0; j < trace.steps.size(); ++j) {
    out.max_gap = std::max(out.max_gap, trace.gap[j]);
    if (trace.steps[j] % trace.interval == 0 && trace.gap[j] != 0.0) out.gap_zero_at_resync = false;
  }
  out.holds = out.gap_zero_at_resync && out.max_gap <= out.bound + 1e-6;
  return out;
}

}  // namespace tornado
