#include "tornado/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tornado/rng.hpp"

namespace tornado {

GroupAssignment::GroupAssignment(std::size_t num_groups, std::vector<std::size_t> membership)
    : num_groups_(num_groups), membership_(std::move(membership)) {
  if (num_groups_ < 1) throw std::invalid_argument("GroupAssignment: num_groups must be >= 1");
  if (num_groups_ > membership_.size())
    throw std::invalid_argument("GroupAssignment: more groups than nodes");
  std::vector<std::size_t> sizes(num_groups_, 0);
  for (std::size_t g : membership_) {
    if (g >= num_groups_) throw std::invalid_argument("GroupAssignment: group id out of range");
    ++sizes[g];
  }
  for (std::size_t k = 0; k < num_groups_; ++k)
    if (sizes[k] == 0) throw std::invalid_argument("GroupAssignment: group " + std::to_string(k) + " is empty");
}

GroupAssignment GroupAssignment::single_group(std::size_t num_nodes) {
  return GroupAssignment(1, std::vector<std::size_t>(num_nodes, 0));
}

std::vector<std::vector<std::size_t>> GroupAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(num_groups_);
  for (std::size_t i = 0; i < membership_.size(); ++i) out[membership_[i]].push_back(i);
  return out;
}

std::vector<std::size_t> GroupAssignment::group_sizes() const {
  std::vector<std::size_t> sizes(num_groups_, 0);
  for (std::size_t g : membership_) ++sizes[g];
  return sizes;
}

double GroupingCostReport::reduction() const {
  if (final_cost == 0.0) return initial_cost == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (initial_cost - final_cost) / final_cost;
}

double emd(const ClassDistribution& p, const ClassDistribution& q) {
  if (p.probs.size() != q.probs.size()) throw std::invalid_argument("emd: distributions differ in length");
  double total = 0.0;
  for (std::size_t c = 0; c < p.probs.size(); ++c) total += std::abs(p.probs[c] - q.probs[c]);
  return total;
}

std::vector<std::size_t> GroupingState::members_of(std::size_t group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < membership.size(); ++i)
    if (membership[i] == group) out.push_back(i);
  return out;
}

void GroupingState::assign(std::size_t node, std::size_t group) {
  if (membership[node] == group) return;
  unassign(node);
  membership[node] = group;
  auto& counts = group_counts[group];
  for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += node_counts[node][c];
}

void GroupingState::unassign(std::size_t node) {
  const std::size_t g = membership[node];
  if (g == kUnassigned) return;
  auto& counts = group_counts[g];
  for (std::size_t c = 0; c < counts.size(); ++c) counts[c] -= node_counts[node][c];
  membership[node] = kUnassigned;
}

GroupingState make_grouping_state(const FederatedDataset& fed, std::size_t num_groups) {
  fed.validate();
  if (num_groups < 1 || num_groups > fed.num_nodes())
    throw std::invalid_argument("grouping: num_groups must lie in [1, number of nodes]");
  GroupingState state;
  state.num_groups = num_groups;
  std::vector<double> total(fed.num_classes, 0.0);
  for (const auto& node : fed.nodes) {
    state.node_counts.push_back(class_counts(node.examples, fed.num_classes));
    state.node_dists.push_back(class_distribution(node.examples, fed.num_classes));
    for (std::size_t c = 0; c < total.size(); ++c) total[c] += state.node_counts.back()[c];
  }
  const double n = static_cast<double>(fed.total_examples());
  for (double& v : total) v /= n;
  state.global_dist.probs = std::move(total);
  state.membership.assign(fed.num_nodes(), GroupingState::kUnassigned);
  state.group_counts.assign(num_groups, std::vector<double>(fed.num_classes, 0.0));
  state.medoids.assign(num_groups, GroupingState::kUnassigned);
  return state;
}

namespace detail {

void repair_empty_groups(std::vector<std::size_t>& membership, std::size_t num_groups,
                         std::span<const double> association_cost) {
  if (membership.size() < num_groups) throw std::invalid_argument("repair_empty_groups: fewer nodes than groups");
  for (;;) {
    std::vector<std::size_t> sizes(num_groups, 0);
    for (std::size_t g : membership) ++sizes[g];
    const auto empty = std::find(sizes.begin(), sizes.end(), std::size_t{0});
    if (empty == sizes.end()) return;
    const std::size_t largest =
        static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::size_t worst = membership.size();
    for (std::size_t i = 0; i < membership.size(); ++i) {
      if (membership[i] != largest) continue;
      if (worst == membership.size() || association_cost[i] > association_cost[worst]) worst = i;
    }
    membership[worst] = static_cast<std::size_t>(empty - sizes.begin());
  }
}

}  // namespace detail

namespace {

// Gauss-Seidel pass: nodes are visited in ascending order and each one sees
// the memberships already updated in this pass.
void assignment_pass(GroupingState& state, const GroupCost& cost_a, const GroupSearch& search) {
  const GroupCost& score = search.assign_score ? search.assign_score : cost_a;
  for (std::size_t i = 0; i < state.num_nodes(); ++i) {
    const std::size_t g = state.membership[i];
    if (search.anchor_medoids && g != GroupingState::kUnassigned && state.medoids[g] == i) continue;
    state.unassign(i);
    std::size_t best = 0;
    double best_cost = score(i, 0, state);
    for (std::size_t k = 1; k < state.num_groups; ++k) {
      const double c = score(i, k, state);
      if (c < best_cost) {
        best = k;
        best_cost = c;
      }
    }
    state.assign(i, best);
  }
}

std::vector<double> association_costs(const GroupingState& state, const GroupCost& cost_a) {
  std::vector<double> costs(state.num_nodes());
  for (std::size_t i = 0; i < state.num_nodes(); ++i) costs[i] = cost_a(i, state.membership[i], state);
  return costs;
}

double mean_cost(const GroupingState& state, const GroupCost& cost_a) {
  const auto costs = association_costs(state, cost_a);
  double total = 0.0;
  for (double c : costs) total += c;
  return total / static_cast<double>(costs.size());
}

void repair(GroupingState& state, const GroupCost& cost_a) {
  auto membership = state.membership;
  const auto costs = association_costs(state, cost_a);
  detail::repair_empty_groups(membership, state.num_groups, costs);
  for (std::size_t i = 0; i < membership.size(); ++i) {
    if (membership[i] == state.membership[i]) continue;
    state.assign(i, membership[i]);
    state.medoids[membership[i]] = i;
  }
}

void update_medoids(GroupingState& state, const GroupCost& cost_u) {
  for (std::size_t k = 0; k < state.num_groups; ++k) {
    const auto members = state.members_of(k);
    if (members.empty()) continue;
    std::size_t best = members.front();
    double best_cost = cost_u(best, k, state);
    for (std::size_t m = 1; m < members.size(); ++m) {
      const double c = cost_u(members[m], k, state);
      if (c < best_cost) {
        best = members[m];
        best_cost = c;
      }
    }
    state.medoids[k] = best;
  }
}

ClassDistribution normalized(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  ClassDistribution d{counts};
  for (double& p : d.probs) p /= total;
  return d;
}

}  // namespace

GroupingResult group(const FederatedDataset& fed, std::size_t num_groups, const GroupCost& cost_a,
                     const GroupCost& cost_u, std::uint64_t seed, const GroupSearch& search) {
  if (search.restarts < 1) throw std::invalid_argument("grouping: restarts must be >= 1");
  const GroupingState blank = make_grouping_state(fed, num_groups);

  GroupingState best_state;
  GroupingCostReport best;
  for (std::size_t r = 0; r < search.restarts; ++r) {
    GroupingState state = blank;
    std::vector<std::size_t> order(fed.num_nodes());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "medoids", r));
    rng.shuffle(order);
    for (std::size_t k = 0; k < num_groups; ++k) {
      state.medoids[k] = order[k];
      state.assign(order[k], k);
    }

    assignment_pass(state, cost_a, search);
    repair(state, cost_a);

    GroupingCostReport report;
    report.cost_trace.push_back(mean_cost(state, cost_a));

    for (std::size_t iter = 0; iter < search.max_iters; ++iter) {
      GroupingState candidate = state;
      update_medoids(candidate, cost_u);
      assignment_pass(candidate, cost_a, search);
      repair(candidate, cost_a);
      const double cost = mean_cost(candidate, cost_a);
      ++report.iterations;
      if (!(cost < report.cost_trace.back() - 1e-9)) break;
      state = std::move(candidate);
      report.cost_trace.push_back(cost);
    }

    report.initial_cost = report.cost_trace.front();
    report.final_cost = report.cost_trace.back();
    if (r == 0 || report.final_cost < best.final_cost - 1e-9) {
      best = std::move(report);
      best_state = std::move(state);
    }
  }
  return {GroupAssignment(num_groups, best_state.membership), std::move(best)};
}

GroupingResult group_by_iid(const FederatedDataset& fed, std::size_t num_groups, std::uint64_t seed) {
  auto cost_a = [](std::size_t i, std::size_t k, const GroupingState& s) {
    std::vector<double> counts = s.group_counts[k];
    if (s.membership[i] != k)
      for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += s.node_counts[i][c];
    return emd(normalized(counts), s.global_dist);
  };
  auto cost_u = [](std::size_t i, std::size_t, const GroupingState& s) {
    return emd(s.node_dists[i], s.global_dist);
  };
  GroupSearch search;
  search.anchor_medoids = true;
  // Change in the summed association cost when node i joins group k.
  search.assign_score = [](std::size_t i, std::size_t k, const GroupingState& s) {
    std::size_t size = 0;
    for (std::size_t j = 0; j < s.membership.size(); ++j) size += (j != i && s.membership[j] == k);
    std::vector<double> with = s.group_counts[k];
    for (std::size_t c = 0; c < with.size(); ++c) with[c] += s.node_counts[i][c];
    const double before = size == 0 ? 0.0 : emd(normalized(s.group_counts[k]), s.global_dist);
    return static_cast<double>(size + 1) * emd(normalized(with), s.global_dist) - static_cast<double>(size) * before;
  };
  return group(fed, num_groups, cost_a, cost_u, seed, search);
}

GroupingResult cluster(const FederatedDataset& fed, std::size_t num_groups, std::uint64_t seed) {
  auto cost_a = [](std::size_t i, std::size_t k, const GroupingState& s) {
    return emd(s.node_dists[i], s.node_dists[s.medoids[k]]);
  };
  auto cost_u = [](std::size_t i, std::size_t k, const GroupingState& s) {
    double total = 0.0;
    for (std::size_t j = 0; j < s.membership.size(); ++j)
      if (s.membership[j] == k) total += emd(s.node_dists[i], s.node_dists[j]);
    return total;
  };
  return group(fed, num_groups, cost_a, cost_u, seed);
}

GroupAssignment random_grouping(std::size_t num_nodes, std::size_t num_groups, std::uint64_t seed) {
  if (num_groups < 1 || num_groups > num_nodes)
    throw std::invalid_argument("random_grouping: num_groups must lie in [1, number of nodes]");
  std::vector<std::size_t> order(num_nodes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "random-groups"));
  rng.shuffle(order);
  std::vector<std::size_t> membership(num_nodes);
  for (std::size_t p = 0; p < num_nodes; ++p) membership[order[p]] = p % num_groups;
  return GroupAssignment(num_groups, std::move(membership));
}

std::size_t groups_for_size(std::size_t num_nodes, std::size_t group_size) {
  if (group_size < 1) throw std::invalid_argument("group size must be >= 1");
  return std::max<std::size_t>(1, (num_nodes + group_size - 1) / group_size);
}

}  // namespace tornado
