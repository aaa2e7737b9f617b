#include "tornado/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tornado {

namespace {

using Kind = config_error::Kind;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void type_error(const std::string& key, const std::string& expected, const std::string& value) {
  throw config_error(Kind::TypeMismatch, key, "key '" + key + "': expected " + expected + ", got '" + value + "'");
}

[[noreturn]] void constraint(const std::string& key, const std::string& what) {
  throw config_error(Kind::Constraint, key, "key '" + key + "': " + what);
}

std::size_t to_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) type_error(key, "a non-negative integer", v);
  errno = 0;
  const unsigned long long n = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) type_error(key, "a non-negative integer", v);
  return static_cast<std::size_t>(n);
}

double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) type_error(key, "a real number", v);
  return x;
}

std::vector<std::string> to_list(const std::string& key, const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) type_error(key, "a comma-separated list", v);
    out.push_back(item);
  }
  return out;
}

std::string real_text(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::string_view source_name(DataSource s) {
  switch (s) {
    case DataSource::Synthetic: return "synthetic";
    case DataSource::Csv: return "csv";
    case DataSource::Idx: return "idx";
  }
  return "?";
}

struct Key {
  std::string name;
  std::function<void(ExperimentSpec&, const std::string&)> set;
  std::function<std::string(const ExperimentSpec&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"data.source",
       [](ExperimentSpec& s, const std::string& v) {
         if (v == "synthetic") s.data.source = DataSource::Synthetic;
         else if (v == "csv") s.data.source = DataSource::Csv;
         else if (v == "idx") s.data.source = DataSource::Idx;
         else constraint("data.source", "must be one of synthetic, csv, idx (got '" + v + "')");
       },
       [](const ExperimentSpec& s) { return std::string(source_name(s.data.source)); }},
      {"data.nodes", [](ExperimentSpec& s, const std::string& v) { s.data.synthetic.num_nodes = to_count("data.nodes", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.data.synthetic.num_nodes); }},
      {"data.classes",
       [](ExperimentSpec& s, const std::string& v) { s.data.synthetic.num_classes = to_count("data.classes", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.data.synthetic.num_classes); }},
      {"data.features",
       [](ExperimentSpec& s, const std::string& v) { s.data.synthetic.feature_dim = to_count("data.features", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.data.synthetic.feature_dim); }},
      {"data.examples_per_node",
       [](ExperimentSpec& s, const std::string& v) {
         s.data.synthetic.examples_per_node = to_count("data.examples_per_node", v);
       },
       [](const ExperimentSpec& s) { return std::to_string(s.data.synthetic.examples_per_node); }},
      {"data.test_examples_per_node",
       [](ExperimentSpec& s, const std::string& v) {
         s.data.synthetic.test_examples_per_node = to_count("data.test_examples_per_node", v);
       },
       [](const ExperimentSpec& s) { return std::to_string(s.data.synthetic.test_examples_per_node); }},
      {"data.skew", [](ExperimentSpec& s, const std::string& v) { s.data.synthetic.skew = to_real("data.skew", v); },
       [](const ExperimentSpec& s) { return real_text(s.data.synthetic.skew); }},
      {"data.separation",
       [](ExperimentSpec& s, const std::string& v) { s.data.synthetic.class_separation = to_real("data.separation", v); },
       [](const ExperimentSpec& s) { return real_text(s.data.synthetic.class_separation); }},
      {"data.shards_per_node",
       [](ExperimentSpec& s, const std::string& v) { s.data.shards_per_node = to_count("data.shards_per_node", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.data.shards_per_node); }},
      {"data.train_csv", [](ExperimentSpec& s, const std::string& v) { s.data.train_csv = v; },
       [](const ExperimentSpec& s) { return s.data.train_csv; }},
      {"data.test_csv", [](ExperimentSpec& s, const std::string& v) { s.data.test_csv = v; },
       [](const ExperimentSpec& s) { return s.data.test_csv; }},
      {"data.idx_train_images", [](ExperimentSpec& s, const std::string& v) { s.data.idx_train_images = v; },
       [](const ExperimentSpec& s) { return s.data.idx_train_images; }},
      {"data.idx_train_labels", [](ExperimentSpec& s, const std::string& v) { s.data.idx_train_labels = v; },
       [](const ExperimentSpec& s) { return s.data.idx_train_labels; }},
      {"data.idx_test_images", [](ExperimentSpec& s, const std::string& v) { s.data.idx_test_images = v; },
       [](const ExperimentSpec& s) { return s.data.idx_test_images; }},
      {"data.idx_test_labels", [](ExperimentSpec& s, const std::string& v) { s.data.idx_test_labels = v; },
       [](const ExperimentSpec& s) { return s.data.idx_test_labels; }},

      {"train.eta", [](ExperimentSpec& s, const std::string& v) { s.hyper.eta = to_real("train.eta", v); },
       [](const ExperimentSpec& s) { return real_text(s.hyper.eta); }},
      {"train.steps", [](ExperimentSpec& s, const std::string& v) { s.hyper.steps = to_count("train.steps", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.hyper.steps); }},
      {"train.batch", [](ExperimentSpec& s, const std::string& v) { s.hyper.minibatch = to_count("train.batch", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.hyper.minibatch); }},
      {"train.eval_every",
       [](ExperimentSpec& s, const std::string& v) { s.eval_every = to_count("train.eval_every", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.eval_every); }},

      {"engine.arch",
       [](ExperimentSpec& s, const std::string& v) {
         if (v == "centralized") {
           s.centralized = true;
           return;
         }
         Architecture a;
         try {
           a = parse_architecture(v);
         } catch (const std::invalid_argument&) {
           constraint("engine.arch", "unknown architecture '" + v + "'");
         }
         const ArchitectureConfig levels = ArchitectureConfig::make(a);
         s.centralized = false;
         s.arch.global_level = levels.global_level;
         s.arch.group_level = levels.group_level;
       },
       [](const ExperimentSpec& s) {
         return s.centralized ? std::string("centralized") : std::string(to_string(s.arch.architecture()));
       }},
      {"engine.tau", [](ExperimentSpec& s, const std::string& v) { s.arch.tau = to_count("engine.tau", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.arch.tau); }},
      {"engine.tau1", [](ExperimentSpec& s, const std::string& v) { s.arch.tau1 = to_count("engine.tau1", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.arch.tau1); }},
      {"engine.tau2", [](ExperimentSpec& s, const std::string& v) { s.arch.tau2 = to_count("engine.tau2", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.arch.tau2); }},
      {"engine.chains", [](ExperimentSpec& s, const std::string& v) { s.arch.chains = to_count("engine.chains", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.arch.chains); }},

      {"grouping.scheme",
       [](ExperimentSpec& s, const std::string& v) {
         try {
           s.arch.grouping_scheme = parse_grouping_scheme(v);
         } catch (const std::invalid_argument&) {
           constraint("grouping.scheme", "must be one of iid, cluster, random, single (got '" + v + "')");
         }
       },
       [](const ExperimentSpec& s) { return std::string(to_string(s.arch.grouping_scheme)); }},
      {"grouping.num_groups",
       [](ExperimentSpec& s, const std::string& v) { s.arch.num_groups = to_count("grouping.num_groups", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.arch.num_groups); }},

      {"experiment.presets",
       [](ExperimentSpec& s, const std::string& v) { s.presets = to_list("experiment.presets", v); },
       [](const ExperimentSpec& s) { return join(s.presets.empty() ? ExperimentSpec::default_presets() : s.presets); }},
      {"experiment.sweep",
       [](ExperimentSpec& s, const std::string& v) {
         s.sweep_nodes.clear();
         for (const auto& item : to_list("experiment.sweep", v))
           s.sweep_nodes.push_back(to_count("experiment.sweep", item));
       },
       [](const ExperimentSpec& s) {
         std::vector<std::string> items;
         for (std::size_t n : s.sweep_nodes) items.push_back(std::to_string(n));
         return join(items);
       }},
      {"experiment.sweep_presets",
       [](ExperimentSpec& s, const std::string& v) { s.sweep_presets = to_list("experiment.sweep_presets", v); },
       [](const ExperimentSpec& s) { return join(s.sweep_presets); }},
      {"experiment.seeds", [](ExperimentSpec& s, const std::string& v) { s.seeds = to_count("experiment.seeds", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.seeds); }},
      {"experiment.target_accuracy",
       [](ExperimentSpec& s, const std::string& v) { s.target_accuracy = to_real("experiment.target_accuracy", v); },
       [](const ExperimentSpec& s) { return real_text(s.target_accuracy); }},
      {"experiment.step_cap",
       [](ExperimentSpec& s, const std::string& v) { s.step_cap = to_count("experiment.step_cap", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.step_cap); }},
      {"experiment.threads",
       [](ExperimentSpec& s, const std::string& v) { s.threads = to_count("experiment.threads", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.threads); }},

      {"diagnose.probes",
       [](ExperimentSpec& s, const std::string& v) { s.diagnose_probes = to_count("diagnose.probes", v); },
       [](const ExperimentSpec& s) { return std::to_string(s.diagnose_probes); }},
  };
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

void apply(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (k == nullptr) throw config_error(Kind::UnknownKey, key, "unknown key '" + key + "'");
  k->set(spec, value);
}

// Splits "key = value"; returns false for blank and comment-only lines.
bool split_line(std::string_view raw, const std::string& where, std::string& key, std::string& value) {
  std::string line(raw);
  if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return false;
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw config_error(Kind::Syntax, where, where + ": expected 'key = value', got '" + line + "'");
  key = trim(std::string_view(line).substr(0, eq));
  value = trim(std::string_view(line).substr(eq + 1));
  if (key.empty()) throw config_error(Kind::Syntax, where, where + ": missing key");
  return true;
}

void validate(ExperimentSpec& spec) {
  auto& d = spec.data.synthetic;
  if (d.num_nodes < 1) constraint("data.nodes", "must be >= 1");
  if (d.num_classes < 2) constraint("data.classes", "must be >= 2");
  if (d.feature_dim < 1) constraint("data.features", "must be >= 1");
  if (d.examples_per_node < 1) constraint("data.examples_per_node", "must be >= 1");
  if (d.test_examples_per_node < 1) constraint("data.test_examples_per_node", "must be >= 1");
  if (d.skew < 0.0 || d.skew > 1.0) constraint("data.skew", "must be in [0, 1]");
  if (!(d.class_separation >= 0.0)) constraint("data.separation", "must be >= 0");
  if (spec.data.shards_per_node < 1) constraint("data.shards_per_node", "must be >= 1");
  if (spec.data.source == DataSource::Csv) {
    if (spec.data.train_csv.empty()) constraint("data.train_csv", "required when data.source = csv");
    if (spec.data.test_csv.empty()) constraint("data.test_csv", "required when data.source = csv");
  }
  if (spec.data.source == DataSource::Idx) {
    if (spec.data.idx_train_images.empty()) constraint("data.idx_train_images", "required when data.source = idx");
    if (spec.data.idx_train_labels.empty()) constraint("data.idx_train_labels", "required when data.source = idx");
    if (spec.data.idx_test_images.empty()) constraint("data.idx_test_images", "required when data.source = idx");
    if (spec.data.idx_test_labels.empty()) constraint("data.idx_test_labels", "required when data.source = idx");
  }

  if (!(spec.hyper.eta > 0.0)) constraint("train.eta", "must be > 0");
  if (spec.hyper.steps < 1) constraint("train.steps", "must be >= 1");
  if (spec.eval_every < 1) constraint("train.eval_every", "must be >= 1");

  auto& a = spec.arch;
  if (spec.centralized) a = ArchitectureConfig::make(Architecture::STAR);
  if (a.tau < 1) constraint("engine.tau", "must be >= 1");
  if (a.tau1 < 1) constraint("engine.tau1", "must be >= 1");
  if (a.tau2 < 1) constraint("engine.tau2", "must be >= 1");
  if (a.chains < 1) constraint("engine.chains", "must be >= 1");
  if (a.num_groups < 1) constraint("grouping.num_groups", "must be >= 1");
  if (a.is_flat()) {
    a.num_groups = 1;
    a.grouping_scheme = GroupingScheme::SingleGroup;
  } else if (spec.data.source != DataSource::Csv) {
    if (a.num_groups > d.num_nodes) constraint("grouping.num_groups", "must not exceed data.nodes");
  }
  if (!a.is_flat() && a.grouping_scheme == GroupingScheme::SingleGroup && a.num_groups != 1)
    constraint("grouping.num_groups", "must be 1 with grouping.scheme = single");
  if (a.architecture() == Architecture::RING && a.chains > d.num_nodes)
    constraint("engine.chains", "exceeds the node ring period (data.nodes)");
  if (!a.is_flat() && a.global_level == GlobalLevel::Ring && a.chains > a.num_groups)
    constraint("engine.chains", "exceeds the group ring period (grouping.num_groups)");
  if (a.group_level == GroupLevel::Ring && a.global_level != GlobalLevel::Ring &&
      a.chains > d.num_nodes - a.num_groups + 1)
    constraint("engine.chains", "exceeds every possible group ring period");
  for (std::size_t i = 0; i < spec.presets.size(); ++i) {
    try {
      find_preset(spec.presets[i]);
    } catch (const std::invalid_argument&) {
      constraint("experiment.presets", "unknown preset '" + spec.presets[i] + "'");
    }
    for (std::size_t j = 0; j < i; ++j)
      if (spec.presets[i] == spec.presets[j])
        constraint("experiment.presets", "duplicate preset '" + spec.presets[i] + "'");
  }
  if (spec.sweep_nodes.empty()) constraint("experiment.sweep", "must list at least one node count");
  for (std::size_t i = 0; i < spec.sweep_nodes.size(); ++i) {
    if (spec.sweep_nodes[i] < 1) constraint("experiment.sweep", "node counts must be >= 1");
    if (i > 0 && spec.sweep_nodes[i] <= spec.sweep_nodes[i - 1])
      constraint("experiment.sweep", "must be strictly increasing");
  }
  for (const auto& name : spec.sweep_presets) {
    try {
      find_preset(name);
    } catch (const std::invalid_argument&) {
      constraint("experiment.sweep_presets", "unknown preset '" + name + "'");
    }
  }
  if (spec.seeds < 1) constraint("experiment.seeds", "must be >= 1");
  if (spec.target_accuracy < 0.0 || spec.target_accuracy > 1.0)
    constraint("experiment.target_accuracy", "must be in [0, 1]");
  if (spec.step_cap < 1) constraint("experiment.step_cap", "must be >= 1");
  if (spec.diagnose_probes < 1) constraint("diagnose.probes", "must be >= 1");

  try {
    spec.validate();
  } catch (const config_error&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw config_error(Kind::Constraint, "config", e.what());
  }
}

}  // namespace

ExperimentSpec parse_config_text(std::string_view text, const std::vector<std::string>& overrides) {
  ExperimentSpec spec;
  std::istringstream in{std::string(text)};
  std::string line, key, value;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (split_line(line, "line " + std::to_string(number), key, value)) apply(spec, key, value);
  }
  for (const auto& o : overrides) {
    if (o.find('=') == std::string::npos)
      throw config_error(Kind::Syntax, o, "override '" + o + "' is not key=value");
    if (split_line(o, "override '" + o + "'", key, value)) apply(spec, key, value);
  }
  validate(spec);
  return spec;
}

ExperimentSpec parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw config_error(Kind::Syntax, path.string(), "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string effective_config_text(const ExperimentSpec& spec) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(spec) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

}  // namespace tornado
