#include "config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace vib {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double as_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'", key);
  return out;
}

std::uint64_t as_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'", key);
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'", key);
}

std::vector<double> as_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(as_double(key, trim(tok)));
  if (out.empty()) throw ConfigError("config key '" + key + "' expects a comma-separated list", key);
  return out;
}

std::string list_text(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = as_uint(k, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}
template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = as_double(k, v); },
          [member](const RunConfig& c) { return num(member(const_cast<RunConfig&>(c))); }};
}
template <typename Member>
Field bool_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = as_bool(k, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

// Declaration order is the canonical output order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.push_back({"run.architecture",
                 {[](RunConfig& c, const std::string&, const std::string& v) { c.architecture = v; },
                  [](const RunConfig& c) { return c.architecture; }}});
    t.push_back({"run.seed", size_field([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })});
    t.push_back({"run.out_dir",
                 {[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                  [](const RunConfig& c) { return c.out_dir.string(); }}});
    t.push_back({"run.checkpoint_every", size_field([](RunConfig& c) -> std::size_t& { return c.checkpoint_every; })});
    t.push_back({"run.count_input_gate_in_depth",
                 bool_field([](RunConfig& c) -> bool& { return c.count_input_gate_in_depth; })});

    t.push_back({"data.source",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "mnist")
                      c.data.source = DataSource::mnist;
                    else if (v == "blobs")
                      c.data.source = DataSource::blobs;
                    else
                      throw ConfigError("config key '" + k + "' expects mnist or blobs, got '" + v + "'", k);
                  },
                  [](const RunConfig& c) { return std::string(c.data.source == DataSource::blobs ? "blobs" : "mnist"); }}});
    t.push_back({"data.dir",
                 {[](RunConfig& c, const std::string&, const std::string& v) { c.data.dir = v; },
                  [](const RunConfig& c) { return c.data.dir.string(); }}});
    t.push_back({"data.train_limit", size_field([](RunConfig& c) -> std::size_t& { return c.data.train_limit; })});
    t.push_back({"data.test_limit", size_field([](RunConfig& c) -> std::size_t& { return c.data.test_limit; })});
    t.push_back({"data.blobs_n", size_field([](RunConfig& c) -> std::size_t& { return c.data.blobs_n; })});
    t.push_back({"data.blobs_test_n", size_field([](RunConfig& c) -> std::size_t& { return c.data.blobs_test_n; })});
    t.push_back({"data.blobs_classes", size_field([](RunConfig& c) -> std::size_t& { return c.data.blobs_classes; })});
    t.push_back({"data.blobs_dim", size_field([](RunConfig& c) -> std::size_t& { return c.data.blobs_dim; })});
    t.push_back({"data.blobs_separation",
                 double_field([](RunConfig& c) -> double& { return c.data.blobs_separation; })});
    t.push_back({"data.blobs_seed", size_field([](RunConfig& c) -> std::uint64_t& { return c.data.blobs_seed; })});

    t.push_back({"train.gamma_prime", double_field([](RunConfig& c) -> double& { return c.train.gamma_prime; })});
    t.push_back({"train.gamma_rule",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "uniform")
                      c.train.gamma_rule = GammaRule::uniform;
                    else if (v == "inverse_side_length")
                      c.train.gamma_rule = GammaRule::inverse_side_length;
                    else
                      throw ConfigError("config key '" + k + "' expects uniform or inverse_side_length", k);
                  },
                  [](const RunConfig& c) {
                    return std::string(c.train.gamma_rule == GammaRule::uniform ? "uniform" : "inverse_side_length");
                  }}});
    t.push_back({"train.optimizer",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "adam")
                      c.train.optimizer = OptimizerKind::adam;
                    else if (v == "sgd_momentum")
                      c.train.optimizer = OptimizerKind::sgd_momentum;
                    else
                      throw ConfigError("config key '" + k + "' expects adam or sgd_momentum", k);
                  },
                  [](const RunConfig& c) {
                    return std::string(c.train.optimizer == OptimizerKind::adam ? "adam" : "sgd_momentum");
                  }}});
    t.push_back({"train.learning_rate", double_field([](RunConfig& c) -> double& { return c.train.learning_rate; })});
    t.push_back({"train.gate_learning_rate",
                 double_field([](RunConfig& c) -> double& { return c.train.gate_learning_rate; })});
    t.push_back({"train.momentum", double_field([](RunConfig& c) -> double& { return c.train.momentum; })});
    t.push_back({"train.beta1", double_field([](RunConfig& c) -> double& { return c.train.beta1; })});
    t.push_back({"train.beta2", double_field([](RunConfig& c) -> double& { return c.train.beta2; })});
    t.push_back({"train.adam_epsilon", double_field([](RunConfig& c) -> double& { return c.train.adam_epsilon; })});
    t.push_back({"train.weight_decay", double_field([](RunConfig& c) -> double& { return c.train.weight_decay; })});
    t.push_back({"train.lr_decay", double_field([](RunConfig& c) -> double& { return c.train.lr_decay; })});
    t.push_back({"train.lr_decay_every", size_field([](RunConfig& c) -> std::size_t& { return c.train.lr_decay_every; })});
    t.push_back({"train.epochs", size_field([](RunConfig& c) -> std::size_t& { return c.train.epochs; })});
    t.push_back({"train.batch_size", size_field([](RunConfig& c) -> std::size_t& { return c.train.batch_size; })});
    t.push_back({"train.eval_every", size_field([](RunConfig& c) -> std::size_t& { return c.train.eval_every; })});
    t.push_back({"train.epsilon_draw",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "per_example")
                      c.train.epsilon_draw = NoiseDraw::per_example;
                    else if (v == "per_batch")
                      c.train.epsilon_draw = NoiseDraw::per_batch;
                    else
                      throw ConfigError("config key '" + k + "' expects per_example or per_batch", k);
                  },
                  [](const RunConfig& c) {
                    return std::string(c.train.epsilon_draw == NoiseDraw::per_batch ? "per_batch" : "per_example");
                  }}});
    t.push_back({"train.fine_tune_epochs", size_field([](RunConfig& c) -> std::size_t& { return c.fine_tune_epochs; })});
    t.push_back({"train.fine_tune_learning_rate",
                 double_field([](RunConfig& c) -> double& { return c.fine_tune_learning_rate; })});

    t.push_back({"prune.tau", double_field([](RunConfig& c) -> double& { return c.prune_tau; })});
    t.push_back({"prune.fold", bool_field([](RunConfig& c) -> bool& { return c.prune_fold; })});

    t.push_back({"analysis.mi_track", bool_field([](RunConfig& c) -> bool& { return c.analysis.mi_track; })});
    t.push_back({"analysis.mi_subset", size_field([](RunConfig& c) -> std::size_t& { return c.analysis.mi_subset; })});
    t.push_back({"analysis.mi_k", size_field([](RunConfig& c) -> std::size_t& { return c.analysis.mi_k; })});
    t.push_back({"analysis.grid_mu_min", double_field([](RunConfig& c) -> double& { return c.analysis.grid_mu_min; })});
    t.push_back({"analysis.grid_mu_max", double_field([](RunConfig& c) -> double& { return c.analysis.grid_mu_max; })});
    t.push_back({"analysis.grid_points", size_field([](RunConfig& c) -> std::size_t& { return c.analysis.grid_points; })});
    t.push_back({"analysis.grid_omegas",
                 {[](RunConfig& c, const std::string& k, const std::string& v) { c.analysis.grid_omegas = as_list(k, v); },
                  [](const RunConfig& c) { return list_text(c.analysis.grid_omegas); }}});
    t.push_back({"analysis.surrogate_problems",
                 size_field([](RunConfig& c) -> std::size_t& { return c.analysis.surrogate_problems; })});
    t.push_back({"analysis.surrogate_dim", size_field([](RunConfig& c) -> std::size_t& { return c.analysis.surrogate_dim; })});
    t.push_back({"analysis.surrogate_rank",
                 size_field([](RunConfig& c) -> std::size_t& { return c.analysis.surrogate_rank; })});
    t.push_back({"analysis.surrogate_restarts",
                 size_field([](RunConfig& c) -> std::size_t& { return c.analysis.surrogate_restarts; })});
    t.push_back({"analysis.surrogate_gamma",
                 double_field([](RunConfig& c) -> double& { return c.analysis.surrogate_gamma; })});
    t.push_back({"analysis.surrogate_b_scale",
                 double_field([](RunConfig& c) -> double& { return c.analysis.surrogate_b_scale; })});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  if (architecture.empty()) throw ConfigError("run.architecture must not be empty", "run.architecture");
  if (!(prune_tau > 0.0)) throw ConfigError("prune.tau must be positive", "prune.tau");
  if (fine_tune_learning_rate < 0.0)
    throw ConfigError("train.fine_tune_learning_rate must be non-negative", "train.fine_tune_learning_rate");
  if (data.source == DataSource::blobs) {
    if (data.blobs_n < data.blobs_classes || data.blobs_test_n < data.blobs_classes)
      throw ConfigError("data.blobs_n must be at least data.blobs_classes", "data.blobs_n");
    if (data.blobs_classes < 2) throw ConfigError("data.blobs_classes must be at least 2", "data.blobs_classes");
    if (data.blobs_dim == 0) throw ConfigError("data.blobs_dim must be positive", "data.blobs_dim");
  }
  if (analysis.mi_k == 0) throw ConfigError("analysis.mi_k must be positive", "analysis.mi_k");
  if (analysis.grid_points < 2) throw ConfigError("analysis.grid_points must be at least 2", "analysis.grid_points");
  for (double w : analysis.grid_omegas)
    if (!(w > 0.0)) throw ConfigError("analysis.grid_omegas must be positive", "analysis.grid_omegas");
  if (analysis.surrogate_rank == 0 || analysis.surrogate_dim == 0)
    throw ConfigError("analysis.surrogate_dim and surrogate_rank must be positive", "analysis.surrogate_rank");
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "train." + e.key);
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header on line " + std::to_string(lineno), line);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "data" && section != "train" && section != "prune" && section != "analysis")
        throw ConfigError("unknown config section '" + section + "'", section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value on line " + std::to_string(lineno), trim(line));
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'", key);
    f->set(cfg, key, value);
  }
  cfg.train.prune_tau = cfg.prune_tau;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config not found: " + path.string());
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

std::string DataConfig::tag() const {
  if (source == DataSource::mnist)
    return "mnist " + std::to_string(train_limit) + " " + std::to_string(test_limit);
  return "blobs " + std::to_string(blobs_n) + " " + std::to_string(blobs_test_n) + " " +
         std::to_string(blobs_classes) + " " + std::to_string(blobs_dim) + " " + num(blobs_separation) + " " +
         std::to_string(blobs_seed);
}

DataConfig DataConfig::from_tag(const std::string& tag) {
  std::istringstream is(tag);
  std::string kind;
  is >> kind;
  DataConfig d;
  if (kind == "mnist") {
    d.source = DataSource::mnist;
    is >> d.train_limit >> d.test_limit;
  } else if (kind == "blobs") {
    d.source = DataSource::blobs;
    is >> d.blobs_n >> d.blobs_test_n >> d.blobs_classes >> d.blobs_dim >> d.blobs_separation >> d.blobs_seed;
  } else {
    throw InputError("unknown data tag '" + tag + "'");
  }
  if (is.fail()) throw InputError("malformed data tag '" + tag + "'");
  return d;
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg, const std::filesystem::path& dir_override) {
  if (cfg.source == DataSource::blobs) {
    Dataset train = synthetic_blobs(cfg.blobs_n, cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation, cfg.blobs_seed);
    Dataset test = synthetic_blobs(cfg.blobs_test_n, cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation,
                                   cfg.blobs_seed ^ 0x5eedf00dULL);
    test.split = Split::test;
    return {std::move(train), std::move(test)};
  }
  std::filesystem::path dir = dir_override;
  if (dir.empty()) dir = cfg.dir;
  if (dir.empty()) dir = data_dir_from_env();
  if (dir.empty()) throw IoError("no MNIST directory: set data.dir, --data-dir or DATA_DIR");
  Dataset train = load_mnist(dir, Split::train);
  Dataset test = load_mnist(dir, Split::test);
  auto head = [](Dataset& d, std::size_t limit) {
    if (limit == 0 || limit >= d.size()) return;
    std::vector<std::size_t> rows(limit);
    for (std::size_t i = 0; i < limit; ++i) rows[i] = i;
    d = d.subset(rows);
  };
  head(train, cfg.train_limit);
  head(test, cfg.test_limit);
  return {std::move(train), std::move(test)};
}

}  // namespace vib
