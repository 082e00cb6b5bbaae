// Command-line driver: train -> prune -> eval -> analyze. Talks to the library
// only through the C interface in vibnet/vibnet.h.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "vibnet/vibnet.h"

namespace fs = std::filesystem;

namespace {

// A failed library call, carried up to main() and reported as one JSON line.
struct Failure {
  vib_status status;
  std::string message;
  std::string key;
};

int exit_code(vib_status s) {
  switch (s) {
    case VIB_OK: return 0;
    case VIB_ERR_CONFIG: return 2;
    case VIB_ERR_IO: return 3;
    case VIB_ERR_DEGENERATE: return 4;
    default: return 1;
  }
}

void check(vib_status s) {
  if (s != VIB_OK) throw Failure{s, vib_last_error(), vib_last_error_key()};
}

[[noreturn]] void missing(const std::string& what) { throw Failure{VIB_ERR_IO, what + " not found", ""}; }

// RAII wrappers for the opaque handles.
template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Config = Handle<vib_config, vib_config_free>;
using Data = Handle<vib_dataset, vib_dataset_free>;
using Net = Handle<vib_network, vib_network_free>;
using Log = Handle<vib_train_log, vib_train_log_free>;
using Report = Handle<vib_prune_report, vib_prune_report_free>;

const char* opt_cstr(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{VIB_ERR_IO, "cannot create " + dir.string() + ": " + ec.message(), ""};
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw Failure{VIB_ERR_IO, "cannot write " + path.string(), ""};
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v);
  return buf;
}

struct Options {
  std::string config, checkpoint, out, data_dir, split = "test";
  std::optional<double> tau;
  bool fold = false;
  bool metrics_only = false;
  bool penalty_grid = false, surrogate = false, mi_demo = false;
};

struct EpochSaver {
  fs::path dir;
  std::size_t every = 0;
};

int save_every(void* user, const vib_network* net, size_t epoch) {
  const auto* s = static_cast<const EpochSaver*>(user);
  if (s->every == 0 || epoch % s->every != 0) return 0;
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.vibn", epoch);
  if (vib_network_save(net, (s->dir / name).string().c_str()) != VIB_OK) {
    std::cerr << "warning: " << vib_last_error() << '\n';
    return 1;
  }
  return 0;
}

int cmd_train(const Options& o) {
  if (!fs::exists(o.config)) missing("config " + o.config);
  Config cfg;
  check(vib_config_load(o.config.c_str(), cfg.out()));
  const fs::path out = o.out.empty() ? fs::path(vib_config_out_dir(cfg.get())) : fs::path(o.out);
  ensure_dir(out);
  Data train, test;
  check(vib_dataset_load(cfg.get(), opt_cstr(o.data_dir), train.out(), test.out()));
  Net net;
  check(vib_network_build(vib_config_architecture(cfg.get()), vib_config_seed(cfg.get()), net.out()));
  EpochSaver saver{out, vib_config_checkpoint_every(cfg.get())};
  Log log;
  check(vib_train(net.get(), cfg.get(), train.get(), test.get(), save_every, &saver, log.out()));
  check(vib_network_save(net.get(), (out / "model.vibn").string().c_str()));
  check(vib_train_log_write(log.get(), (out / "train_log.csv").string().c_str()));
  write_text(out / "config.ini", vib_config_text(cfg.get()));
  double err = 0.0;
  check(vib_network_error_rate(net.get(), test.get(), &err));
  std::cout << "trained " << vib_network_name(net.get()) << " seed=" << vib_network_seed(net.get())
            << " epochs=" << vib_train_log_epochs(log.get()) << " widths=" << vib_network_widths(net.get())
            << " test_error=" << pct(100.0 * err) << " checkpoint=" << (out / "model.vibn").string() << '\n';
  return 0;
}

int cmd_prune(const Options& o) {
  if (!fs::exists(o.checkpoint)) missing("checkpoint " + o.checkpoint);
  Net net;
  check(vib_network_load(o.checkpoint.c_str(), net.out()));
  Config cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) missing("config " + o.config);
    check(vib_config_load(o.config.c_str(), cfg.out()));
  }
  const double tau = o.tau ? *o.tau : cfg.get() ? vib_config_prune_tau(cfg.get()) : 1e-2;
  const bool fold = o.fold || (cfg.get() && vib_config_prune_fold(cfg.get()));
  const fs::path out = o.out.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.out);
  ensure_dir(out);

  Net pruned;
  Report report;
  check(vib_prune(net.get(), tau, fold ? 1 : 0, pruned.out(), report.out()));
  if (cfg.get()) {
    // with a config the data is at hand: record errors and optionally fine-tune
    Data train, test;
    check(vib_dataset_load(cfg.get(), opt_cstr(o.data_dir), train.out(), test.out()));
    double before = 0.0, after = 0.0;
    check(vib_network_error_rate(net.get(), test.get(), &before));
    if (vib_config_fine_tune_epochs(cfg.get()) > 0) {
      Log log;
      check(vib_fine_tune(pruned.get(), cfg.get(), train.get(), test.get(), log.out()));
      check(vib_train_log_write(log.get(), (out / "fine_tune_log.csv").string().c_str()));
    }
    check(vib_network_error_rate(pruned.get(), test.get(), &after));
    vib_prune_report_set_errors(report.get(), before, after);
  }
  check(vib_network_save(pruned.get(), (out / "pruned.vibn").string().c_str()));
  write_text(out / "prune_report.txt", vib_prune_report_text(report.get()));
  write_text(out / "prune_report.csv", vib_prune_report_csv(report.get()));
  std::cout << vib_prune_report_text(report.get());
  return 0;
}

int cmd_eval(const Options& o) {
  if (!fs::exists(o.checkpoint)) missing("checkpoint " + o.checkpoint);
  Net net;
  check(vib_network_load(o.checkpoint.c_str(), net.out()));
  double r_w = 0, flops = 0, r_n = 0;
  int pruned = 0;
  check(vib_network_compression(net.get(), &r_w, &flops, &r_n, &pruned));
  std::cout << "network " << vib_network_name(net.get()) << " widths=" << vib_network_widths(net.get()) << '\n';
  if (pruned) std::cout << "r_w " << pct(r_w) << "\nflops " << static_cast<long long>(flops) << "\nr_n " << pct(r_n) << '\n';
  else std::cout << "flops " << static_cast<long long>(flops) << '\n';
  if (o.metrics_only) return 0;
  Data train, test;
  check(vib_dataset_load_tag(vib_network_data_tag(net.get()), opt_cstr(o.data_dir), train.out(), test.out()));
  double err = 0.0;
  check(vib_network_error_rate(net.get(), o.split == "train" ? train.get() : test.get(), &err));
  std::cout << o.split << "_error " << pct(100.0 * err) << '\n';
  return 0;
}

int cmd_analyze(const Options& o) {
  Config cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) missing("config " + o.config);
    check(vib_config_load(o.config.c_str(), cfg.out()));
  } else {
    check(vib_config_parse("", cfg.out()));
  }
  const fs::path out = o.out.empty() ? fs::path(vib_config_out_dir(cfg.get())) : fs::path(o.out);
  ensure_dir(out);
  const bool all = !o.penalty_grid && !o.surrogate && !o.mi_demo;
  if (all || o.penalty_grid) {
    double worst = 0;
    check(vib_analyze_penalty_grid(cfg.get(), (out / "penalty_grid.csv").string().c_str(), &worst));
    std::cout << "penalty_grid max_abs_diff=" << worst << " csv=" << (out / "penalty_grid.csv").string() << '\n';
  }
  if (all || o.surrogate) {
    size_t nnz = 0;
    check(vib_analyze_surrogate(cfg.get(), (out / "surrogate.csv").string().c_str(), &nnz));
    std::cout << "surrogate max_nnz=" << nnz << " csv=" << (out / "surrogate.csv").string() << '\n';
  }
  if (all || o.mi_demo) {
    double worst = 0;
    check(vib_analyze_mi_demo(cfg.get(), (out / "mi_demo.csv").string().c_str(), &worst));
    std::cout << "mi_demo max_abs_error=" << worst << " csv=" << (out / "mi_demo.csv").string() << '\n';
  }
  return 0;
}

void report_error(const std::string& status, int code, const std::string& message, const std::string& key) {
  nlohmann::json j{{"error", status}, {"exit", code}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vibnet: information-bottleneck network compression"};
  app.require_subcommand(1);
  Options o;
  if (const char* env = std::getenv("DATA_DIR")) o.data_dir = env;

  auto* train = app.add_subcommand("train", "train a network from a config file");
  train->add_option("--config", o.config, "run config (key = value with [sections])")->required();
  train->add_option("--out", o.out, "output directory (default: run.out_dir)");
  train->add_option("--data-dir", o.data_dir, "MNIST directory (default: $DATA_DIR)");

  auto* prune = app.add_subcommand("prune", "remove gates with small signal-to-noise ratio");
  prune->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  prune->add_option("--tau", o.tau, "threshold on mu^2 / sigma^2 (default 1e-2)");
  prune->add_option("--out", o.out, "output directory (default: next to the checkpoint)");
  prune->add_option("--config", o.config, "config for error measurement and fine-tuning");
  prune->add_option("--data-dir", o.data_dir, "MNIST directory (default: $DATA_DIR)");
  prune->add_flag("--fold", o.fold, "fold surviving gate means into the next layer");

  auto* eval = app.add_subcommand("eval", "report error and compression of a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--split", o.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--data-dir", o.data_dir, "MNIST directory (default: $DATA_DIR)");
  eval->add_flag("--metrics-only", o.metrics_only, "skip the dataset pass");

  auto* analyze = app.add_subcommand("analyze", "penalty, surrogate and estimator studies");
  analyze->add_option("--config", o.config, "config with an [analysis] section");
  analyze->add_option("--out", o.out, "output directory (default: run.out_dir)");
  analyze->add_flag("--penalty-grid", o.penalty_grid, "effective penalty vs brute-force infimum");
  analyze->add_flag("--surrogate", o.surrogate, "sparsity of surrogate minima");
  analyze->add_flag("--mi-demo", o.mi_demo, "estimator on correlated Gaussians");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", 1, e.what(), "");
    return 1;
  }

  try {
    if (*train) return cmd_train(o);
    if (*prune) return cmd_prune(o);
    if (*eval) return cmd_eval(o);
    return cmd_analyze(o);
  } catch (const Failure& f) {
    const int code = exit_code(f.status);
    report_error(vib_status_name(f.status), code, f.message, f.key);
    return code;
  } catch (const std::exception& e) {
    report_error("internal", 1, e.what(), "");
    return 1;
  }
}
