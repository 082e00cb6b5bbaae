#include "vibnet/vibnet.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "analysis.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "prune.hpp"
#include "trainer.hpp"

struct vib_config {
  vib::RunConfig cfg;
  std::string text;
  std::string out_dir;
};

struct vib_dataset {
  vib::Dataset data;
};

struct vib_network {
  vib::Network net;
  vib::CheckpointMeta meta;
  std::string widths;
};

struct vib_train_log {
  vib::TrainLog log;
  std::string csv;
};

struct vib_prune_report {
  vib::PruneReport report;
  std::string text;
  std::string csv;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_error_key;

vib_status fail(vib_status s, const std::string& msg, const std::string& key = "") {
  g_error = msg;
  g_error_key = key;
  return s;
}

// Runs `body`, translating the core's exception taxonomy into status codes.
template <typename F>
vib_status guarded(F&& body) {
  try {
    g_error.clear();
    g_error_key.clear();
    body();
    return VIB_OK;
  } catch (const vib::ConfigError& e) {
    return fail(VIB_ERR_CONFIG, e.what(), e.key);
  } catch (const vib::DimensionError& e) {
    return fail(VIB_ERR_DIMENSION, e.what());
  } catch (const vib::StateError& e) {
    return fail(VIB_ERR_STATE, e.what());
  } catch (const vib::InputError& e) {
    return fail(VIB_ERR_INPUT, e.what());
  } catch (const vib::DomainError& e) {
    return fail(VIB_ERR_DOMAIN, e.what());
  } catch (const vib::ParseError& e) {
    return fail(VIB_ERR_PARSE, e.what());
  } catch (const vib::IoError& e) {
    return fail(VIB_ERR_IO, e.what());
  } catch (const vib::DegenerateArchitecture& e) {
    return fail(VIB_ERR_DEGENERATE, e.what());
  } catch (const vib::Diverged& e) {
    return fail(VIB_ERR_DIVERGED, e.what());
  } catch (const std::bad_alloc&) {
    return fail(VIB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(VIB_ERR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (!p) throw vib::InputError(std::string(what) + " must not be null");
}

std::uint64_t init_seed(std::uint64_t seed) { return vib::RandomSource::mix(seed ^ 0x696e6974ULL); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw vib::IoError("cannot write " + path);
  out << text;
  if (!out) throw vib::IoError("write failed for " + path);
}

void load_pair(const vib::DataConfig& d, const char* dir, vib_dataset** train, vib_dataset** test) {
  require(train, "train");
  require(test, "test");
  auto [a, b] = vib::load_datasets(d, dir ? std::filesystem::path(dir) : std::filesystem::path());
  auto ta = std::make_unique<vib_dataset>(vib_dataset{std::move(a)});
  auto tb = std::make_unique<vib_dataset>(vib_dataset{std::move(b)});
  *train = ta.release();
  *test = tb.release();
}

}  // namespace

extern "C" {

const char* vib_status_name(vib_status s) {
  switch (s) {
    case VIB_OK: return "ok";
    case VIB_ERR_DIMENSION: return "dimension";
    case VIB_ERR_STATE: return "state";
    case VIB_ERR_INPUT: return "input";
    case VIB_ERR_DOMAIN: return "domain";
    case VIB_ERR_PARSE: return "parse";
    case VIB_ERR_IO: return "io";
    case VIB_ERR_CONFIG: return "config";
    case VIB_ERR_DEGENERATE: return "degenerate";
    case VIB_ERR_DIVERGED: return "diverged";
    case VIB_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* vib_last_error(void) { return g_error.c_str(); }
const char* vib_last_error_key(void) { return g_error_key.c_str(); }
const char* vib_version(void) { return "1.0.0"; }

// ---- configuration ----------------------------------------------------------

vib_status vib_config_load(const char* path, vib_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto c = std::make_unique<vib_config>();
    c->cfg = vib::load_config(path);
    *out = c.release();
  });
}

vib_status vib_config_parse(const char* text, vib_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    auto c = std::make_unique<vib_config>();
    c->cfg = vib::parse_config(text);
    *out = c.release();
  });
}

const char* vib_config_text(vib_config* c) {
  c->text = vib::format_config(c->cfg);
  return c->text.c_str();
}
const char* vib_config_architecture(const vib_config* c) { return c->cfg.architecture.c_str(); }
const char* vib_config_out_dir(const vib_config* c) {
  auto* m = const_cast<vib_config*>(c);
  m->out_dir = c->cfg.out_dir.string();
  return m->out_dir.c_str();
}
uint64_t vib_config_seed(const vib_config* c) { return c->cfg.train.seed; }
size_t vib_config_checkpoint_every(const vib_config* c) { return c->cfg.checkpoint_every; }
size_t vib_config_fine_tune_epochs(const vib_config* c) { return c->cfg.fine_tune_epochs; }
double vib_config_prune_tau(const vib_config* c) { return c->cfg.prune_tau; }
int vib_config_prune_fold(const vib_config* c) { return c->cfg.prune_fold ? 1 : 0; }
void vib_config_free(vib_config* c) { delete c; }

// ---- datasets -----------------------------------------------------------------

vib_status vib_dataset_load(const vib_config* cfg, const char* data_dir, vib_dataset** train, vib_dataset** test) {
  return guarded([&] {
    require(cfg, "cfg");
    load_pair(cfg->cfg.data, data_dir, train, test);
  });
}

vib_status vib_dataset_load_tag(const char* tag, const char* data_dir, vib_dataset** train, vib_dataset** test) {
  return guarded([&] {
    require(tag, "tag");
    load_pair(vib::DataConfig::from_tag(tag), data_dir, train, test);
  });
}

vib_status vib_dataset_create(const double* images, const int* labels, size_t n, size_t features, size_t num_classes,
                              vib_dataset** out) {
  return guarded([&] {
    require(images, "images");
    require(labels, "labels");
    require(out, "out");
    auto d = std::make_unique<vib_dataset>();
    d->data.images = vib::Tensor({n, features}, std::vector<double>(images, images + n * features));
    d->data.labels.assign(labels, labels + n);
    d->data.num_classes = num_classes;
    d->data.validate();
    *out = d.release();
  });
}

size_t vib_dataset_size(const vib_dataset* d) { return d->data.size(); }
size_t vib_dataset_features(const vib_dataset* d) { return d->data.images.features(); }
void vib_dataset_free(vib_dataset* d) { delete d; }

// ---- networks -----------------------------------------------------------------

vib_status vib_network_build(const char* architecture, uint64_t seed, vib_network** out) {
  return guarded([&] {
    require(architecture, "architecture");
    require(out, "out");
    auto n = std::make_unique<vib_network>();
    vib::RandomSource rng(init_seed(seed));
    n->net = vib::build_architecture(architecture, rng);
    n->meta.seed = seed;
    *out = n.release();
  });
}

vib_status vib_network_clone(const vib_network* net, vib_network** out) {
  return guarded([&] {
    require(net, "net");
    require(out, "out");
    *out = new vib_network{net->net, net->meta, {}};
  });
}

vib_status vib_network_load(const char* path, vib_network** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto n = std::make_unique<vib_network>();
    n->net = vib::load_checkpoint(path, &n->meta);
    *out = n.release();
  });
}

vib_status vib_network_save(const vib_network* net, const char* path) {
  return guarded([&] {
    require(net, "net");
    require(path, "path");
    vib::save_checkpoint(path, net->net, net->meta);
  });
}

void vib_network_set_meta(vib_network* net, uint64_t seed, uint32_t epoch, const char* data_tag) {
  net->meta.seed = seed;
  net->meta.epoch = epoch;
  if (data_tag) net->meta.data = data_tag;
}
uint64_t vib_network_seed(const vib_network* net) { return net->meta.seed; }
uint32_t vib_network_epoch(const vib_network* net) { return net->meta.epoch; }
const char* vib_network_data_tag(const vib_network* net) { return net->meta.data.c_str(); }
const char* vib_network_name(const vib_network* net) { return net->net.name.c_str(); }
const char* vib_network_widths(vib_network* net) {
  net->widths = net->net.summary().width_string();
  return net->widths.c_str();
}
size_t vib_network_input_features(const vib_network* net) { return net->net.full_input_features(); }
size_t vib_network_output_width(const vib_network* net) { return net->net.output_width(); }

vib_status vib_network_compression(const vib_network* net, double* r_w, double* flops, double* r_n, int* is_pruned) {
  return guarded([&] {
    require(net, "net");
    const vib::ArchSummary now = net->net.summary();
    const vib::ArchSummary& orig = net->net.original;
    if (r_w) *r_w = vib::compute_r_w(orig, now);
    if (flops) *flops = static_cast<double>(vib::compute_flops(now));
    if (r_n) *r_n = vib::compute_r_n(orig, now);
    if (is_pruned) *is_pruned = now == orig ? 0 : 1;
  });
}

vib_status vib_network_predict(const vib_network* net, const double* x, size_t n, size_t features, double* out) {
  return guarded([&] {
    require(net, "net");
    require(x, "x");
    require(out, "out");
    const vib::Tensor y = vib::predict(net->net, vib::Tensor({n, features}, std::vector<double>(x, x + n * features)));
    std::copy(y.values().begin(), y.values().end(), out);
  });
}

vib_status vib_network_error_rate(const vib_network* net, const vib_dataset* data, double* error) {
  return guarded([&] {
    require(net, "net");
    require(data, "data");
    require(error, "error");
    *error = vib::error_rate(net->net, data->data);
  });
}

void vib_network_free(vib_network* net) { delete net; }

// ---- training -----------------------------------------------------------------

vib_status vib_train(vib_network* net, const vib_config* cfg, const vib_dataset* train, const vib_dataset* test,
                     vib_epoch_callback callback, void* user, vib_train_log** log) {
  return guarded([&] {
    require(net, "net");
    require(cfg, "cfg");
    require(train, "train");
    const vib::RunConfig& rc = cfg->cfg;
    net->net.count_input_gate_in_depth = rc.count_input_gate_in_depth;
    net->meta.seed = rc.train.seed;
    net->meta.data = rc.data.tag();
    vib::TrainHooks hooks;
    std::unique_ptr<vib::MiTracker> tracker;
    if (rc.analysis.mi_track) {
      tracker = std::make_unique<vib::MiTracker>(
          vib::MiTracker::from_dataset(train->data, rc.analysis.mi_subset, rc.train.seed, rc.analysis.mi_k));
      hooks.mutual_information = [&](const vib::Network& n, std::size_t epoch) { return (*tracker)(n, epoch); };
    }
    if (callback) {
      hooks.on_epoch = [&](const vib::Network& n, vib::EpochRow& row) {
        // the callback sees the live network through a handle sharing its meta
        vib_network view{n, net->meta, {}};
        view.meta.epoch = static_cast<std::uint32_t>(row.epoch);
        if (callback(user, &view, row.epoch) != 0)
          throw vib::StateError("training stopped by callback at epoch " + std::to_string(row.epoch));
      };
    }
    auto l = std::make_unique<vib_train_log>();
    l->log = vib::train(net->net, train->data, test ? &test->data : nullptr, rc.train, hooks);
    net->meta.epoch = static_cast<std::uint32_t>(rc.train.epochs);
    if (log) *log = l.release();
  });
}

vib_status vib_fine_tune(vib_network* net, const vib_config* cfg, const vib_dataset* train, const vib_dataset* test,
                         vib_train_log** log) {
  return guarded([&] {
    require(net, "net");
    require(cfg, "cfg");
    require(train, "train");
    vib::TrainConfig tc = cfg->cfg.train;
    tc.epochs = cfg->cfg.fine_tune_epochs;
    if (cfg->cfg.fine_tune_learning_rate > 0.0) tc.learning_rate = cfg->cfg.fine_tune_learning_rate;
    tc.lr_decay_every = 0;
    auto l = std::make_unique<vib_train_log>();
    net->net = vib::fine_tune(net->net, train->data, tc, &l->log, test ? &test->data : nullptr);
    if (log) *log = l.release();
  });
}

const char* vib_train_log_csv(vib_train_log* log) {
  log->csv = log->log.csv();
  return log->csv.c_str();
}

vib_status vib_train_log_write(const vib_train_log* log, const char* path) {
  return guarded([&] {
    require(log, "log");
    require(path, "path");
    log->log.write_csv(path);
  });
}

size_t vib_train_log_epochs(const vib_train_log* log) { return log->log.rows.size(); }
void vib_train_log_free(vib_train_log* log) { delete log; }

// ---- pruning ------------------------------------------------------------------

vib_status vib_prune(const vib_network* net, double tau, int fold, vib_network** pruned, vib_prune_report** report) {
  return guarded([&] {
    require(net, "net");
    require(pruned, "pruned");
    vib::PruneOptions opts;
    opts.fold_multipliers = fold != 0;
    vib::PruneResult r = vib::prune(net->net, tau, opts);
    auto p = std::make_unique<vib_network>(vib_network{std::move(r.network), net->meta, {}});
    if (report) *report = new vib_prune_report{std::move(r.report), {}, {}};
    *pruned = p.release();
  });
}

void vib_prune_report_set_errors(vib_prune_report* r, double before, double after) {
  r->report.err_before = before;
  r->report.err_after = after;
}

const char* vib_prune_report_text(vib_prune_report* r) {
  r->text = r->report.text();
  return r->text.c_str();
}

const char* vib_prune_report_csv(vib_prune_report* r) {
  r->csv = vib::PruneReport::csv_header() + "\n" + r->report.csv_row() + "\n";
  return r->csv.c_str();
}

double vib_prune_report_r_w(const vib_prune_report* r) { return r->report.r_w; }
double vib_prune_report_r_n(const vib_prune_report* r) { return r->report.r_n; }
double vib_prune_report_flops(const vib_prune_report* r) { return static_cast<double>(r->report.flops); }
void vib_prune_report_free(vib_prune_report* r) { delete r; }

// ---- analysis -----------------------------------------------------------------

vib_status vib_analyze_penalty_grid(const vib_config* cfg, const char* path, double* worst) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    const auto& a = cfg->cfg.analysis;
    std::vector<double> mus(a.grid_points);
    for (std::size_t i = 0; i < a.grid_points; ++i)
      mus[i] = a.grid_mu_min + (a.grid_mu_max - a.grid_mu_min) * static_cast<double>(i) /
                                   static_cast<double>(a.grid_points - 1);
    const auto rows = vib::penalty_grid(mus, a.grid_omegas);
    double w = 0.0;
    for (const auto& r : rows) w = std::max(w, std::abs(r.diff));
    write_text(path, vib::penalty_grid_csv(rows));
    if (worst) *worst = w;
  });
}

vib_status vib_analyze_surrogate(const vib_config* cfg, const char* path, size_t* max_nnz) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    const auto& a = cfg->cfg.analysis;
    vib::RandomSource rng(cfg->cfg.train.seed);
    std::ostringstream csv;
    csv << "problem,restart,nnz,objective,iterations,converged\n" << std::setprecision(12);
    std::size_t worst = 0;
    for (std::size_t p = 0; p < a.surrogate_problems; ++p) {
      const auto prob = vib::SurrogateProblem::random(a.surrogate_dim, a.surrogate_rank, a.surrogate_gamma, a.surrogate_b_scale, rng);
      const auto results = vib::surrogate_restarts(prob, rng.next_u64(), a.surrogate_restarts);
      for (std::size_t r = 0; r < results.size(); ++r) {
        const auto& res = results[r];
        worst = std::max(worst, res.nnz);
        csv << p << ',' << r << ',' << res.nnz << ',' << res.objective << ',' << res.iterations << ','
            << (res.converged ? 1 : 0) << '\n';
      }
    }
    write_text(path, csv.str());
    if (max_nnz) *max_nnz = worst;
  });
}

vib_status vib_analyze_mi_demo(const vib_config* cfg, const char* path, double* worst_error) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    const std::size_t n = std::max<std::size_t>(cfg->cfg.analysis.mi_subset, 2 * cfg->cfg.analysis.mi_k + 1);
    const std::size_t k = cfg->cfg.analysis.mi_k;
    vib::RandomSource rng(cfg->cfg.train.seed);
    std::ostringstream csv;
    csv << "correlation,n,k,estimate,exact,error\n" << std::setprecision(12);
    double worst = 0.0;
    for (double r : {0.0, 0.3, 0.6, 0.9}) {
      vib::Tensor x({n, 1}), y({n, 1});
      for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.standard_normal(), b = rng.standard_normal();
        x[i] = a;
        y[i] = r * a + std::sqrt(1.0 - r * r) * b;
      }
      const double est = vib::ksg_mutual_information(x, y, k).value;
      const double exact = -0.5 * std::log(1.0 - r * r);
      worst = std::max(worst, std::abs(est - exact));
      csv << r << ',' << n << ',' << k << ',' << est << ',' << exact << ',' << est - exact << '\n';
    }
    write_text(path, csv.str());
    if (worst_error) *worst_error = worst;
  });
}

vib_status vib_mutual_information(const double* x, size_t dx, const double* y, size_t dy, size_t n, size_t k,
                                  double* out) {
  return guarded([&] {
    require(x, "x");
    require(y, "y");
    require(out, "out");
    const vib::Tensor tx({n, dx}, std::vector<double>(x, x + n * dx));
    const vib::Tensor ty({n, dy}, std::vector<double>(y, y + n * dy));
    *out = vib::ksg_mutual_information(tx, ty, k).value;
  });
}

}  // extern "C"
