#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "prune.hpp"

namespace vib {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive", "learning_rate");
  if (gate_learning_rate < 0.0) throw ConfigError("gate learning rate must be nonnegative", "gate_learning_rate");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1", "batch_size");
  if (!(gamma_prime >= 0.0)) throw ConfigError("gamma_prime must be nonnegative", "gamma_prime");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative", "weight_decay");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)", "momentum");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0,1)", "beta1");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0,1)", "beta2");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive", "lr_decay");
  if (!(prune_tau > 0.0)) throw ConfigError("prune_tau must be positive", "prune_tau");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1", "eval_every");
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  os << "epoch,loss,data_term";
  for (const auto& n : layer_names) os << ",kl_" << n;
  os << ",train_error,test_error";
  for (const auto& n : layer_names) os << ",survivors_" << n;
  os << ",mutual_information\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.loss << ',' << r.data_term;
    for (double k : r.kl) os << ',' << k;
    os << ',' << r.train_error << ',';
    if (r.test_error) os << *r.test_error;
    for (auto s : r.survivors) os << ',' << s;
    os << ',';
    if (r.mutual_information) os << *r.mutual_information;
    os << '\n';
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv();
  if (!out) throw IoError("write failed for " + path.string());
}

double error_rate(const Network& net, const Dataset& data, std::size_t batch) {
  if (data.size() == 0) throw InputError("cannot evaluate on an empty dataset");
  std::size_t wrong = 0;
  for (std::size_t first = 0; first < data.size(); first += batch) {
    const std::size_t n = std::min(batch, data.size() - first);
    const Tensor out = predict(net, slice_rows(data.images, first, n));
    const std::size_t k = out.features();
    for (std::size_t b = 0; b < n; ++b) {
      const double* row = out.data() + b * k;
      const auto arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      if (static_cast<int>(arg) != data.labels[first + b]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

Optimizer::Optimizer(const TrainConfig& cfg, const std::vector<ParamRef>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    if (cfg.optimizer == OptimizerKind::adam) v_.emplace_back(p.value.size(), 0.0);
  }
}

void Optimizer::step(std::vector<ParamRef>& params, const std::vector<std::span<double>>& grads, double lr_scale,
                     std::span<const ParamGroup> frozen) {
  if (params.size() != m_.size() || grads.size() != params.size())
    throw StateError("optimizer parameter list changed shape");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamRef& p = params[i];
    if (std::find(frozen.begin(), frozen.end(), p.group) != frozen.end()) continue;
    if (p.value.size() != m_[i].size()) throw StateError("optimizer parameter '" + p.name + "' changed size");
    const bool gate = p.group == ParamGroup::gate_mu || p.group == ParamGroup::gate_log_sigma2;
    const double lr = lr_scale * (gate && cfg_.gate_learning_rate > 0.0 ? cfg_.gate_learning_rate : cfg_.learning_rate);
    const double decay = p.group == ParamGroup::weight ? cfg_.weight_decay : 0.0;
    auto& m = m_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      double& w = p.value[j];
      if (!std::isfinite(w)) continue;  // deterministic gate coordinates (log sigma^2 = -inf)
      const double g = grads[i][j] + decay * w;
      if (cfg_.optimizer == OptimizerKind::adam) {
        auto& v = v_[i];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        w -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_epsilon);
      } else {
        m[j] = cfg_.momentum * m[j] + g;
        w -= lr * m[j];
      }
    }
  }
}

namespace {

bool finite_and_bounded(std::span<const double> v, double bound) {
  for (double x : v)
    if (!std::isfinite(x) || std::abs(x) > bound) return false;
  return true;
}

std::string locate_divergence(Network& net, const ForwardCache& cache) {
  for (const auto& p : param_refs(net)) {
    bool bad = false;
    for (double v : p.value) bad |= std::isnan(v) || (std::isinf(v) && p.group != ParamGroup::gate_log_sigma2);
    if (bad) return p.name;
  }
  if (cache.valid) {
    for (std::size_t i = 0; i < cache.gates.size(); ++i)
      if (!finite_and_bounded(cache.gates[i].input.values(), 1e8)) return "block" + std::to_string(i);
  }
  const auto kl = kl_terms(net);
  for (std::size_t i = 0; i < kl.size(); ++i)
    if (!std::isfinite(kl[i]))
      return i == 0 && net.input_gate ? "input_gate" : "block" + std::to_string(i - (net.input_gate ? 1 : 0));
  return "head";
}

std::vector<std::string> gate_names(const Network& net) {
  std::vector<std::string> names;
  if (net.input_gate) names.emplace_back("input_gate");
  for (std::size_t i = 0; i < net.blocks.size(); ++i) names.push_back("block" + std::to_string(i));
  return names;
}

void update_norm_statistics(Network& net, const ForwardCache& cache) {
  for (std::size_t i = 0; i < net.blocks.size(); ++i)
    for (std::size_t j = 0; j < net.blocks[i].layers.size(); ++j)
      if (net.blocks[i].layers[j].kind == LayerKind::batch_norm)
        update_running_stats(net.blocks[i].layers[j], cache.layers[i][j]);
}

std::size_t count_errors(const Tensor& out, std::span<const int> labels) {
  const std::size_t k = out.features();
  std::size_t wrong = 0;
  for (std::size_t b = 0; b < out.batch(); ++b) {
    const double* row = out.data() + b * k;
    if (static_cast<int>(std::max_element(row, row + k) - row) != labels[b]) ++wrong;
  }
  return wrong;
}

struct LoopSettings {
  ForwardOptions forward;
  bool include_kl = true;
  std::vector<ParamGroup> frozen;
};

TrainLog run_epochs(Network& net, const Dataset& data, const Dataset* test, const TrainConfig& cfg,
                    const LoopSettings& loop, const TrainHooks& hooks) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw InputError("training set is empty");
  prepare_input(net, slice_rows(data.images, 0, 1));  // shape check before any work
  if (net.likelihood != Likelihood::categorical_softmax) throw InputError("training expects a softmax head");

  TrainLog log;
  log.seed = cfg.seed;
  log.layer_names = gate_names(net);
  RandomSource root(cfg.seed);
  RandomSource shuffle = root.split();
  RandomSource noise = root.split();
  auto params = param_refs(net);
  Optimizer opt(cfg, params);
  const std::size_t n = data.size();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_scale =
        cfg.lr_decay_every ? std::pow(cfg.lr_decay, static_cast<double>((epoch - 1) / cfg.lr_decay_every)) : 1.0;
    const auto order = shuffle.permutation(n);
    double loss_sum = 0.0, data_sum = 0.0;
    std::size_t batches = 0, wrong = 0;
    for (std::size_t first = 0; first < n; first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - first);
      const std::span<const std::size_t> rows(order.data() + first, count);
      const Tensor x = gather_rows(data.images, rows);
      std::vector<int> y(count);
      for (std::size_t b = 0; b < count; ++b) y[b] = data.labels[rows[b]];
      ForwardCache cache;
      LossAndGrads lg = loss_and_gradients(net, x, {y, nullptr}, loop.forward, noise, loop.include_kl, &cache);
      if (!std::isfinite(lg.loss.total) || std::abs(lg.loss.total) > 1e8) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", step " << batches + 1 << ": loss " << lg.loss.total
           << "; first non-finite or exploding values in " << locate_divergence(net, cache);
        throw Diverged(os.str());
      }
      loss_sum += lg.loss.total;
      data_sum += lg.loss.data_term;
      wrong += count_errors(lg.outputs, y);
      ++batches;
      if (loop.forward.bn_training) update_norm_statistics(net, cache);
      const auto grads = grad_refs(lg.grads, net);
      opt.step(params, grads, lr_scale, loop.frozen);
      if (hooks.on_step) hooks.on_step(net);
      ++net.revision;
    }
    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(batches);
    row.data_term = data_sum / static_cast<double>(batches);
    row.kl = kl_terms(net);
    if (!loop.include_kl) std::fill(row.kl.begin(), row.kl.end(), 0.0);
    row.train_error = static_cast<double>(wrong) / static_cast<double>(n);
    for (const VibGate* g : net.gates()) row.survivors.push_back(surviving_indices(*g, cfg.prune_tau).size());
    if (test && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) row.test_error = error_rate(net, *test);
    if (hooks.mutual_information) row.mutual_information = hooks.mutual_information(net, epoch);
    if (hooks.on_epoch) hooks.on_epoch(net, row);
    log.rows.push_back(std::move(row));
  }
  return log;
}

}  // namespace

TrainLog train(Network& net, const Dataset& data, const Dataset* test, const TrainConfig& cfg,
               const TrainHooks& hooks) {
  assign_gammas(net, cfg.gamma_prime, cfg.gamma_rule == GammaRule::inverse_side_length);
  LoopSettings loop;
  loop.forward = ForwardOptions::train();
  loop.forward.draw = cfg.epsilon_draw;
  return run_epochs(net, data, test, cfg, loop, hooks);
}

Network fine_tune(const Network& pruned, const Dataset& data, const TrainConfig& cfg, TrainLog* log,
                  const Dataset* test) {
  Network net = pruned;
  if (cfg.epochs == 0) return net;
  for (VibGate* g : net.gates()) g->gamma = 0.0;
  LoopSettings loop;
  loop.forward = {GateMode::eval_mean, true, cfg.epsilon_draw};
  loop.include_kl = false;
  loop.frozen = {ParamGroup::gate_mu, ParamGroup::gate_log_sigma2};
  const ArchSummary before = net.summary();
  TrainLog l = run_epochs(net, data, test, cfg, loop, {});
  // restore the gammas the network arrived with
  auto src = pruned.gates();
  auto dst = net.gates();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->gamma = src[i]->gamma;
  if (!(net.summary() == before)) throw StateError("fine-tuning changed the architecture");
  if (log) *log = std::move(l);
  return net;
}

}  // namespace vib
