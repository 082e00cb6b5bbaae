#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "trainer.hpp"

namespace vib {

enum class DataSource { mnist, blobs };

struct DataConfig {
  DataSource source = DataSource::mnist;
  std::filesystem::path dir;       // empty falls back to DATA_DIR
  std::size_t train_limit = 0;     // leading examples kept; 0 keeps all
  std::size_t test_limit = 0;
  std::size_t blobs_n = 1000;
  std::size_t blobs_test_n = 500;
  std::size_t blobs_classes = 3;
  std::size_t blobs_dim = 8;
  double blobs_separation = 6.0;
  std::uint64_t blobs_seed = 1;

  /// One-line tag stored in checkpoints so `eval` can rebuild the data.
  std::string tag() const;
  static DataConfig from_tag(const std::string& tag);
};

struct AnalysisConfig {
  bool mi_track = false;
  std::size_t mi_subset = 1000;
  std::size_t mi_k = 5;
  double grid_mu_min = -3.0;
  double grid_mu_max = 3.0;
  std::size_t grid_points = 61;
  std::vector<double> grid_omegas{0.01, 0.1, 1.0, 10.0};
  std::size_t surrogate_problems = 5;
  std::size_t surrogate_dim = 30;
  std::size_t surrogate_rank = 5;
  std::size_t surrogate_restarts = 20;
  double surrogate_gamma = 1.0;
  double surrogate_b_scale = 10.0;  // spread of the linear term b = A'y
};

struct RunConfig {
  std::string architecture = "lenet_300_100";
  std::filesystem::path out_dir = "out";
  std::size_t checkpoint_every = 0;  // epochs; 0 saves only the final network
  bool count_input_gate_in_depth = false;
  std::size_t fine_tune_epochs = 0;
  double fine_tune_learning_rate = 0.0;  // 0 reuses train.learning_rate
  double prune_tau = 1e-2;
  bool prune_fold = false;
  DataConfig data;
  TrainConfig train;
  AnalysisConfig analysis;

  void validate() const;
};

/// Parses `key = value` lines under [run], [data], [train], [prune] and
/// [analysis]. '#' and ';' start comments. Any unknown section or key throws
/// ConfigError carrying "section.key".
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& cfg);

/// Train and test sets for a data config. `dir_override` wins over the
/// configured directory, which wins over DATA_DIR.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg, const std::filesystem::path& dir_override = {});

}  // namespace vib
