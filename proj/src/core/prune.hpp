#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "network.hpp"

namespace vib {

inline constexpr double kDefaultPruneThreshold = 1e-2;

struct PruneOptions {
  /// Multiply surviving mu into the downstream weight columns and reset the
  /// gate to 1. Off by default: keeping mu as a separate multiplier makes the
  /// pruned forward pass bit-identical to the unpruned one.
  bool fold_multipliers = false;
};

struct PruneReport {
  double tau = kDefaultPruneThreshold;
  std::vector<std::string> layer_names;            // one per gate, input gate first
  std::vector<std::vector<std::size_t>> survivors;  // indices into the network that was pruned
  ArchSummary original_arch;
  ArchSummary pruned_arch;
  double r_w = 100.0;
  std::size_t flops = 0;
  double r_n = 100.0;
  std::optional<double> err_before;
  std::optional<double> err_after;

  std::string arch_string() const { return pruned_arch.width_string(); }
  std::string text() const;
  static std::string csv_header();
  std::string csv_row() const;
};

struct PruneResult {
  Network network;
  PruneReport report;
};

/// Indices j with alpha_j >= tau.
std::vector<std::size_t> surviving_indices(const VibGate& gate, double tau);

/// Removes every gate coordinate with alpha < tau together with the rows and
/// columns that feed and consume it. Surviving gates become deterministic
/// (sigma = 0). Throws DegenerateArchitecture when a layer would become empty.
PruneResult prune(const Network& net, double tau, const PruneOptions& opts = {});

/// Copy of `net` with mu set to 0 on every coordinate below tau. Used to check
/// surgery against the unpruned network.
Network zero_pruned_coordinates(const Network& net, double tau);

}  // namespace vib
