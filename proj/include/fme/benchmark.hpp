#pragma once

#include "fme/data.hpp"
#include "fme/em.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace fme {

/// Mean test CCR and its standard error over replicates for one variant at
/// one noise level. Failed fits are recorded, not averaged.
struct BenchmarkCell {
  std::vector<double> ccr;
  std::vector<std::string> errors;
  double mean = 0.0;
  double std_error = 0.0;
};

struct BenchmarkTable {
  std::vector<std::string> row_names;
  std::vector<double> noise_levels;
  std::vector<std::vector<BenchmarkCell>> cells;  // rows x noise levels
  /// Test CCR of the true-parameter classifier, one cell per noise level.
  std::vector<BenchmarkCell> ceiling;
  int replicates = 0;
};

/// The four benchmark fits in table order (FME-EM, FME-EM-Lasso, iFME-EM,
/// FMLR) with penalty weights tuned for the shipped generator.
std::vector<FitConfig> default_benchmark_configs();

using BenchmarkProgress = std::function<void(int replicate, double noise_var)>;

/// For each noise level and replicate: simulate, fit every config on the
/// training part and score it on the test part. Replicate r uses simulation
/// seed sim.seed + r at every noise level and fit seed config.seed + r.
BenchmarkTable run_benchmark(const std::vector<FitConfig>& configs, const SimConfig& sim,
                             int n_replicates, const std::vector<double>& noise_levels,
                             const BenchmarkProgress& progress = {});

/// Aligned table, one row per fit, "mean (se)" with 4 decimals.
std::string format_benchmark(const BenchmarkTable& table);
/// matrix-style CSV twin with full precision.
std::string benchmark_csv(const BenchmarkTable& table);

}  // namespace fme
