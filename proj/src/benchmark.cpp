#include "fme/benchmark.hpp"

#include "fme/errors.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace fme {

std::vector<FitConfig> default_benchmark_configs() {
  FitConfig base;
  base.K = 2;
  base.n_restarts = 2;
  base.max_em_iters = 300;

  FitConfig fme = base;
  fme.variant = Variant::FmeEm;

  FitConfig lasso = base;
  lasso.variant = Variant::FmeEmLasso;
  lasso.chi = 0.05;
  lasso.lambda = 0.05;

  FitConfig ifme = base;
  ifme.variant = Variant::IfmeEm;
  ifme.chi = 0.002;
  ifme.lambda = 0.002;

  FitConfig fmlr = base;
  fmlr.variant = Variant::Fmlr;
  fmlr.K = 1;
  return {fme, lasso, ifme, fmlr};
}

namespace {

void summarize(BenchmarkCell& cell) {
  const auto m = static_cast<double>(cell.ccr.size());
  if (cell.ccr.empty()) return;
  double s = 0.0;
  for (double v : cell.ccr) s += v;
  cell.mean = s / m;
  if (cell.ccr.size() > 1) {
    double ss = 0.0;
    for (double v : cell.ccr) ss += (v - cell.mean) * (v - cell.mean);
    cell.std_error = std::sqrt(ss / (m - 1.0)) / std::sqrt(m);
  }
}

}  // namespace

BenchmarkTable run_benchmark(const std::vector<FitConfig>& configs, const SimConfig& sim,
                             int n_replicates, const std::vector<double>& noise_levels,
                             const BenchmarkProgress& progress) {
  if (n_replicates < 2) throw ConfigError("a benchmark needs at least two replicates");
  if (configs.empty() || noise_levels.empty()) throw ConfigError("benchmark needs configs and noise levels");
  BenchmarkTable table;
  table.replicates = n_replicates;
  table.noise_levels = noise_levels;
  for (const auto& c : configs) table.row_names.push_back(display_name(c.variant));
  table.cells.assign(configs.size(), std::vector<BenchmarkCell>(noise_levels.size()));
  table.ceiling.assign(noise_levels.size(), BenchmarkCell{});

  for (std::size_t nl = 0; nl < noise_levels.size(); ++nl) {
    for (int rep = 0; rep < n_replicates; ++rep) {
      if (progress) progress(rep, noise_levels[nl]);
      SimConfig sc = sim;
      sc.noise_var = noise_levels[nl];
      sc.seed = sim.seed + static_cast<std::uint64_t>(rep);
      const SimResult data = simulate(sc);
      table.ceiling[nl].ccr.push_back(correct_classification_rate(
          true_parameter_predict(sc, data.truth, data.test), data.test.labels));
      for (std::size_t v = 0; v < configs.size(); ++v) {
        FitConfig fc = configs[v];
        fc.seed = configs[v].seed + static_cast<std::uint64_t>(rep);
        fc.basis.domain = sc.domain;
        try {
          const FitReport rep_fit = fit(data.train, fc);
          const DesignBundle test_designs =
              build_designs(data.test, fc.basis, parameterization_of(fc.variant));
          table.cells[v][nl].ccr.push_back(correct_classification_rate(
              predict_labels(rep_fit.model, test_designs), data.test.labels));
        } catch (const Error& e) {
          table.cells[v][nl].errors.push_back("replicate " + std::to_string(rep) + ": " + e.what());
        }
      }
    }
  }
  for (auto& row : table.cells)
    for (auto& cell : row) summarize(cell);
  for (auto& cell : table.ceiling) summarize(cell);
  return table;
}

std::string format_benchmark(const BenchmarkTable& table) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-16s", "Model");
  os << buf << "Correct Classification Rate (" << table.replicates << " replicates)\n";
  std::snprintf(buf, sizeof(buf), "%-16s", "");
  os << buf;
  for (double nv : table.noise_levels) {
    std::snprintf(buf, sizeof(buf), "%-22s", ("noise var " + format_double(nv)).c_str());
    os << buf;
  }
  os << '\n';
  auto row = [&](const std::string& name, const std::vector<BenchmarkCell>& cells) {
    std::snprintf(buf, sizeof(buf), "%-16s", name.c_str());
    os << buf;
    for (const auto& c : cells) {
      char cellbuf[64];
      if (c.ccr.empty())
        std::snprintf(cellbuf, sizeof(cellbuf), "failed");
      else
        std::snprintf(cellbuf, sizeof(cellbuf), "%.4f (%.4f)", c.mean, c.std_error);
      std::string text = cellbuf;
      if (!c.errors.empty()) text += " [" + std::to_string(c.errors.size()) + " failed]";
      std::snprintf(buf, sizeof(buf), "%-22s", text.c_str());
      os << buf;
    }
    os << '\n';
  };
  for (std::size_t v = 0; v < table.row_names.size(); ++v) row(table.row_names[v], table.cells[v]);
  row("true-parameter", table.ceiling);
  return os.str();
}

std::string benchmark_csv(const BenchmarkTable& table) {
  std::ostringstream os;
  os << "model,noise_var,mean_ccr,std_error,replicates_ok,replicates_failed\n";
  auto emit = [&](const std::string& name, const std::vector<BenchmarkCell>& cells) {
    for (std::size_t nl = 0; nl < cells.size(); ++nl)
      os << name << ',' << format_double(table.noise_levels[nl]) << ',' << format_double(cells[nl].mean)
         << ',' << format_double(cells[nl].std_error) << ',' << cells[nl].ccr.size() << ','
         << cells[nl].errors.size() << '\n';
  };
  for (std::size_t v = 0; v < table.row_names.size(); ++v) emit(table.row_names[v], table.cells[v]);
  emit("true-parameter", table.ceiling);
  return os.str();
}

}  // namespace fme
