#include "cli.hpp"

#include "fme/benchmark.hpp"
#include "fme/data.hpp"
#include "fme/em.hpp"
#include "fme/errors.hpp"
#include "fme/model.hpp"
#include "fme/model_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace fme::cli {

namespace {

namespace fs = std::filesystem;

struct DataFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes to a sibling temporary file, then renames it over `path`.
void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataFailure("cannot write '" + path.string() + "'");
    body(out);
    out.flush();
    if (!out) throw DataFailure("failed writing '" + path.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataFailure("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataFailure("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Runs `f`, reporting any library error as a data error prefixed by `what`.
template <class F>
auto data_stage(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError& e) {
    throw DataFailure(what + ": " + e.what());
  } catch (const Error& e) {
    throw DataFailure(what + ": " + e.what());
  }
}

FunctionalDataset read_data(const std::string& path) {
  return data_stage("'" + path + "'", [&] { return load_dataset(path); });
}

FmeModel read_model_file(const std::string& path) {
  return data_stage("'" + path + "'", [&] { return load_model(path); });
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

void echo_config(std::ostream& err, const CLI::App& sub,
                 const std::vector<std::pair<std::string, std::string>>& derived = {}) {
  err << "resolved config (" << sub.get_name() << ")\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    const std::string value = opt->count() > 0 ? join(opt->results()) : opt->get_default_str();
    err << "  " << opt->get_name() << " = " << value << '\n';
  }
  for (const auto& [k, v] : derived) err << "  " << k << " = " << v << '\n';
}

struct SimulateArgs {
  double noise_var = 1.0;
  int n_train = SimConfig{}.n_train;
  int n_test = SimConfig{}.n_test;
  std::uint64_t seed = 1;
  std::string out_dir;
};

struct FitArgs {
  std::string train;
  std::string out;
  std::string report;
  std::string variant = "ifme-em";
  int K = 2;
  double chi = 0.0;
  double lambda = 0.0;
  int d1 = 0;
  int d2 = 2;
  int p = 15;
  int q = 15;
  int r = 15;
  int order = 4;
  int restarts = 5;
  int max_iter = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  std::string select = "none";
  std::vector<double> chi_grid{0.001, 0.01, 0.1};
  std::vector<double> lambda_grid{0.001, 0.01, 0.1};
  std::vector<int> K_grid;
};

struct PredictArgs {
  std::string model;
  std::string data;
  std::string out;
};

struct BenchmarkArgs {
  int replicates = 20;
  std::vector<double> noise_var{1.0};
  int n_train = SimConfig{}.n_train;
  int n_test = SimConfig{}.n_test;
  std::uint64_t seed = 1;
  std::string out;
  std::string csv;
};

struct ExportArgs {
  std::string model;
  std::string out_dir;
  int grid_points = 200;
};

int cmd_simulate(const SimulateArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  SimConfig sc;
  sc.noise_var = a.noise_var;
  sc.n_train = a.n_train;
  sc.n_test = a.n_test;
  sc.seed = a.seed;
  echo_config(err, sub,
              {{"grid_len", std::to_string(sc.grid_len)},
               {"coeff_var", format_double(sc.coeff_var)},
               {"mean_amplitude", format_double(sc.mean_amplitude)},
               {"expert_scale", format_double(sc.expert_scale)}});
  try {
    sc.validate();
  } catch (const ConfigError& e) {
    throw UsageFailure(e.what());
  }
  const SimResult res = simulate(sc);
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  write_atomic(dir / "train.csv", [&](std::ostream& o) { write_matrix_csv(o, res.train); });
  write_atomic(dir / "test.csv", [&](std::ostream& o) { write_matrix_csv(o, res.test); });
  write_atomic(dir / "truth.txt", [&](std::ostream& o) { write_truth(o, sc, res.truth); });
  out << "wrote " << (dir / "train.csv").string() << ", " << (dir / "test.csv").string() << ", "
      << (dir / "truth.txt").string() << '\n';
  return kSuccess;
}

std::string fit_report_text(const FitConfig& fc, const FitReport& rep,
                            const std::optional<SelectionResult>& sel) {
  std::ostringstream os;
  os << "fit report\n";
  os << "variant " << flag_name(fc.variant) << '\n';
  os << "K " << fc.K << '\n';
  os << "chi " << format_double(fc.chi) << '\n';
  os << "lambda " << format_double(fc.lambda) << '\n';
  os << "converged " << (rep.converged ? "yes" : "no") << '\n';
  os << "solver converged " << (rep.solver_converged ? "yes" : "no") << '\n';
  os << "em iterations " << rep.iterations << '\n';
  os << "restart selected " << rep.selected_restart + 1 << " of " << rep.restart_objectives.size()
     << " (" << rep.failed_restarts << " failed)\n";
  os << "log-likelihood " << fixed4(rep.log_likelihood) << '\n';
  os << "penalized log-likelihood " << fixed4(rep.penalized_log_likelihood) << '\n';
  os << "degrees of freedom " << degrees_of_freedom(rep.model) << '\n';

  char buf[160];
  os << "\nsparsity\n";
  std::snprintf(buf, sizeof(buf), "%-24s %8s %8s\n", "block", "nonzero", "size");
  os << buf;
  for (const auto& b : rep.sparsity) {
    std::snprintf(buf, sizeof(buf), "%-24s %8d %8d\n", b.name.c_str(), b.nonzero, b.size);
    os << buf;
  }

  if (sel) {
    os << "\nselection\n";
    std::snprintf(buf, sizeof(buf), "%4s %14s %14s %14s %6s\n", "K", "chi", "lambda", "score", "df");
    os << buf;
    for (const auto& row : sel->table) {
      std::snprintf(buf, sizeof(buf), "%4d %14.6g %14.6g %14.4f %6d\n", row.K, row.chi, row.lambda, row.score,
                    row.df);
      os << buf;
    }
  }

  os << "\nlikelihood trace\n";
  std::snprintf(buf, sizeof(buf), "%6s %26s\n", "iter", "penalized log-likelihood");
  os << buf;
  for (std::size_t i = 0; i < rep.trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%6zu %26.4f\n", i + 1, rep.trace[i]);
    os << buf;
  }
  return os.str();
}

int cmd_fit(const FitArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const FunctionalDataset train = read_data(a.train);
  FitConfig fc;
  fc.variant = parse_variant(a.variant);
  fc.K = a.K;
  fc.chi = a.chi;
  fc.lambda = a.lambda;
  fc.basis.order = a.order;
  fc.basis.r = a.r;
  fc.basis.p = a.p;
  fc.basis.q = a.q;
  fc.basis.d1 = a.d1;
  fc.basis.d2 = a.d2;
  fc.basis.domain = {train.grid[0], train.grid[train.grid.size() - 1]};
  fc.n_restarts = a.restarts;
  fc.max_em_iters = a.max_iter;
  fc.em_rel_tol = a.tol;
  fc.seed = a.seed;
  const std::string report_path = a.report.empty() ? a.out + ".report.txt" : a.report;

  try {
    fc = fc.resolved();
  } catch (const ConfigError& e) {
    throw UsageFailure(e.what());
  }
  echo_config(err, sub,
              {{"domain", format_double(fc.basis.domain.lo) + "," + format_double(fc.basis.domain.hi)},
               {"effective K", std::to_string(fc.K)},
               {"effective chi", format_double(fc.chi)},
               {"effective lambda", format_double(fc.lambda)},
               {"report path", report_path}});

  std::optional<SelectionResult> sel;
  if (a.select != "none") {
    const SelectionCriterion crit = a.select == "bic" ? SelectionCriterion::Bic : SelectionCriterion::ValidationCcr;
    std::vector<int> K_grid = a.K_grid.empty() ? std::vector<int>{fc.K} : a.K_grid;
    sel = data_stage("selection", [&] {
      return select_hyperparams(train, fc, a.chi_grid, a.lambda_grid, K_grid, crit);
    });
    fc.chi = sel->chi;
    fc.lambda = sel->lambda;
    fc.K = sel->K;
    fc = fc.resolved();
    err << "selected K = " << fc.K << ", chi = " << format_double(fc.chi)
        << ", lambda = " << format_double(fc.lambda) << '\n';
  }

  FitReport rep;
  try {
    rep = fit(train, fc);
  } catch (const ConfigError& e) {
    throw UsageFailure(e.what());
  } catch (const OperatorError& e) {
    // A singular derivative block comes from the chosen orders, not from the data.
    throw UsageFailure(e.what());
  } catch (const RankError& e) {
    throw DataFailure(std::string("'") + a.train + "': " + e.what());
  }
  write_atomic(a.out, [&](std::ostream& o) { write_model(o, rep.model); });
  write_atomic(report_path, [&](std::ostream& o) { o << fit_report_text(fc, rep, sel); });
  out << "wrote " << a.out << " and " << report_path << '\n';
  out << "log-likelihood " << fixed4(rep.log_likelihood) << ", iterations " << rep.iterations << '\n';
  if (!rep.solver_converged) err << "warning: an inner solver hit its iteration limit\n";
  if (!rep.converged) {
    err << "fit did not converge within " << fc.max_em_iters << " EM iterations\n";
    return kNotConverged;
  }
  return kSuccess;
}

DesignBundle designs_for(const FmeModel& model, const FunctionalDataset& data, const std::string& path) {
  return data_stage("'" + path + "'", [&] {
    if (!(data.grid[0] >= model.basis.domain.lo - 1e-12 &&
          data.grid[data.grid.size() - 1] <= model.basis.domain.hi + 1e-12))
      throw ConfigError("data grid lies outside the model domain");
    DesignBundle d = build_designs(data, model.basis, model.parameterization());
    check_compatible(model, d);
    return d;
  });
}

int cmd_predict(const PredictArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  echo_config(err, sub);
  const FmeModel model = read_model_file(a.model);
  const FunctionalDataset data = read_data(a.data);
  const DesignBundle d = designs_for(model, data, a.data);
  write_atomic(a.out, [&](std::ostream& o) {
    o << "row,label";
    for (int g = 1; g <= model.G(); ++g) o << ",p" << g;
    o << '\n';
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      const Prediction pr = predict(model, d.gating.row(i).transpose(), d.expert.row(i).transpose());
      o << i + 1 << ',' << pr.label;
      for (Eigen::Index g = 0; g < pr.class_probs.size(); ++g) o << ',' << format_double(pr.class_probs[g]);
      o << '\n';
    }
  });
  out << "wrote " << a.out << " (" << d.n() << " rows)\n";
  return kSuccess;
}

int cmd_evaluate(const PredictArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  echo_config(err, sub);
  const FmeModel model = read_model_file(a.model);
  const FunctionalDataset data = read_data(a.data);
  const DesignBundle d = designs_for(model, data, a.data);
  const std::vector<int> pred = predict_labels(model, d);
  const double ccr = correct_classification_rate(pred, data.labels);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  out << "CCR " << fixed4(ccr) << " (" << correct << "/" << pred.size() << ")\n";
  return kSuccess;
}

int cmd_benchmark(const BenchmarkArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  SimConfig sc;
  sc.n_train = a.n_train;
  sc.n_test = a.n_test;
  sc.seed = a.seed;
  const std::string csv_path = !a.csv.empty() ? a.csv : (a.out.empty() ? std::string() : a.out + ".csv");
  const auto configs = default_benchmark_configs();
  std::vector<std::pair<std::string, std::string>> derived{{"csv path", csv_path}};
  for (const auto& c : configs)
    derived.push_back({std::string(flag_name(c.variant)),
                       "K=" + std::to_string(c.K) + " chi=" + format_double(c.chi) +
                           " lambda=" + format_double(c.lambda) + " restarts=" + std::to_string(c.n_restarts)});
  echo_config(err, sub, derived);
  BenchmarkTable table;
  try {
    table = run_benchmark(configs, sc, a.replicates, a.noise_var, [&](int rep, double nv) {
      err << "noise var " << format_double(nv) << ", replicate " << rep + 1 << "/" << a.replicates << '\n';
    });
  } catch (const ConfigError& e) {
    throw UsageFailure(e.what());
  }
  const std::string text = format_benchmark(table);
  if (a.out.empty()) {
    out << text;
  } else {
    write_atomic(a.out, [&](std::ostream& o) { o << text; });
    out << "wrote " << a.out << '\n';
  }
  if (!csv_path.empty()) {
    write_atomic(csv_path, [&](std::ostream& o) { o << benchmark_csv(table); });
    out << "wrote " << csv_path << '\n';
  }
  return kSuccess;
}

int cmd_export(const ExportArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  echo_config(err, sub);
  if (a.grid_points < 2) throw UsageFailure("--grid-points must be at least 2");
  const FmeModel model = read_model_file(a.model);
  const Interval dom = model.basis.domain;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(a.grid_points, dom.lo, dom.hi);
  const CoefficientCurves curves = coefficient_functions(model, grid);
  const fs::path dir(a.out_dir);
  ensure_dir(dir);

  auto emit = [&](const std::string& name, const CurveSamples& s) {
    FunctionalDataset table;
    table.grid = grid;
    table.G = 3;
    table.labels = {1, 2, 3};
    table.curves.resize(3, grid.size());
    table.curves.row(0) = s.value.transpose();
    table.curves.row(1) = s.deriv_d1.transpose();
    table.curves.row(2) = s.deriv_d2.transpose();
    write_atomic(dir / name, [&](std::ostream& o) { write_matrix_csv(o, table); });
    out << "wrote " << (dir / name).string() << '\n';
  };
  for (std::size_t k = 0; k < curves.gating.size(); ++k) emit("gating_" + std::to_string(k + 1) + ".csv", curves.gating[k]);
  for (std::size_t k = 0; k < curves.experts.size(); ++k)
    for (std::size_t g = 0; g < curves.experts[k].size(); ++g)
      emit("expert_" + std::to_string(k + 1) + "_class_" + std::to_string(g + 1) + ".csv", curves.experts[k][g]);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Functional mixture-of-experts classifiers"};
  app.name("fme");
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Draw train/test curves from the shipped generator");
  simulate->add_option("--noise-var", sim.noise_var, "Pointwise measurement noise variance")->capture_default_str();
  simulate->add_option("--n-train", sim.n_train, "Training curves")->capture_default_str();
  simulate->add_option("--n-test", sim.n_test, "Test curves")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_option("--out-dir", sim.out_dir, "Output directory")->required();

  FitArgs fa;
  CLI::App* fitc = app.add_subcommand("fit", "Fit a model to a matrix_csv training file");
  fitc->add_option("--train", fa.train, "Training data (matrix_csv)")->required();
  fitc->add_option("--out", fa.out, "Model document to write")->required();
  fitc->add_option("--report", fa.report, "Fit report path (default: <out>.report.txt)");
  fitc->add_option("--variant", fa.variant, "Model variant")
      ->check(CLI::IsMember({"fme-em", "fme-em-lasso", "ifme-em", "fmlr"}))
      ->capture_default_str();
  fitc->add_option("--K", fa.K, "Number of experts")->capture_default_str();
  fitc->add_option("--chi", fa.chi, "Gating penalty weight")->capture_default_str();
  fitc->add_option("--lambda", fa.lambda, "Expert penalty weight")->capture_default_str();
  fitc->add_option("--d1", fa.d1, "Leading derivative order")->capture_default_str();
  fitc->add_option("--d2", fa.d2, "Trailing derivative order")->capture_default_str();
  fitc->add_option("--p", fa.p, "Gating basis dimension")->capture_default_str();
  fitc->add_option("--q", fa.q, "Expert basis dimension")->capture_default_str();
  fitc->add_option("--r", fa.r, "Curve basis dimension")->capture_default_str();
  fitc->add_option("--order", fa.order, "B-spline order")->capture_default_str();
  fitc->add_option("--restarts", fa.restarts, "EM restarts")->capture_default_str();
  fitc->add_option("--max-iter", fa.max_iter, "Maximum EM iterations")->capture_default_str();
  fitc->add_option("--tol", fa.tol, "Relative EM stopping tolerance")->capture_default_str();
  fitc->add_option("--seed", fa.seed, "Random seed")->capture_default_str();
  fitc->add_option("--select", fa.select, "Hyperparameter selection")
      ->check(CLI::IsMember({"none", "bic", "val-ccr"}))
      ->capture_default_str();
  fitc->add_option("--chi-grid", fa.chi_grid, "Comma-separated chi values")->delimiter(',')->capture_default_str();
  fitc->add_option("--lambda-grid", fa.lambda_grid, "Comma-separated lambda values")
      ->delimiter(',')
      ->capture_default_str();
  fitc->add_option("--K-grid", fa.K_grid, "Comma-separated K values (default: --K)")->delimiter(',');

  PredictArgs pa;
  CLI::App* predictc = app.add_subcommand("predict", "Write per-row labels and class probabilities");
  predictc->add_option("--model", pa.model, "Model document")->required();
  predictc->add_option("--data", pa.data, "Curves (matrix_csv)")->required();
  predictc->add_option("--out", pa.out, "Prediction CSV to write")->required();

  PredictArgs ea;
  CLI::App* evaluatec = app.add_subcommand("evaluate", "Print the correct classification rate");
  evaluatec->add_option("--model", ea.model, "Model document")->required();
  evaluatec->add_option("--data", ea.data, "Labelled curves (matrix_csv)")->required();

  BenchmarkArgs ba;
  CLI::App* benchc = app.add_subcommand("benchmark", "Simulation study over the four model variants");
  benchc->add_option("--replicates", ba.replicates, "Replicates per noise level")->capture_default_str();
  benchc->add_option("--noise-var", ba.noise_var, "Comma-separated noise variances")
      ->delimiter(',')
      ->capture_default_str();
  benchc->add_option("--n-train", ba.n_train, "Training curves per replicate")->capture_default_str();
  benchc->add_option("--n-test", ba.n_test, "Test curves per replicate")->capture_default_str();
  benchc->add_option("--seed", ba.seed, "Base random seed")->capture_default_str();
  benchc->add_option("--out", ba.out, "Results table (default: standard output)");
  benchc->add_option("--csv", ba.csv, "CSV twin of the table (default: <out>.csv)");

  ExportArgs xa;
  CLI::App* exportc = app.add_subcommand("export-coefs", "Sample fitted coefficient functions on a grid");
  exportc->add_option("--model", xa.model, "Model document")->required();
  exportc->add_option("--out-dir", xa.out_dir, "Output directory")->required();
  exportc->add_option("--grid-points", xa.grid_points, "Grid size")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, *simulate, out, err);
    if (fitc->parsed()) return cmd_fit(fa, *fitc, out, err);
    if (predictc->parsed()) return cmd_predict(pa, *predictc, out, err);
    if (evaluatec->parsed()) return cmd_evaluate(ea, *evaluatec, out, err);
    if (benchc->parsed()) return cmd_benchmark(ba, *benchc, out, err);
    if (exportc->parsed()) return cmd_export(xa, *exportc, out, err);
  } catch (const UsageFailure& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DataFailure& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

}  // namespace fme::cli
