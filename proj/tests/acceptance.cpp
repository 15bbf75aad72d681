// One line per acceptance criterion: PASS, FAIL or SKIP with the measured
// quantities. Pass criterion numbers as arguments to run a subset.

#include "cli.hpp"
#include "fme/benchmark.hpp"
#include "fme/data.hpp"
#include "fme/em.hpp"
#include "fme/errors.hpp"
#include "fme/model.hpp"
#include "fme/solver.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace fme;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Status { Pass, Fail, Skip } status;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::MatrixXd one_hot(const std::vector<int>& y, int G) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), G);
  for (std::size_t i = 0; i < y.size(); ++i) t(static_cast<Eigen::Index>(i), y[i] - 1) = 1.0;
  return t;
}

// Criteria 1 and 2 share one benchmark run per noise level.
struct BenchmarkRuns {
  BenchmarkTable low, high;
  double low_seconds = 0.0, high_seconds = 0.0;
  bool done = false;
};

BenchmarkRuns& benchmark_runs() {
  static BenchmarkRuns runs;
  if (!runs.done) {
    const auto configs = default_benchmark_configs();
    const SimConfig sim;
    auto t0 = std::chrono::steady_clock::now();
    runs.low = run_benchmark(configs, sim, 20, {1.0});
    runs.low_seconds = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    runs.high = run_benchmark(configs, sim, 20, {5.0});
    runs.high_seconds = seconds_since(t0);
    runs.done = true;
    std::cerr << format_benchmark(runs.low) << format_benchmark(runs.high);
  }
  return runs;
}

Outcome benchmark_shape() {
  const BenchmarkRuns& r = benchmark_runs();
  const auto& c = r.low.cells;
  const double fme = c[0][0].mean, lasso = c[1][0].mean, ifme = c[2][0].mean, fmlr = c[3][0].mean;
  std::size_t failed = 0;
  for (const auto& row : c) failed += row[0].errors.size();
  const bool ok = ifme >= lasso && lasso >= fme + 0.02 && ifme >= fme + 0.02 && fme >= fmlr + 0.02 &&
                  ifme >= 0.85 && r.low_seconds <= 900.0 && failed == 0;
  return {ok ? Outcome::Pass : Outcome::Fail,
          "FME-EM " + fmt("%.4f", fme) + ", FME-EM-Lasso " + fmt("%.4f", lasso) + ", iFME-EM " + fmt("%.4f", ifme) +
              ", FMLR " + fmt("%.4f", fmlr) + ", true-parameter " + fmt("%.4f", r.low.ceiling[0].mean) +
              ", failed fits " + std::to_string(failed) + ", " + fmt("%.0f", r.low_seconds) + " s"};
}

Outcome noise_degradation() {
  const BenchmarkRuns& r = benchmark_runs();
  bool ok = true;
  std::string detail;
  for (std::size_t v = 0; v < r.low.cells.size(); ++v) {
    const double lo = r.low.cells[v][0].mean, hi = r.high.cells[v][0].mean;
    ok = ok && hi <= lo + 0.01;
    detail += (v ? ", " : "") + r.low.row_names[v] + " " + fmt("%.4f", lo) + " -> " + fmt("%.4f", hi);
  }
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

Outcome em_ascent() {
  double worst_plain = 0.0, worst_pen = 0.0;
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    SimConfig sc;
    sc.n_train = 60;
    sc.n_test = 1;
    sc.seed = 1000 + seed;
    const FunctionalDataset d = simulate(sc).train;
    for (Variant v : {Variant::FmeEm, Variant::FmeEmLasso, Variant::IfmeEm}) {
      FitConfig c;
      c.variant = v;
      c.K = 2;
      c.chi = c.lambda = v == Variant::IfmeEm ? 0.002 : 0.05;
      c.n_restarts = 1;
      c.max_em_iters = 200;
      c.seed = seed;
      const FitReport rep = fit(d, c);
      for (std::size_t t = 1; t < rep.trace.size(); ++t) {
        const double drop = rep.trace[t - 1] - rep.trace[t];
        (v == Variant::FmeEm ? worst_plain : worst_pen) =
            std::max(v == Variant::FmeEm ? worst_plain : worst_pen, drop);
      }
    }
    ++instances;
  }
  const bool ok = worst_plain <= 1e-8 && worst_pen <= 1e-6;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(instances) + " instances, largest decrease " + fmt("%.3g", worst_plain) +
              " unpenalized, " + fmt("%.3g", worst_pen) + " penalized"};
}

Outcome parameterization_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SimConfig sc;
    // Noisy, weakly separated data with small coefficient bases, so the
    // unpenalized likelihood has a finite maximizer that both chains reach.
    sc.n_train = 400;
    sc.n_test = 1;
    sc.noise_var = 5.0;
    sc.expert_scale = 6.0;
    sc.seed = 2000 + seed;
    const FunctionalDataset d = simulate(sc).train;
    BasisConfig b;
    b.p = b.q = 6;
    FitConfig plain, re;
    plain.variant = Variant::FmeEm;
    re.variant = Variant::IfmeEm;
    plain.K = re.K = 2;
    const DesignBundle dp = build_designs(d, b, Parameterization::Plain);
    const DesignBundle dr = build_designs(d, b, Parameterization::DerivativeReparam);
    const Eigen::MatrixXd tau0 = responsibilities_from_partition(kmeans_partition(dp.curve_coeffs, 2, seed), 2);
    FmeModel start;
    start.gating = m_step_gating(tau0, dp, plain).params;
    start.experts = m_step_experts(tau0, dp, plain).params;
    start.basis = b;
    const FmeModel mapped = to_derivative_form(start, *dr.op_p, *dr.op_q);
    const double a = fit_from_model(dp, plain, start).log_likelihood;
    const double c = fit_from_model(dr, re, mapped).log_likelihood;
    worst = std::max(worst, std::abs(a - c));
  }
  return {worst <= 1e-6 ? Outcome::Pass : Outcome::Fail,
          "10 instances, largest log-likelihood difference " + fmt("%.3g", worst)};
}

Outcome solver_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  int outside = 0;
  for (int rep = 0; rep < 25; ++rep) {
    const int d = 1 + rep % 2, n = 8 + rep % 5;
    const Eigen::MatrixXd x = testing_helpers::random_matrix(rng, n, d);
    const Eigen::VectorXd beta = testing_helpers::random_vector(rng, d);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-x.row(i).dot(beta))) ? 1 : 2;
    y[0] = 1;
    y[1] = 2;
    const Eigen::VectorXd w = (0.5 + testing_helpers::random_vector(rng, n).array().abs()).matrix();
    const double l1 = 0.1 + unif(rng);
    const Eigen::MatrixXd m = rep % 3 == 0 ? Eigen::MatrixXd::Identity(d, d) : testing_helpers::random_matrix(rng, d, d);
    const Eigen::MatrixXd* map = rep % 3 == 2 ? nullptr : &m;
    const PwmlrResult r = solve_pwmlr(x, one_hot(y, 2), w, l1, map);
    Eigen::VectorXd theta(d + 1);
    theta[0] = r.params.intercepts[0];
    theta.tail(d) = r.params.coeffs.row(0).transpose();
    const double mine = oracle::two_class_objective(x, y, w, l1, map, theta);
    const double best = oracle::grid_minimize(x, y, w, l1, map).value;
    // The oracle only searches the box; a minimizer outside it may legitimately beat the oracle.
    const bool in_box = theta.cwiseAbs().maxCoeff() <= 10.0;
    outside += !in_box;
    worst = std::max(worst, in_box ? std::abs(mine - best) : mine - best);
  }
  return {worst <= 1e-3 ? Outcome::Pass : Outcome::Fail,
          "25 problems, largest objective gap to the grid oracle " + fmt("%.3g", worst) + " (" +
              std::to_string(outside) + " minimizers outside the oracle box, checked one-sided)"};
}

Outcome gradient_check() {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const int C = 2 + rep % 3, d = 1 + rep % 5, n = 12;
    const Eigen::MatrixXd x = testing_helpers::random_matrix(rng, n, d);
    const Eigen::MatrixXd t = testing_helpers::random_matrix(rng, n, C).cwiseAbs();
    const Eigen::VectorXd w = testing_helpers::random_vector(rng, n).cwiseAbs();
    const PwmlrParams at{testing_helpers::random_vector(rng, C - 1), testing_helpers::random_matrix(rng, C - 1, d)};
    const PwmlrParams g = pwmlr_nll_gradient(x, t, w, at);
    const double h = 1e-5;
    auto rel = [](double fd, double an) { return std::abs(fd - an) / std::max(1.0, std::abs(fd)); };
    for (Eigen::Index c = 0; c < C - 1; ++c) {
      PwmlrParams up = at, dn = at;
      up.intercepts[c] += h;
      dn.intercepts[c] -= h;
      worst = std::max(worst, rel((pwmlr_nll(x, t, w, up) - pwmlr_nll(x, t, w, dn)) / (2 * h), g.intercepts[c]));
      for (Eigen::Index j = 0; j < d; ++j) {
        up = at;
        dn = at;
        up.coeffs(c, j) += h;
        dn.coeffs(c, j) -= h;
        worst = std::max(worst, rel((pwmlr_nll(x, t, w, up) - pwmlr_nll(x, t, w, dn)) / (2 * h), g.coeffs(c, j)));
      }
    }
  }
  return {worst < 1e-5 ? Outcome::Pass : Outcome::Fail, "20 instances, largest relative error " + fmt("%.3g", worst)};
}

Outcome basis_suite() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double pou = 0.0, sym = 0.0, min_eig = 0.0, eval_id = 0.0, chain = 0.0, round = 0.0, cond = 0.0;
  for (int dim : {6, 10, 15, 25}) {
    const BSplineBasis b = make_basis(4, dim, {0.0, 1.0});
    for (int i = 0; i < 1000; ++i) pou = std::max(pou, std::abs(eval_basis(b, unif(rng)).sum() - 1.0));
    const Eigen::MatrixXd g = cross_gram(b, b).matrix;
    sym = std::max(sym, (g - g.transpose()).cwiseAbs().maxCoeff());
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().minCoeff());
    const DerivativeOperator op = derivative_operator(b, 0, 2);
    cond = std::max(cond, op.condition);
    for (int j = 0; j < dim; ++j)
      eval_id = std::max(eval_id, (op.block_d1.row(j).transpose() - eval_basis(b, op.eval_points[j])).cwiseAbs().maxCoeff());
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd z = testing_helpers::random_vector(rng, dim);
      const Eigen::VectorXd direct = op.block_d2 * z;
      chain = std::max(chain, (op.chain * (op.block_d1 * z) - direct).cwiseAbs().maxCoeff() /
                                  std::max(1.0, direct.cwiseAbs().maxCoeff()));
    }
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(4 * dim, 0.0, 1.0);
    const Eigen::VectorXd c = testing_helpers::random_vector(rng, dim);
    round = std::max(round, (project_curve(b, grid, reconstruct(b, c, grid)).coeffs - c).cwiseAbs().maxCoeff());
  }
  const bool ok = pou < 1e-12 && sym == 0.0 && min_eig > -1e-14 && std::isfinite(cond) &&
                  cond < kMaxOperatorCondition && eval_id == 0.0 && chain < 1e-10 && round < 1e-10;
  return {ok ? Outcome::Pass : Outcome::Fail,
          "unity " + fmt("%.2g", pou) + ", gram asymmetry " + fmt("%.2g", sym) + ", min eigenvalue " +
              fmt("%.2g", min_eig) + ", cond " + fmt("%.3g", cond) + ", eval identity " + fmt("%.2g", eval_id) +
              ", chain " + fmt("%.2g", chain) + ", round trip " + fmt("%.2g", round)};
}

Outcome fmlr_equivalence() {
  double worst = 0.0;
  int mismatched = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SimConfig sc;
    sc.seed = 3000 + seed;
    const SimResult s = simulate(sc);
    FitConfig c;
    c.variant = Variant::Fmlr;
    const FitReport rep = fit(s.train, c);
    const DesignBundle tr = build_designs(s.train, c.basis, Parameterization::Plain);
    const oracle::MultinomialFit ref =
        oracle::irls_multinomial(tr.expert, one_hot(tr.labels, tr.G), Eigen::VectorXd::Ones(tr.n()));
    const ExpertBlock& e = rep.model.experts.experts[0];
    const double scale = std::max(1.0, ref.coeffs.cwiseAbs().maxCoeff());
    worst = std::max(worst, (e.coeffs - ref.coeffs).cwiseAbs().maxCoeff() / scale);
    worst = std::max(worst, (e.intercepts - ref.intercepts).cwiseAbs().maxCoeff() / std::max(1.0, ref.intercepts.cwiseAbs().maxCoeff()));
    const DesignBundle te = build_designs(s.test, c.basis, Parameterization::Plain);
    const std::vector<int> mine = predict_labels(rep.model, te);
    for (Eigen::Index i = 0; i < te.n(); ++i) {
      const Eigen::VectorXd p = oracle::direct_softmax(ref.intercepts, ref.coeffs, te.expert.row(i).transpose());
      mismatched += argmax_label(p) != mine[i];
    }
  }
  return {worst <= 1e-4 && mismatched == 0 ? Outcome::Pass : Outcome::Fail,
          "10 datasets, largest relative coefficient difference " + fmt("%.3g", worst) + ", prediction mismatches " +
              std::to_string(mismatched)};
}

Outcome shrinkage_limit() {
  bool ok = true;
  std::string detail;
  SimConfig sc;
  sc.seed = 77;
  const SimResult s = simulate(sc);
  for (Variant v : {Variant::FmeEmLasso, Variant::IfmeEm}) {
    FitConfig c;
    c.variant = v;
    c.chi = c.lambda = 1e6;
    c.n_restarts = 2;
    const FitReport rep = fit(s.train, c);
    bool zero = rep.model.gating.coeffs.isZero(0.0);
    for (const auto& e : rep.model.experts.experts) zero = zero && e.coeffs.isZero(0.0);
    const DesignBundle tr = build_designs(s.train, c.basis, parameterization_of(v));
    const EStep es = e_step(rep.model, tr);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(tr.G);
    for (Eigen::Index i = 0; i < tr.n(); ++i)
      for (int k = 0; k < rep.model.K(); ++k) mass[tr.labels[i] - 1] += es.tau(i, k);
    const int majority = argmax_label(mass);
    const DesignBundle te = build_designs(s.test, c.basis, parameterization_of(v));
    const std::vector<int> pred = predict_labels(rep.model, te);
    bool constant_gating = true;
    const Eigen::VectorXd pi0 = gating_probs(rep.model.gating, te.gating.row(0).transpose());
    for (Eigen::Index i = 0; i < te.n(); ++i)
      constant_gating = constant_gating && gating_probs(rep.model.gating, te.gating.row(i).transpose()) == pi0;
    bool all_majority = true;
    for (int y : pred) all_majority = all_majority && y == majority;
    ok = ok && zero && constant_gating && all_majority;
    detail += std::string(detail.empty() ? "" : "; ") + display_name(v) + ": coefficients " +
              (zero ? "all zero" : "NOT zero") + ", gating " + (constant_gating ? "constant" : "varies") +
              ", predictions " + (all_majority ? "all majority class " + std::to_string(majority) : "differ");
  }
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

Outcome phoneme_check() {
  const char* path = std::getenv("FME_PHONEME_CSV");
  if (!path || !*path) return {Outcome::Skip, "set FME_PHONEME_CSV to a matrix_csv phoneme file to run"};
  const FunctionalDataset all = load_dataset(path);
  const auto [train, test] = split(all, 0.2, 1);
  BasisConfig basis;
  basis.domain = {all.grid[0], all.grid[all.grid.size() - 1]};
  bool ok = true;
  std::string detail = "n=" + std::to_string(all.n()) + ", G=" + std::to_string(all.G);
  for (Variant v : {Variant::FmeEmLasso, Variant::IfmeEm}) {
    FitConfig c;
    c.variant = v;
    c.basis = basis;
    c.n_restarts = 2;
    const std::vector<double> grid = v == Variant::IfmeEm ? std::vector<double>{0.0005, 0.002, 0.01}
                                                         : std::vector<double>{0.01, 0.05, 0.2};
    const SelectionResult sel = select_hyperparams(train, c, grid, grid, {2}, SelectionCriterion::ValidationCcr);
    c.chi = sel.chi;
    c.lambda = sel.lambda;
    const FitReport rep = fit(train, c);
    const DesignBundle te = build_designs(test, basis, parameterization_of(v));
    const double ccr = correct_classification_rate(predict_labels(rep.model, te), test.labels);
    ok = ok && ccr >= 0.90;
    detail += std::string(", ") + display_name(v) + " CCR " + fmt("%.4f", ccr);
    if (v == Variant::IfmeEm) {
      const Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(200, basis.domain.lo, basis.domain.hi);
      const CoefficientCurves curves = coefficient_functions(rep.model, g);
      Eigen::Index zeros = 0, total = 0;
      for (const auto& per : curves.experts)
        for (const auto& cs : per) {
          zeros += (cs.deriv_d2.array() == 0.0).count();
          total += cs.deriv_d2.size();
        }
      const double frac = static_cast<double>(zeros) / static_cast<double>(total);
      ok = ok && frac >= 0.5;
      detail += ", expert second-derivative zeros " + fmt("%.3f", frac);
    }
  }
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

std::map<std::string, std::string> pipeline_artifacts(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) {
    const int code = cli::run(args, out, err);
    if (code != 0 && code != 3) throw std::runtime_error("pipeline step failed: " + args[0] + "\n" + err.str());
  };
  run({"simulate", "--out-dir", d, "--n-train", "150", "--n-test", "60", "--seed", "12"});
  for (const std::string v : {"fme-em", "fme-em-lasso", "ifme-em", "fmlr"}) {
    run({"fit", "--train", d + "/train.csv", "--out", d + "/" + v + ".txt", "--variant", v, "--chi", "0.01",
         "--lambda", "0.01", "--restarts", "2", "--seed", "5"});
    run({"predict", "--model", d + "/" + v + ".txt", "--data", d + "/test.csv", "--out", d + "/" + v + ".pred.csv"});
    run({"evaluate", "--model", d + "/" + v + ".txt", "--data", d + "/test.csv"});
    run({"export-coefs", "--model", d + "/" + v + ".txt", "--out-dir", d + "/" + v + "_coefs"});
  }
  run({"fit", "--train", d + "/train.csv", "--out", d + "/selected.txt", "--variant", "fme-em-lasso", "--select",
       "val-ccr", "--chi-grid", "0.01,0.1", "--lambda-grid", "0.05", "--restarts", "1"});
  run({"benchmark", "--replicates", "2", "--noise-var", "1,5", "--n-train", "80", "--n-test", "40", "--out",
       d + "/bench.txt"});
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = os.str();
  }
  files["<stdout>"] = out.str();
  return files;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "fme_acceptance_determinism";
  const auto a = pipeline_artifacts(base / "a");
  const auto b = pipeline_artifacts(base / "b");
  std::size_t differing = 0;
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    differing += it == b.end() || it->second != content;
  }
  differing += a.size() != b.size();
  // Stdout names the output directory; compare it with the paths removed.
  auto strip = [&](std::string s, const std::string& dir) {
    for (std::size_t p; (p = s.find(dir)) != std::string::npos;) s.erase(p, dir.size());
    return s;
  };
  if (strip(a.at("<stdout>"), (base / "a").string()) == strip(b.at("<stdout>"), (base / "b").string()) &&
      a.at("<stdout>") != b.at("<stdout>"))
    --differing;
  fs::remove_all(base);
  return {differing == 0 ? Outcome::Pass : Outcome::Fail,
          std::to_string(a.size()) + " artifacts compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"benchmark ordering and regime at noise variance 1", benchmark_shape},
      {"noise degradation at noise variance 5", noise_degradation},
      {"EM ascent on 50 small instances", em_ascent},
      {"parameterization equivalence without penalty", parameterization_equivalence},
      {"penalized solver against grid oracle", solver_oracle},
      {"NLL gradient against finite differences", gradient_check},
      {"basis and operator suite", basis_suite},
      {"FMLR against reference multinomial fit", fmlr_equivalence},
      {"shrinkage limit", shrinkage_limit},
      {"phoneme-style check", phoneme_check},
      {"CLI determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
    failures += o.status == Outcome::Fail;
    std::cout << tag << "  " << id << ". " << criteria[i].first << " -- " << o.detail << " ["
              << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
