#include "fme/model_io.hpp"

#include "fme/data.hpp"
#include "fme/errors.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

namespace fme {

namespace {

void put(std::ostream& out, const std::string& key, const Eigen::Ref<const Eigen::VectorXd>& v) {
  out << key;
  for (Eigen::Index j = 0; j < v.size(); ++j) out << ' ' << format_double(v[j]);
  out << '\n';
}

void put_matrix(std::ostream& out, const std::string& key, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) put(out, key + "." + std::to_string(i + 1), m.row(i).transpose());
}

class Entries {
 public:
  explicit Entries(std::istream& in) {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      std::vector<std::string> values;
      std::string tok;
      while (ls >> tok) values.push_back(tok);
      if (!entries_.emplace(key, Entry{std::move(values), row}).second)
        throw ParseError("model document: duplicate key '" + key + "' at line " + std::to_string(row), row, 0);
    }
  }

  const std::vector<std::string>& raw(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError("model document: missing key '" + key + "'", 0, 0);
    return it->second.values;
  }

  int integer(const std::string& key) const {
    const auto& v = raw(key);
    if (v.size() != 1) throw ParseError("model document: key '" + key + "' expects one value", line(key), 0);
    int out = 0;
    const auto [p, ec] = std::from_chars(v[0].data(), v[0].data() + v[0].size(), out);
    if (ec != std::errc() || p != v[0].data() + v[0].size())
      throw ParseError("model document: key '" + key + "' is not an integer", line(key), 0);
    return out;
  }

  Eigen::VectorXd vector(const std::string& key, Eigen::Index expected) const {
    const auto& v = raw(key);
    if (static_cast<Eigen::Index>(v.size()) != expected)
      throw ParseError("model document: key '" + key + "' expects " + std::to_string(expected) +
                           " values, found " + std::to_string(v.size()),
                       line(key), 0);
    Eigen::VectorXd out(expected);
    for (Eigen::Index j = 0; j < expected; ++j) {
      const std::string& s = v[j];
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out[j]);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError("model document: key '" + key + "' has a malformed number '" + s + "'",
                         line(key), static_cast<std::size_t>(j) + 2);
    }
    return out;
  }

  Eigen::MatrixXd matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols) const {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = vector(key + "." + std::to_string(i + 1), cols).transpose();
    return m;
  }

  std::size_t line(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

 private:
  struct Entry {
    std::vector<std::string> values;
    std::size_t line;
  };
  std::map<std::string, Entry> entries_;
};

void put_operator(std::ostream& out, const std::string& prefix, const DerivativeOperator& op) {
  put(out, prefix + ".eval_points", op.eval_points);
  put_matrix(out, prefix + ".block_d1", op.block_d1);
  put_matrix(out, prefix + ".block_d2", op.block_d2);
}

DerivativeOperator get_operator(const Entries& e, const std::string& prefix, int dim, int d1, int d2) {
  return derivative_operator_from_blocks(d1, d2, e.vector(prefix + ".eval_points", dim),
                                         e.matrix(prefix + ".block_d1", dim, dim),
                                         e.matrix(prefix + ".block_d2", dim, dim));
}

}  // namespace

void write_model(std::ostream& out, const FmeModel& model) {
  model.validate();
  const BasisConfig& b = model.basis;
  out << kModelFormatTag << ' ' << kModelFormatVersion << '\n';
  out << "parameterization " << to_string(model.parameterization()) << '\n';
  out << "order " << b.order << '\n';
  out << "domain " << format_double(b.domain.lo) << ' ' << format_double(b.domain.hi) << '\n';
  out << "r " << b.r << '\n' << "p " << b.p << '\n' << "q " << b.q << '\n';
  out << "d1 " << b.d1 << '\n' << "d2 " << b.d2 << '\n';
  out << "K " << model.K() << '\n' << "G " << model.G() << '\n';
  put(out, "gating.intercepts", model.gating.intercepts);
  put_matrix(out, "gating.coeffs", model.gating.coeffs);
  for (int k = 0; k < model.K(); ++k) {
    const std::string prefix = "expert." + std::to_string(k + 1);
    put(out, prefix + ".intercepts", model.experts.experts[k].intercepts);
    put_matrix(out, prefix + ".coeffs", model.experts.experts[k].coeffs);
  }
  if (model.op_p) put_operator(out, "operator.p", *model.op_p);
  if (model.op_q) put_operator(out, "operator.q", *model.op_q);
  out << "end\n";
}

FmeModel read_model(std::istream& in) {
  const Entries e(in);
  const int version = e.integer(kModelFormatTag);
  if (version != kModelFormatVersion)
    throw ParseError("unsupported model document version " + std::to_string(version), 1, 0);
  e.raw("end");

  FmeModel m;
  const auto& param = e.raw("parameterization");
  if (param.size() != 1 || (param[0] != "plain" && param[0] != "derivative"))
    throw ParseError("model document: parameterization must be 'plain' or 'derivative'",
                     e.line("parameterization"), 0);
  const Parameterization p =
      param[0] == "plain" ? Parameterization::Plain : Parameterization::DerivativeReparam;
  BasisConfig& b = m.basis;
  b.order = e.integer("order");
  const Eigen::VectorXd dom = e.vector("domain", 2);
  b.domain = {dom[0], dom[1]};
  b.r = e.integer("r");
  b.p = e.integer("p");
  b.q = e.integer("q");
  b.d1 = e.integer("d1");
  b.d2 = e.integer("d2");
  const int K = e.integer("K");
  const int G = e.integer("G");
  if (K < 1 || G < 2 || b.p < 1 || b.q < 1 || b.r < 1)
    throw ParseError("model document: invalid dimensions", 0, 0);

  m.gating.K = K;
  m.gating.parameterization = p;
  m.gating.intercepts = e.vector("gating.intercepts", K - 1);
  m.gating.coeffs = K > 1 ? e.matrix("gating.coeffs", K - 1, b.p) : Eigen::MatrixXd::Zero(0, b.p);
  m.experts.G = G;
  m.experts.parameterization = p;
  for (int k = 0; k < K; ++k) {
    const std::string prefix = "expert." + std::to_string(k + 1);
    m.experts.experts.push_back(
        {e.vector(prefix + ".intercepts", G - 1), e.matrix(prefix + ".coeffs", G - 1, b.q)});
  }
  if (p == Parameterization::DerivativeReparam) {
    m.op_p = get_operator(e, "operator.p", b.p, b.d1, b.d2);
    m.op_q = get_operator(e, "operator.q", b.q, b.d1, b.d2);
  }
  m.validate();
  return m;
}

void save_model(const std::string& path, const FmeModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_model(out, model);
  if (!out) throw Error("failed writing '" + path + "'");
}

FmeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
  return read_model(in);
}

}  // namespace fme
