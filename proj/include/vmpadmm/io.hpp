#pragma once

// JSON problem/schedule files and CSV iteration logs.

#include "vmpadmm/problems.hpp"
#include "vmpadmm/schedule.hpp"
#include "vmpadmm/solver.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace vmpadmm {

using Json = nlohmann::ordered_json;

namespace io_detail {

inline const Json& field(const Json& j, const std::string& key, const std::string& where) {
  require(j.is_object(), where + ": expected a JSON object");
  auto it = j.find(key);
  require(it != j.end(), where + "." + key + ": missing field");
  return *it;
}

inline double number(const Json& j, const std::string& where) {
  require(j.is_number(), where + ": expected a number");
  return j.get<double>();
}

inline Vector vector(const Json& j, const std::string& where) {
  require(j.is_array() && !j.empty(), where + ": expected a nonempty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

inline Matrix matrix(const Json& j, const std::string& where) {
  require(j.is_array() && !j.empty() && j[0].is_array() && !j[0].empty(),
          where + ": expected a nonempty array of rows");
  const std::size_t rows = j.size(), cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string w = where + "[" + std::to_string(r) + "]";
    require(j[r].is_array() && j[r].size() == cols, w + ": ragged matrix row");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = number(j[r][c], w + "[" + std::to_string(c) + "]");
  }
  return m;
}

inline std::string type_of(const Json& j, const std::string& where) {
  const Json& t = field(j, "type", where);
  require(t.is_string(), where + ".type: expected a string");
  return t.get<std::string>();
}

// Rethrows any library error with the field path prepended.
template <class F>
auto at(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.rfind(where, 0) == 0) throw;
    throw Error(where + ": " + msg);
  }
}

}  // namespace io_detail

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error("'" + path + "': malformed JSON (" + e.what() + ")");
  }
}

inline FunctionDescriptor parse_function(const Json& j, Eigen::Index dim, const std::string& where) {
  using namespace io_detail;
  const std::string t = type_of(j, where);
  return at(where, [&]() -> FunctionDescriptor {
    if (t == "zero") return FunctionDescriptor::zero(dim);
    if (t == "l1") return FunctionDescriptor::l1(dim, number(field(j, "lambda", where), where + ".lambda"));
    if (t == "quadratic") {
      Matrix Q = matrix(field(j, "Q", where), where + ".Q");
      Vector q = j.contains("q") ? vector(j["q"], where + ".q") : Vector::Zero(Q.rows());
      require(Q.rows() == dim, where + ".Q: dimension does not match the constraint matrix");
      return FunctionDescriptor::quadratic(std::move(Q), std::move(q));
    }
    if (t == "box") {
      Vector l = vector(field(j, "l", where), where + ".l");
      Vector u = vector(field(j, "u", where), where + ".u");
      require(l.size() == dim, where + ".l: dimension does not match the constraint matrix");
      return FunctionDescriptor::box(std::move(l), std::move(u));
    }
    throw Error(where + ".type: unknown function type '" + t + "'");
  });
}

inline ProblemSpec parse_problem(const Json& j, const std::string& where = "problem") {
  using namespace io_detail;
  ProblemSpec p;
  p.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>() : "unnamed";
  p.A = matrix(field(j, "A", where), where + ".A");
  p.B = matrix(field(j, "B", where), where + ".B");
  p.b = vector(field(j, "b", where), where + ".b");
  p.f = parse_function(field(j, "f", where), p.A.cols(), where + ".f");
  p.g = parse_function(field(j, "g", where), p.B.cols(), where + ".g");
  at(where, [&] {
    p.validate();
    return 0;
  });
  return p;
}

inline Json problem_to_json(const ProblemSpec& p) {
  auto mat = [](const Matrix& m) {
    Json a = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      a.push_back(row);
    }
    return a;
  };
  auto vec = [](const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
  };
  auto fn = [&](const FunctionDescriptor& d) {
    Json o;
    switch (d.kind()) {
      case FunctionDescriptor::Kind::zero: o["type"] = "zero"; break;
      case FunctionDescriptor::Kind::quadratic:
        o["type"] = "quadratic";
        o["Q"] = mat(d.as_quadratic().Q);
        o["q"] = vec(d.as_quadratic().q);
        break;
      case FunctionDescriptor::Kind::l1:
        o["type"] = "l1";
        o["lambda"] = d.as_l1().lambda;
        break;
      case FunctionDescriptor::Kind::box:
        o["type"] = "box";
        o["l"] = vec(d.as_box().l);
        o["u"] = vec(d.as_box().u);
        break;
    }
    return o;
  };
  Json j;
  j["name"] = p.name;
  j["A"] = mat(p.A);
  j["B"] = mat(p.B);
  j["b"] = vec(p.b);
  j["f"] = fn(p.f);
  j["g"] = fn(p.g);
  return j;
}

// "gen:kind:dims:seed" or a path to a problem file.
inline ProblemSpec load_problem(const std::string& spec) {
  if (spec.rfind("gen:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    require(parts.size() == 4, "--problem: expected gen:kind:dims:seed, got '" + spec + "'");
    unsigned long long seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(parts[3], &used);
      require(used == parts[3].size(), "");
    } catch (const std::exception&) {
      throw Error("--problem: invalid seed '" + parts[3] + "'");
    }
    return generate(parse_generator_kind(parts[1]), parse_dims(parts[2]), seed);
  }
  return parse_problem(read_json_file(spec), "'" + spec + "'");
}

inline OperatorSpec parse_operator(const Json& j, const std::string& where, bool allow_linearized) {
  using namespace io_detail;
  const std::string t = type_of(j, where);
  if (t == "zero") return OperatorSpec::zero();
  if (t == "scaled_identity") return OperatorSpec::scaled_identity(number(field(j, "scale", where), where + ".scale"));
  if (t == "dense") return OperatorSpec::dense(matrix(field(j, "matrix", where), where + ".matrix"));
  if (t == "linearized") {
    require(allow_linearized, where + ".type: 'linearized' is only valid for R");
    return OperatorSpec::linearized(number(field(j, "tau", where), where + ".tau"));
  }
  throw Error(where + ".type: unknown operator type '" + t + "'");
}

struct ScheduleFile {
  ScheduleRule rule;
  std::optional<long> k_max;
};

// Realizes an operator descriptor outside a schedule (custom lists).
inline PsdOperator realize_operator(const OperatorSpec& s, Eigen::Index n, SpaceLabel label, bool definite,
                                    const std::string& where) {
  return io_detail::at(where, [&]() -> PsdOperator {
    switch (s.kind) {
      case OperatorSpec::Kind::zero: return PsdOperator::zero(n, label);
      case OperatorSpec::Kind::scaled_identity: return PsdOperator::scaled_identity(n, s.scale, label);
      case OperatorSpec::Kind::dense:
        require(s.matrix.rows() == n && s.matrix.cols() == n, "dense operator has wrong dimension");
        return PsdOperator(s.matrix, definite ? Definiteness::definite : Definiteness::semidefinite, label);
      case OperatorSpec::Kind::linearized: break;
    }
    throw Error("linearized operators are not supported in custom lists");
  });
}

// {"H":..,"R":..,"S":..,"c":{"c0":..,"law":..},"k_max":..} or
// {"custom":[{"H":..,"R":..,"S":..},...],"c_list":[...]}.
inline ScheduleFile parse_schedule(const Json& j, const ProblemSpec& p, const std::string& where = "schedule") {
  using namespace io_detail;
  require(j.is_object(), where + ": expected a JSON object");
  ScheduleFile out;
  if (j.contains("k_max")) {
    require(j["k_max"].is_number_integer(), where + ".k_max: expected an integer");
    out.k_max = j["k_max"].get<long>();
    require(*out.k_max >= 1, where + ".k_max: must be >= 1");
  }
  if (j.contains("custom")) {
    const Json& list = j["custom"];
    require(list.is_array() && list.size() >= 2, where + ".custom: expected an array of at least two entries");
    out.rule.kind = ScheduleKind::custom_list;
    for (std::size_t k = 0; k < list.size(); ++k) {
      const std::string w = where + ".custom[" + std::to_string(k) + "]";
      const OperatorSpec h = parse_operator(field(list[k], "H", w), w + ".H", false);
      const OperatorSpec r = list[k].contains("R") ? parse_operator(list[k]["R"], w + ".R", false) : OperatorSpec::zero();
      const OperatorSpec s = list[k].contains("S") ? parse_operator(list[k]["S"], w + ".S", false) : OperatorSpec::zero();
      out.rule.custom.push_back({realize_operator(h, p.m(), SpaceLabel::Gamma, true, w + ".H"),
                                 realize_operator(r, p.nx(), SpaceLabel::X, false, w + ".R"),
                                 realize_operator(s, p.ny(), SpaceLabel::Y, false, w + ".S")});
    }
    if (j.contains("c_list")) {
      const Json& c = j["c_list"];
      require(c.is_array(), where + ".c_list: expected an array of numbers");
      for (std::size_t k = 0; k < c.size(); ++k)
        out.rule.custom_c.push_back(number(c[k], where + ".c_list[" + std::to_string(k) + "]"));
    }
    out.rule.custom_c.resize(std::max(out.rule.custom_c.size(), list.size() - 1), 0.0);
    return out;
  }
  if (j.contains("H")) out.rule.H = parse_operator(j["H"], where + ".H", false);
  if (j.contains("R")) out.rule.R = parse_operator(j["R"], where + ".R", true);
  if (j.contains("S")) out.rule.S = parse_operator(j["S"], where + ".S", false);
  if (j.contains("c")) {
    const Json& c = j["c"];
    out.rule.decay.c0 = number(field(c, "c0", where + ".c"), where + ".c.c0");
    require(out.rule.decay.c0 >= 0.0, where + ".c.c0: must be nonnegative");
    const std::string law = c.contains("law") && c["law"].is_string() ? c["law"].get<std::string>() : "inverse_square";
    if (law == "inverse_square") out.rule.decay.law = DecayLaw::inverse_square;
    else if (law == "zero") out.rule.decay.law = DecayLaw::zero;
    else throw Error(where + ".c.law: unknown law '" + law + "' (expected inverse_square or zero)");
    if (out.rule.decay.law == DecayLaw::inverse_square && out.rule.decay.c0 > 0.0)
      out.rule.kind = ScheduleKind::scaled_identity_decay;
  }
  return out;
}

inline ScheduleFile load_schedule(const std::string& path, const ProblemSpec& p) {
  return parse_schedule(read_json_file(path), p, "'" + path + "'");
}

// ---------------------------------------------------------------------------
// CSV

inline const char* csv_header() {
  return "k,res_x_dual,res_y_dual,res_gamma_dual,res_max,bound_pointwise,erg_res_max,bound_erg_res,"
         "eps_x_a,eps_y_a,eps_sum,bound_erg_eps,eta_k,hpe_lhs,hpe_rhs,hpe_slack";
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_row(const AdmmRecord& r) {
  std::string s = std::to_string(r.k);
  for (double v : {r.res_x_dual, r.res_y_dual, r.res_gamma_dual, r.res_max_best, r.bound_pointwise, r.erg_res_max,
                   r.bound_erg_res, r.eps_x, r.eps_y, r.eps_sum, r.bound_erg_eps, r.eta, r.hpe_lhs, r.hpe_rhs,
                   r.hpe_slack}) {
    s += ',';
    s += format_real(v);
  }
  return s;
}

inline void write_csv(std::ostream& out, const std::vector<AdmmRecord>& records) {
  out << csv_header() << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
}

}  // namespace vmpadmm
