#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rcml/dispersion.hpp"
#include "rcml/error.hpp"
#include "rcml/model.hpp"
#include "rcml/scoring.hpp"
#include "rcml/simgen.hpp"
#include "rcml/stats.hpp"

namespace rcml::io {

using nlohmann::json;

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Row-major array of arrays.
inline json to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::parse_error, what + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::parse_error, what + " must contain only numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

/// Accepts a row-major array of equal-length rows. `cols` fixes the width
/// for empty input.
inline Matrix matrix_from_json(const json& j, const std::string& what, Eigen::Index cols = -1) {
  if (!j.is_array()) throw Error(ErrorCode::parse_error, what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index width = cols;
  if (rows > 0) {
    if (!j[0].is_array()) throw Error(ErrorCode::parse_error, what + " rows must be arrays");
    width = static_cast<Eigen::Index>(j[0].size());
  }
  Matrix m(rows, std::max<Eigen::Index>(width, 0));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != width) {
      throw Error(ErrorCode::dimension_mismatch, what + " has rows of unequal length");
    }
    for (Eigen::Index c = 0; c < width; ++c) {
      const auto& cell = row[static_cast<std::size_t>(c)];
      if (!cell.is_number()) throw Error(ErrorCode::parse_error, what + " must contain only numbers");
      m(i, c) = cell.get<double>();
    }
  }
  return m;
}

inline json to_json(const Dataset& data) {
  json inds = json::array();
  for (const auto& ind : data.individuals) {
    inds.push_back({{"id", ind.id}, {"x", to_json(ind.x)}, {"z", to_json(ind.z)}, {"y", to_json(ind.y)}});
  }
  return {{"individuals", std::move(inds)}};
}

inline Dataset dataset_from_json(const json& j) {
  if (!j.is_object() || !j.contains("individuals") || !j["individuals"].is_array()) {
    throw Error(ErrorCode::parse_error, "dataset JSON needs a top-level 'individuals' array");
  }
  Dataset data;
  std::size_t index = 0;
  for (const auto& e : j["individuals"]) {
    ++index;
    if (!e.is_object()) throw Error(ErrorCode::parse_error, "individual entries must be objects");
    Individual ind;
    if (e.contains("id")) {
      ind.id = e["id"].is_string() ? e["id"].get<std::string>() : e["id"].dump();
    } else {
      ind.id = std::to_string(index);
    }
    for (const char* key : {"x", "z", "y"}) {
      if (!e.contains(key)) throw Error(ErrorCode::parse_error, "individual '" + ind.id + "' is missing '" + key + "'");
    }
    ind.x = matrix_from_json(e["x"], "individual '" + ind.id + "' x");
    ind.z = matrix_from_json(e["z"], "individual '" + ind.id + "' z");
    ind.y = vector_from_json(e["y"], "individual '" + ind.id + "' y");
    data.individuals.push_back(std::move(ind));
  }
  check_dimensions(data);
  return data;
}

namespace detail {

inline std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<int> column_index(const std::string& name, char prefix) {
  if (name.size() < 2 || name[0] != prefix) return std::nullopt;
  int v = 0;
  for (std::size_t i = 1; i < name.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return std::nullopt;
    v = v * 10 + (name[i] - '0');
  }
  return v;
}

inline double parse_number(const std::string& cell, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::parse_error, "line " + std::to_string(line) + ": '" + cell + "' is not a number");
  }
}

}  // namespace detail

/// Long-format CSV: columns id, y, x1..xp, z1..zq in any order. Individuals
/// appear in order of first occurrence of their id.
inline Dataset dataset_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse_error, "CSV input is empty");
  const auto header = detail::split_csv(line);
  int id_col = -1;
  int y_col = -1;
  std::map<int, int> x_cols;
  std::map<int, int> z_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& h = header[static_cast<std::size_t>(c)];
    if (h == "id") {
      id_col = c;
    } else if (h == "y") {
      y_col = c;
    } else if (auto xi = detail::column_index(h, 'x')) {
      x_cols[*xi] = c;
    } else if (auto zi = detail::column_index(h, 'z')) {
      z_cols[*zi] = c;
    } else {
      throw Error(ErrorCode::parse_error, "unexpected CSV column '" + h + "'");
    }
  }
  auto contiguous = [](const std::map<int, int>& cols) {
    int expect = 1;
    for (const auto& [idx, col] : cols) {
      if (idx != expect++) return false;
    }
    return !cols.empty();
  };
  if (id_col < 0 || y_col < 0 || !contiguous(x_cols) || !contiguous(z_cols)) {
    throw Error(ErrorCode::parse_error, "CSV header needs id, y, x1..xp and z1..zq");
  }
  const auto p = static_cast<Eigen::Index>(x_cols.size());
  const auto q = static_cast<Eigen::Index>(z_cols.size());

  struct Rows {
    std::vector<double> y;
    std::vector<std::vector<double>> x, z;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> groups;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::dimension_mismatch, "line " + std::to_string(line_no) + " has " +
                                                     std::to_string(cells.size()) + " cells, header has " +
                                                     std::to_string(header.size()));
    }
    const auto& id = cells[static_cast<std::size_t>(id_col)];
    auto [it, inserted] = groups.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.y.push_back(detail::parse_number(cells[static_cast<std::size_t>(y_col)], line_no));
    std::vector<double> xr, zr;
    for (const auto& [idx, col] : x_cols) xr.push_back(detail::parse_number(cells[static_cast<std::size_t>(col)], line_no));
    for (const auto& [idx, col] : z_cols) zr.push_back(detail::parse_number(cells[static_cast<std::size_t>(col)], line_no));
    it->second.x.push_back(std::move(xr));
    it->second.z.push_back(std::move(zr));
  }
  Dataset data;
  for (const auto& id : order) {
    const auto& g = groups.at(id);
    Individual ind;
    ind.id = id;
    const auto n = static_cast<Eigen::Index>(g.y.size());
    ind.y = Eigen::Map<const Vector>(g.y.data(), n);
    ind.x.resize(n, p);
    ind.z.resize(n, q);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) ind.x(i, j) = g.x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      for (Eigen::Index j = 0; j < q; ++j) ind.z(i, j) = g.z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    data.individuals.push_back(std::move(ind));
  }
  check_dimensions(data);
  return data;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::parse_error, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, "'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::parse_error, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::parse_error, "write to '" + path + "' failed");
}

/// JSON unless the path ends in ".csv".
inline Dataset load_dataset(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::parse_error, "cannot open '" + path + "'");
    return dataset_from_csv(in);
  }
  return dataset_from_json(read_json_file(path));
}

inline json to_json(const ValidationReport& r) {
  json inds = json::array();
  for (const auto& ir : r.individuals) {
    inds.push_back({{"id", ir.id},
                    {"n_obs", ir.n_obs},
                    {"x_rank", ir.x_rank},
                    {"z_rank", ir.z_rank},
                    {"containment_residual", ir.containment_residual},
                    {"contained", ir.contained}});
  }
  return {{"valid", r.valid},          {"p", r.p},
          {"q", r.q},                  {"pooled_rank", r.pooled_rank},
          {"containment_tol", r.containment_tol}, {"individuals", std::move(inds)}};
}

inline json to_json(const IndividualStats& s) {
  json j = {{"id", s.id},
            {"n_obs", s.n_obs},
            {"x_rank", s.x_rank},
            {"z_rank", s.z_rank},
            {"alpha", to_json(s.alpha)},
            {"rss", s.rss},
            {"xtx", to_json(s.xtx)},
            {"ztz", to_json(s.ztz)},
            {"e", to_json(s.e)},
            {"f", to_json(s.f)},
            {"k", to_json(s.kmat)},
            {"l", to_json(s.lmat)}};
  j["sigma2_hat"] = s.sigma2_hat ? json(*s.sigma2_hat) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Fit configuration and results
// ---------------------------------------------------------------------------

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error(ErrorCode::invalid_config, "unknown " + what + " key '" + key + "'");
  }
}

inline SigmaMode parse_sigma_mode(const std::string& s) {
  if (s == "hybrid-ols") return SigmaMode::hybrid_ols;
  if (s == "user-fixed") return SigmaMode::user_fixed;
  throw Error(ErrorCode::invalid_config, "sigma mode must be 'hybrid-ols' or 'user-fixed', got '" + s + "'");
}

inline InformationForm parse_information(const std::string& s) {
  if (s == "exact") return InformationForm::exact;
  if (s == "simplified") return InformationForm::simplified;
  throw Error(ErrorCode::invalid_config, "information must be 'exact' or 'simplified', got '" + s + "'");
}

/// Fit configuration plus the dispersion description, which stays as JSON
/// until q is known.
struct FitRequest {
  FitConfig config;
  json dispersion = "full-symmetric";
  bool threads_given = false;
};

inline FitRequest fit_request_from_json(const json& j) {
  FitRequest req;
  if (j.is_null()) return req;
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "fit config must be a JSON object");
  reject_unknown_keys(j,
                      {"max_iters", "grad_tol", "step_tol", "ridge", "line_search", "sigma_mode", "sigma2",
                       "information", "threads", "rank_tol", "containment_tol", "dispersion"},
                      "fit config");
  auto& c = req.config;
  try {
    if (j.contains("max_iters")) c.max_iters = j["max_iters"].get<int>();
    if (j.contains("grad_tol")) c.grad_tol = j["grad_tol"].get<double>();
    if (j.contains("step_tol")) c.step_tol = j["step_tol"].get<double>();
    if (j.contains("ridge")) c.ridge = j["ridge"].get<double>();
    if (j.contains("line_search")) c.line_search = j["line_search"].get<bool>();
    if (j.contains("sigma_mode")) c.sigma_mode = parse_sigma_mode(j["sigma_mode"].get<std::string>());
    if (j.contains("information")) c.information = parse_information(j["information"].get<std::string>());
    if (j.contains("threads")) {
      c.threads = j["threads"].get<int>();
      req.threads_given = true;
    }
    if (j.contains("rank_tol")) c.rank_tol = j["rank_tol"].get<double>();
    if (j.contains("containment_tol")) c.containment_tol = j["containment_tol"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("fit config: ") + e.what());
  }
  if (j.contains("sigma2")) {
    c.sigma2 = j["sigma2"].is_number() ? Vector::Constant(1, j["sigma2"].get<double>())
                                       : vector_from_json(j["sigma2"], "sigma2");
  }
  if (j.contains("dispersion")) req.dispersion = j["dispersion"];
  c.check();
  return req;
}

/// "full-symmetric", "diagonal", or {"kind": "fixed-pattern", "basis": [[..], ..]}.
inline DispersionSpec dispersion_from_json(const json& j, int q) {
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "full-symmetric") return DispersionSpec::full_symmetric(q);
    if (kind == "diagonal") return DispersionSpec::diagonal(q);
    throw Error(ErrorCode::invalid_config, "unknown dispersion kind '" + kind + "'");
  }
  if (j.is_object() && j.value("kind", std::string()) == "fixed-pattern" && j.contains("basis") &&
      j["basis"].is_array()) {
    std::vector<Matrix> basis;
    for (const auto& b : j["basis"]) basis.push_back(matrix_from_json(b, "dispersion basis"));
    auto spec = DispersionSpec::fixed_pattern(std::move(basis));
    if (spec.dim() != q) throw Error(ErrorCode::invalid_config, "dispersion basis dimension does not match q");
    return spec;
  }
  throw Error(ErrorCode::invalid_config, "dispersion must be a kind name or a fixed-pattern object");
}

inline json to_json(const FitResult& r) {
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iteration", t.iteration},
                     {"theta", to_json(t.theta)},
                     {"loglik", t.loglik},
                     {"grad_norm", t.grad_norm},
                     {"step", t.step}});
  }
  json blups = json::array();
  for (const auto& b : r.blups) blups.push_back({{"id", b.id}, {"beta", to_json(b.beta)}});
  return {{"theta_hat", to_json(r.theta_hat)},
          {"d_hat", to_json(r.d_hat)},
          {"alpha_hat", to_json(r.alpha_hat)},
          {"omega", to_json(r.omega)},
          {"sigma2", to_json(r.sigma2)},
          {"loglik", r.loglik},
          {"converged", r.converged},
          {"stalled", r.stalled},
          {"iterations", r.iterations},
          {"information", to_json(r.information)},
          {"trace", std::move(trace)},
          {"blups", std::move(blups)}};
}

inline FitResult fit_result_from_json(const json& j) {
  try {
    FitResult r;
    r.theta_hat = vector_from_json(j.at("theta_hat"), "theta_hat");
    r.d_hat = matrix_from_json(j.at("d_hat"), "d_hat");
    r.alpha_hat = vector_from_json(j.at("alpha_hat"), "alpha_hat");
    r.omega = matrix_from_json(j.at("omega"), "omega");
    r.sigma2 = vector_from_json(j.at("sigma2"), "sigma2");
    r.loglik = j.at("loglik").get<double>();
    r.converged = j.at("converged").get<bool>();
    r.stalled = j.at("stalled").get<bool>();
    r.iterations = j.at("iterations").get<int>();
    r.information = matrix_from_json(j.at("information"), "information", r.theta_hat.size());
    for (const auto& t : j.at("trace")) {
      r.trace.push_back({t.at("iteration").get<int>(), vector_from_json(t.at("theta"), "trace theta"),
                         t.at("loglik").get<double>(), t.at("grad_norm").get<double>(), t.at("step").get<double>()});
    }
    for (const auto& b : j.at("blups")) {
      r.blups.push_back({b.at("id").get<std::string>(), vector_from_json(b.at("beta"), "blup beta")});
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("fit result: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Simulation config
// ---------------------------------------------------------------------------

inline Design parse_design(const std::string& s) {
  if (s == "random-gaussian-x-with-z-subset") return Design::gaussian_z_subset;
  if (s == "z-equals-x") return Design::z_equals_x;
  if (s == "user-supplied") return Design::user_supplied;
  throw Error(ErrorCode::invalid_config, "unknown design '" + s + "'");
}

/// Keys: n_individuals, n_obs (number or [min, max]), p, q, alpha, d,
/// sigma2 (number or array), design, intercept, x/z (user-supplied
/// blocks), seed.
inline SimConfig sim_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "simulation config must be a JSON object");
  reject_unknown_keys(j, {"n_individuals", "n_obs", "p", "q", "alpha", "d", "sigma2", "design", "intercept", "x", "z",
                          "seed"},
                      "simulation config");
  SimConfig c;
  try {
    c.n_individuals = j.value("n_individuals", c.n_individuals);
    c.p = j.value("p", c.p);
    c.q = j.value("q", c.q);
    if (j.contains("n_obs")) {
      if (j["n_obs"].is_array()) {
        if (j["n_obs"].size() != 2) throw Error(ErrorCode::invalid_config, "n_obs range must be [min, max]");
        c.n_obs_min = j["n_obs"][0].get<int>();
        c.n_obs_max = j["n_obs"][1].get<int>();
      } else {
        c.n_obs_min = c.n_obs_max = j["n_obs"].get<int>();
      }
    }
    if (j.contains("design")) c.design = parse_design(j["design"].get<std::string>());
    c.intercept = j.value("intercept", c.intercept);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("simulation config: ") + e.what());
  }
  c.alpha = j.contains("alpha") ? vector_from_json(j["alpha"], "alpha") : Vector::Zero(c.p);
  c.d = j.contains("d") ? matrix_from_json(j["d"], "d") : Matrix::Zero(c.q, c.q);
  if (!j.contains("sigma2")) {
    c.sigma2 = Vector::Ones(1);
  } else if (j["sigma2"].is_number()) {
    c.sigma2 = Vector::Constant(1, j["sigma2"].get<double>());
  } else {
    c.sigma2 = vector_from_json(j["sigma2"], "sigma2");
  }
  if (c.design == Design::user_supplied) {
    if (!j.contains("x") || !j.contains("z")) {
      throw Error(ErrorCode::invalid_config, "user-supplied design needs 'x' and 'z' block lists");
    }
    for (const auto& b : j["x"]) c.user_x.push_back(matrix_from_json(b, "x block"));
    for (const auto& b : j["z"]) c.user_z.push_back(matrix_from_json(b, "z block"));
  }
  return c;
}

inline json to_json(const Truth& t) {
  return {{"alpha", to_json(t.alpha)}, {"d", to_json(t.d)}, {"sigma2", to_json(t.sigma2)}};
}

}  // namespace rcml::io
