#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/diagnostics.hpp"
#include "cdcm/errors.hpp"
#include "cdcm/group.hpp"
#include "cdcm/identify.hpp"
#include "cdcm/model.hpp"
#include "cdcm/nuts.hpp"

namespace cdcm {

using nlohmann::json;

// ============================================================================
// Numeric text format
// ============================================================================
// Shortest round-trip decimal representation; together with LF endings this
// makes written files reproduce bit-for-bit across runs.

inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, int line) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw parse_error("non-numeric cell '" + s + "' at line " + std::to_string(line));
  return v;
}

// ============================================================================
// CSV
// ============================================================================

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace io_detail

struct CsvMatrix {
  MatrixXd values;
  std::vector<std::string> header;  // empty when headerless
};

inline CsvMatrix read_matrix_csv(const std::string& path, bool has_header) {
  const auto lines = io_detail::read_lines(path);
  if (lines.empty()) throw parse_error("empty file: " + path);

  CsvMatrix out;
  std::size_t first = 0;
  if (has_header) {
    out.header = io_detail::split_csv_line(lines[0]);
    first = 1;
    if (lines.size() == 1) throw parse_error("no data rows in " + path);
  }
  const std::size_t rows = lines.size() - first;
  const std::size_t cols = io_detail::split_csv_line(lines[first]).size();
  out.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const auto cells = io_detail::split_csv_line(lines[first + i]);
    if (cells.size() != cols)
      throw parse_error("ragged row at line " + std::to_string(first + i + 1) +
                        " in " + path);
    for (std::size_t j = 0; j < cols; ++j)
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_double(cells[j], static_cast<int>(first + i + 1));
  }
  return out;
}

inline void write_matrix_csv(const std::string& path, const MatrixXd& m,
                             const std::vector<std::string>& header = {}) {
  std::ofstream out(path, std::ios::binary);  // LF endings everywhere
  if (!out) throw parse_error("cannot write file: " + path);
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      out << (j ? "," : "") << header[j];
    out << "\n";
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out << (j ? "," : "") << fmt_double(m(i, j));
    out << "\n";
  }
}

struct BoldData {
  MatrixXd y;
  std::vector<std::string> roi_names;
  bool range_warning = false;  // range(Y) > 4
};

/// Strict BOLD reader: header row of ROI names, numeric body. Flags (but
/// does not rescale) data spanning more than 4 units.
inline BoldData read_bold_csv(const std::string& path) {
  CsvMatrix csv = read_matrix_csv(path, true);
  BoldData out;
  out.y = std::move(csv.values);
  out.roi_names = std::move(csv.header);
  out.range_warning = (out.y.maxCoeff() - out.y.minCoeff()) > 4.0;
  return out;
}

// ============================================================================
// JSON formats
// ============================================================================

inline json hypothesis_to_json(const Hypothesis& h) {
  json j;
  j["d"] = h.d;
  j["m"] = h.m;
  auto boolmat = [](const BoolMat& m) {
    std::vector<std::vector<bool>> v;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<bool> row;
      for (Eigen::Index jj = 0; jj < m.cols(); ++jj) row.push_back(m(i, jj));
      v.push_back(row);
    }
    return v;
  };
  j["mask_A"] = boolmat(h.mask_a);
  std::vector<std::vector<std::vector<bool>>> mb;
  for (const auto& b : h.mask_b) mb.push_back(boolmat(b));
  j["mask_B"] = mb;
  j["mask_C"] = boolmat(h.mask_c);
  return j;
}

inline Hypothesis hypothesis_from_json(const json& j) {
  Hypothesis h;
  h.d = j.at("d").get<int>();
  h.m = j.at("m").get<int>();
  auto boolmat = [](const json& arr, int rows, int cols) {
    BoolMat m(rows, cols);
    if (static_cast<int>(arr.size()) != rows)
      throw parse_error("hypothesis mask has wrong row count");
    for (int i = 0; i < rows; ++i) {
      if (static_cast<int>(arr[i].size()) != cols)
        throw parse_error("hypothesis mask has wrong column count");
      for (int jj = 0; jj < cols; ++jj) m(i, jj) = arr[i][jj].get<bool>();
    }
    return m;
  };
  h.mask_a = boolmat(j.at("mask_A"), h.d, h.d);
  for (const auto& b : j.at("mask_B")) h.mask_b.push_back(boolmat(b, h.d, h.d));
  h.mask_c = boolmat(j.at("mask_C"), h.d, h.m);
  h.validate();
  return h;
}

inline void write_hypothesis(const std::string& path, const Hypothesis& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot write file: " + path);
  out << hypothesis_to_json(h).dump(2) << "\n";
}

inline Hypothesis read_hypothesis(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return hypothesis_from_json(j);
}

/// Stimulus design: CSV of 0/1 rows plus sidecar JSON
/// {"tr_seconds": r, "prescan_rest": flag} at <path with .json extension>.
inline std::string design_sidecar_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".json");
  return p.string();
}

inline StimulusDesign read_design(const std::string& csv_path) {
  CsvMatrix csv = read_matrix_csv(csv_path, false);
  MatrixXi u(csv.values.rows(), csv.values.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      const double v = csv.values(i, j);
      if (v != 0.0 && v != 1.0)
        throw parse_error("non-binary stimulus entry at line " + std::to_string(i + 1));
      u(i, j) = static_cast<int>(v);
    }
  std::ifstream side(design_sidecar_path(csv_path));
  if (!side)
    throw parse_error("missing design sidecar: " + design_sidecar_path(csv_path));
  json j;
  try {
    side >> j;
  } catch (const json::exception& e) {
    throw parse_error(design_sidecar_path(csv_path) + ": " + e.what());
  }
  const double r = j.at("tr_seconds").get<double>();
  const bool prescan = j.value("prescan_rest", true);
  return block_partition(u, r, prescan);
}

inline void write_design(const std::string& csv_path, const StimulusDesign& d) {
  write_matrix_csv(csv_path, d.u.cast<double>());
  json j;
  j["tr_seconds"] = d.r;
  j["prescan_rest"] = d.prescan_rest;
  std::ofstream side(design_sidecar_path(csv_path), std::ios::binary);
  side << j.dump(2) << "\n";
}

inline json params_to_json(const ParamSet& p) {
  auto vec = [](const VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  json j;
  j["nu_diag_a"] = vec(p.nu_diag_a);
  j["offdiag_a"] = vec(p.offdiag_a);
  j["b_entries"] = vec(p.b_entries);
  j["c_entries"] = vec(p.c_entries);
  j["s_star"] = vec(p.s_star);
  j["beta"] = vec(p.beta);
  j["sigma"] = vec(p.sigma);
  return j;
}

inline ParamSet params_from_json(const json& j, const Hypothesis& h) {
  auto vec = [&j](const char* key, Eigen::Index want) {
    const auto& arr = j.at(key);
    if (static_cast<Eigen::Index>(arr.size()) != want)
      throw parse_error(std::string("parameter field '") + key +
                        "' has wrong length");
    VectorXd v(want);
    for (Eigen::Index i = 0; i < want; ++i)
      v(i) = arr[static_cast<std::size_t>(i)].get<double>();
    return v;
  };
  ParamSet p;
  p.nu_diag_a = vec("nu_diag_a", h.d);
  p.offdiag_a = vec("offdiag_a", static_cast<Eigen::Index>(h.off_a.size()));
  p.b_entries = vec("b_entries", static_cast<Eigen::Index>(h.idx_b.size()));
  p.c_entries = vec("c_entries", static_cast<Eigen::Index>(h.idx_c.size()));
  p.s_star = vec("s_star", h.d);
  p.beta = vec("beta", h.d);
  p.sigma = j.contains("sigma") ? vec("sigma", h.d) : VectorXd::Ones(h.d);
  return p;
}

inline json audit_report_to_json(const AuditReport& rep) {
  json j;
  j["a1"] = {{"evaluated", rep.a1.evaluated},
             {"pass", rep.a1.pass},
             {"required_length", rep.a1.required_length},
             {"block_lengths", rep.a1.block_lengths},
             {"usable_states", rep.a1.usable_states}};
  j["a2"] = {{"evaluated", rep.a2.evaluated},
             {"pass", rep.a2.pass},
             {"selected_blocks", rep.a2.selected_blocks},
             {"cond_ustar", rep.a2.cond_ustar}};
  j["a3"] = {{"evaluated", rep.a3_evaluated}, {"blocks", json::array()}};
  for (const auto& e : rep.a3)
    j["a3"]["blocks"].push_back({{"block", e.block},
                                 {"pass", e.pass},
                                 {"eig_real", e.eig_real},
                                 {"eig_imag", e.eig_imag}});
  j["a4"] = {{"evaluated", rep.a4_evaluated}, {"blocks", json::array()}};
  for (const auto& e : rep.a4)
    j["a4"]["blocks"].push_back({{"block", e.block}, {"pass", e.pass}, {"cond", e.cond}});
  j["thresholds"] = {{"cond_limit", audit::kCondLimit},
                     {"eig_imag_tol", audit::kEigImagTol},
                     {"eig_gap_tol", audit::kEigGapTol}};
  j["all_pass"] = rep.a1.pass && rep.a2.pass &&
                  (!rep.a3_evaluated ||
                   std::all_of(rep.a3.begin(), rep.a3.end(),
                               [](const auto& e) { return e.pass; })) &&
                  (!rep.a4_evaluated ||
                   std::all_of(rep.a4.begin(), rep.a4.end(),
                               [](const auto& e) { return e.pass; }));
  return j;
}

inline json summary_to_json(const DrawsSummary& s, const PosteriorDraws& pd) {
  json j;
  j["parameters"] = json::array();
  for (const auto& ps : s.params) {
    j["parameters"].push_back({{"name", ps.name},
                               {"mean", ps.mean},
                               {"sd", ps.sd},
                               {"hpd_95", {ps.hpd_lo, ps.hpd_hi}},
                               {"natural_name", ps.natural_name},
                               {"natural_mean", ps.nat_mean},
                               {"natural_sd", ps.nat_sd},
                               {"natural_hpd_95", {ps.nat_lo, ps.nat_hi}}});
  }
  j["theta_hat"] = std::vector<double>(s.theta_hat.data(),
                                       s.theta_hat.data() + s.theta_hat.size());
  j["S_within"] = json::array();
  for (Eigen::Index i = 0; i < s.s_within.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < s.s_within.cols(); ++k) row.push_back(s.s_within(i, k));
    j["S_within"].push_back(row);
  }
  j["diagnostics"] = {{"step_size", pd.step_size},
                      {"divergences", pd.divergence_count},
                      {"divergence_warning", pd.divergence_warning},
                      {"max_treedepth_hits", pd.max_depth_hits},
                      {"iterations_per_chain", pd.iterations_per_chain},
                      {"chains", pd.chains},
                      {"converged", pd.converged},
                      {"multi_ess", pd.ess},
                      {"ess_target", pd.ess_target},
                      {"cov_estimator", pd.cov_estimator},
                      {"seed", pd.seed}};
  if (pd.divergence_warning)
    j["diagnostics"]["recommendation"] =
        "more than 1% divergent transitions; raise target_accept to 0.95 or "
        "0.99 and consider a longer warmup";
  return j;
}

inline void write_draws_csv(const std::string& path, const PosteriorDraws& pd) {
  write_matrix_csv(path, pd.draws, pd.names);
}

/// Subject payload for the group stage: posterior means of the neural block
/// and their within-subject covariance, as written by `fit`.
struct SubjectSummary {
  VectorXd theta_hat;
  MatrixXd s;
};

inline SubjectSummary read_subject_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  SubjectSummary out;
  const auto& th = j.at("theta_hat");
  out.theta_hat.resize(static_cast<Eigen::Index>(th.size()));
  for (std::size_t i = 0; i < th.size(); ++i)
    out.theta_hat(static_cast<Eigen::Index>(i)) = th[i].get<double>();
  const auto& sm = j.at("S_within");
  const auto p = static_cast<Eigen::Index>(sm.size());
  out.s.resize(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index k = 0; k < p; ++k) out.s(i, k) = sm[i][k].get<double>();
  return out;
}

inline CovariateTable read_covariate_csv(const std::string& path) {
  const auto lines = io_detail::read_lines(path);
  if (lines.size() < 2) throw parse_error("covariate file needs a header and rows: " + path);
  CovariateTable t;
  t.names = io_detail::split_csv_line(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = io_detail::split_csv_line(lines[i]);
    if (cells.size() != t.names.size())
      throw parse_error("ragged covariate row at line " + std::to_string(i + 1));
    t.cells.push_back(std::move(cells));
  }
  return t;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return j;
}

}  // namespace cdcm
