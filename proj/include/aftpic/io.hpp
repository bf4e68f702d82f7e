#ifndef AFTPIC_IO_HPP_
#define AFTPIC_IO_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "aftpic/basis.hpp"
#include "aftpic/covariance.hpp"
#include "aftpic/errors.hpp"
#include "aftpic/inference.hpp"
#include "aftpic/model.hpp"
#include "aftpic/optimizer.hpp"

namespace aftpic {

using Json = nlohmann::json;

inline constexpr int kFitSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Numbers

/// Shortest decimal string that parses back to the same double; "inf" for +inf.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s == "inf" || s == "Inf" || s == "INF" || s == "Infinity" || s == "+inf") return kInf;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based, per row

  std::optional<std::size_t> column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }

  std::size_t require_column(const std::string& name) const {
    auto c = column(name);
    if (!c) throw InvalidInput(source + ": missing column '" + name + "'");
    return *c;
  }

  std::string where(std::size_t row) const { return source + ":" + std::to_string(line_numbers[row]); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw InvalidInput(where + ": unterminated quote");
  out.push_back(std::move(cell));
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line, source + ":" + std::to_string(lineno));
    for (auto& c : cells) c = detail::trim(c);
    if (!have_header) {
      if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) cells[0] = cells[0].substr(3);
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw InvalidInput(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                         " cells, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) throw InvalidInput(source + ": empty file (no header row)");
  return t;
}

inline CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_csv(in, path.string());
}

// ---------------------------------------------------------------------------
// Dataset ingestion

/// Which columns hold covariates. Empty lists select defaults: every column of
/// the subjects table beyond id/yL/yR/kind for x, and every column of the long
/// table beyond id/start/end/status for z.
struct ColumnMapping {
  std::vector<std::string> x_columns;
  std::vector<std::string> z_columns;
  bool x_explicit = false;
  bool z_explicit = false;
};

namespace detail {

inline const std::vector<std::string>& long_fixed_columns() {
  static const std::vector<std::string> cols{"id", "start", "end", "status"};
  return cols;
}

inline const std::vector<std::string>& subject_fixed_columns() {
  static const std::vector<std::string> cols{"id", "yL", "yR", "kind"};
  return cols;
}

inline std::vector<std::string> extra_columns(const CsvTable& t, const std::vector<std::string>& fixed) {
  std::vector<std::string> out;
  for (const auto& h : t.header)
    if (std::find(fixed.begin(), fixed.end(), h) == fixed.end()) out.push_back(h);
  return out;
}

struct LongRow {
  std::size_t row;
  double start;
  double end;
  int status;
};

struct IdGroups {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<LongRow>> rows;
};

inline IdGroups group_long_rows(const CsvTable& t) {
  const std::size_t c_id = t.require_column("id"), c_start = t.require_column("start"),
                    c_end = t.require_column("end"), c_status = t.require_column("status");
  IdGroups g;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    const std::string& id = cells[c_id];
    if (id.empty()) throw InvalidInput(t.where(r) + ": empty id");
    const auto start = parse_double(cells[c_start]);
    const auto end = parse_double(cells[c_end]);
    if (!start || !std::isfinite(*start) || *start < 0.0)
      throw InvalidInput(t.where(r) + ": invalid start '" + cells[c_start] + "'");
    if (!end) throw InvalidInput(t.where(r) + ": invalid end '" + cells[c_end] + "'");
    int status;
    if (cells[c_status] == "0") status = 0;
    else if (cells[c_status] == "1") status = 1;
    else throw InvalidInput(t.where(r) + ": unknown status code '" + cells[c_status] + "'");
    auto [it, fresh] = g.rows.try_emplace(id);
    if (fresh) g.order.push_back(id);
    it->second.push_back({r, *start, *end, status});
  }
  // Interval checks: start at 0, contiguous, increasing; only the last row may be open-ended.
  for (const auto& id : g.order) {
    const auto& rows = g.rows[id];
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const LongRow& lr = rows[a];
      const bool last = a + 1 == rows.size();
      if (a == 0 && lr.start != 0.0)
        throw InvalidInput(t.where(lr.row) + ": first interval of id '" + id + "' must start at 0");
      if (a > 0 && lr.start != rows[a - 1].end) {
        const char* what = lr.start < rows[a - 1].end ? "overlaps" : "leaves a gap after";
        throw InvalidInput(t.where(lr.row) + ": interval " + what + " the previous interval of id '" + id + "'");
      }
      if (!(lr.end > lr.start) && !(last && lr.end == lr.start))
        throw InvalidInput(t.where(lr.row) + ": non-monotone times (end <= start)");
      if (!last && std::isinf(lr.end)) throw InvalidInput(t.where(lr.row) + ": only the last interval may be open");
    }
  }
  return g;
}

inline StepTrajectory build_trajectory(const CsvTable& t, const std::vector<LongRow>& rows,
                                       const std::vector<std::size_t>& zcols, const std::string& id) {
  const auto q = static_cast<Eigen::Index>(zcols.size());
  std::vector<double> bps;
  std::vector<Vector> vals;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const LongRow& lr = rows[a];
    // A zero-length closing row only records the end of follow-up.
    if (a > 0 && lr.end == lr.start) break;
    Vector v(q);
    for (Eigen::Index r = 0; r < q; ++r) {
      const std::string& cell = t.rows[lr.row][zcols[static_cast<std::size_t>(r)]];
      const auto parsed = parse_double(cell);
      if (parsed && std::isfinite(*parsed)) {
        v[r] = *parsed;
      } else if (cell.empty() && !vals.empty()) {
        v[r] = vals.back()[r];  // carry forward
      } else {
        throw InvalidInput(t.where(lr.row) + ": invalid or missing value '" + cell + "' in column '" +
                           t.header[zcols[static_cast<std::size_t>(r)]] + "' for id '" + id + "'");
      }
    }
    // Merge runs of equal values so emit/ingest is canonical.
    if (!vals.empty() && vals.back() == v) continue;
    bps.push_back(lr.start);
    vals.push_back(std::move(v));
  }
  Matrix m(static_cast<Eigen::Index>(vals.size()), q);
  for (std::size_t a = 0; a < vals.size(); ++a) m.row(static_cast<Eigen::Index>(a)) = vals[a].transpose();
  return StepTrajectory(std::move(bps), std::move(m));
}

inline std::vector<std::size_t> resolve_columns(const CsvTable& t, const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const auto& n : names) {
    auto c = t.column(n);
    if (!c) throw InvalidInput(t.source + ": covariate column '" + n + "' not found");
    out.push_back(*c);
  }
  return out;
}

inline Vector read_fixed_covariates(const CsvTable& t, std::size_t row, const std::vector<std::size_t>& cols,
                                    const std::string& id) {
  Vector x(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const std::string& cell = t.rows[row][cols[j]];
    const auto v = parse_double(cell);
    if (!v || !std::isfinite(*v))
      throw InvalidInput(t.where(row) + ": missing or invalid time-fixed covariate '" + t.header[cols[j]] +
                         "' for id '" + id + "'");
    x[static_cast<Eigen::Index>(j)] = *v;
  }
  return x;
}

}  // namespace detail

/// Long-format trajectories plus a companion table (id, yL, yR, kind, x...)
/// that states each subject's observation interval and censoring kind.
inline Dataset ingest(const CsvTable& long_table, const CsvTable& subjects, const ColumnMapping& mapping = {}) {
  Dataset data;
  data.z_names = mapping.z_explicit ? mapping.z_columns
                                    : detail::extra_columns(long_table, detail::long_fixed_columns());
  data.x_names = mapping.x_explicit ? mapping.x_columns
                                    : detail::extra_columns(subjects, detail::subject_fixed_columns());
  const auto zcols = detail::resolve_columns(long_table, data.z_names);
  // x columns live in the subjects table; fall back to the long table.
  std::vector<std::optional<std::size_t>> xsub, xlong;
  for (const auto& n : data.x_names) {
    xsub.push_back(subjects.column(n));
    xlong.push_back(long_table.column(n));
    if (!xsub.back() && !xlong.back()) throw InvalidInput("covariate column '" + n + "' not found in either table");
  }

  const detail::IdGroups groups = detail::group_long_rows(long_table);
  const std::size_t c_id = subjects.require_column("id"), c_yl = subjects.require_column("yL"),
                    c_yr = subjects.require_column("yR"), c_kind = subjects.require_column("kind");
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t r = 0; r < subjects.rows.size(); ++r) {
    const auto& cells = subjects.rows[r];
    SubjectRecord s;
    s.id = cells[c_id];
    if (s.id.empty()) throw InvalidInput(subjects.where(r) + ": empty id");
    if (!seen.emplace(s.id, r).second) throw InvalidInput(subjects.where(r) + ": duplicate id '" + s.id + "'");
    const auto yl = detail::trim(cells[c_yl]).empty() ? std::optional<double>(0.0) : parse_double(cells[c_yl]);
    const auto yr = detail::trim(cells[c_yr]).empty() ? std::optional<double>(kInf) : parse_double(cells[c_yr]);
    if (!yl || !yr) throw InvalidInput(subjects.where(r) + ": invalid yL/yR");
    s.y_left = *yl;
    s.y_right = *yr;
    try {
      s.kind = censoring_kind_from_string(cells[c_kind]);
    } catch (const InvalidInput& e) {
      throw InvalidInput(subjects.where(r) + ": " + e.what());
    }
    auto it = groups.rows.find(s.id);
    if (it == groups.rows.end()) {
      if (!zcols.empty()) throw InvalidInput(subjects.where(r) + ": no trajectory rows for id '" + s.id + "'");
      s.z = StepTrajectory::zeros(0);
    } else {
      s.z = detail::build_trajectory(long_table, it->second, zcols, s.id);
    }
    s.x.resize(static_cast<Eigen::Index>(data.x_names.size()));
    for (std::size_t j = 0; j < data.x_names.size(); ++j) {
      std::vector<std::size_t> col;
      std::size_t row = r;
      const CsvTable* table = &subjects;
      if (xsub[j]) {
        col = {*xsub[j]};
      } else {
        if (it == groups.rows.end()) throw InvalidInput(subjects.where(r) + ": no rows for id '" + s.id + "'");
        table = &long_table;
        col = {*xlong[j]};
        row = it->second.front().row;
        const Vector first = detail::read_fixed_covariates(long_table, row, col, s.id);
        for (const auto& lr : it->second)
          if (detail::read_fixed_covariates(long_table, lr.row, col, s.id) != first)
            throw InvalidInput(long_table.where(lr.row) + ": time-fixed covariate '" + data.x_names[j] +
                               "' changes within id '" + s.id + "'");
      }
      s.x[static_cast<Eigen::Index>(j)] = detail::read_fixed_covariates(*table, row, col, s.id)[0];
    }
    try {
      s.validate();
    } catch (const InvalidInput& e) {
      throw InvalidInput(subjects.where(r) + ": " + e.what());
    }
    data.subjects.push_back(std::move(s));
  }
  for (const auto& id : groups.order)
    if (!seen.count(id))
      throw InvalidInput(long_table.where(groups.rows.at(id).front().row) + ": id '" + id +
                         "' has no entry in the subjects table");
  if (data.empty()) throw InvalidInput("empty dataset: no subjects");
  return data;
}

/// Long format only: the censoring interval is read off the status column.
/// All-zero status gives right-censoring at the last end time; otherwise the
/// first row with status 1 opens the bracket (yL = its start, 0 meaning
/// left-censoring) and the last end closes it. Status may not return to 0.
/// Exact event times cannot be expressed in this mode. `mapping.x_columns`
/// names time-fixed columns in the same table (constant within an id).
inline Dataset ingest_strict(const CsvTable& long_table, const ColumnMapping& mapping = {}) {
  Dataset data;
  data.x_names = mapping.x_columns;
  if (mapping.z_explicit) {
    data.z_names = mapping.z_columns;
  } else {
    for (const auto& c : detail::extra_columns(long_table, detail::long_fixed_columns()))
      if (std::find(data.x_names.begin(), data.x_names.end(), c) == data.x_names.end()) data.z_names.push_back(c);
  }
  const auto zcols = detail::resolve_columns(long_table, data.z_names);
  const auto xcols = detail::resolve_columns(long_table, data.x_names);
  const detail::IdGroups groups = detail::group_long_rows(long_table);
  for (const auto& id : groups.order) {
    const auto& rows = groups.rows.at(id);
    SubjectRecord s;
    s.id = id;
    std::optional<std::size_t> first_one;
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].status == 1 && !first_one) first_one = a;
      if (rows[a].status == 0 && first_one)
        throw InvalidInput(long_table.where(rows[a].row) + ": status returns from 1 to 0 for id '" + id + "'");
    }
    const double last_end = rows.back().end;
    if (!std::isfinite(last_end))
      throw InvalidInput(long_table.where(rows.back().row) + ": open-ended interval in strict mode");
    if (!first_one) {
      s.kind = CensoringKind::Right;
      s.y_left = last_end;
      s.y_right = kInf;
    } else {
      s.y_left = rows[*first_one].start;
      s.y_right = last_end;
      s.kind = s.y_left == 0.0 ? CensoringKind::Left : CensoringKind::Interval;
    }
    s.z = detail::build_trajectory(long_table, rows, zcols, id);
    s.x = detail::read_fixed_covariates(long_table, rows.front().row, xcols, id);
    for (const auto& lr : rows)
      if (detail::read_fixed_covariates(long_table, lr.row, xcols, id) != s.x)
        throw InvalidInput(long_table.where(lr.row) + ": time-fixed covariate changes within id '" + id + "'");
    try {
      s.validate();
    } catch (const InvalidInput& e) {
      throw InvalidInput(long_table.where(rows.front().row) + ": " + e.what());
    }
    data.subjects.push_back(std::move(s));
  }
  if (data.empty()) throw InvalidInput("empty dataset: no subjects");
  return data;
}

inline Dataset ingest_files(const std::filesystem::path& data_path, const std::filesystem::path& subjects_path,
                            const ColumnMapping& mapping = {}) {
  return ingest(read_csv_file(data_path), read_csv_file(subjects_path), mapping);
}

// ---------------------------------------------------------------------------
// Dataset emission

/// Writes the long table (id, start, end, status, z...). The last row of each
/// subject ends at y* when that lies beyond the last breakpoint, else "inf".
inline void emit_long(const Dataset& data, std::ostream& out) {
  out << "id,start,end,status";
  for (const auto& z : data.z_names) out << ',' << detail::csv_escape(z);
  out << '\n';
  for (const auto& s : data.subjects) {
    const auto& bp = s.z.breakpoints();
    for (std::size_t a = 0; a < bp.size(); ++a) {
      double end;
      if (a + 1 < bp.size()) {
        end = bp[a + 1];
      } else {
        const double ys = s.y_star();
        end = std::isfinite(ys) && ys > bp[a] ? ys : kInf;
      }
      const int status = s.kind != CensoringKind::Right && end > s.y_left ? 1 : 0;
      out << detail::csv_escape(s.id) << ',' << format_double(bp[a]) << ',' << format_double(end) << ',' << status;
      for (Eigen::Index r = 0; r < s.z.q(); ++r)
        out << ',' << format_double(s.z.values()(static_cast<Eigen::Index>(a), r));
      out << '\n';
    }
  }
}

inline void emit_subjects(const Dataset& data, std::ostream& out) {
  out << "id,yL,yR,kind";
  for (const auto& x : data.x_names) out << ',' << detail::csv_escape(x);
  out << '\n';
  for (const auto& s : data.subjects) {
    out << detail::csv_escape(s.id) << ',' << format_double(s.y_left) << ',' << format_double(s.y_right) << ','
        << to_string(s.kind);
    for (Eigen::Index j = 0; j < s.x.size(); ++j) out << ',' << format_double(s.x[j]);
    out << '\n';
  }
}

inline void emit_files(const Dataset& data, const std::filesystem::path& data_path,
                       const std::filesystem::path& subjects_path) {
  std::ofstream a(data_path), b(subjects_path);
  if (!a || !b) throw IoError("cannot write dataset to '" + data_path.string() + "'");
  emit_long(data, a);
  emit_subjects(data, b);
  if (!a || !b) throw IoError("write failed for '" + data_path.string() + "'");
}

// ---------------------------------------------------------------------------
// Flat key = value configuration

/// Lines of `key = value`; `#` starts a comment; values may be quoted.
using FlatConfig = std::map<std::string, std::string>;

inline FlatConfig parse_flat_config(std::istream& in, const std::string& source) {
  FlatConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') continue;  // section headers are ignored; keys are global
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput(where + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw InvalidInput(where + ": empty key");
    cfg[key] = value;
  }
  return cfg;
}

inline FlatConfig read_flat_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return parse_flat_config(in, path.string());
}

namespace detail {

inline double config_double(const std::string& key, const std::string& v) {
  auto d = parse_double(v);
  if (!d) throw InvalidInput("config: '" + key + "' expects a number, got '" + v + "'");
  return *d;
}

inline long config_int(const std::string& key, const std::string& v) {
  long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw InvalidInput("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::string s = v;
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (cur.size() >= 2 && cur.front() == '"' && cur.back() == '"') cur = cur.substr(1, cur.size() - 2);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

/// Applies recognised FitOptions keys; returns the keys it did not consume.
inline std::vector<std::string> apply_fit_options(const FlatConfig& cfg, FitOptions& opts) {
  std::vector<std::string> unused;
  for (const auto& [k, v] : cfg) {
    if (k == "m") opts.m = detail::config_int(k, v);
    else if (k == "param_tol") opts.param_tol = detail::config_double(k, v);
    else if (k == "kkt_tol") opts.kkt_tol = detail::config_double(k, v);
    else if (k == "max_inner_iters") opts.max_inner_iters = static_cast<int>(detail::config_int(k, v));
    else if (k == "max_outer_iters") opts.max_outer_iters = static_cast<int>(detail::config_int(k, v));
    else if (k == "boundary_freeze_iter") opts.boundary_freeze_iter = static_cast<int>(detail::config_int(k, v));
    else if (k == "nu_tol") opts.nu_tol = detail::config_double(k, v);
    else if (k == "initial_sigma2h") opts.initial_sigma2h = detail::config_double(k, v);
    else if (k == "backtrack_factor") opts.backtrack_factor = detail::config_double(k, v);
    else if (k == "max_halvings") opts.max_halvings = static_cast<int>(detail::config_int(k, v));
    else if (k == "theta_thresh") opts.theta_thresh = detail::config_double(k, v);
    else if (k == "grad_thresh") opts.grad_thresh = detail::config_double(k, v);
    else if (k == "hessian_ridge") opts.hessian_ridge = detail::config_double(k, v);
    else if (k == "theta_lift") opts.theta_lift = detail::config_double(k, v);
    else if (k == "project_on_refresh") opts.project_on_refresh = detail::config_bool(k, v);
    else if (k == "smooth_on_refresh") opts.smooth_on_refresh = detail::config_bool(k, v);
    else unused.push_back(k);
  }
  opts.validate();
  return unused;
}

inline void apply_column_mapping(const FlatConfig& cfg, ColumnMapping& mapping) {
  if (auto it = cfg.find("x_columns"); it != cfg.end()) {
    mapping.x_columns = detail::split_list(it->second);
    mapping.x_explicit = true;
  }
  if (auto it = cfg.find("z_columns"); it != cfg.end()) {
    mapping.z_columns = detail::split_list(it->second);
    mapping.z_explicit = true;
  }
}

// ---------------------------------------------------------------------------
// fit.json

namespace detail {

inline Json to_json_array(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v[i]) ? Json(v[i]) : Json(nullptr));
  return a;
}

inline Vector from_json_array(const Json& a, const std::string& what) {
  if (!a.is_array()) throw InvalidInput("fit.json: '" + what + "' must be an array");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw InvalidInput("fit.json: '" + what + "' must hold numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace detail

/// What prediction needs from a fit, plus the raw document so that fields this
/// version does not know about survive a read-modify-write cycle.
struct FitArtifact {
  int schema_version = kFitSchemaVersion;
  ModelParams params;
  BasisConfig cfg;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  double h = 0.0;
  double nu = 0.0;
  bool converged = false;
  Json document;
};

inline Json fit_to_json(const FitResult& fit, const Dataset& data, const FitOptions& opts, Json base = Json::object()) {
  Json& j = base;
  j["schema_version"] = kFitSchemaVersion;
  j["n"] = data.size();
  j["covariates"] = {{"x", data.x_names}, {"z", data.z_names}};
  j["estimates"] = {{"beta", detail::to_json_array(fit.params.beta)},
                    {"gamma", detail::to_json_array(fit.params.gamma)},
                    {"theta", detail::to_json_array(fit.params.theta)}};
  if (fit.covariance) {
    j["se"] = {{"beta", detail::to_json_array(fit.covariance->se_beta)},
               {"gamma", detail::to_json_array(fit.covariance->se_gamma)},
               {"theta", detail::to_json_array(fit.covariance->se_theta)}};
    Json rows = Json::array();
    for (const auto& r : wald_table(fit, *fit.covariance, data.x_names, data.z_names))
      rows.push_back({{"name", r.name},
                      {"estimate", r.estimate},
                      {"se", detail::number_or_null(r.se)},
                      {"z", detail::number_or_null(r.z)},
                      {"p", detail::number_or_null(r.p_value)},
                      {"defined", r.defined}});
    j["wald"] = rows;
    j.erase("covariance_error");
  } else {
    j["se"] = nullptr;
    j["wald"] = Json::array();
    j["covariance_error"] = fit.covariance_error;
  }
  j["h"] = fit.h;
  j["sigma2h"] = 1.0 / (2.0 * fit.h);
  j["nu"] = detail::number_or_null(fit.nu);
  j["active"] = fit.active;
  j["basis"] = {{"mu", detail::to_json_array(fit.cfg.mu())},
                {"sigma", detail::to_json_array(fit.cfg.sigma())},
                {"d1", fit.cfg.d1()},
                {"d2", fit.cfg.d2()}};
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["outer_iterations"] = fit.outer_iterations;
  Json trace;
  trace["loglik"] = detail::number_or_null(fit.loglik);
  trace["penalised_loglik"] = detail::number_or_null(fit.penalised_loglik);
  trace["p_first"] = fit.trace.empty() ? Json(nullptr) : detail::number_or_null(fit.trace.front().p_start);
  trace["p_last"] = fit.trace.empty() ? Json(nullptr) : detail::number_or_null(fit.trace.back().p_theta);
  trace["inner_converged"] = fit.inner_converged;
  trace["nu_stable"] = fit.nu_stable;
  trace["smoothing_frozen"] = fit.smoothing_frozen;
  trace["smoothing_note"] = fit.smoothing_note;
  trace["stalls"] = fit.stalls;
  trace["lifts"] = fit.lifts;
  trace["regularized"] = fit.regularized;
  trace["nu"] = fit.nu_trace;
  trace["h"] = fit.h_trace;
  trace["gradient_max_abs"] = detail::number_or_null(fit.gradient.stacked().cwiseAbs().maxCoeff());
  j["trace"] = trace;
  j["options"] = {{"m", fit.params.theta.size()},
                  {"param_tol", opts.param_tol},
                  {"kkt_tol", opts.kkt_tol},
                  {"max_inner_iters", opts.max_inner_iters},
                  {"max_outer_iters", opts.max_outer_iters},
                  {"boundary_freeze_iter", opts.boundary_freeze_iter},
                  {"nu_tol", opts.nu_tol},
                  {"initial_sigma2h", opts.initial_sigma2h},
                  {"backtrack_factor", opts.backtrack_factor},
                  {"max_halvings", opts.max_halvings},
                  {"theta_thresh", opts.theta_thresh},
                  {"grad_thresh", opts.grad_thresh},
                  {"hessian_ridge", opts.hessian_ridge},
                  {"theta_lift", opts.theta_lift},
                  {"project_on_refresh", opts.project_on_refresh},
                  {"smooth_on_refresh", opts.smooth_on_refresh}};
  return base;
}

inline FitArtifact fit_artifact_from_json(const Json& j) {
  FitArtifact a;
  a.document = j;
  try {
    a.schema_version = j.at("schema_version").get<int>();
    if (a.schema_version > kFitSchemaVersion)
      throw InvalidInput("fit.json: schema_version " + std::to_string(a.schema_version) + " is newer than supported " +
                         std::to_string(kFitSchemaVersion));
    a.params.beta = detail::from_json_array(j.at("estimates").at("beta"), "estimates.beta");
    a.params.gamma = detail::from_json_array(j.at("estimates").at("gamma"), "estimates.gamma");
    a.params.theta = detail::from_json_array(j.at("estimates").at("theta"), "estimates.theta");
    const Json& b = j.at("basis");
    a.cfg = BasisConfig(detail::from_json_array(b.at("mu"), "basis.mu"),
                        detail::from_json_array(b.at("sigma"), "basis.sigma"), b.at("d1").get<double>(),
                        b.at("d2").get<double>());
    a.x_names = j.at("covariates").at("x").get<std::vector<std::string>>();
    a.z_names = j.at("covariates").at("z").get<std::vector<std::string>>();
    a.h = j.at("h").get<double>();
    a.nu = j.at("nu").is_null() ? std::nan("") : j.at("nu").get<double>();
    a.converged = j.at("converged").get<bool>();
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("fit.json: ") + e.what());
  }
  if (a.params.beta.size() != static_cast<Eigen::Index>(a.x_names.size()) ||
      a.params.gamma.size() != static_cast<Eigen::Index>(a.z_names.size()))
    throw InvalidInput("fit.json: coefficient counts do not match covariate names");
  check_theta(a.cfg, a.params.theta);
  return a;
}

inline FitArtifact read_fit_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return fit_artifact_from_json(j);
}

/// Writes the document with a trailing newline; key order is stable.
inline void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// kappa grid from 0 to d2 with hazard, cumulative hazard and survival.
inline void write_baseline_csv(const BasisConfig& cfg, const Vector& theta, std::size_t points, std::ostream& out) {
  out << "kappa,hazard,cumhaz,survival\n";
  for (std::size_t i = 0; i < points; ++i) {
    const double k = points > 1 ? cfg.d2() * static_cast<double>(i) / static_cast<double>(points - 1) : 0.0;
    const double lam = baseline_hazard(cfg, theta, k);
    const double cum = baseline_cumhaz(cfg, theta, k);
    out << format_double(k) << ',' << format_double(lam) << ',' << format_double(cum) << ','
        << format_double(std::exp(-cum)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Prediction scenarios

/// One prediction scenario: time-fixed values and a two-character code per
/// time-varying covariate giving its value before and from tau on ("01" is
/// 0 then 1).
struct Scenario {
  std::string name;
  double tau = 0.0;
  Vector x;
  StepTrajectory z;
  std::vector<std::string> codes;
};

/// Columns: scenario, tau, then one column per covariate name. x columns hold
/// numbers; z columns hold codes "00", "01", "10" or "11". Missing x columns
/// default to 0, missing z columns to "00".
inline std::vector<Scenario> read_scenarios(const CsvTable& t, const std::vector<std::string>& x_names,
                                            const std::vector<std::string>& z_names) {
  const std::size_t c_name = t.require_column("scenario");
  const auto c_tau = t.column("tau");
  for (const auto& h : t.header) {
    if (h == "scenario" || h == "tau") continue;
    if (std::find(x_names.begin(), x_names.end(), h) == x_names.end() &&
        std::find(z_names.begin(), z_names.end(), h) == z_names.end())
      throw InvalidInput(t.source + ": scenario column '" + h + "' is not a covariate of the fit");
  }
  std::vector<Scenario> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Scenario s;
    s.name = t.rows[r][c_name];
    if (c_tau) {
      const auto tau = parse_double(t.rows[r][*c_tau]);
      if (!tau || !std::isfinite(*tau) || *tau < 0.0) throw InvalidInput(t.where(r) + ": invalid tau");
      s.tau = *tau;
    }
    s.x = Vector::Zero(static_cast<Eigen::Index>(x_names.size()));
    for (std::size_t j = 0; j < x_names.size(); ++j) {
      if (auto c = t.column(x_names[j])) {
        const auto v = parse_double(t.rows[r][*c]);
        if (!v || !std::isfinite(*v)) throw InvalidInput(t.where(r) + ": invalid value for '" + x_names[j] + "'");
        s.x[static_cast<Eigen::Index>(j)] = *v;
      }
    }
    const auto q = static_cast<Eigen::Index>(z_names.size());
    Vector before = Vector::Zero(q), after = Vector::Zero(q);
    for (std::size_t k = 0; k < z_names.size(); ++k) {
      std::string code = "00";
      if (auto c = t.column(z_names[k])) code = t.rows[r][*c];
      if (code.size() != 2 || (code[0] != '0' && code[0] != '1') || (code[1] != '0' && code[1] != '1'))
        throw InvalidInput(t.where(r) + ": trajectory code for '" + z_names[k] + "' must be 00, 01, 10 or 11");
      before[static_cast<Eigen::Index>(k)] = code[0] - '0';
      after[static_cast<Eigen::Index>(k)] = code[1] - '0';
      s.codes.push_back(code);
    }
    s.z = before == after ? StepTrajectory({0.0}, before.transpose())
                          : StepTrajectory::change_point(s.tau, before, after);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace aftpic

#endif
