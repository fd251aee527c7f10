#pragma once

// CSV readers and writers for pools, tables, grids, schedules and reports.
// Numbers are written in shortest round-trip form.

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "biasprobe/errors.hpp"
#include "biasprobe/interp.hpp"
#include "biasprobe/metrics.hpp"
#include "biasprobe/protocol.hpp"
#include "biasprobe/synth2d.hpp"

namespace biasprobe::csv {

inline std::string number(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string number(std::uint64_t v) { return std::to_string(v); }

inline std::string optional_number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        in_quotes = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field");
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(' ');
    const auto e = f.find_last_not_of(' ');
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << quote(fields[i]);
  os << '\n';
}

// Reads records, skipping blank lines; `line_no` of each record is 1-based.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \r") == std::string::npos) continue;
      try {
        fields = split(line);
      } catch (const ParseError& e) {
        fail(e.what());
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(line_no_) + ": " + what);
  }

  double to_double(const std::string& s) const {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) fail("not a number: '" + s + "'");
    return v;
  }

  std::optional<double> to_optional_double(const std::string& s) const {
    if (s.empty()) return std::nullopt;
    return to_double(s);
  }

  std::uint64_t to_u64(const std::string& s) const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) fail("not an unsigned integer: '" + s + "'");
    return v;
  }

  bool to_bit(const std::string& s) const {
    if (s == "0") return false;
    if (s == "1") return true;
    fail("expected 0 or 1, got '" + s + "'");
  }

 private:
  std::istream& is_;
  std::size_t line_no_ = 0;
};

// --- attribute pools ------------------------------------------------------

inline AttributePool read_pool(std::istream& is) {
  Reader rd(is);
  std::vector<std::string> header, fields;
  if (!rd.next(header)) throw ParseError("pool file is empty");
  std::vector<std::size_t> feature_cols, attribute_cols;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("x_", 0) == 0) {
      feature_cols.push_back(i);
    } else {
      attribute_cols.push_back(i);
      names.push_back(header[i]);
    }
  }
  if (feature_cols.empty()) rd.fail("pool header has no x_ feature columns");
  AttributePool pool(feature_cols.size(), names);
  while (rd.next(fields)) {
    if (fields.size() != header.size()) rd.fail("expected " + std::to_string(header.size()) + " fields");
    std::vector<double> x;
    std::vector<std::uint8_t> a;
    for (auto c : feature_cols) x.push_back(rd.to_double(fields[c]));
    for (auto c : attribute_cols) a.push_back(rd.to_bit(fields[c]));
    pool.add(std::move(x), std::move(a));
  }
  return pool;
}

inline void write_pool(std::ostream& os, const AttributePool& pool) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < pool.dim(); ++j) header.push_back("x_" + std::to_string(j));
  for (const auto& n : pool.attribute_names()) header.push_back(n);
  write_row(os, header);
  for (const auto& r : pool.rows()) {
    std::vector<std::string> f;
    for (double v : r.x) f.push_back(number(v));
    for (auto a : r.attributes) f.push_back(a ? "1" : "0");
    write_row(os, f);
  }
}

// --- quadrant tables ------------------------------------------------------

inline void write_table(std::ostream& os, const QuadrantTable& table) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < table.dim(); ++j) header.push_back("x_" + std::to_string(j));
  header.insert(header.end(), {"z_disc", "z_dist", "y"});
  write_row(os, header);
  for (const auto& r : table.rows()) {
    std::vector<std::string> f;
    for (double v : r.x) f.push_back(number(v));
    f.push_back(r.z_disc ? "1" : "0");
    f.push_back(r.z_dist ? "1" : "0");
    f.push_back(r.y ? "1" : "0");
    write_row(os, f);
  }
}

inline QuadrantTable read_table(std::istream& is) {
  Reader rd(is);
  std::vector<std::string> header, fields;
  if (!rd.next(header)) throw ParseError("table file is empty");
  if (header.size() < 4 || header[header.size() - 3] != "z_disc" || header[header.size() - 2] != "z_dist" ||
      header.back() != "y") {
    rd.fail("table header must be x_0..x_{d-1},z_disc,z_dist,y");
  }
  const std::size_t d = header.size() - 3;
  QuadrantTable table(d);
  while (rd.next(fields)) {
    if (fields.size() != header.size()) rd.fail("expected " + std::to_string(header.size()) + " fields");
    std::vector<double> x;
    for (std::size_t j = 0; j < d; ++j) x.push_back(rd.to_double(fields[j]));
    const bool disc = rd.to_bit(fields[d]);
    const bool dist = rd.to_bit(fields[d + 1]);
    if (rd.to_bit(fields[d + 2]) != disc) rd.fail("label must equal z_disc");
    table.add(std::move(x), disc, dist);
  }
  return table;
}

// Feature-only export used for prediction requests: columns x_0..x_{d-1}.
inline void write_features(std::ostream& os, std::span<const FeatureRow> xs, std::size_t dim) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < dim; ++j) header.push_back("x_" + std::to_string(j));
  write_row(os, header);
  for (const auto& x : xs) {
    std::vector<std::string> f;
    for (double v : x) f.push_back(number(v));
    write_row(os, f);
  }
}

// --- grids and schedules --------------------------------------------------

inline void write_grid(std::ostream& os, const PredictionGrid& g) {
  write_row(os, {"x1", "x2", "mean_pred"});
  for (std::size_t i = 0; i < g.resolution; ++i) {
    for (std::size_t j = 0; j < g.resolution; ++j) {
      write_row(os, {number(g.coord(i)), number(g.coord(j)), number(g.at(i, j))});
    }
  }
}

// First line "x_min x_max resolution"; then one line per x1 value holding the
// predictions along x2.
inline void write_grid_matrix(std::ostream& os, const PredictionGrid& g) {
  os << number(g.x_min) << ' ' << number(g.x_max) << ' ' << g.resolution << '\n';
  for (std::size_t i = 0; i < g.resolution; ++i) {
    for (std::size_t j = 0; j < g.resolution; ++j) os << (j ? "," : "") << number(g.at(i, j));
    os << '\n';
  }
}

inline void write_schedule(std::ostream& os, const std::vector<InterpolationPoint>& points) {
  write_row(os, {"kind", "pi_fe", "pi0", "pi1", "rho"});
  for (const auto& p : points) {
    write_row(os, {std::string(to_string(p.kind)), number(p.pi_fe), number(p.pi0), number(p.pi1), number(p.rho)});
  }
}

// --- run results and reports ----------------------------------------------

inline const std::vector<std::string>& run_columns() {
  static const std::vector<std::string> cols{"model", "condition", "pi0",        "pi1",    "rho",
                                             "run",   "seed",      "extrap_acc", "val_acc"};
  return cols;
}

inline void write_runs(std::ostream& os, std::span<const ProbeResult> results) {
  write_row(os, run_columns());
  for (const auto& r : results) {
    write_row(os, {r.model, r.condition, number(r.pi0), number(r.pi1), optional_number(r.rho),
                   std::to_string(r.run), number(r.seed), number(r.extrap_accuracy),
                   optional_number(r.validation_accuracy)});
  }
}

inline std::vector<ProbeResult> read_runs(std::istream& is) {
  Reader rd(is);
  std::vector<std::string> header, f;
  if (!rd.next(header)) throw ParseError("per-run file is empty");
  if (header != run_columns()) rd.fail("unexpected per-run header");
  std::vector<ProbeResult> out;
  while (rd.next(f)) {
    if (f.size() != header.size()) rd.fail("expected " + std::to_string(header.size()) + " fields");
    ProbeResult r;
    r.model = f[0];
    r.condition = f[1];
    r.pi0 = rd.to_double(f[2]);
    r.pi1 = rd.to_double(f[3]);
    r.rho = rd.to_optional_double(f[4]);
    r.run = static_cast<std::size_t>(rd.to_u64(f[5]));
    r.seed = rd.to_u64(f[6]);
    r.extrap_accuracy = rd.to_double(f[7]);
    r.validation_accuracy = rd.to_optional_double(f[8]);
    if (!(r.extrap_accuracy >= 0.0 && r.extrap_accuracy <= 1.0)) rd.fail("extrap_acc outside [0, 1]");
    if (r.validation_accuracy && !(*r.validation_accuracy >= 0.0 && *r.validation_accuracy <= 1.0)) {
      rd.fail("val_acc outside [0, 1]");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_reports(std::ostream& os, std::span<const BiasReport> reports) {
  write_row(os, {"model", "cc", "cc-ci95", "zs", "zs-ci95", "pe", "pe-ci95", "flb", "flb-ci95", "evr", "evr-ci95"});
  auto value = [](const std::optional<Estimate>& e) { return e ? number(e->value) : std::string(); };
  auto ci = [](const std::optional<Estimate>& e) { return e ? optional_number(e->ci95) : std::string(); };
  for (const auto& r : reports) {
    const auto cc = r.condition("CC"), zs = r.condition("ZS"), pe = r.condition("PE");
    write_row(os, {r.model, value(cc), ci(cc), value(zs), ci(zs), value(pe), ci(pe), value(r.flb), ci(r.flb),
                   value(r.evr), ci(r.evr)});
  }
}

}  // namespace biasprobe::csv
