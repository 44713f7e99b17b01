#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tvae/data/dataset.hpp"

namespace tvae {

/// Optional per-column kinds; columns not listed are inferred (binary when
/// every value is 0 or 1).
struct CsvSchema {
  std::optional<FeatureSpec> features;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (std::string& c : out) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ' || c.back() == '\t')) c.pop_back();
    std::size_t b = 0;
    while (b < c.size() && (c[b] == ' ' || c[b] == '\t')) ++b;
    c.erase(0, b);
  }
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty()) throw DataError("missing value at row " + std::to_string(row) + ", column " + column);
  double v = 0.0;
  const char* begin = cell.data();
  if (*begin == '+') ++begin;
  const char* end = cell.data() + cell.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end) {
    throw ParseError("non-numeric value '" + cell + "' at row " + std::to_string(row) + ", column " + column);
  }
  if (!std::isfinite(v)) throw DataError("non-finite value at row " + std::to_string(row) + ", column " + column);
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

/// Header `x1..xp,w,y` then any of `y0,y1,mu0,mu1,synthetic`.
inline Dataset parse_csv(const std::string& text, const CsvSchema& schema = {}) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: header row required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::size_t p = 0;
  while (p < header.size() && header[p] == "x" + std::to_string(p + 1)) ++p;
  if (p == 0) throw DataError("CSV header must start with x1");
  if (header.size() < p + 2 || header[p] != "w" || header[p + 1] != "y") {
    throw DataError("CSV header must continue x1..x" + std::to_string(p) + " with w,y");
  }
  static const std::vector<std::string> kOptional{"y0", "y1", "mu0", "mu1", "synthetic"};
  std::map<std::string, std::size_t> optional_at;
  for (std::size_t c = p + 2; c < header.size(); ++c) {
    if (std::find(kOptional.begin(), kOptional.end(), header[c]) == kOptional.end()) {
      throw DataError("unexpected CSV column '" + header[c] + "'");
    }
    if (!optional_at.emplace(header[c], c).second) throw DataError("duplicate CSV column '" + header[c] + "'");
  }
  if (schema.features && schema.features->size() != p) {
    throw DataError("declared schema has " + std::to_string(schema.features->size()) + " columns, file has " +
                    std::to_string(p));
  }

  std::vector<std::vector<double>> cells;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    std::vector<std::string> parts = detail::split_csv_line(line);
    if (parts.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(parts.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    std::vector<double> values(parts.size());
    for (std::size_t c = 0; c < parts.size(); ++c) values[c] = detail::parse_cell(parts[c], row, header[c]);
    cells.push_back(std::move(values));
  }

  const std::size_t n = cells.size();
  Dataset d;
  d.x = Tensor(Shape{n, p});
  d.w.resize(n);
  d.y.resize(n);
  d.synthetic.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) d.x(i, j) = cells[i][j];
    const double w = cells[i][p];
    if (w != 0.0 && w != 1.0) throw DataError("row " + std::to_string(i + 1) + ": w must be 0 or 1");
    d.w[i] = static_cast<int>(w);
    d.y[i] = cells[i][p + 1];
  }
  auto column = [&](const std::string& name) -> std::optional<std::vector<double>> {
    auto it = optional_at.find(name);
    if (it == optional_at.end()) return std::nullopt;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = cells[i][it->second];
    return v;
  };
  d.y0 = column("y0");
  d.y1 = column("y1");
  d.mu0 = column("mu0");
  d.mu1 = column("mu1");
  if (auto s = column("synthetic")) {
    for (std::size_t i = 0; i < n; ++i) {
      if ((*s)[i] != 0.0 && (*s)[i] != 1.0) throw DataError("row " + std::to_string(i + 1) + ": synthetic must be 0 or 1");
      d.synthetic[i] = static_cast<int>((*s)[i]);
    }
  }

  if (schema.features) {
    d.features = *schema.features;
  } else {
    d.features.assign(p, ColumnKind::binary);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t i = 0; i < n; ++i)
        if (d.x(i, j) != 0.0 && d.x(i, j) != 1.0) {
          d.features[j] = ColumnKind::continuous;
          break;
        }
    if (n == 0) d.features.assign(p, ColumnKind::continuous);
  }
  d.validate();
  return d;
}

inline Dataset ingest_csv(const std::string& path, const CsvSchema& schema = {}) {
  return parse_csv(detail::read_file(path), schema);
}

/// Headerless replication layout `w, y_factual, y_cfactual, mu0, mu1, x1..xp`
/// used by the public IHDP replication files.
inline Dataset parse_ihdp_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> cells;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto parts = detail::split_csv_line(line);
    if (parts.size() < 6) throw DataError("row " + std::to_string(row) + ": expected at least 6 cells");
    if (!cells.empty() && parts.size() != cells.front().size()) throw DataError("ragged row " + std::to_string(row));
    std::vector<double> v(parts.size());
    for (std::size_t c = 0; c < parts.size(); ++c) v[c] = detail::parse_cell(parts[c], row, "c" + std::to_string(c + 1));
    cells.push_back(std::move(v));
  }
  if (cells.empty()) throw DataError("empty replication file");
  const std::size_t n = cells.size(), p = cells.front().size() - 5;
  Dataset d;
  d.x = Tensor(Shape{n, p});
  d.w.resize(n);
  d.y.resize(n);
  d.synthetic.assign(n, 0);
  std::vector<double> y0(n), y1(n), mu0(n), mu1(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = cells[i];
    if (c[0] != 0.0 && c[0] != 1.0) throw DataError("row " + std::to_string(i + 1) + ": treatment must be 0 or 1");
    d.w[i] = static_cast<int>(c[0]);
    d.y[i] = c[1];
    (d.w[i] ? y1 : y0)[i] = c[1];
    (d.w[i] ? y0 : y1)[i] = c[2];
    mu0[i] = c[3];
    mu1[i] = c[4];
    for (std::size_t j = 0; j < p; ++j) d.x(i, j) = c[5 + j];
  }
  d.y0 = std::move(y0);
  d.y1 = std::move(y1);
  d.mu0 = std::move(mu0);
  d.mu1 = std::move(mu1);
  d.features.assign(p, ColumnKind::binary);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i)
      if (d.x(i, j) != 0.0 && d.x(i, j) != 1.0) {
        d.features[j] = ColumnKind::continuous;
        break;
      }
  d.validate();
  return d;
}

/// Exact round-trip text (17 significant digits). Ground-truth columns are
/// written when present; `synthetic` is written when requested or when any
/// row is synthetic.
inline std::string to_csv(const Dataset& d, bool with_synthetic = false) {
  std::string out;
  for (std::size_t j = 0; j < d.cols(); ++j) out += "x" + std::to_string(j + 1) + ",";
  out += "w,y";
  const std::pair<const char*, const std::optional<std::vector<double>>*> extra[] = {
      {"y0", &d.y0}, {"y1", &d.y1}, {"mu0", &d.mu0}, {"mu1", &d.mu1}};
  for (const auto& [name, col] : extra)
    if (col->has_value()) out += std::string(",") + name;
  bool synth = with_synthetic;
  for (int s : d.synthetic) synth = synth || s;
  if (synth) out += ",synthetic";
  out += "\n";
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) out += detail::format_double(d.x(i, j)) + ",";
    out += std::to_string(d.w[i]) + "," + detail::format_double(d.y[i]);
    for (const auto& [name, col] : extra)
      if (col->has_value()) out += "," + detail::format_double((**col)[i]);
    if (synth) out += "," + std::to_string(d.synthetic[i]);
    out += "\n";
  }
  return out;
}

inline void export_csv(const Dataset& d, const std::string& path, bool with_synthetic = false) {
  detail::write_file(path, to_csv(d, with_synthetic));
}

}  // namespace tvae
