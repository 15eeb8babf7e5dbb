#pragma once

// File formats: binary series (wide CSV, NDJSON), the columnar store used for
// reservoirs, draws and forecasts, CSV export of draws, and SHA-256 helpers.

#include <Eigen/Dense>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "besn/bayes_fit.hpp"
#include "besn/error.hpp"
#include "besn/grid.hpp"

namespace besn {

using Json = nlohmann::json;
namespace fs = std::filesystem;

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------- hashing

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Canonical JSON text (sorted keys, fixed indentation) used for hashing and output.
inline std::string canonical_json(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- series

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::uint8_t parse_state(const std::string& s, const std::string& where) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw ParseError("value '" + s + "' at " + where + " is not 0 or 1");
}

}  // namespace detail

/// Wide CSV: header cell_0..cell_{n-1}, one row per time. Lines starting with
/// '#' are comments.
inline BinarySeries parse_series_csv(const std::string& text, const GridSpec& grid) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::uint8_t>> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (header.empty()) {
      header = cells;
      if (static_cast<int>(header.size()) != grid.size())
        throw DimensionError("CSV header has " + std::to_string(header.size()) + " columns, grid has " +
                             std::to_string(grid.size()) + " cells");
      for (int i = 0; i < grid.size(); ++i)
        if (header[i] != "cell_" + std::to_string(i))
          throw ParseError("CSV header column " + std::to_string(i) + " should be cell_" + std::to_string(i));
      continue;
    }
    if (cells.size() != header.size())
      throw DimensionError("CSV row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                           " values, expected " + std::to_string(header.size()));
    std::vector<std::uint8_t> r(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      r[c] = detail::parse_state(cells[c], "row " + std::to_string(line_no) + ", column " + header[c]);
    rows.push_back(std::move(r));
  }
  if (header.empty()) throw ParseError("CSV has no header");
  if (rows.empty()) throw EmptyInputError("CSV has no time rows");
  StateMatrix m(grid.size(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (int i = 0; i < grid.size(); ++i) m(i, static_cast<Eigen::Index>(t)) = rows[t][i];
  return BinarySeries(grid, std::move(m));
}

/// NDJSON records {"t": .., "cell": .., "value": ..}; every (t, cell) pair for
/// t in [0, max t] must appear exactly once.
inline BinarySeries parse_series_ndjson(const std::string& text, const GridSpec& grid) {
  std::istringstream in(text);
  std::string line;
  std::map<std::pair<int, int>, std::uint8_t> values;
  int max_t = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!rec.contains("t") || !rec.contains("cell") || !rec.contains("value"))
      throw ParseError(where + ": record needs t, cell and value");
    const int t = rec["t"].get<int>();
    const int cell = rec["cell"].get<int>();
    const Json& v = rec["value"];
    const std::string vs = v.is_string() ? v.get<std::string>() : v.dump();
    if (t < 0) throw ParseError(where + ": negative time");
    if (cell < 0 || cell >= grid.size()) throw DimensionError(where + ": cell " + std::to_string(cell) + " outside grid");
    if (!values.emplace(std::pair{t, cell}, detail::parse_state(vs, where + ", cell " + std::to_string(cell))).second)
      throw ParseError(where + ": duplicate record for t=" + std::to_string(t) + ", cell=" + std::to_string(cell));
    max_t = std::max(max_t, t);
  }
  if (max_t < 0) throw EmptyInputError("NDJSON has no records");
  const auto expected = static_cast<std::size_t>(max_t + 1) * static_cast<std::size_t>(grid.size());
  if (values.size() != expected) throw DimensionError("NDJSON does not cover every (t, cell) pair");
  StateMatrix m(grid.size(), max_t + 1);
  for (const auto& [key, v] : values) m(key.second, key.first) = v;
  return BinarySeries(grid, std::move(m));
}

inline BinarySeries load_binary_series(const fs::path& path, const GridSpec& grid) {
  const std::string text = read_file(path);
  const auto ext = path.extension().string();
  if (ext == ".ndjson" || ext == ".jsonl") return parse_series_ndjson(text, grid);
  return parse_series_csv(text, grid);
}

inline std::string series_to_csv(const BinarySeries& s, const std::string& comment = {}) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << "\n";
  for (int i = 0; i < s.cells(); ++i) os << (i ? "," : "") << "cell_" << i;
  os << "\n";
  for (int t = 0; t < s.steps(); ++t) {
    for (int i = 0; i < s.cells(); ++i) os << (i ? "," : "") << int(s.at(i, t));
    os << "\n";
  }
  return os.str();
}

inline void save_binary_series(const BinarySeries& s, const fs::path& path, const std::string& comment = {}) {
  write_file(path, series_to_csv(s, comment));
}

/// Continuous values in the wide CSV layout (cells x times).
inline Eigen::MatrixXd parse_values_csv(const std::string& text, const GridSpec& grid) {
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != grid.size())
      throw DimensionError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                           " columns, grid has " + std::to_string(grid.size()) + " cells");
    if (!have_header) {
      have_header = true;
      continue;
    }
    std::vector<double> r;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing text");
      } catch (const std::exception&) {
        throw ParseError("value '" + cells[c] + "' at row " + std::to_string(line_no) + ", column " +
                         std::to_string(c) + " is not a number");
      }
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw EmptyInputError("CSV has no time rows");
  Eigen::MatrixXd m(grid.size(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (int i = 0; i < grid.size(); ++i) m(i, static_cast<Eigen::Index>(t)) = rows[t][i];
  return m;
}

/// Binary series from continuous values: 1 where value > threshold.
inline BinarySeries threshold_series(const Eigen::MatrixXd& values, const GridSpec& grid, double threshold) {
  detail::require_dims(values.rows() == grid.size(), "value rows do not match grid");
  return BinarySeries(grid, (values.array() > threshold).cast<std::uint8_t>().matrix());
}

// ---------------------------------------------------------------- columnar

/// Self-describing column store: magic, u64 header length, JSON header listing
/// each column (name, rows, cols, byte offset into the data block) and free
/// attributes, then column-major little-endian float64 data.
struct ColumnarFile {
  Json attributes = Json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> columns;

  void add(std::string name, Eigen::MatrixXd m) { columns.emplace_back(std::move(name), std::move(m)); }
  bool has(const std::string& name) const {
    return std::any_of(columns.begin(), columns.end(), [&](const auto& c) { return c.first == name; });
  }
  const Eigen::MatrixXd& get(const std::string& name) const {
    for (const auto& c : columns)
      if (c.first == name) return c.second;
    throw IoError("column '" + name + "' not found");
  }
};

inline constexpr char kColumnarMagic[8] = {'B', 'E', 'S', 'N', 'C', 'O', 'L', '\x01'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return v;
}

}  // namespace detail

inline std::string encode_columnar(const ColumnarFile& f) {
  Json header;
  header["format"] = "besn-columnar";
  header["version"] = 1;
  header["dtype"] = "float64-le";
  header["attributes"] = f.attributes;
  header["columns"] = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : f.columns) {
    header["columns"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * 8;
  }
  const std::string h = header.dump();
  std::string out(kColumnarMagic, 8);
  detail::put_u64(out, h.size());
  out += h;
  for (const auto& c : f.columns) {
    const Eigen::MatrixXd& m = c.second;
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::put_u64(out, std::bit_cast<std::uint64_t>(m.data()[k]));
  }
  return out;
}

inline ColumnarFile decode_columnar(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kColumnarMagic, 8) != 0) throw IoError("not a columnar file");
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw IoError("columnar header truncated");
  Json header;
  try {
    header = Json::parse(bytes.substr(16, hlen));
  } catch (const Json::exception& e) {
    throw IoError(std::string("columnar header: ") + e.what());
  }
  ColumnarFile f;
  f.attributes = header.value("attributes", Json::object());
  const std::size_t base = 16 + hlen;
  for (const auto& c : header.at("columns")) {
    const auto rows = c.at("rows").get<Eigen::Index>();
    const auto cols = c.at("cols").get<Eigen::Index>();
    const auto off = c.at("offset").get<std::uint64_t>();
    if (base + off + static_cast<std::uint64_t>(rows * cols) * 8 > bytes.size()) throw IoError("columnar data truncated");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k)
      m.data()[k] = std::bit_cast<double>(detail::get_u64(bytes, base + off + static_cast<std::size_t>(k) * 8));
    f.add(c.at("name").get<std::string>(), std::move(m));
  }
  return f;
}

inline void write_columnar(const fs::path& path, const ColumnarFile& f) { write_file(path, encode_columnar(f)); }
inline ColumnarFile read_columnar(const fs::path& path) { return decode_columnar(read_file(path)); }

// ---------------------------------------------------------------- draws

inline ColumnarFile draws_to_columnar(const PosteriorDraws& d) {
  ColumnarFile f;
  f.attributes["n"] = d.n;
  f.attributes["n_h"] = d.n_h;
  f.attributes["n_x"] = d.n_x;
  f.attributes["shared_intercept"] = d.shared_intercept;
  f.attributes["slab_scale"] = d.slab_scale;
  const auto& dg = d.diagnostics;
  f.attributes["diagnostics"] = {{"status", dg.status == FitStatus::Ok ? "ok" : "warning"},
                                 {"warnings", dg.warnings},
                                 {"divergences", dg.divergences},
                                 {"transitions", dg.transitions},
                                 {"mean_accept_stat", dg.mean_accept_stat},
                                 {"mean_tree_depth", dg.mean_tree_depth},
                                 {"max_depth_hits", dg.max_depth_hits},
                                 {"step_sizes", dg.step_sizes},
                                 {"max_rhat", dg.max_rhat}};
  f.add("V", d.V);
  f.add("alpha", d.alpha);
  f.add("beta", d.beta);
  f.add("tau", d.tau);
  f.add("c_aux", d.c_aux);
  if (d.lambda.size() > 0) f.add("lambda", d.lambda);
  Eigen::MatrixXd chain(1, static_cast<Eigen::Index>(d.chain.size()));
  for (std::size_t s = 0; s < d.chain.size(); ++s) chain(0, static_cast<Eigen::Index>(s)) = d.chain[s];
  f.add("chain", chain);
  return f;
}

inline PosteriorDraws draws_from_columnar(const ColumnarFile& f) {
  PosteriorDraws d;
  d.n = f.attributes.at("n").get<int>();
  d.n_h = f.attributes.at("n_h").get<int>();
  d.n_x = f.attributes.at("n_x").get<int>();
  d.shared_intercept = f.attributes.at("shared_intercept").get<bool>();
  d.slab_scale = f.attributes.at("slab_scale").get<double>();
  d.V = f.get("V");
  d.alpha = f.get("alpha");
  d.beta = f.get("beta");
  d.tau = f.get("tau");
  d.c_aux = f.get("c_aux");
  if (f.has("lambda")) d.lambda = f.get("lambda");
  const Eigen::MatrixXd& chain = f.get("chain");
  for (Eigen::Index s = 0; s < chain.size(); ++s) d.chain.push_back(static_cast<int>(chain(s)));
  if (f.attributes.contains("diagnostics")) {
    const Json& j = f.attributes["diagnostics"];
    auto& dg = d.diagnostics;
    dg.status = j.value("status", "ok") == "ok" ? FitStatus::Ok : FitStatus::Warning;
    dg.warnings = j.value("warnings", std::vector<std::string>{});
    dg.divergences = j.value("divergences", 0);
    dg.transitions = j.value("transitions", 0);
    dg.mean_accept_stat = j.value("mean_accept_stat", 0.0);
    dg.mean_tree_depth = j.value("mean_tree_depth", 0.0);
    dg.max_depth_hits = j.value("max_depth_hits", 0);
    dg.step_sizes = j.value("step_sizes", std::vector<double>{});
    dg.max_rhat = j.value("max_rhat", 1.0);
  }
  return d;
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

/// One row per draw: chain, draw, tau, c_aux, alpha[i], beta[j], V[i,j].
inline std::string draws_to_csv(const PosteriorDraws& d) {
  std::ostringstream os;
  os << "chain,draw";
  if (d.tau.size() > 0) os << ",tau,c_aux";
  for (Eigen::Index i = 0; i < d.alpha.rows(); ++i) os << ",alpha[" << i << "]";
  for (Eigen::Index j = 0; j < d.beta.rows(); ++j) os << ",beta[" << j << "]";
  for (int j = 0; j < d.n_h; ++j)
    for (int i = 0; i < d.n; ++i) os << ",V[" << i << "," << j << "]";
  os << "\n";
  for (int s = 0; s < d.size(); ++s) {
    os << (s < static_cast<int>(d.chain.size()) ? d.chain[s] : 0) << "," << s;
    if (d.tau.size() > 0) os << "," << detail::format_double(d.tau(s)) << "," << detail::format_double(d.c_aux(s));
    for (Eigen::Index i = 0; i < d.alpha.rows(); ++i) os << "," << detail::format_double(d.alpha(i, s));
    for (Eigen::Index j = 0; j < d.beta.rows(); ++j) os << "," << detail::format_double(d.beta(j, s));
    for (Eigen::Index k = 0; k < d.V.rows(); ++k) os << "," << detail::format_double(d.V(k, s));
    os << "\n";
  }
  return os.str();
}

}  // namespace besn
