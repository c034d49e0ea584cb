// File formats: the cube container (text header + raw little-endian f32
// payload, pixel-major), CSV matrices at round-trip precision, P5 PGM
// abundance maps, and flat key-value run manifests. All writes go through
// a write-temp-then-rename step.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/error.hpp"
#include "unmix/simdata.hpp"

namespace unmix::io {

// -- low-level helpers -------------------------------------------------------

// FNV-1a over a byte stream; used to fingerprint input files in manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string hash_file(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

// Writes to `<path>.tmp` and renames into place, so readers never observe
// a half-written file.
inline void atomic_write(const std::string& path, const std::string& payload) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

// -- cube container ------------------------------------------------------------
//
//   unmixcube 1
//   pixels <n>
//   [grid <rows> <cols>]
//   bands <l>
//   dtype f32
//   byteorder little
//   layout pixel-major
//   end
//   <pixels * bands little-endian f32, all bands of pixel 0 first>

inline std::string cube_to_bytes(const sim::HsiCube& cube) {
  require_finite(cube.pixels, "cube");
  std::string out = "unmixcube 1\n";
  out += "pixels " + std::to_string(cube.pixel_count()) + "\n";
  if (cube.grid)
    out += "grid " + std::to_string(cube.grid->rows) + " " + std::to_string(cube.grid->cols) + "\n";
  out += "bands " + std::to_string(cube.band_count()) + "\n";
  out += "dtype f32\nbyteorder little\nlayout pixel-major\nend\n";

  const std::size_t header = out.size();
  const std::size_t count = static_cast<std::size_t>(cube.pixels.size());
  out.resize(header + count * sizeof(float));
  char* payload = out.data() + header;
  for (long n = 0; n < cube.pixel_count(); ++n)
    for (long l = 0; l < cube.band_count(); ++l) {
      const float v = static_cast<float>(cube.pixels(n, l));
      std::memcpy(payload, &v, sizeof(float));
      payload += sizeof(float);
    }
  return out;
}

inline void write_cube(const std::string& path, const sim::HsiCube& cube) {
  atomic_write(path, cube_to_bytes(cube));
}

inline sim::HsiCube cube_from_bytes(const std::string& bytes, const std::string& origin) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw IoError(origin + ": truncated cube header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "unmixcube 1") throw IoError(origin + ": not an unmixcube v1 file");

  long pixels = -1, bands = -1;
  std::optional<sim::GridShape> grid;
  bool dtype_ok = false, order_ok = false, layout_ok = false;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "pixels") ls >> pixels;
    else if (key == "bands") ls >> bands;
    else if (key == "grid") {
      sim::GridShape g;
      ls >> g.rows >> g.cols;
      grid = g;
    } else if (key == "dtype") {
      std::string v;
      ls >> v;
      dtype_ok = v == "f32";
    } else if (key == "byteorder") {
      std::string v;
      ls >> v;
      order_ok = v == "little";
    } else if (key == "layout") {
      std::string v;
      ls >> v;
      layout_ok = v == "pixel-major";
    } else {
      throw IoError(origin + ": unknown cube header field '" + key + "'");
    }
    if (ls.fail()) throw IoError(origin + ": malformed cube header line '" + line + "'");
  }
  if (pixels < 1 || bands < 1) throw IoError(origin + ": cube header misses pixels/bands");
  if (!dtype_ok || !order_ok || !layout_ok)
    throw IoError(origin + ": cube header misses dtype/byteorder/layout");
  if (grid && static_cast<long>(grid->rows) * grid->cols != pixels)
    throw IoError(origin + ": grid shape does not match pixel count");

  const std::size_t expected = static_cast<std::size_t>(pixels) * bands * sizeof(float);
  if (bytes.size() - pos != expected)
    throw IoError(origin + ": payload is " + std::to_string(bytes.size() - pos) +
                  " bytes, expected exactly " + std::to_string(expected));

  sim::HsiCube cube;
  cube.grid = grid;
  cube.pixels.resize(pixels, bands);
  const char* payload = bytes.data() + pos;
  for (long n = 0; n < pixels; ++n)
    for (long l = 0; l < bands; ++l) {
      float v;
      std::memcpy(&v, payload, sizeof(float));
      payload += sizeof(float);
      cube.pixels(n, l) = static_cast<double>(v);
    }
  require_finite(cube.pixels, origin.c_str());
  return cube;
}

inline sim::HsiCube read_cube(const std::string& path) {
  return cube_from_bytes(read_file_bytes(path), path);
}

// -- CSV matrices ------------------------------------------------------------------

// Plain decimal CSV, no header; numbers use the shortest representation
// that parses back to the same double.
inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (long r = 0; r < m.rows(); ++r) {
    for (long c = 0; c < m.cols(); ++c) {
      if (c) out += ",";
      out += format_double(m(r, c));
    }
    out += "\n";
  }
  return out;
}

inline void write_csv_matrix(const std::string& path, const Matrix& m) {
  atomic_write(path, matrix_to_csv(m));
}

inline Matrix csv_to_matrix(const std::string& text, const std::string& origin) {
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = line.substr(start, comma - start);
      try {
        row.push_back(parse_double(cell));
      } catch (const IoError&) {
        throw IoError(origin + ": bad numeric cell '" + cell + "'");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(origin + ": ragged CSV rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(origin + ": empty CSV");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

inline Matrix read_csv_matrix(const std::string& path) {
  return csv_to_matrix(read_file_bytes(path), path);
}

// -- PGM abundance maps ----------------------------------------------------------

// 8-bit binary PGM (P5, maxval 255), row-major over the grid; values are
// clamped to [0, 1] and scaled so 0 is black and 1 is white.
inline std::string map_to_pgm(const Vector& values, const sim::GridShape& grid) {
  if (static_cast<long>(grid.rows) * grid.cols != values.size())
    throw ShapeError("pgm: grid shape does not match value count");
  std::string out = "P5\n" + std::to_string(grid.cols) + " " + std::to_string(grid.rows) +
                    "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(values.size()));
  for (long i = 0; i < values.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, values(i)));
    out[header + static_cast<std::size_t>(i)] =
        static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  return out;
}

inline void write_abundance_maps(const std::string& prefix, const sim::AbundanceMatrix& ab) {
  if (!ab.grid) throw ShapeError("pgm: abundance matrix has no grid shape");
  for (long k = 0; k < ab.count(); ++k)
    atomic_write(prefix + "_abundance_" + std::to_string(k) + ".pgm",
                 map_to_pgm(ab.fractions.col(k), *ab.grid));
}

// -- flat key-value documents -------------------------------------------------------

// Ordered `key = value` lines; used for run manifests and eval reports.
// Keys are unique; lookups also come back through a map.
class KeyValueDoc {
 public:
  void set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it == index_.end()) {
      index_[key] = entries_.size();
      entries_.emplace_back(key, value);
    } else {
      entries_[it->second].second = value;
    }
  }
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, long long value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const { return index_.count(key) > 0; }
  const std::string& get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw IoError("manifest: missing key '" + key + "'");
    return entries_[it->second].second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }
  double get_double(const std::string& key) const { return parse_double(get(key)); }
  long long get_int(const std::string& key) const { return parse_int(get(key)); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [key, value] : entries_) out += key + " = " + value + "\n";
    return out;
  }

  static KeyValueDoc from_text(const std::string& text, const std::string& origin) {
    KeyValueDoc doc;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw IoError(origin + ": malformed key-value line '" + line + "'");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw IoError(origin + ": empty key in line '" + line + "'");
      doc.set(key, trim(line.substr(eq + 1)));
    }
    return doc;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

inline void write_key_values(const std::string& path, const KeyValueDoc& doc) {
  atomic_write(path, doc.to_text());
}

inline KeyValueDoc read_key_values(const std::string& path) {
  return KeyValueDoc::from_text(read_file_bytes(path), path);
}

}  // namespace unmix::io
