#ifndef ELSD_IO_HPP
#define ELSD_IO_HPP

// Frame ingestion and result persistence.
//
// Raw matrix file (".mat"), all integers little-endian:
//   bytes 0..7   magic "ELSDMAT1"
//   bytes 8..15  uint64 rows (p)
//   bytes 16..23 uint64 cols (n)
//   then rows*cols IEEE-754 float64, column-major.
//
// Frame geometry is not part of the raw file; it travels in the run
// manifest ("height"/"width") next to the matrix.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "elsd/detection.hpp"
#include "elsd/errors.hpp"
#include "elsd/linalg.hpp"

namespace elsd::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr char kMatrixMagic[8] = {'E', 'L', 'S', 'D', 'M', 'A', 'T', '1'};

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("truncated file: " + path.string());
  return to_little(v);
}

/// Glob with '*' and '?' over a bare filename.
inline bool wildcard_match(std::string_view pat, std::string_view s) {
  std::size_t p = 0, i = 0, star = std::string_view::npos, mark = 0;
  while (i < s.size()) {
    if (p < pat.size() && (pat[p] == '?' || pat[p] == s[i])) {
      ++p;
      ++i;
    } else if (p < pat.size() && pat[p] == '*') {
      star = p++;
      mark = i;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      i = ++mark;
    } else {
      return false;
    }
  }
  while (p < pat.size() && pat[p] == '*') ++p;
  return p == pat.size();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Raw matrices

inline void save_matrix(const fs::path& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(kMatrixMagic, sizeof(kMatrixMagic));
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) detail::write_le<double>(os, m.data()[i]);
  if (!os) throw DataError("write failed: " + path.string());
}

inline Matrix load_matrix(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMatrixMagic, 8) != 0)
    throw DataError("not an ELSDMAT1 matrix file: " + path.string());
  const auto rows = detail::read_le<std::uint64_t>(is, path);
  const auto cols = detail::read_le<std::uint64_t>(is, path);
  if (rows > (1ULL << 31) || cols > (1ULL << 31)) throw DataError("implausible matrix size in " + path.string());
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::read_le<double>(is, path);
  return m;
}

// ---------------------------------------------------------------------------
// Portable graymap

struct GrayImage {
  int height = 0;
  int width = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels; // row-major
};

inline GrayImage read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw DataError("not a PGM (P5/P2) file: " + path.string());
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    img.maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError("malformed PGM header: " + path.string());
  }
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535)
    throw DataError("unsupported PGM header values: " + path.string());
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(count);
  if (magic == "P2") {
    for (auto& px : img.pixels) {
      const std::string t = token();
      if (t.empty()) throw DataError("truncated PGM: " + path.string());
      px = static_cast<std::uint16_t>(std::stoi(t));
    }
  } else {
    const bool wide = img.maxval > 255;
    std::vector<unsigned char> raw(count * (wide ? 2 : 1));
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw DataError("truncated PGM: " + path.string());
    for (std::size_t i = 0; i < count; ++i)
      img.pixels[i] = wide ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  }
  return img;
}

/// Writes a binary PGM; maxval > 255 produces 16-bit big-endian samples.
inline void write_pgm(const fs::path& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  const bool wide = img.maxval > 255;
  for (std::uint16_t px : img.pixels) {
    if (wide) {
      os.put(static_cast<char>(px >> 8));
      os.put(static_cast<char>(px & 0xff));
    } else {
      os.put(static_cast<char>(px));
    }
  }
  if (!os) throw DataError("write failed: " + path.string());
}

/// Quantizes a [0, 1] frame (row-major vector) to 16-bit.
inline GrayImage frame_to_pgm16(const Eigen::Ref<const Vector>& frame, int height, int width) {
  GrayImage img{height, width, 65535, {}};
  img.pixels.resize(static_cast<std::size_t>(frame.size()));
  for (Index j = 0; j < frame.size(); ++j)
    img.pixels[static_cast<std::size_t>(j)] =
        static_cast<std::uint16_t>(std::lround(std::clamp(frame(j), 0.0, 1.0) * 65535.0));
  return img;
}

// ---------------------------------------------------------------------------
// Frame loading

/// Loads a frame sequence. `path` is either a directory of same-geometry PGM
/// files matching `pattern` (columns in lexicographic filename order; 8-bit
/// samples / 255, 16-bit / 65535) or a raw matrix file, whose geometry comes
/// from `geometry` or, failing that, from a sibling manifest.json.
inline FrameMatrix load_frames(const fs::path& path, const std::string& pattern = "*.pgm",
                               std::optional<Geometry> geometry = std::nullopt) {
  if (!fs::exists(path)) throw DataError("no such file or directory: " + path.string());
  if (fs::is_regular_file(path)) {
    Matrix m = load_matrix(path);
    if (!geometry) {
      const fs::path manifest = path.parent_path() / "manifest.json";
      if (fs::exists(manifest)) {
        std::ifstream is(manifest);
        const json j = json::parse(is, nullptr, false);
        if (!j.is_discarded() && j.contains("height") && j.contains("width"))
          geometry = Geometry{j["height"].get<int>(), j["width"].get<int>()};
      }
    }
    if (!geometry) throw DataError("geometry unknown for " + path.string() + " (pass height/width)");
    if (m.rows() != static_cast<Index>(geometry->height) * geometry->width)
      throw DataError("matrix " + path.string() + " has " + std::to_string(m.rows()) +
                      " rows, geometry implies " + std::to_string(geometry->height * geometry->width));
    try {
      return FrameMatrix(std::move(m), geometry->height, geometry->width);
    } catch (const std::invalid_argument& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file() && detail::wildcard_match(pattern, entry.path().filename().string()))
      files.push_back(entry.path());
  if (files.empty()) throw DataError("no frames matching '" + pattern + "' in " + path.string());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  const GrayImage first = read_pgm(files.front());
  const Index p = static_cast<Index>(first.height) * first.width;
  Matrix data(p, static_cast<Index>(files.size()));
  for (std::size_t i = 0; i < files.size(); ++i) {
    const GrayImage img = i == 0 ? first : read_pgm(files[i]);
    if (img.height != first.height || img.width != first.width)
      throw DataError("geometry mismatch: " + files[i].filename().string() + " is " +
                      std::to_string(img.height) + "x" + std::to_string(img.width) + ", expected " +
                      std::to_string(first.height) + "x" + std::to_string(first.width));
    const double scale = img.maxval > 255 ? 65535.0 : 255.0;
    for (Index j = 0; j < p; ++j)
      data(j, static_cast<Index>(i)) = img.pixels[static_cast<std::size_t>(j)] / scale;
  }
  return FrameMatrix(std::move(data), first.height, first.width);
}

// ---------------------------------------------------------------------------
// CSV

/// Minimal CSV table: header row plus string cells. No quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("CSV column '" + name + "' missing");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty CSV: " + path.string());
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw DataError("ragged CSV row in " + path.string() + ": '" + line + "'");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Shortest round-trip representation of a double.
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Boxes as CSV: frame_id,<id_column>,x,y,w,h[,score].
inline void write_boxes_csv(const fs::path& path, const FrameBoxes& boxes, const std::string& id_column,
                            bool with_score) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "frame_id," << id_column << ",x,y,w,h" << (with_score ? ",score" : "") << '\n';
  for (std::size_t f = 0; f < boxes.size(); ++f)
    for (const Box& b : boxes[f]) {
      os << f << ',' << b.id << ',' << b.x << ',' << b.y << ',' << b.w << ',' << b.h;
      if (with_score) os << ',' << fmt_double(b.score);
      os << '\n';
    }
  if (!os) throw DataError("write failed: " + path.string());
}

/// Reads boxes written by write_boxes_csv. The id column is whichever of
/// target_id / det_id / id is present. The result has max(frame_id)+1 frames,
/// or `frames` if that is larger.
inline FrameBoxes read_boxes_csv(const fs::path& path, std::size_t frames = 0) {
  const CsvTable t = read_csv(path);
  const std::size_t cf = t.column("frame_id");
  std::size_t cid = t.header.size();
  for (const char* name : {"target_id", "det_id", "id"}) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it != t.header.end()) {
      cid = static_cast<std::size_t>(it - t.header.begin());
      break;
    }
  }
  const std::size_t cx = t.column("x"), cy = t.column("y"), cw = t.column("w"), ch = t.column("h");
  const auto score_it = std::find(t.header.begin(), t.header.end(), "score");
  FrameBoxes out(frames);
  try {
    for (const auto& r : t.rows) {
      const long f = std::stol(r[cf]);
      if (f < 0) throw DataError("negative frame_id in " + path.string());
      Box b;
      b.id = cid < t.header.size() ? std::stoi(r[cid]) : 0;
      b.x = std::stoi(r[cx]);
      b.y = std::stoi(r[cy]);
      b.w = std::stoi(r[cw]);
      b.h = std::stoi(r[ch]);
      if (b.w < 1 || b.h < 1) throw DataError("box with non-positive size in " + path.string());
      if (score_it != t.header.end()) b.score = std::stod(r[static_cast<std::size_t>(score_it - t.header.begin())]);
      if (static_cast<std::size_t>(f) >= out.size()) out.resize(static_cast<std::size_t>(f) + 1);
      out[static_cast<std::size_t>(f)].push_back(b);
    }
  } catch (const std::logic_error& e) {
    throw DataError("bad number in " + path.string() + ": " + e.what());
  }
  return out;
}

inline void write_metrics_csv(const fs::path& path, const std::vector<MetricsReport>& reports) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "iou_threshold,tp,fn,fp,recall,precision,f1,rank_B\n";
  for (const auto& m : reports)
    os << fmt_double(m.iou_threshold) << ',' << m.tp << ',' << m.fn << ',' << m.fp << ','
       << fmt_double(m.recall) << ',' << fmt_double(m.precision) << ',' << fmt_double(m.f1) << ','
       << m.rank_B << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

} // namespace elsd::io

#endif // ELSD_IO_HPP
