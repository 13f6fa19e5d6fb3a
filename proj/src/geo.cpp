#include "peftseg/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "peftseg/errors.hpp"

namespace peftseg {

using nlohmann::json;

bool GeoRaster::is_nodata(std::int64_t row, std::int64_t col) const {
  if (!nodata) return false;
  for (std::int64_t c = 0; c < pixels.channels; ++c)
    if (pixels.at(row, col, c) == *nodata) return true;
  return false;
}

// ---------------------------------------------------------------- polygons

bool Polygon::contains(double x, double y) const {
  bool inside = false;
  const auto n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto [xi, yi] = ring[i];
    const auto [xj, yj] = ring[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

double Polygon::area() const {
  double a = 0.0;
  const auto n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) a += ring[j].first * ring[i].second - ring[i].first * ring[j].second;
  return std::abs(a) * 0.5;
}

void write_geojson_polygon(const std::filesystem::path& path, const Polygon& polygon, int epsg) {
  json coords = json::array();
  for (const auto& [x, y] : polygon.ring) coords.push_back({x, y});
  if (!polygon.ring.empty()) coords.push_back({polygon.ring.front().first, polygon.ring.front().second});
  json doc = {{"type", "FeatureCollection"},
              {"crs", {{"type", "name"}, {"properties", {{"name", "urn:ogc:def:crs:EPSG::" + std::to_string(epsg)}}}}},
              {"features",
               {{{"type", "Feature"},
                 {"properties", {{"name", "boundary"}}},
                 {"geometry", {{"type", "Polygon"}, {"coordinates", {coords}}}}}}}};
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f << std::setprecision(17) << doc.dump(1) << '\n';
}

Polygon read_geojson_polygon(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open boundary " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  const json* geom = &doc;
  if (doc.value("type", "") == "FeatureCollection") {
    geom = nullptr;
    for (const auto& feat : doc.at("features"))
      if (feat.contains("geometry") && feat["geometry"].value("type", "") == "Polygon") {
        geom = &feat["geometry"];
        break;
      }
  } else if (doc.value("type", "") == "Feature") {
    geom = &doc.at("geometry");
  }
  if (!geom || geom->value("type", "") != "Polygon") throw InputError(path.string() + ": no Polygon geometry found");
  Polygon p;
  const auto& outer = geom->at("coordinates").at(0);
  for (const auto& pt : outer) p.ring.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
  if (p.ring.size() > 1 && p.ring.front() == p.ring.back()) p.ring.pop_back();
  if (p.ring.size() < 3) throw InputError(path.string() + ": boundary ring has fewer than 3 vertices");
  return p;
}

// ---------------------------------------------------------------- tiles

std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw InputError("unknown split '" + name + "'");
}

std::int64_t TileGrid::tile_at(double x, double y) const {
  const double c = (x - transform.origin_x) / tile_size_m;
  const double r = (transform.origin_y - y) / tile_size_m;
  if (c < 0 || r < 0) return -1;
  const auto ci = static_cast<std::int64_t>(c), ri = static_cast<std::int64_t>(r);
  if (ci >= cols || ri >= rows) return -1;
  const auto id = ri * cols + ci;
  const auto& t = tiles[static_cast<std::size_t>(id)];
  if (x > t.max_x || y < t.min_y) return -1;
  return id;
}

std::vector<std::int64_t> TileGrid::tiles_in(Split s) const {
  std::vector<std::int64_t> ids;
  for (const auto& t : tiles)
    if (t.split == s) ids.push_back(t.id);
  return ids;
}

TileGrid build_tile_grid(const GeoRaster& raster, double tile_size_m) {
  if (!(tile_size_m > 0)) throw InputError("tile size must be positive");
  const double w = raster.width_m(), h = raster.height_m();
  if (!(w > 0) || !(h > 0)) throw InputError("raster has an empty extent");
  TileGrid g;
  g.tile_size_m = tile_size_m;
  g.transform = raster.transform;
  // Tolerate floating noise so 100 m / 10 m gives 10, not 11.
  auto count = [&](double extent) { return static_cast<std::int64_t>(std::ceil(extent / tile_size_m - 1e-9)); };
  g.cols = count(w);
  g.rows = count(h);
  const double x0 = raster.transform.origin_x, y0 = raster.transform.origin_y;
  for (std::int64_t r = 0; r < g.rows; ++r)
    for (std::int64_t c = 0; c < g.cols; ++c) {
      Tile t;
      t.id = r * g.cols + c;
      t.row = r;
      t.col = c;
      t.min_x = x0 + static_cast<double>(c) * tile_size_m;
      t.max_x = std::min(x0 + w, t.min_x + tile_size_m);
      t.max_y = y0 - static_cast<double>(r) * tile_size_m;
      t.min_y = std::max(y0 - h, t.max_y - tile_size_m);
      t.partial = (t.max_x - t.min_x) < tile_size_m - 1e-9 || (t.max_y - t.min_y) < tile_size_m - 1e-9;
      g.tiles.push_back(t);
    }
  return g;
}

void assign_split_by_columns(TileGrid& grid, double test_fraction) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("sampling.test_fraction must be in (0, 1)");
  if (grid.cols < 2) throw InputError("need at least two tile columns to split train/test");
  auto n_test = static_cast<std::int64_t>(std::llround(static_cast<double>(grid.cols) * test_fraction));
  n_test = std::clamp<std::int64_t>(n_test, 1, grid.cols - 1);
  for (auto& t : grid.tiles) t.split = t.col >= grid.cols - n_test ? Split::test : Split::train;
}

void assign_split_explicit(TileGrid& grid, const std::vector<std::int64_t>& test_ids) {
  for (auto& t : grid.tiles) t.split = Split::train;
  for (auto id : test_ids) {
    if (id < 0 || id >= static_cast<std::int64_t>(grid.tiles.size()))
      throw ConfigError("test tile id " + std::to_string(id) + " out of range");
    grid.tiles[static_cast<std::size_t>(id)].split = Split::test;
  }
}

// ---------------------------------------------------------------- manifest

namespace {

json window_to_json(const Window& w) {
  return {{"type", "window"},
          {"id", w.id},
          {"tile_id", w.tile_id},
          {"split", split_name(w.split)},
          {"row0", w.row0},
          {"col0", w.col0},
          {"size", w.size},
          {"min_x", w.min_x},
          {"min_y", w.min_y},
          {"max_x", w.max_x},
          {"max_y", w.max_y}};
}

Window make_window(const TileGrid& grid, std::string id, std::int64_t tile_id, Split split, std::int64_t row0,
                   std::int64_t col0, std::int64_t size) {
  Window w;
  w.id = std::move(id);
  w.tile_id = tile_id;
  w.split = split;
  w.row0 = row0;
  w.col0 = col0;
  w.size = size;
  w.min_x = grid.transform.col_to_x(static_cast<double>(col0));
  w.max_x = grid.transform.col_to_x(static_cast<double>(col0 + size));
  w.max_y = grid.transform.row_to_y(static_cast<double>(row0));
  w.min_y = grid.transform.row_to_y(static_cast<double>(row0 + size));
  return w;
}

std::string window_id(Split s, std::size_t i) {
  std::ostringstream os;
  os << split_name(s) << '_' << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void WindowManifest::write_jsonl(std::ostream& os) const {
  json header = {{"type", "manifest"},
                 {"seed", seed},
                 {"count", windows.size()},
                 {"image_sha256", image_sha256},
                 {"labels_sha256", labels_sha256}};
  os << header.dump() << '\n';
  for (const auto& w : windows) os << window_to_json(w).dump() << '\n';
}

void WindowManifest::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write manifest " + path.string());
  write_jsonl(f);
}

WindowManifest WindowManifest::read_jsonl(std::istream& is) {
  WindowManifest m;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "manifest") {
        m.seed = j.at("seed").get<std::uint64_t>();
        m.image_sha256 = j.value("image_sha256", "");
        m.labels_sha256 = j.value("labels_sha256", "");
        header = true;
      } else if (type == "window") {
        Window w;
        w.id = j.at("id").get<std::string>();
        w.tile_id = j.at("tile_id").get<std::int64_t>();
        w.split = split_from_name(j.at("split").get<std::string>());
        w.row0 = j.at("row0").get<std::int64_t>();
        w.col0 = j.at("col0").get<std::int64_t>();
        w.size = j.at("size").get<std::int64_t>();
        w.min_x = j.at("min_x").get<double>();
        w.min_y = j.at("min_y").get<double>();
        w.max_x = j.at("max_x").get<double>();
        w.max_y = j.at("max_y").get<double>();
        m.windows.push_back(std::move(w));
      }
    } catch (const json::exception& e) {
      throw InputError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw InputError("manifest has no header record");
  return m;
}

WindowManifest WindowManifest::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("manifest not found: " + path.string());
  return read_jsonl(f);
}

// ---------------------------------------------------------------- validity

ValidityMap::ValidityMap(const GeoRaster& image, const GeoRaster& labels, const Polygon& boundary)
    : rows_(image.rows()), cols_(image.cols()) {
  if (labels.rows() != rows_ || labels.cols() != cols_ || !(labels.transform == image.transform))
    throw AlignmentError("image and label rasters are not pixel-aligned");
  invalid_integral_.assign(static_cast<std::size_t>((rows_ + 1) * (cols_ + 1)), 0);
  const auto& t = image.transform;
  std::vector<double> xs;
  for (std::int64_t r = 0; r < rows_; ++r) {
    // Scanline crossings of the boundary at this row's pixel-center y.
    const double y = t.row_to_y(static_cast<double>(r) + 0.5);
    xs.clear();
    const auto n = boundary.ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto [xi, yi] = boundary.ring[i];
      const auto [xj, yj] = boundary.ring[j];
      if ((yi > y) != (yj > y)) xs.push_back((xj - xi) * (y - yi) / (yj - yi) + xi);
    }
    std::sort(xs.begin(), xs.end());
    std::int32_t row_sum = 0;
    std::size_t k = 0;
    bool inside = false;
    for (std::int64_t c = 0; c < cols_; ++c) {
      const double x = t.col_to_x(static_cast<double>(c) + 0.5);
      while (k < xs.size() && xs[k] <= x) {
        inside = !inside;
        ++k;
      }
      const bool ok = inside && !image.is_nodata(r, c) && !labels.is_nodata(r, c);
      row_sum += ok ? 0 : 1;
      invalid_integral_[static_cast<std::size_t>((r + 1) * (cols_ + 1) + c + 1)] =
          invalid_integral_[static_cast<std::size_t>(r * (cols_ + 1) + c + 1)] + row_sum;
    }
  }
}

bool ValidityMap::valid_pixel(std::int64_t row, std::int64_t col) const { return window_valid(row, col, 1); }

bool ValidityMap::window_valid(std::int64_t row0, std::int64_t col0, std::int64_t size) const {
  if (row0 < 0 || col0 < 0 || row0 + size > rows_ || col0 + size > cols_) return false;
  const auto s = cols_ + 1;
  auto at = [&](std::int64_t r, std::int64_t c) { return invalid_integral_[static_cast<std::size_t>(r * s + c)]; };
  return at(row0 + size, col0 + size) - at(row0, col0 + size) - at(row0 + size, col0) + at(row0, col0) == 0;
}

// ---------------------------------------------------------------- sampling

namespace {

bool overlaps_test(const TileGrid& grid, const Window& w) {
  const double eps = 1e-9;
  const auto c0 = static_cast<std::int64_t>(std::floor((w.min_x - grid.transform.origin_x) / grid.tile_size_m + eps));
  const auto c1 = static_cast<std::int64_t>(std::floor((w.max_x - grid.transform.origin_x) / grid.tile_size_m - eps));
  const auto r0 = static_cast<std::int64_t>(std::floor((grid.transform.origin_y - w.max_y) / grid.tile_size_m + eps));
  const auto r1 = static_cast<std::int64_t>(std::floor((grid.transform.origin_y - w.min_y) / grid.tile_size_m - eps));
  for (auto r = std::max<std::int64_t>(r0, 0); r <= std::min(r1, grid.rows - 1); ++r)
    for (auto c = std::max<std::int64_t>(c0, 0); c <= std::min(c1, grid.cols - 1); ++c)
      if (grid.tiles[static_cast<std::size_t>(r * grid.cols + c)].split == Split::test) return true;
  return false;
}

}  // namespace

WindowManifest sample_random_windows(const TileGrid& grid, const ValidityMap& validity, std::int64_t n,
                                     std::uint64_t seed, const SamplingOptions& options) {
  if (n < 1) throw ConfigError("number of train windows must be >= 1");
  const auto train = grid.tiles_in(Split::train);
  if (train.empty()) throw InputError("tile grid has no train tiles");
  std::vector<double> areas;
  for (auto id : train) areas.push_back(grid.tiles[static_cast<std::size_t>(id)].area());

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto size = options.window_size;
  const auto half = size / 2;

  WindowManifest m;
  m.seed = seed;
  for (std::int64_t i = 0; i < n; ++i) {
    bool placed = false;
    std::int64_t last_tile = -1;
    for (int attempt = 0; attempt < options.retries_per_window && !placed; ++attempt) {
      const auto& tile = grid.tiles[static_cast<std::size_t>(train[pick(rng)])];
      last_tile = tile.id;
      const double x = tile.min_x + unit(rng) * (tile.max_x - tile.min_x);
      const double y = tile.min_y + unit(rng) * (tile.max_y - tile.min_y);
      const auto row0 = static_cast<std::int64_t>(std::floor(grid.transform.y_to_row(y))) - half;
      const auto col0 = static_cast<std::int64_t>(std::floor(grid.transform.x_to_col(x))) - half;
      if (!validity.window_valid(row0, col0, size)) continue;
      Window w = make_window(grid, window_id(Split::train, static_cast<std::size_t>(i)), tile.id, Split::train, row0,
                             col0, size);
      if (options.exclude_test_overlap && overlaps_test(grid, w)) continue;
      m.windows.push_back(std::move(w));
      placed = true;
    }
    if (!placed)
      throw SamplingExhaustedError("no valid window for train sample " + std::to_string(i) + " after " +
                                       std::to_string(options.retries_per_window) + " draws (last tile " +
                                       std::to_string(last_tile) + ")",
                                   std::to_string(last_tile));
  }
  return m;
}

WindowManifest sample_grid_windows(const TileGrid& grid, const ValidityMap& validity, const SamplingOptions& options) {
  const auto test = grid.tiles_in(Split::test);
  WindowManifest m;
  if (test.empty()) return m;
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (auto id : test) {
    const auto& t = grid.tiles[static_cast<std::size_t>(id)];
    min_x = std::min(min_x, t.min_x);
    max_x = std::max(max_x, t.max_x);
    min_y = std::min(min_y, t.min_y);
    max_y = std::max(max_y, t.max_y);
  }
  const auto& tf = grid.transform;
  const auto c_lo = static_cast<std::int64_t>(std::ceil(tf.x_to_col(min_x) - 1e-9));
  const auto c_hi = static_cast<std::int64_t>(std::floor(tf.x_to_col(max_x) + 1e-9));
  const auto r_lo = static_cast<std::int64_t>(std::ceil(tf.y_to_row(max_y) - 1e-9));
  const auto r_hi = static_cast<std::int64_t>(std::floor(tf.y_to_row(min_y) + 1e-9));
  const auto size = options.window_size;
  const auto nc = (c_hi - c_lo) / size, nr = (r_hi - r_lo) / size;
  const auto c_start = c_lo + ((c_hi - c_lo) - nc * size) / 2;
  const auto r_start = r_lo + ((r_hi - r_lo) - nr * size) / 2;
  for (std::int64_t i = 0; i < nr; ++i)
    for (std::int64_t j = 0; j < nc; ++j) {
      const auto row0 = r_start + i * size, col0 = c_start + j * size;
      if (!validity.window_valid(row0, col0, size)) continue;
      const double cx = tf.col_to_x(static_cast<double>(col0) + static_cast<double>(size) / 2);
      const double cy = tf.row_to_y(static_cast<double>(row0) + static_cast<double>(size) / 2);
      const auto tile = grid.tile_at(cx, cy);
      if (tile < 0 || grid.tiles[static_cast<std::size_t>(tile)].split != Split::test) continue;
      m.windows.push_back(make_window(grid, window_id(Split::test, m.windows.size()), tile, Split::test, row0, col0, size));
    }
  return m;
}

// ---------------------------------------------------------------- extraction

WindowSample extract_window(const GeoRaster& image, const GeoRaster& labels, const Window& w, int num_classes) {
  if (!(image.transform == labels.transform) || image.rows() != labels.rows() || image.cols() != labels.cols() ||
      image.epsg != labels.epsg)
    throw AlignmentError("image and label rasters differ in transform, size or CRS");
  if (labels.pixels.channels != 1) throw InputError("label raster must have a single band");
  if (image.pixels.channels != 3) throw InputError("image raster must have three bands");
  if (w.row0 < 0 || w.col0 < 0 || w.row0 + w.size > image.rows() || w.col0 + w.size > image.cols())
    throw InputError("window " + w.id + " lies outside the raster");
  WindowSample s{ImageU8(w.size, w.size, 3), ImageU8(w.size, w.size, 1)};
  const auto img_row = static_cast<std::size_t>(image.cols() * 3);
  for (std::int64_t r = 0; r < w.size; ++r) {
    const auto* src = image.pixels.data.data() + static_cast<std::size_t>(w.row0 + r) * img_row + w.col0 * 3;
    std::copy(src, src + w.size * 3, s.image.data.begin() + r * w.size * 3);
    const auto* lsrc = labels.pixels.data.data() + static_cast<std::size_t>((w.row0 + r) * labels.cols() + w.col0);
    std::copy(lsrc, lsrc + w.size, s.mask.data.begin() + r * w.size);
  }
  for (auto v : s.mask.data)
    if (v >= num_classes)
      throw LabelError("window " + w.id + " has label id " + std::to_string(v) + " >= " + std::to_string(num_classes));
  return s;
}

ImageU8 apply_dihedral(const ImageU8& img, int k) {
  if (img.height != img.width) throw ShapeError("dihedral transforms need square images");
  const auto n = img.height, ch = img.channels;
  const bool flip = (k & 4) != 0;
  const int rot = k & 3;
  ImageU8 out(n, n, ch);
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      // Source pixel for destination (y, x): undo the rotation, then the flip.
      std::int64_t sy = y, sx = x;
      for (int i = 0; i < rot; ++i) {
        const auto ty = sx, tx = n - 1 - sy;  // inverse of one CCW quarter turn
        sy = ty;
        sx = tx;
      }
      if (flip) sx = n - 1 - sx;
      for (std::int64_t c = 0; c < ch; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

int augment(WindowSample& sample, std::mt19937_64& rng) {
  const int k = static_cast<int>(std::uniform_int_distribution<int>(0, 7)(rng));
  if (k == 0) return 0;
  sample.image = apply_dihedral(sample.image, k);
  sample.mask = apply_dihedral(sample.mask, k);
  return k;
}

// ---------------------------------------------------------------- synthetic field

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [-1, 1) keyed by pixel and seed.
double pixel_noise(std::uint64_t seed, std::int64_t r, std::int64_t c, int band) {
  const auto h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(r) * 0x1f1f1f1fULL + static_cast<std::uint64_t>(c) * 7919ULL + static_cast<std::uint64_t>(band)));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

struct Painter {
  GeoRaster& labels;
  std::array<std::int64_t, 5>& painted;

  void set(std::int64_t r, std::int64_t c, std::uint8_t cls) {
    auto& v = labels.pixels.at(r, c);
    if (v == 255 || v == cls) return;
    --painted[v];
    if (cls != 255) ++painted[cls];
    v = cls;
  }
};

}  // namespace

SyntheticField generate_synthetic_field(const SyntheticFieldSpec& spec, std::uint64_t seed) {
  const auto cols = static_cast<std::int64_t>(std::llround(spec.width_m / spec.pixel_size));
  const auto rows = static_cast<std::int64_t>(std::llround(spec.height_m / spec.pixel_size));
  if (cols <= 0 || rows <= 0) throw ConfigError("synthetic field extent must be positive");
  SyntheticField f;
  const GeoTransform tf{spec.origin_x, spec.origin_y, spec.pixel_size};
  f.image.transform = f.labels.transform = tf;
  f.image.nodata = 0;
  f.labels.nodata = 255;
  f.image.pixels = ImageU8(rows, cols, 3, 0);
  f.labels.pixels = ImageU8(rows, cols, 1, 255);

  // Octagon: rectangle inset by the margin with cut corners.
  const double x0 = spec.origin_x + spec.boundary_margin_m, x1 = spec.origin_x + spec.width_m - spec.boundary_margin_m;
  const double y1 = spec.origin_y - spec.boundary_margin_m, y0 = spec.origin_y - spec.height_m + spec.boundary_margin_m;
  const double k = spec.corner_cut_m;
  f.boundary.ring = {{x0 + k, y0}, {x1 - k, y0}, {x1, y0 + k}, {x1, y1 - k}, {x1 - k, y1}, {x0 + k, y1}, {x0, y1 - k}, {x0, y0 + k}};

  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      if (f.boundary.contains(tf.col_to_x(static_cast<double>(c) + 0.5), tf.row_to_y(static_cast<double>(r) + 0.5))) {
        f.labels.pixels.at(r, c) = 0;
        ++f.painted[0];
      }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1), unit(0.0, 1.0);
  Painter paint{f.labels, f.painted};
  auto to_pixel_box = [&](double minx, double miny, double maxx, double maxy, auto&& inside, std::uint8_t cls) {
    const auto c_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(tf.x_to_col(minx))));
    const auto c_hi = std::min<std::int64_t>(cols - 1, static_cast<std::int64_t>(std::ceil(tf.x_to_col(maxx))));
    const auto r_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(tf.y_to_row(maxy))));
    const auto r_hi = std::min<std::int64_t>(rows - 1, static_cast<std::int64_t>(std::ceil(tf.y_to_row(miny))));
    for (auto r = r_lo; r <= r_hi; ++r)
      for (auto c = c_lo; c <= c_hi; ++c)
        if (inside(tf.col_to_x(static_cast<double>(c) + 0.5), tf.row_to_y(static_cast<double>(r) + 0.5))) paint.set(r, c, cls);
  };
  auto disc = [&](double cx, double cy, double rad, std::uint8_t cls) {
    to_pixel_box(cx - rad, cy - rad, cx + rad, cy + rad,
                 [&](double x, double y) { return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad; }, cls);
  };

  // Vegetation: clusters of overlapping discs.
  for (int i = 0; i < spec.vegetation; ++i) {
    const double cx = ux(rng), cy = uy(rng);
    const int parts = 3 + static_cast<int>(unit(rng) * 4);
    for (int p = 0; p < parts; ++p) disc(cx + (unit(rng) - 0.5) * 6.0, cy + (unit(rng) - 0.5) * 6.0, 2.5 + unit(rng) * 2.0, 4);
  }
  // Coarse woody debris: long rotated bars.
  for (int i = 0; i < spec.cwd; ++i) {
    const double cx = ux(rng), cy = uy(rng);
    const double len = 10.0 + unit(rng) * 10.0, wid = 3.5 + unit(rng) * 1.5;
    const double th = unit(rng) * std::numbers::pi;
    const double ca = std::cos(th), sa = std::sin(th);
    const double ext = 0.5 * (len + wid);
    to_pixel_box(cx - ext, cy - ext, cx + ext, cy + ext,
                 [&](double x, double y) {
                   const double u = (x - cx) * ca + (y - cy) * sa, v = -(x - cx) * sa + (y - cy) * ca;
                   return std::abs(u) <= len / 2 && std::abs(v) <= wid / 2;
                 },
                 1);
  }
  for (int i = 0; i < spec.stumps; ++i) disc(ux(rng), uy(rng), 2.5 + unit(rng) * 1.0, 3);
  // Markers: axis-aligned squares.
  for (int i = 0; i < spec.misc; ++i) {
    const double cx = ux(rng), cy = uy(rng), h = 2.5 + unit(rng) * 0.5;
    to_pixel_box(cx - h, cy - h, cx + h, cy + h,
                 [&](double x, double y) { return std::abs(x - cx) <= h && std::abs(y - cy) <= h; }, 2);
  }

  // Nodata holes (gaps in the mosaic) inside the boundary.
  for (int i = 0; i < spec.nodata_holes; ++i) {
    const double cx = ux(rng), cy = uy(rng), h = spec.hole_size_m / 2;
    to_pixel_box(cx - h, cy - h, cx + h, cy + h, [&](double x, double y) { return std::abs(x - cx) <= h && std::abs(y - cy) <= h; },
                 255);
  }

  // Colour by class with low-frequency shading and per-pixel noise.
  static constexpr double kColor[5][3] = {{120, 92, 64}, {178, 170, 160}, {235, 120, 30}, {80, 42, 30}, {55, 150, 50}};
  const double p1 = unit(rng) * 6.28, p2 = unit(rng) * 6.28;
  const auto noise_seed = splitmix(seed);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto cls = f.labels.pixels.at(r, c);
      if (cls == 255) continue;
      const double shade = 8.0 * std::sin(static_cast<double>(c) * 0.013 + p1) * std::cos(static_cast<double>(r) * 0.011 + p2);
      for (int b = 0; b < 3; ++b) {
        const double v = kColor[cls][b] + shade + 14.0 * pixel_noise(noise_seed, r, c, b);
        f.image.pixels.at(r, c, b) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 1L, 255L));
      }
    }
  return f;
}

}  // namespace peftseg
