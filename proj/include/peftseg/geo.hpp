#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "peftseg/image.hpp"

namespace peftseg {

/// North-up affine transform: x = origin_x + col * pixel_size,
/// y = origin_y - row * pixel_size. Coordinates in CRS units (meters).
struct GeoTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 0.1;

  double col_to_x(double col) const { return origin_x + col * pixel_size; }
  double row_to_y(double row) const { return origin_y - row * pixel_size; }
  double x_to_col(double x) const { return (x - origin_x) / pixel_size; }
  double y_to_row(double y) const { return (origin_y - y) / pixel_size; }
  bool operator==(const GeoTransform&) const = default;
};

struct GeoRaster {
  ImageU8 pixels;
  GeoTransform transform;
  int epsg = 25832;
  std::optional<int> nodata;

  std::int64_t rows() const { return pixels.height; }
  std::int64_t cols() const { return pixels.width; }
  double width_m() const { return static_cast<double>(cols()) * transform.pixel_size; }
  double height_m() const { return static_cast<double>(rows()) * transform.pixel_size; }
  /// A pixel is nodata when any band equals the nodata value.
  bool is_nodata(std::int64_t row, std::int64_t col) const;
};

/// Uncompressed, chunky, 8-bit GeoTIFF with pixel scale, tie point, a
/// projected-CRS GeoKey directory and the GDAL nodata tag.
void write_geotiff(const std::filesystem::path& path, const GeoRaster& raster);
GeoRaster read_geotiff(const std::filesystem::path& path);

/// Simple polygon (outer ring only) in CRS coordinates.
struct Polygon {
  std::vector<std::pair<double, double>> ring;

  bool contains(double x, double y) const;
  double area() const;
};

void write_geojson_polygon(const std::filesystem::path& path, const Polygon& polygon, int epsg);
/// Accepts a bare Polygon geometry, a Feature or a FeatureCollection (first
/// polygon feature).
Polygon read_geojson_polygon(const std::filesystem::path& path);

enum class Split { train, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Tile {
  std::int64_t id = 0;
  std::int64_t row = 0;
  std::int64_t col = 0;
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;  // clipped to the raster extent
  bool partial = false;
  Split split = Split::train;

  double area() const { return (max_x - min_x) * (max_y - min_y); }
};

struct TileGrid {
  double tile_size_m = 10.0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  GeoTransform transform;
  std::vector<Tile> tiles;  // row-major, id = row * cols + col

  /// Tile holding a geo point, or -1 outside the extent.
  std::int64_t tile_at(double x, double y) const;
  std::vector<std::int64_t> tiles_in(Split s) const;
};

/// Axis-aligned grid from the raster's top-left corner. Edge tiles that the
/// extent cuts short are kept and flagged partial. Every tile starts as train.
TileGrid build_tile_grid(const GeoRaster& raster, double tile_size_m);

/// Marks the rightmost round(cols * test_fraction) tile columns as test
/// (clamped to [1, cols - 1]).
void assign_split_by_columns(TileGrid& grid, double test_fraction);
/// Marks exactly the listed tile ids as test.
void assign_split_explicit(TileGrid& grid, const std::vector<std::int64_t>& test_ids);

struct Window {
  std::string id;
  std::int64_t tile_id = 0;
  Split split = Split::train;
  std::int64_t row0 = 0;
  std::int64_t col0 = 0;
  std::int64_t size = 512;
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;

  bool operator==(const Window&) const = default;
};

struct WindowManifest {
  std::vector<Window> windows;
  std::uint64_t seed = 0;
  std::string image_sha256;
  std::string labels_sha256;

  /// Header line followed by one line per window.
  void write_jsonl(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static WindowManifest read_jsonl(std::istream& is);
  static WindowManifest load(const std::filesystem::path& path);
};

/// Per-pixel validity (inside boundary, no nodata in image or labels) with an
/// integral image for O(1) window checks.
class ValidityMap {
 public:
  ValidityMap(const GeoRaster& image, const GeoRaster& labels, const Polygon& boundary);

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  bool valid_pixel(std::int64_t row, std::int64_t col) const;
  /// True when the size x size window at (row0, col0) is inside the raster
  /// and every pixel is valid.
  bool window_valid(std::int64_t row0, std::int64_t col0, std::int64_t size) const;

 private:
  std::int64_t rows_;
  std::int64_t cols_;
  std::vector<std::int32_t> invalid_integral_;  // (rows+1) x (cols+1)
};

struct SamplingOptions {
  std::int64_t window_size = 512;
  int retries_per_window = 100;
  /// Reject train windows whose footprint touches a test tile.
  bool exclude_test_overlap = true;
};

/// n train windows whose centers are drawn uniformly over the train tiles.
/// Throws SamplingExhaustedError naming the last tile tried when a window
/// cannot be placed within the retry budget.
WindowManifest sample_random_windows(const TileGrid& grid, const ValidityMap& validity, std::int64_t n,
                                     std::uint64_t seed, const SamplingOptions& options = {});

/// Non-overlapping lattice (stride = window size) centered in the bounding
/// box of the test tiles; only valid windows are kept.
WindowManifest sample_grid_windows(const TileGrid& grid, const ValidityMap& validity,
                                   const SamplingOptions& options = {});

struct WindowSample {
  ImageU8 image;  // size x size x 3
  ImageU8 mask;   // size x size x 1, class ids
};

/// Pixel-aligned crop of both rasters. Throws AlignmentError when the rasters
/// disagree on transform, size or CRS and LabelError on ids >= num_classes.
WindowSample extract_window(const GeoRaster& image, const GeoRaster& labels, const Window& w, int num_classes);

/// Element k of the dihedral group of the square: bit 2 flips horizontally,
/// bits 0-1 then rotate counter-clockwise by k * 90 degrees.
ImageU8 apply_dihedral(const ImageU8& img, int k);
/// Draws one of the 8 transforms and applies it to image and mask; returns k.
int augment(WindowSample& sample, std::mt19937_64& rng);

struct SyntheticFieldSpec {
  double width_m = 280.0;
  double height_m = 180.0;
  double pixel_size = 0.1;
  double origin_x = 500000.0;
  double origin_y = 5700000.0;
  double boundary_margin_m = 3.0;
  double corner_cut_m = 8.0;
  int nodata_holes = 2;
  double hole_size_m = 4.0;
  // Blob counts per class.
  int vegetation = 40;
  int cwd = 45;
  int stumps = 35;
  int misc = 25;
};

struct SyntheticField {
  GeoRaster image;
  GeoRaster labels;
  Polygon boundary;
  /// Pixels per class as tracked while painting (later shapes overwrite).
  std::array<std::int64_t, 5> painted{};
};

SyntheticField generate_synthetic_field(const SyntheticFieldSpec& spec, std::uint64_t seed);

}  // namespace peftseg
