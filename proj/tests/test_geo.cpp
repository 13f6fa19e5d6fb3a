#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "peftseg/errors.hpp"
#include "peftseg/geo.hpp"

using namespace peftseg;
namespace fs = std::filesystem;

namespace {

SyntheticField small_field(std::uint64_t seed = 7) {
  SyntheticFieldSpec s;
  s.width_m = 60;
  s.height_m = 40;
  s.vegetation = 6;
  s.cwd = 6;
  s.stumps = 6;
  s.misc = 4;
  return generate_synthetic_field(s, seed);
}

GeoRaster checker(std::int64_t rows, std::int64_t cols, int channels) {
  GeoRaster r;
  r.pixels = ImageU8(rows, cols, channels);
  for (std::int64_t y = 0; y < rows; ++y)
    for (std::int64_t x = 0; x < cols; ++x)
      for (int c = 0; c < channels; ++c) r.pixels.at(y, x, c) = static_cast<std::uint8_t>((y * 7 + x * 3 + c) % 5);
  r.transform = {1000.0, 2000.0, 0.1};
  return r;
}

}  // namespace

TEST_CASE("polygon containment and area") {
  Polygon sq{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}};
  CHECK(sq.contains(5, 5));
  CHECK_FALSE(sq.contains(11, 5));
  CHECK(sq.area() == doctest::Approx(100.0));
}

TEST_CASE("GeoTIFF and GeoJSON round-trip") {
  const fs::path dir = fs::temp_directory_path() / "peftseg_geo_test";
  fs::create_directories(dir);
  auto r = checker(13, 9, 3);
  r.nodata = 0;
  write_geotiff(dir / "a.tif", r);
  const auto back = read_geotiff(dir / "a.tif");
  CHECK(back.pixels == r.pixels);
  CHECK(back.transform == r.transform);
  CHECK(back.epsg == r.epsg);
  CHECK(back.nodata == r.nodata);
  Polygon p{{{0, 0}, {3, 0}, {3, 2}}};
  write_geojson_polygon(dir / "b.geojson", p, 25832);
  CHECK(read_geojson_polygon(dir / "b.geojson").ring.size() >= 3);
  CHECK_THROWS_AS(read_geotiff(dir / "missing.tif"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("tile grid is row-major and the column split honours the fraction") {
  const auto f = small_field();
  auto grid = build_tile_grid(f.image, 10.0);
  CHECK(grid.rows == 4);
  CHECK(grid.cols == 6);
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) CHECK(grid.tiles[i].id == std::int64_t(i));
  const auto& t = grid.tiles[7];
  CHECK(grid.tile_at(0.5 * (t.min_x + t.max_x), 0.5 * (t.min_y + t.max_y)) == 7);
  CHECK(grid.tile_at(0.0, 0.0) == -1);
  assign_split_by_columns(grid, 0.4);
  const auto test = grid.tiles_in(Split::test);
  CHECK(!test.empty());
  CHECK(test.size() < grid.tiles.size());
  std::set<std::int64_t> test_cols;
  for (auto id : test) test_cols.insert(grid.tiles[std::size_t(id)].col);
  for (const auto& tile : grid.tiles) CHECK((tile.split == Split::test) == (test_cols.count(tile.col) == 1));
}

TEST_CASE("random windows are valid, seeded and keep off test tiles") {
  const auto f = small_field();
  auto grid = build_tile_grid(f.image, 10.0);
  assign_split_by_columns(grid, 0.4);
  const ValidityMap vm(f.image, f.labels, f.boundary);
  SamplingOptions opt;
  opt.window_size = 64;
  const auto a = sample_random_windows(grid, vm, 50, 3, opt);
  const auto b = sample_random_windows(grid, vm, 50, 3, opt);
  const auto c = sample_random_windows(grid, vm, 50, 4, opt);
  CHECK(a.windows == b.windows);
  CHECK_FALSE(a.windows == c.windows);
  for (const auto& w : a.windows) {
    CHECK(vm.window_valid(w.row0, w.col0, w.size));
    CHECK(w.split == Split::train);
    for (const auto& t : grid.tiles)
      if (t.split == Split::test) {
        const bool overlap = w.min_x < t.max_x && t.min_x < w.max_x && w.min_y < t.max_y && t.min_y < w.max_y;
        CHECK_FALSE(overlap);
      }
  }
  const auto g = sample_grid_windows(grid, vm, opt);
  for (const auto& w : g.windows) CHECK(vm.window_valid(w.row0, w.col0, w.size));
}

TEST_CASE("impossible sampling names the exhausted budget") {
  const auto f = small_field();
  auto grid = build_tile_grid(f.image, 10.0);
  assign_split_by_columns(grid, 0.4);
  const ValidityMap vm(f.image, f.labels, f.boundary);
  SamplingOptions opt;
  opt.window_size = 390;  // wider than any train region
  opt.retries_per_window = 5;
  CHECK_THROWS_AS(sample_random_windows(grid, vm, 1, 1, opt), SamplingExhaustedError);
}

TEST_CASE("extract_window copies the exact pixel block") {
  const auto img = checker(20, 30, 3);
  auto lbl = checker(20, 30, 1);
  Window w;
  w.row0 = 3;
  w.col0 = 11;
  w.size = 8;
  const auto s = extract_window(img, lbl, w, 5);
  CHECK(s.image.height == 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(s.image.at(y, x, 2) == img.pixels.at(y + 3, x + 11, 2));
      CHECK(s.mask.at(y, x) == lbl.pixels.at(y + 3, x + 11));
    }
  CHECK_THROWS_AS(extract_window(img, lbl, w, 3), LabelError);
  auto shifted = lbl;
  shifted.transform.origin_x += 0.1;
  CHECK_THROWS_AS(extract_window(img, shifted, w, 5), AlignmentError);
}

TEST_CASE("dihedral transforms form the group of the square") {
  ImageU8 img(3, 3, 1);
  for (int i = 0; i < 9; ++i) img.data[std::size_t(i)] = static_cast<std::uint8_t>(i);
  std::set<std::vector<std::uint8_t>> seen;
  for (int k = 0; k < 8; ++k) seen.insert(apply_dihedral(img, k).data);
  CHECK(seen.size() == 8);
  CHECK(apply_dihedral(img, 0) == img);
  CHECK(apply_dihedral(apply_dihedral(img, 1), 3) == img);
  CHECK(apply_dihedral(apply_dihedral(img, 4), 4) == img);
}

TEST_CASE("manifest JSONL round-trip") {
  WindowManifest m;
  m.seed = 9;
  m.image_sha256 = "abc";
  m.labels_sha256 = "def";
  Window w;
  w.id = "train_0000";
  w.row0 = 4;
  w.min_x = 1.5;
  m.windows = {w, w};
  std::stringstream ss;
  m.write_jsonl(ss);
  const auto back = WindowManifest::read_jsonl(ss);
  CHECK(back.windows == m.windows);
  CHECK(back.seed == 9);
  CHECK(back.labels_sha256 == "def");
}

TEST_CASE("synthetic field is reproducible and keeps every class") {
  const auto a = small_field(3), b = small_field(3);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.labels.pixels == b.labels.pixels);
  std::array<std::int64_t, 256> hist{};
  for (auto v : a.labels.pixels.data) ++hist[v];
  for (int c = 0; c < 5; ++c) CHECK(hist[std::size_t(c)] > 0);
  CHECK(hist[255] > 0);
}

TEST_CASE("tile counts including partial edge tiles") {
  auto raster = [](std::int64_t rows, std::int64_t cols) {
    GeoRaster r;
    r.pixels = ImageU8(rows, cols, 1);
    r.transform = {0.0, 0.0, 0.1};
    return r;
  };
  const auto even = build_tile_grid(raster(1000, 1000), 10.0);
  CHECK(even.tiles.size() == 100);
  const auto ragged = build_tile_grid(raster(1000, 1050), 10.0);
  CHECK(ragged.tiles.size() == 110);
  CHECK(std::count_if(ragged.tiles.begin(), ragged.tiles.end(), [](const Tile& t) { return t.partial; }) == 10);
  const auto single = build_tile_grid(raster(50, 50), 10.0);
  CHECK(single.tiles.size() == 1);
  CHECK(single.tiles[0].partial);
}

TEST_CASE("all-nodata raster exhausts the sampler") {
  GeoRaster img;
  img.pixels = ImageU8(200, 200, 3, 0);
  img.transform = {0.0, 20.0, 0.1};
  img.nodata = 0;
  GeoRaster lbl;
  lbl.pixels = ImageU8(200, 200, 1, 255);
  lbl.transform = img.transform;
  lbl.nodata = 255;
  Polygon everything{{{-1, -1}, {30, -1}, {30, 30}, {-1, 30}}};
  auto grid = build_tile_grid(img, 10.0);
  assign_split_by_columns(grid, 0.5);
  const ValidityMap vm(img, lbl, everything);
  SamplingOptions opt;
  opt.window_size = 16;
  CHECK_THROWS_AS(sample_random_windows(grid, vm, 1, 1, opt), SamplingExhaustedError);
}

TEST_CASE("grid over a test region two windows wide and high gives four windows") {
  GeoRaster img;
  img.pixels = ImageU8(40, 40, 3, 50);
  img.transform = {0.0, 4.0, 0.1};
  GeoRaster lbl;
  lbl.pixels = ImageU8(40, 40, 1, 0);
  lbl.transform = img.transform;
  Polygon everything{{{-1, -1}, {5, -1}, {5, 5}, {-1, 5}}};
  auto grid = build_tile_grid(img, 2.0);
  std::vector<std::int64_t> ids(grid.tiles.size());
  std::iota(ids.begin(), ids.end(), 0);
  assign_split_explicit(grid, ids);
  const ValidityMap vm(img, lbl, everything);
  SamplingOptions opt;
  opt.window_size = 20;
  const auto m = sample_grid_windows(grid, vm, opt);
  CHECK(m.windows.size() == 4);
  std::ostringstream a, b;
  m.write_jsonl(a);
  sample_grid_windows(grid, vm, opt).write_jsonl(b);
  CHECK(a.str() == b.str());
}

TEST_CASE("windows inside one class give constant masks and re-crops are identical") {
  GeoRaster img;
  img.pixels = ImageU8(30, 30, 3, 90);
  GeoRaster lbl;
  lbl.pixels = ImageU8(30, 30, 1, 4);
  Window w;
  w.row0 = 5;
  w.col0 = 6;
  w.size = 10;
  const auto s1 = extract_window(img, lbl, w, 5);
  const auto s2 = extract_window(img, lbl, w, 5);
  CHECK(std::all_of(s1.mask.data.begin(), s1.mask.data.end(), [](std::uint8_t v) { return v == 4; }));
  CHECK(s1.image == s2.image);
  CHECK(s1.mask == s2.mask);
}

TEST_CASE("augmentation keeps image and mask aligned") {
  WindowSample s;
  s.image = ImageU8(6, 6, 3);
  s.mask = ImageU8(6, 6, 1);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      s.image.at(y, x, 0) = static_cast<std::uint8_t>(y);
      s.image.at(y, x, 1) = static_cast<std::uint8_t>(x);
      s.mask.at(y, x) = static_cast<std::uint8_t>(y * 6 + x);
    }
  std::array<std::int64_t, 256> before{};
  for (auto v : s.mask.data) ++before[v];
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    auto t = s;
    augment(t, rng);
    std::array<std::int64_t, 256> after{};
    for (auto v : t.mask.data) ++after[v];
    CHECK(after == before);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) CHECK(t.mask.at(y, x) == t.image.at(y, x, 0) * 6 + t.image.at(y, x, 1));
  }
  CHECK(apply_dihedral(apply_dihedral(s.image, 1), 1) == apply_dihedral(s.image, 2));
}

TEST_CASE("generator bookkeeping and degenerate specs") {
  const auto f = small_field(5);
  std::array<std::int64_t, 5> hist{};
  for (auto v : f.labels.pixels.data)
    if (v < 5) ++hist[v];
  CHECK(hist == f.painted);

  SyntheticFieldSpec empty;
  empty.width_m = 30;
  empty.height_m = 30;
  empty.vegetation = empty.cwd = empty.stumps = empty.misc = 0;
  empty.nodata_holes = 0;
  const auto e = generate_synthetic_field(empty, 1);
  for (auto v : e.labels.pixels.data) CHECK((v == 0 || v == 255));

  CHECK_FALSE(small_field(5).image.pixels == small_field(6).image.pixels);
}
