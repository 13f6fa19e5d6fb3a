#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "peftseg/errors.hpp"
#include "peftseg/geo.hpp"

namespace peftseg {

namespace {

enum : std::uint16_t { kShort = 3, kLong = 4, kAscii = 2, kDouble = 12 };

constexpr std::uint16_t kImageWidth = 256;
constexpr std::uint16_t kImageLength = 257;
constexpr std::uint16_t kBitsPerSample = 258;
constexpr std::uint16_t kCompression = 259;
constexpr std::uint16_t kPhotometric = 262;
constexpr std::uint16_t kStripOffsets = 273;
constexpr std::uint16_t kSamplesPerPixel = 277;
constexpr std::uint16_t kRowsPerStrip = 278;
constexpr std::uint16_t kStripByteCounts = 279;
constexpr std::uint16_t kPlanarConfig = 284;
constexpr std::uint16_t kSampleFormat = 339;
constexpr std::uint16_t kModelPixelScale = 33550;
constexpr std::uint16_t kModelTiepoint = 33922;
constexpr std::uint16_t kGeoKeyDirectory = 34735;
constexpr std::uint16_t kGdalNodata = 42113;

constexpr std::uint16_t kGTModelType = 1024;
constexpr std::uint16_t kGTRasterType = 1025;
constexpr std::uint16_t kProjectedCSType = 3072;

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::vector<std::uint8_t> bytes;  // payload, little-endian
};

std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1:
    case kAscii:
    case 7:
      return 1;
    case kShort:
      return 2;
    case kLong:
      return 4;
    case kDouble:
      return 8;
    default:
      return 0;
  }
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t off) {
  if (off + sizeof(T) > in.size()) throw InputError("truncated TIFF");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  return v;
}

Entry shorts(const std::vector<std::uint16_t>& v) {
  Entry e{kShort, static_cast<std::uint32_t>(v.size()), {}};
  for (auto x : v) put(e.bytes, x);
  return e;
}
Entry longs(const std::vector<std::uint32_t>& v) {
  Entry e{kLong, static_cast<std::uint32_t>(v.size()), {}};
  for (auto x : v) put(e.bytes, x);
  return e;
}
Entry doubles(const std::vector<double>& v) {
  Entry e{kDouble, static_cast<std::uint32_t>(v.size()), {}};
  for (auto x : v) put(e.bytes, x);
  return e;
}
Entry ascii(const std::string& s) {
  Entry e{kAscii, static_cast<std::uint32_t>(s.size() + 1), {}};
  e.bytes.assign(s.begin(), s.end());
  e.bytes.push_back(0);
  return e;
}

std::vector<std::uint64_t> read_uints(const Entry& e) {
  std::vector<std::uint64_t> out;
  for (std::uint32_t i = 0; i < e.count; ++i) {
    if (e.type == kShort) out.push_back(get<std::uint16_t>(e.bytes, i * 2));
    else if (e.type == kLong) out.push_back(get<std::uint32_t>(e.bytes, i * 4));
    else throw InputError("unsupported TIFF integer field type " + std::to_string(e.type));
  }
  return out;
}

}  // namespace

void write_geotiff(const std::filesystem::path& path, const GeoRaster& raster) {
  const auto& px = raster.pixels;
  const auto spp = static_cast<std::uint16_t>(px.channels);
  if (px.height <= 0 || px.width <= 0 || spp < 1) throw InputError("write_geotiff: empty raster");
  const std::uint32_t rows_per_strip = 16;
  const auto row_bytes = static_cast<std::uint32_t>(px.width * spp);
  const auto nstrips = static_cast<std::uint32_t>((px.height + rows_per_strip - 1) / rows_per_strip);

  std::map<std::uint16_t, Entry> tags;
  tags[kImageWidth] = longs({static_cast<std::uint32_t>(px.width)});
  tags[kImageLength] = longs({static_cast<std::uint32_t>(px.height)});
  tags[kBitsPerSample] = shorts(std::vector<std::uint16_t>(spp, 8));
  tags[kCompression] = shorts({1});
  tags[kPhotometric] = shorts({static_cast<std::uint16_t>(spp == 3 ? 2 : 1)});
  tags[kSamplesPerPixel] = shorts({spp});
  tags[kRowsPerStrip] = longs({rows_per_strip});
  tags[kPlanarConfig] = shorts({1});
  tags[kSampleFormat] = shorts(std::vector<std::uint16_t>(spp, 1));
  tags[kModelPixelScale] = doubles({raster.transform.pixel_size, raster.transform.pixel_size, 0.0});
  tags[kModelTiepoint] = doubles({0, 0, 0, raster.transform.origin_x, raster.transform.origin_y, 0});
  tags[kGeoKeyDirectory] = shorts({1, 1, 0, 3,                                   //
                                   kGTModelType, 0, 1, 1,                        // projected
                                   kGTRasterType, 0, 1, 1,                       // pixel is area
                                   kProjectedCSType, 0, 1, static_cast<std::uint16_t>(raster.epsg)});
  if (raster.nodata) tags[kGdalNodata] = ascii(std::to_string(*raster.nodata));
  std::vector<std::uint32_t> counts(nstrips);
  for (std::uint32_t s = 0; s < nstrips; ++s) {
    const auto r = std::min<std::uint32_t>(rows_per_strip, static_cast<std::uint32_t>(px.height) - s * rows_per_strip);
    counts[s] = r * row_bytes;
  }
  tags[kStripByteCounts] = longs(counts);
  tags[kStripOffsets] = longs(std::vector<std::uint32_t>(nstrips, 0));  // patched below

  // Layout: header | pixel data | IFD | out-of-line tag payloads.
  const std::uint32_t data_off = 8;
  const auto data_size = static_cast<std::uint32_t>(px.data.size());
  std::uint32_t ifd_off = data_off + data_size;
  ifd_off += ifd_off & 1;
  const auto ifd_size = static_cast<std::uint32_t>(2 + tags.size() * 12 + 4);
  std::vector<std::uint32_t> offsets(nstrips);
  for (std::uint32_t s = 0; s < nstrips; ++s) offsets[s] = data_off + s * rows_per_strip * row_bytes;
  tags[kStripOffsets] = longs(offsets);

  std::vector<std::uint8_t> out;
  out.reserve(ifd_off + ifd_size + 4096);
  out.push_back('I');
  out.push_back('I');
  put<std::uint16_t>(out, 42);
  put<std::uint32_t>(out, ifd_off);
  out.insert(out.end(), px.data.begin(), px.data.end());
  while (out.size() < ifd_off) out.push_back(0);

  std::vector<std::uint8_t> extra;
  std::uint32_t extra_off = ifd_off + ifd_size;
  put<std::uint16_t>(out, static_cast<std::uint16_t>(tags.size()));
  for (const auto& [tag, e] : tags) {
    put<std::uint16_t>(out, tag);
    put<std::uint16_t>(out, e.type);
    put<std::uint32_t>(out, e.count);
    if (e.bytes.size() <= 4) {
      std::uint8_t inl[4] = {0, 0, 0, 0};
      std::memcpy(inl, e.bytes.data(), e.bytes.size());
      out.insert(out.end(), inl, inl + 4);
    } else {
      put<std::uint32_t>(out, extra_off + static_cast<std::uint32_t>(extra.size()));
      extra.insert(extra.end(), e.bytes.begin(), e.bytes.end());
      if (extra.size() & 1) extra.push_back(0);
    }
  }
  put<std::uint32_t>(out, 0);
  out.insert(out.end(), extra.begin(), extra.end());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw InputError("write failed for " + path.string());
}

GeoRaster read_geotiff(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open raster " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (file.size() < 8 || file[0] != 'I' || file[1] != 'I' || get<std::uint16_t>(file, 2) != 42)
    throw InputError(path.string() + ": not a little-endian classic TIFF");
  const auto ifd = get<std::uint32_t>(file, 4);
  const auto n = get<std::uint16_t>(file, ifd);
  std::map<std::uint16_t, Entry> tags;
  for (std::uint16_t i = 0; i < n; ++i) {
    const std::size_t p = ifd + 2 + static_cast<std::size_t>(i) * 12;
    Entry e;
    const auto tag = get<std::uint16_t>(file, p);
    e.type = get<std::uint16_t>(file, p + 2);
    e.count = get<std::uint32_t>(file, p + 4);
    const auto sz = type_size(e.type) * e.count;
    if (sz == 0) continue;
    const std::size_t src = sz <= 4 ? p + 8 : get<std::uint32_t>(file, p + 8);
    if (src + sz > file.size()) throw InputError(path.string() + ": tag " + std::to_string(tag) + " out of bounds");
    e.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(src), file.begin() + static_cast<std::ptrdiff_t>(src + sz));
    tags[tag] = std::move(e);
  }
  auto need = [&](std::uint16_t tag) -> const Entry& {
    auto it = tags.find(tag);
    if (it == tags.end()) throw InputError(path.string() + ": missing TIFF tag " + std::to_string(tag));
    return it->second;
  };
  auto scalar = [&](std::uint16_t tag, std::uint64_t fallback) {
    auto it = tags.find(tag);
    return it == tags.end() ? fallback : read_uints(it->second).at(0);
  };

  GeoRaster r;
  const auto width = static_cast<std::int64_t>(read_uints(need(kImageWidth)).at(0));
  const auto height = static_cast<std::int64_t>(read_uints(need(kImageLength)).at(0));
  const auto spp = static_cast<std::int64_t>(scalar(kSamplesPerPixel, 1));
  if (scalar(kCompression, 1) != 1) throw InputError(path.string() + ": compressed TIFF not supported");
  if (scalar(kPlanarConfig, 1) != 1) throw InputError(path.string() + ": planar TIFF not supported");
  for (auto b : read_uints(need(kBitsPerSample)))
    if (b != 8) throw InputError(path.string() + ": only 8-bit samples are supported");
  const auto offsets = read_uints(need(kStripOffsets));
  const auto counts = read_uints(need(kStripByteCounts));
  if (offsets.size() != counts.size()) throw InputError(path.string() + ": strip tables disagree");

  r.pixels = ImageU8(height, width, spp);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    if (offsets[s] + counts[s] > file.size() || pos + counts[s] > r.pixels.data.size())
      throw InputError(path.string() + ": strip " + std::to_string(s) + " out of bounds");
    std::memcpy(r.pixels.data.data() + pos, file.data() + offsets[s], counts[s]);
    pos += counts[s];
  }
  if (pos != r.pixels.data.size()) throw InputError(path.string() + ": pixel data short");

  const auto& scale = need(kModelPixelScale);
  const auto& tie = need(kModelTiepoint);
  const double sx = get<double>(scale.bytes, 0);
  const double sy = get<double>(scale.bytes, 8);
  if (sx <= 0 || std::abs(sx - sy) > 1e-12 * sx) throw InputError(path.string() + ": non-square or invalid pixel scale");
  const double ti = get<double>(tie.bytes, 0), tj = get<double>(tie.bytes, 8);
  r.transform.pixel_size = sx;
  r.transform.origin_x = get<double>(tie.bytes, 24) - ti * sx;
  r.transform.origin_y = get<double>(tie.bytes, 32) + tj * sx;
  if (auto it = tags.find(kGeoKeyDirectory); it != tags.end()) {
    const auto keys = read_uints(it->second);
    for (std::size_t k = 4; k + 3 < keys.size(); k += 4)
      if (keys[k] == kProjectedCSType && keys[k + 1] == 0) r.epsg = static_cast<int>(keys[k + 3]);
  }
  if (auto it = tags.find(kGdalNodata); it != tags.end())
    r.nodata = std::stoi(std::string(it->second.bytes.begin(), it->second.bytes.end() - 1));
  else
    r.nodata.reset();
  return r;
}

}  // namespace peftseg
