#include "crswin/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace crswin {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

template <typename T>
T read_le(const std::vector<std::uint8_t>& b, std::size_t off, bool swap = false) {
  static_assert(std::is_trivially_copyable_v<T>);
  if (off + sizeof(T) > b.size()) {
    throw TruncatedDataError("file ends inside a " + std::to_string(sizeof(T)) +
                             "-byte field at offset " + std::to_string(off));
  }
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), b.data() + off, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  return v;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &v, sizeof(T));
  out.insert(out.end(), raw.begin(), raw.end());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

std::int64_t LabelMask::count(std::uint8_t label) const {
  return std::count(labels.begin(), labels.end(), label);
}

// ---- NIfTI-1 ----

namespace {

constexpr std::int32_t kNiftiHeaderSize = 348;

struct DatatypeInfo {
  std::int16_t code;
  std::int16_t bits;
};

constexpr DatatypeInfo kSupported[] = {
    {2, 8},    // uint8
    {4, 16},   // int16
    {8, 32},   // int32
    {16, 32},  // float32
    {64, 64},  // float64
};

}  // namespace

ScalarField parse_nifti(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < static_cast<std::size_t>(kNiftiHeaderSize)) {
    throw TruncatedDataError("file shorter than the 348-byte NIfTI-1 header (" +
                             std::to_string(bytes.size()) + " bytes)");
  }
  const auto raw_sizeof = read_le<std::int32_t>(bytes, 0, false);
  bool swap = false;
  if (raw_sizeof == kNiftiHeaderSize) {
    swap = false;
  } else if (read_le<std::int32_t>(bytes, 0, true) == kNiftiHeaderSize) {
    swap = true;
  } else {
    throw FormatError("sizeof_hdr is " + std::to_string(raw_sizeof) +
                      " in either byte order; not a NIfTI-1 file");
  }

  const char m0 = static_cast<char>(bytes[344]);
  const char m1 = static_cast<char>(bytes[345]);
  const char m2 = static_cast<char>(bytes[346]);
  const char m3 = static_cast<char>(bytes[347]);
  if (m0 == 'n' && m1 == 'i' && m2 == '1' && m3 == '\0') {
    throw FormatError("detached .hdr/.img pair (magic \"ni1\"); only single-file \"n+1\" is read");
  }
  if (!(m0 == 'n' && m1 == '+' && m2 == '1' && m3 == '\0')) {
    throw FormatError("bad magic bytes at offset 344");
  }

  std::array<std::int16_t, 8> dim;
  for (std::size_t i = 0; i < 8; ++i) {
    dim[i] = read_le<std::int16_t>(bytes, 40 + 2 * i, swap);
  }
  if (dim[0] < 1 || dim[0] > 7) {
    throw FormatError("dim[0] = " + std::to_string(dim[0]) + " outside [1,7]");
  }
  const std::int64_t nx = dim[1];
  const std::int64_t ny = dim[0] >= 2 ? dim[2] : 1;
  const std::int64_t nz = dim[0] >= 3 ? dim[3] : 1;
  if (nx < 1 || ny < 1 || nz < 1) {
    throw FormatError("nonpositive spatial extent in dim[]");
  }
  for (std::int16_t i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) {
      throw FormatError("dim[" + std::to_string(i) + "] = " + std::to_string(dim[i]) +
                        "; only single-component volumes are read");
    }
  }
  const std::int64_t nvox = nx * ny * nz;
  if (nvox > (std::int64_t{1} << 31)) {
    throw FormatError("implausible voxel count " + std::to_string(nvox));
  }

  const auto datatype = read_le<std::int16_t>(bytes, 70, swap);
  const auto bitpix = read_le<std::int16_t>(bytes, 72, swap);
  const DatatypeInfo* info = nullptr;
  for (const auto& cand : kSupported) {
    if (cand.code == datatype) info = &cand;
  }
  if (!info) {
    throw UnsupportedDatatypeError("datatype code " + std::to_string(datatype) +
                                   "; supported: uint8(2) int16(4) int32(8) float32(16) "
                                   "float64(64)");
  }
  if (bitpix != info->bits) {
    throw FormatError("bitpix " + std::to_string(bitpix) + " does not match datatype " +
                      std::to_string(datatype));
  }

  const float vox_offset_f = read_le<float>(bytes, 108, swap);
  if (!std::isfinite(vox_offset_f) || vox_offset_f < static_cast<float>(kNiftiHeaderSize)) {
    throw FormatError("vox_offset " + std::to_string(vox_offset_f) + " invalid");
  }
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
  const std::size_t bytes_per = static_cast<std::size_t>(info->bits) / 8;
  const std::size_t needed = static_cast<std::size_t>(nvox) * bytes_per;
  if (vox_offset > bytes.size() || bytes.size() - vox_offset < needed) {
    throw TruncatedDataError("data section needs " + std::to_string(needed) +
                             " bytes at offset " + std::to_string(vox_offset) + ", file has " +
                             std::to_string(bytes.size()));
  }

  float slope = read_le<float>(bytes, 112, swap);
  float inter = read_le<float>(bytes, 116, swap);
  if (!std::isfinite(slope)) slope = 0.0f;
  if (!std::isfinite(inter)) inter = 0.0f;

  ScalarField field;
  field.d = nz;
  field.h = ny;
  field.w = nx;
  for (int axis = 0; axis < 3; ++axis) {
    // pixdim[1..3] = (x,y,z) steps; spacing stored in (D,H,W) order
    const float p = read_le<float>(bytes, 76 + 4 * static_cast<std::size_t>(3 - axis), swap);
    field.spacing[static_cast<std::size_t>(axis)] =
        (std::isfinite(p) && p > 0.0f) ? static_cast<double>(p) : 1.0;
  }

  field.values.resize(static_cast<std::size_t>(nvox));
  for (std::int64_t i = 0; i < nvox; ++i) {
    const std::size_t off = vox_offset + static_cast<std::size_t>(i) * bytes_per;
    real v = 0.0;
    switch (datatype) {
      case 2: v = static_cast<real>(bytes[off]); break;
      case 4: v = static_cast<real>(read_le<std::int16_t>(bytes, off, swap)); break;
      case 8: v = static_cast<real>(read_le<std::int32_t>(bytes, off, swap)); break;
      case 16: v = static_cast<real>(read_le<float>(bytes, off, swap)); break;
      case 64: v = static_cast<real>(read_le<double>(bytes, off, swap)); break;
      default: break;
    }
    if (slope != 0.0f) {
      v = static_cast<real>(slope) * v + static_cast<real>(inter);
    }
    field.values[static_cast<std::size_t>(i)] = v;
  }
  return field;
}

ScalarField read_nifti(const std::filesystem::path& path) {
  return parse_nifti(read_file(path));
}

// ---- CRSV container ----
//
// Layout (all integers little-endian):
//   char[4]  magic "CRSV"
//   u32      version (1)
//   u32      D, H, W
//   f32[3]   spacing in (D,H,W) order
//   u32      channel count (0 = mask-only file)
//   u16      id length, followed by that many id bytes
//   f32[channels * D*H*W]  channel-major voxel data, W fastest
//   u8[D*H*W]              labels, external alphabet

namespace {
constexpr char kRawMagic[4] = {'C', 'R', 'S', 'V'};
constexpr std::uint32_t kRawVersion = 1;
}  // namespace

void write_raw(const Volume& volume, const LabelMask& mask, const std::filesystem::path& path) {
  if (mask.grid_size() <= 0 ||
      static_cast<std::size_t>(mask.grid_size()) != mask.labels.size()) {
    throw ShapeError("write_raw: mask grid " + std::to_string(mask.d) + "x" +
                     std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                     " inconsistent with its label count");
  }
  const std::int64_t grid = mask.grid_size();
  std::int64_t channels = 0;
  if (!volume.voxels.empty()) {
    if (volume.d != mask.d || volume.h != mask.h || volume.w != mask.w) {
      throw ShapeError("write_raw: volume and mask grids differ");
    }
    if (volume.voxels.size() % static_cast<std::size_t>(grid) != 0) {
      throw ShapeError("write_raw: voxel count is not a whole number of channels");
    }
    channels = static_cast<std::int64_t>(volume.voxels.size()) / grid;
  }

  std::vector<std::uint8_t> out;
  out.reserve(64 + volume.voxels.size() * 4 + mask.labels.size());
  out.insert(out.end(), kRawMagic, kRawMagic + 4);
  append_le<std::uint32_t>(out, kRawVersion);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mask.d));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mask.h));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mask.w));
  for (double s : volume.spacing) append_le<float>(out, static_cast<float>(s));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(channels));
  const auto id_len = static_cast<std::uint16_t>(std::min<std::size_t>(volume.id.size(), 65535));
  append_le<std::uint16_t>(out, id_len);
  out.insert(out.end(), volume.id.begin(), volume.id.begin() + id_len);
  for (real v : volume.voxels) append_le<float>(out, static_cast<float>(v));
  out.insert(out.end(), mask.labels.begin(), mask.labels.end());
  write_file(path, out);
}

std::pair<Volume, LabelMask> parse_raw(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
    throw FormatError("missing CRSV magic");
  }
  std::size_t off = 4;
  const auto version = read_le<std::uint32_t>(bytes, off);
  off += 4;
  if (version != kRawVersion) {
    throw FormatError("CRSV version " + std::to_string(version) + ", expected " +
                      std::to_string(kRawVersion));
  }
  std::array<std::uint32_t, 3> dims;
  for (auto& v : dims) {
    v = read_le<std::uint32_t>(bytes, off);
    off += 4;
  }
  std::array<float, 3> spacing;
  for (auto& v : spacing) {
    v = read_le<float>(bytes, off);
    off += 4;
  }
  const auto channels = read_le<std::uint32_t>(bytes, off);
  off += 4;
  const auto id_len = read_le<std::uint16_t>(bytes, off);
  off += 2;
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
    throw FormatError("CRSV dims contain zero");
  }
  const std::int64_t grid = static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  if (grid > (std::int64_t{1} << 31) || channels > 64) {
    throw FormatError("implausible CRSV geometry");
  }
  if (off + id_len > bytes.size()) {
    throw TruncatedDataError("CRSV id field runs past end of file");
  }
  std::string id(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                 bytes.begin() + static_cast<std::ptrdiff_t>(off + id_len));
  off += id_len;
  const std::size_t needed =
      static_cast<std::size_t>(grid) * channels * 4 + static_cast<std::size_t>(grid);
  if (bytes.size() - off < needed) {
    throw TruncatedDataError("CRSV data section needs " + std::to_string(needed) +
                             " bytes, file has " + std::to_string(bytes.size() - off) +
                             " after the header");
  }
  if (bytes.size() - off > needed) {
    throw FormatError("CRSV file has trailing bytes");
  }

  Volume vol;
  vol.d = dims[0];
  vol.h = dims[1];
  vol.w = dims[2];
  for (std::size_t i = 0; i < 3; ++i) {
    vol.spacing[i] = (std::isfinite(spacing[i]) && spacing[i] > 0.0f)
                         ? static_cast<double>(spacing[i])
                         : 1.0;
  }
  vol.id = std::move(id);
  vol.voxels.resize(static_cast<std::size_t>(grid) * channels);
  for (std::size_t i = 0; i < vol.voxels.size(); ++i) {
    vol.voxels[i] = static_cast<real>(read_le<float>(bytes, off));
    off += 4;
  }
  LabelMask mask;
  mask.d = vol.d;
  mask.h = vol.h;
  mask.w = vol.w;
  mask.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return {std::move(vol), std::move(mask)};
}

std::pair<Volume, LabelMask> read_raw(const std::filesystem::path& path) {
  return parse_raw(read_file(path));
}

// ---- labels ----

LabelMask remap_labels(const LabelMask& mask, LabelMap direction) {
  LabelMask out = mask;
  for (auto& v : out.labels) {
    if (direction == LabelMap::external_to_internal) {
      if (v == 4) {
        v = 3;
      } else if (v > 2) {
        throw LabelError("external label " + std::to_string(v) + " outside {0,1,2,4}");
      }
    } else {
      if (v == 3) {
        v = 4;
      } else if (v > 2) {
        throw LabelError("internal label " + std::to_string(v) + " outside {0,1,2,3}");
      }
    }
  }
  return out;
}

// ---- synthetic phantom ----

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
    const double dz = (static_cast<double>(z) - center[0]) / radii[0];
    const double dy = (static_cast<double>(y) - center[1]) / radii[1];
    const double dx = (static_cast<double>(x) - center[2]) / radii[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

// Per-class mean intensity for (T1, T1CE, T2, FLAIR): ET bright in T1CE,
// NCR/NET dark in T1CE, ED bright in FLAIR, matching the qualitative
// appearance of the four sequences.
constexpr double kBrainIntensity[4] = {0.55, 0.50, 0.45, 0.40};
constexpr double kNcrNetIntensity[4] = {0.35, 0.22, 0.60, 0.58};
constexpr double kEdIntensity[4] = {0.45, 0.45, 0.72, 0.88};
constexpr double kEtIntensity[4] = {0.52, 0.90, 0.58, 0.55};

}  // namespace

std::pair<Volume, LabelMask> generate_synthetic(std::uint64_t seed,
                                                const std::array<std::int64_t, 3>& dims,
                                                double difficulty) {
  for (auto e : dims) {
    if (e < 16) {
      throw std::invalid_argument("generate_synthetic: every dim must be >= 16, got " +
                                  std::to_string(e));
    }
  }
  Rng rng(seed);
  Volume vol;
  vol.d = dims[0];
  vol.h = dims[1];
  vol.w = dims[2];
  vol.id = "synth_" + std::to_string(seed);
  vol.voxels.assign(static_cast<std::size_t>(kModalities * vol.grid_size()), 0.0);
  LabelMask mask;
  mask.d = vol.d;
  mask.h = vol.h;
  mask.w = vol.w;
  mask.labels.assign(static_cast<std::size_t>(vol.grid_size()), 0);

  Ellipsoid brain;
  for (int i = 0; i < 3; ++i) {
    brain.center[static_cast<std::size_t>(i)] =
        0.5 * static_cast<double>(dims[static_cast<std::size_t>(i)] - 1);
    brain.radii[static_cast<std::size_t>(i)] =
        (0.42 + rng.uniform(-0.02, 0.02)) * static_cast<double>(dims[static_cast<std::size_t>(i)]);
  }

  Ellipsoid wt, tc, et;
  for (int i = 0; i < 3; ++i) {
    const auto di = static_cast<double>(dims[static_cast<std::size_t>(i)]);
    double r_wt = std::max(4.2, rng.uniform(0.16, 0.24) * di);
    double r_tc = std::max(3.0, r_wt * rng.uniform(0.55, 0.70));
    double r_et = std::max(1.8, r_tc * rng.uniform(0.50, 0.65));
    // Radius gaps >= 1.2 voxels on every axis keep each nested shell
    // nonempty, so WT > TC > ET > 0 as voxel counts.
    r_tc = std::max(r_tc, r_et + 1.2);
    r_wt = std::max(r_wt, r_tc + 1.2);
    wt.radii[static_cast<std::size_t>(i)] = r_wt;
    tc.radii[static_cast<std::size_t>(i)] = r_tc;
    et.radii[static_cast<std::size_t>(i)] = r_et;
    const double room = brain.radii[static_cast<std::size_t>(i)] - r_wt - 1.0;
    const double offset = room > 0.0 ? rng.uniform(-room, room) : 0.0;
    wt.center[static_cast<std::size_t>(i)] = brain.center[static_cast<std::size_t>(i)] + offset;
  }
  tc.center = wt.center;
  et.center = wt.center;

  const double sigma = 0.06 * difficulty;
  const std::int64_t grid = vol.grid_size();
  for (std::int64_t z = 0; z < vol.d; ++z) {
    for (std::int64_t y = 0; y < vol.h; ++y) {
      for (std::int64_t x = 0; x < vol.w; ++x) {
        const bool in_brain = brain.contains(z, y, x);
        std::uint8_t label = 0;
        const double* profile = nullptr;
        if (in_brain) {
          if (et.contains(z, y, x)) {
            label = 4;
            profile = kEtIntensity;
          } else if (tc.contains(z, y, x)) {
            label = 1;
            profile = kNcrNetIntensity;
          } else if (wt.contains(z, y, x)) {
            label = 2;
            profile = kEdIntensity;
          } else {
            profile = kBrainIntensity;
          }
        }
        mask.at(z, y, x) = label;
        const std::int64_t voxel = (z * vol.h + y) * vol.w + x;
        for (std::int64_t c = 0; c < kModalities; ++c) {
          double v = 0.0;
          if (profile) {
            v = profile[c];
            if (sigma > 0.0) v += rng.normal(0.0, sigma);
          }
          // Quantized through f32 so the CRSV round trip is bit-identical.
          vol.voxels[static_cast<std::size_t>(c * grid + voxel)] =
              static_cast<real>(static_cast<float>(v));
        }
      }
    }
  }
  return {std::move(vol), std::move(mask)};
}

}  // namespace crswin
