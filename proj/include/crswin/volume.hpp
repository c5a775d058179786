#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "crswin/tensor.hpp"

namespace crswin {

// File-format failures, each subclass distinct so callers can map them to
// exit codes and tests can assert the exact failure kind.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class FormatError : public IoError {
 public:
  using IoError::IoError;
};
class UnsupportedDatatypeError : public IoError {
 public:
  using IoError::IoError;
};
class TruncatedDataError : public IoError {
 public:
  using IoError::IoError;
};

class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::int64_t kModalities = 4;  // T1, T1CE, T2, FLAIR
inline constexpr std::int64_t kClasses = 4;     // BG, NCR/NET, ED, ET

// Multi-modal image on a (D,H,W) grid, channel-major storage, W fastest.
struct Volume {
  std::int64_t d = 0, h = 0, w = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};  // mm per (D,H,W) step
  std::string id;
  std::vector<real> voxels;  // kModalities * d*h*w

  std::int64_t grid_size() const { return d * h * w; }
  real& at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[static_cast<std::size_t>(((c * d + z) * h + y) * w + x)];
  }
  real at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>(((c * d + z) * h + y) * w + x)];
  }
};

// Voxel labels on the same grid. External alphabet {0,1,2,4}, internal
// {0,1,2,3}; remap_labels converts between them.
struct LabelMask {
  std::int64_t d = 0, h = 0, w = 0;
  std::vector<std::uint8_t> labels;  // d*h*w, W fastest

  std::int64_t grid_size() const { return d * h * w; }
  std::uint8_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return labels[static_cast<std::size_t>((z * h + y) * w + x)];
  }
  std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return labels[static_cast<std::size_t>((z * h + y) * w + x)];
  }
  std::int64_t count(std::uint8_t label) const;
};

// One scalar channel as stored in a NIfTI file.
struct ScalarField {
  std::int64_t d = 0, h = 0, w = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<real> values;  // d*h*w, W fastest (file x-axis)
};

// Uncompressed single-file NIfTI-1, datatypes uint8/int16/int32/float32/
// float64, either endianness. scl_slope/inter applied when slope is nonzero.
ScalarField read_nifti(const std::filesystem::path& path);
ScalarField parse_nifti(const std::vector<std::uint8_t>& bytes);

// CRSV raw container; read(write(v, m)) is bit-identical. A volume with
// zero channels carries only the label mask.
void write_raw(const Volume& volume, const LabelMask& mask, const std::filesystem::path& path);
std::pair<Volume, LabelMask> read_raw(const std::filesystem::path& path);
std::pair<Volume, LabelMask> parse_raw(const std::vector<std::uint8_t>& bytes);

enum class LabelMap { external_to_internal, internal_to_external };
LabelMask remap_labels(const LabelMask& mask, LabelMap direction);

// Deterministic labeled phantom: a brain ellipsoid holding nested tumor
// ellipsoids ET within TC within WT, with per-modality class intensities and
// Gaussian noise scaled by `difficulty`. Mask uses external labels {0,1,2,4}.
std::pair<Volume, LabelMask> generate_synthetic(std::uint64_t seed,
                                                const std::array<std::int64_t, 3>& dims,
                                                double difficulty = 0.5);

}  // namespace crswin
