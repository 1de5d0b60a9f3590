#pragma once

// Volumes and images, and their on-disk formats.
//
// World frame: +x toward the patient's left, +y anterior, +z superior, in mm.
// Voxel (i, j, k) has its center at origin + (i*sx, j*sy, k*sz); data is
// stored x-fastest. Images are row-major, row index v, column index u.
//
// Volume files: MetaImage-style text header (.mhd) plus a separate
// little-endian raw payload. Image files: raw payload (.f32 or .u8) plus a
// JSON sidecar with the same stem; masks can also be written as binary PGM.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace psidrr {

namespace fs = std::filesystem;

enum class ElementKind { attenuation_f32, mask_u8 };

std::string_view to_string(ElementKind kind);

struct GridGeometry {
  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  /// World position of the grid's geometric center.
  std::array<double, 3> center() const;

  /// Grid centered on the world origin.
  static GridGeometry centered(std::array<int, 3> dims, std::array<double, 3> spacing);

  bool operator==(const GridGeometry&) const = default;
};

template <class T>
struct Volume3 {
  GridGeometry geometry;
  std::vector<T> data;

  Volume3() = default;
  explicit Volume3(const GridGeometry& g, T fill = T{}) : geometry(g), data(g.voxel_count(), fill) {}

  std::size_t index(int i, int j, int k) const {
    const auto nx = static_cast<std::size_t>(geometry.dims[0]);
    const auto ny = static_cast<std::size_t>(geometry.dims[1]);
    return static_cast<std::size_t>(i) + nx * (static_cast<std::size_t>(j) + ny * static_cast<std::size_t>(k));
  }
  T& at(int i, int j, int k) { return data[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[index(i, j, k)]; }
};

using AttenuationVolume = Volume3<float>;
using MaskVolume = Volume3<std::uint8_t>;
using AnyVolume = std::variant<AttenuationVolume, MaskVolume>;

template <class T>
struct Image2 {
  int width = 0;
  int height = 0;
  std::array<double, 2> pixel_spacing{1.0, 1.0};
  std::vector<T> data;

  Image2() = default;
  Image2(int w, int h, std::array<double, 2> spacing, T fill = T{})
      : width(w), height(h), pixel_spacing(spacing),
        data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  T& at(int u, int v) { return data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)]; }
  const T& at(int u, int v) const {
    return data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)];
  }
};

using IntensityImage = Image2<float>;
using MaskImage = Image2<std::uint8_t>;
using AnyImage = std::variant<IntensityImage, MaskImage>;

// Invariant checks; throw InvalidArgument.
void validate(const GridGeometry& g);
void validate(const AttenuationVolume& v);
void validate(const MaskVolume& v);
void validate(const IntensityImage& img);
void validate(const MaskImage& img);

AnyVolume read_volume(const fs::path& header_path);
AttenuationVolume read_attenuation_volume(const fs::path& header_path);
MaskVolume read_mask_volume(const fs::path& header_path);

/// Writes `header_path` and a raw payload next to it (same stem, ".raw").
void write_volume(const AttenuationVolume& v, const fs::path& header_path);
void write_volume(const MaskVolume& v, const fs::path& header_path);

/// Sidecar metadata path for an image payload: same stem, ".json".
fs::path sidecar_path(const fs::path& payload_path);

AnyImage read_image(const fs::path& payload_path);
IntensityImage read_intensity_image(const fs::path& payload_path);
MaskImage read_mask_image(const fs::path& payload_path);
void write_image(const IntensityImage& img, const fs::path& payload_path);
void write_image(const MaskImage& img, const fs::path& payload_path);

/// Binary PGM (P5, maxval 255); mask pixels map to 0/255.
void write_pgm(const MaskImage& img, const fs::path& path);
/// PGM carries no spacing, so it is supplied by the caller.
MaskImage read_pgm(const fs::path& path, std::array<double, 2> pixel_spacing = {1.0, 1.0});

}  // namespace psidrr
