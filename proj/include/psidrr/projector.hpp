#pragma once

// Cone-beam DRR rendering.
//
// Fixed camera: point source at (0, +SOD, 0) looking toward -y (anterior to
// posterior); flat detector in the plane y = -(SDD - SOD), centered on the
// y axis, with columns u along +x and rows v along +z. Pixel (u, v) has its
// center at x = (u - (nu-1)/2) * su, z = (v - (nv-1)/2) * sv.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "psidrr/geometry.hpp"
#include "psidrr/volume_io.hpp"

namespace psidrr {

struct CameraModel {
  double source_to_detector_mm = 1200.0;
  double source_to_isocenter_mm = 800.0;
  std::array<int, 2> detector_pixels{256, 256};         // (nu, nv)
  std::array<double, 2> detector_pixel_mm{1.5, 1.5};    // (su, sv)

  void validate() const;

  Vec3 source() const { return {0.0, source_to_isocenter_mm, 0.0}; }
  Vec3 pixel_center(int u, int v) const;
  /// SDD / SOD: scale of an object at the isocenter on the detector.
  double magnification() const { return source_to_detector_mm / source_to_isocenter_mm; }

  bool operator==(const CameraModel&) const = default;
};

void to_json(nlohmann::json& j, const CameraModel& cam);
void from_json(const nlohmann::json& j, CameraModel& cam);

struct RenderSettings {
  /// Ray-march step; unset means half the smallest voxel spacing.
  std::optional<double> step_mm;
  /// Interpolated mask samples above this count as inside.
  double mask_threshold = 0.5;
  /// Scale each DRR so its brightest pixel is 1.
  bool normalize = true;

  void validate() const;
  double resolved_step(const GridGeometry& g) const;
};

void to_json(nlohmann::json& j, const RenderSettings& s);
void from_json(const nlohmann::json& j, RenderSettings& s);

/// Line integral of trilinearly interpolated attenuation along each
/// source-to-pixel ray through the volume posed by `pose`.
///
/// Samples sit at the midpoints of fixed-length steps along the part of the
/// ray that overlaps the interpolation support; nothing adapts or terminates
/// early, so output is independent of `threads`.
IntensityImage render_drr(const AttenuationVolume& volume, const RigidTransform& pose, const CameraModel& camera,
                          const RenderSettings& settings, unsigned threads = 0);

/// 1 where any ray sample of the interpolated mask exceeds the threshold.
MaskImage project_mask(const MaskVolume& mask, const RigidTransform& pose, const CameraModel& camera,
                       const RenderSettings& settings, unsigned threads = 0);

struct VolumePair {
  AttenuationVolume attenuation;
  MaskVolume mask;
};

struct RenderJob {
  std::size_t volume = 0;  // index into the volume list
  RigidTransform pose;
};

struct RenderedPair {
  IntensityImage drr;
  MaskImage mask;
};

/// Renders every job (DRR and projected mask); output order matches input.
/// Failures surface as BatchError carrying the lowest failing job index.
std::vector<RenderedPair> render_batch(std::span<const VolumePair> volumes, std::span<const RenderJob> jobs,
                                       const CameraModel& camera, const RenderSettings& settings,
                                       unsigned threads = 0);

}  // namespace psidrr
