#pragma once

// Rigid poses, pose sampling, and pelvic sagittal inclination (PSI).
//
// A pose moves the anatomy while the camera stays fixed:
//   p' = Rz * Ry * Rx * (p - pivot) + pivot + translation
// i.e. extrinsic rotations about the world X, then Y, then Z axes.

#include <Eigen/Geometry>

#include "psidrr/random.hpp"

namespace psidrr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rz * Ry * Rx for angles in degrees.
Mat3 rotation_from_euler_deg(const Vec3& euler_deg);

struct RigidTransform {
  Vec3 euler_deg = Vec3::Zero();
  Vec3 translation_mm = Vec3::Zero();
  Vec3 pivot_mm = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Mat3 rotation() const { return rotation_from_euler_deg(euler_deg); }
  Vec3 apply(const Vec3& p) const;
  Vec3 apply_inverse(const Vec3& p) const;
  /// The same map as apply(), in affine form.
  Eigen::Isometry3d isometry() const;

  bool operator==(const RigidTransform& o) const {
    return euler_deg == o.euler_deg && translation_mm == o.translation_mm && pivot_mm == o.pivot_mm;
  }
};

inline Vec3 apply_transform(const RigidTransform& t, const Vec3& p) { return t.apply(p); }
inline Eigen::Isometry3d inverse(const RigidTransform& t) { return t.isometry().inverse(); }

/// Half-ranges of the uniform pose distribution.
struct TransformBounds {
  double rot_x_deg = 0.0;
  double rot_y_deg = 0.0;
  double rot_z_deg = 0.0;
  double trans_mm = 0.0;

  void validate() const;
  bool operator==(const TransformBounds&) const = default;
};

/// Segmentation training poses: +-15 deg about every axis, +-20 mm.
inline constexpr TransformBounds kSegmentationBounds{15.0, 15.0, 15.0, 20.0};
/// Regression training poses: +-15 deg about the lateral axis, +-5 deg about
/// the other two, +-20 mm.
inline constexpr TransformBounds kRegressionBounds{15.0, 5.0, 5.0, 20.0};

/// Draws rx, ry, rz, tx, ty, tz (in that order), each uniform in its range.
RigidTransform sample_transform(RandomStream& stream, const TransformBounds& bounds,
                                const Vec3& pivot_mm = Vec3::Zero());

struct LandmarkSet {
  Vec3 asis_left = Vec3::Zero();
  Vec3 asis_right = Vec3::Zero();
  Vec3 pt_left = Vec3::Zero();
  Vec3 pt_right = Vec3::Zero();

  LandmarkSet transformed(const RigidTransform& t) const;
  bool operator==(const LandmarkSet&) const = default;
};

struct Plane {
  Vec3 point;
  Vec3 normal;  // unit length
};

/// Anterior pelvic plane through both ASIS and the pubic tubercle midpoint.
///
/// The normal is (asis_left - asis_right) x (pt_mid - asis_mid), normalized,
/// which points anteriorly (+y) for an upright, unrotated pelvis.
/// Throws DegenerateLandmarks when the three points are (nearly) collinear.
Plane fit_app_plane(const LandmarkSet& landmarks);

/// Signed sagittal tilt in degrees, in (-180, 180].
struct PsiAngle {
  double degrees = 0.0;
};

/// atan2(n.z, n.y) of the APP normal; positive when the normal tilts superiorly.
PsiAngle compute_psi(const LandmarkSet& landmarks);

/// PSI of the landmarks after the patient has been posed by t.
PsiAngle psi_of_posed_patient(const LandmarkSet& landmarks, const RigidTransform& t);

}  // namespace psidrr
