#include "psidrr/geometry.hpp"

#include <cmath>
#include <numbers>

#include "psidrr/error.hpp"

namespace psidrr {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Relative tolerance on |a x b| / (|a||b|) below which the APP is degenerate.
constexpr double kCollinearTolerance = 1e-9;

}  // namespace

Mat3 rotation_from_euler_deg(const Vec3& euler_deg) {
  const double cx = std::cos(euler_deg.x() * kDegToRad), sx = std::sin(euler_deg.x() * kDegToRad);
  const double cy = std::cos(euler_deg.y() * kDegToRad), sy = std::sin(euler_deg.y() * kDegToRad);
  const double cz = std::cos(euler_deg.z() * kDegToRad), sz = std::sin(euler_deg.z() * kDegToRad);

  Mat3 rx, ry, rz;
  rx << 1, 0, 0,
        0, cx, -sx,
        0, sx, cx;
  ry << cy, 0, sy,
        0, 1, 0,
        -sy, 0, cy;
  rz << cz, -sz, 0,
        sz, cz, 0,
        0, 0, 1;
  return rz * ry * rx;
}

Vec3 RigidTransform::apply(const Vec3& p) const {
  return rotation() * (p - pivot_mm) + pivot_mm + translation_mm;
}

Vec3 RigidTransform::apply_inverse(const Vec3& p) const {
  return rotation().transpose() * (p - pivot_mm - translation_mm) + pivot_mm;
}

Eigen::Isometry3d RigidTransform::isometry() const {
  const Mat3 r = rotation();
  Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
  iso.linear() = r;
  iso.translation() = pivot_mm + translation_mm - r * pivot_mm;
  return iso;
}

void TransformBounds::validate() const {
  for (const double b : {rot_x_deg, rot_y_deg, rot_z_deg, trans_mm}) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw InvalidArgument("transform bounds must be finite and >= 0");
  }
}

RigidTransform sample_transform(RandomStream& stream, const TransformBounds& bounds, const Vec3& pivot_mm) {
  bounds.validate();
  RigidTransform t;
  t.pivot_mm = pivot_mm;
  auto draw = [&stream](double half) { return stream.uniform(-half, half); };
  t.euler_deg.x() = draw(bounds.rot_x_deg);
  t.euler_deg.y() = draw(bounds.rot_y_deg);
  t.euler_deg.z() = draw(bounds.rot_z_deg);
  for (int a = 0; a < 3; ++a) t.translation_mm[a] = draw(bounds.trans_mm);
  return t;
}

LandmarkSet LandmarkSet::transformed(const RigidTransform& t) const {
  return {t.apply(asis_left), t.apply(asis_right), t.apply(pt_left), t.apply(pt_right)};
}

Plane fit_app_plane(const LandmarkSet& l) {
  const Vec3 asis_mid = 0.5 * (l.asis_left + l.asis_right);
  const Vec3 pt_mid = 0.5 * (l.pt_left + l.pt_right);
  const Vec3 lateral = l.asis_left - l.asis_right;
  const Vec3 descent = pt_mid - asis_mid;

  const double scale = lateral.norm() * descent.norm();
  const Vec3 n = lateral.cross(descent);
  const double n_norm = n.norm();
  if (!(scale > 0.0) || !(n_norm > kCollinearTolerance * scale)) {
    throw DegenerateLandmarks("ASIS left/right and pubic tubercle midpoint are collinear");
  }
  return {asis_mid, n / n_norm};
}

PsiAngle compute_psi(const LandmarkSet& landmarks) {
  const Vec3 n = fit_app_plane(landmarks).normal;
  double deg = std::atan2(n.z(), n.y()) * kRadToDeg;
  if (deg <= -180.0) deg += 360.0;
  return {deg};
}

PsiAngle psi_of_posed_patient(const LandmarkSet& landmarks, const RigidTransform& t) {
  return compute_psi(landmarks.transformed(t));
}

}  // namespace psidrr
