#include "psidrr/phantom.hpp"

#include <cmath>
#include <vector>

#include "psidrr/error.hpp"
#include "psidrr/random.hpp"

namespace psidrr {

namespace {

struct Ellipsoid {
  Vec3 center;
  Vec3 semi_axes;

  bool contains(const Vec3& p) const { return ((p - center).cwiseQuotient(semi_axes)).squaredNorm() <= 1.0; }
  Vec3 anterior_pole() const { return center + Vec3(0.0, semi_axes.y(), 0.0); }
};

struct Box {
  Vec3 center;
  Vec3 half_extents;

  bool contains(const Vec3& p) const { return ((p - center).cwiseAbs() - half_extents).maxCoeff() <= 0.0; }
};

// Nominal anatomy (mm). ASIS and pubic tubercles share y = 45 at unit scale,
// so the neutral pelvis has a vertical anterior pelvic plane.
const Vec3 kWingCenter{75.0, 15.0, 30.0};
const Vec3 kWingSemi{28.0, 30.0, 55.0};
const Vec3 kPubisCenter{22.0, 32.0, -60.0};
const Vec3 kPubisSemi{22.0, 13.0, 14.0};
const Vec3 kIschiumCenter{45.0, 5.0, -55.0};
const Vec3 kIschiumSemi{14.0, 14.0, 30.0};
const Vec3 kSacrumCenter{0.0, -35.0, 15.0};
const Vec3 kSacrumHalf{28.0, 18.0, 45.0};
const Vec3 kBodySemi{120.0, 90.0, 125.0};

Vec3 mirror_x(Vec3 p) {
  p.x() = -p.x();
  return p;
}

struct Pelvis {
  std::vector<Ellipsoid> ellipsoids;
  Box sacrum;
  LandmarkSet landmarks;

  bool contains(const Vec3& p) const {
    if (sacrum.contains(p)) return true;
    for (const auto& e : ellipsoids) {
      if (e.contains(p)) return true;
    }
    return false;
  }
};

Pelvis build_pelvis(const PhantomSpec& spec) {
  RandomStream stream(spec.seed);
  auto factors = [&] {
    Vec3 f;
    for (int a = 0; a < 3; ++a) f[a] = stream.uniform(1.0 - spec.jitter, 1.0 + spec.jitter);
    return f;
  };
  const Vec3 wing_left = factors();
  const Vec3 wing_right = factors();
  const Vec3 pubis = factors();
  const Vec3 sacrum = factors();

  Pelvis p;
  const Ellipsoid wl{kWingCenter, kWingSemi.cwiseProduct(wing_left)};
  const Ellipsoid wr{mirror_x(kWingCenter), kWingSemi.cwiseProduct(wing_right)};
  const Ellipsoid pl{kPubisCenter, kPubisSemi.cwiseProduct(pubis)};
  const Ellipsoid pr{mirror_x(kPubisCenter), kPubisSemi.cwiseProduct(pubis)};
  const Ellipsoid il{kIschiumCenter, kIschiumSemi.cwiseProduct(pubis)};
  const Ellipsoid ir{mirror_x(kIschiumCenter), kIschiumSemi.cwiseProduct(pubis)};
  p.ellipsoids = {wl, wr, pl, pr, il, ir};
  p.sacrum = Box{kSacrumCenter, kSacrumHalf.cwiseProduct(sacrum)};
  p.landmarks = {wl.anterior_pole(), wr.anterior_pole(), pl.anterior_pole(), pr.anterior_pole()};
  return p;
}

bool inside_grid(const GridGeometry& g, const Vec3& p) {
  for (int a = 0; a < 3; ++a) {
    const double lo = g.origin[a];
    const double hi = g.origin[a] + (g.dims[a] - 1) * g.spacing[a];
    if (p[a] < lo || p[a] > hi) return false;
  }
  return true;
}

}  // namespace

void PhantomSpec::validate() const {
  GridGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  psidrr::validate(g);
  if (!(jitter >= 0.0 && jitter < 1.0)) throw InvalidArgument("phantom jitter must be in [0, 1)");
  if (!(soft_tissue >= 0.0) || !std::isfinite(soft_tissue)) throw InvalidArgument("soft tissue level must be >= 0");
  if (!(bone >= soft_tissue) || !std::isfinite(bone)) throw InvalidArgument("bone level must be >= soft tissue level");
}

Subject generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const GridGeometry grid = GridGeometry::centered(spec.dims, spec.spacing);
  const Pelvis pelvis = build_pelvis(spec);

  for (const Vec3* l : {&pelvis.landmarks.asis_left, &pelvis.landmarks.asis_right, &pelvis.landmarks.pt_left,
                        &pelvis.landmarks.pt_right}) {
    if (!inside_grid(grid, *l)) throw InvalidArgument("phantom landmark lies outside the volume");
  }

  Subject s;
  s.ct = AttenuationVolume(grid, 0.0f);
  s.mask = MaskVolume(grid, 0);
  s.landmarks = pelvis.landmarks;

  const auto [nx, ny, nz] = grid.dims;
  // Voxel centers are formed as (i - (n-1)/2) * s so that x -> -x is exact.
  auto coord = [&](int i, int axis) { return (i - 0.5 * (grid.dims[axis] - 1)) * grid.spacing[axis]; };
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec3 p(coord(i, 0), coord(j, 1), coord(k, 2));
        const std::size_t idx = s.ct.index(i, j, k);
        if (pelvis.contains(p)) {
          s.mask.data[idx] = 1;
          s.ct.data[idx] = static_cast<float>(spec.bone);
        } else if (p.cwiseQuotient(kBodySemi).squaredNorm() <= 1.0) {
          s.ct.data[idx] = static_cast<float>(spec.soft_tissue);
        }
      }
    }
  }
  return s;
}

}  // namespace psidrr
