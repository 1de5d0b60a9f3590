#pragma once

// Procedural pelvis phantoms: a union of ellipsoids (iliac wings, pubic
// bodies, ischia) and a box (sacrum) inside a soft-tissue body ellipsoid,
// with ASIS and pubic tubercles at the anterior poles of their primitives.

#include <array>
#include <cstdint>

#include "psidrr/subject.hpp"

namespace psidrr {

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::array<int, 3> dims{128, 128, 128};
  std::array<double, 3> spacing{2.0, 2.0, 2.0};
  /// Per-axis primitive scale factors are drawn uniformly from [1 - jitter, 1 + jitter].
  double jitter = 0.15;
  double soft_tissue = 0.02;  // 1/mm
  double bone = 0.06;         // 1/mm

  void validate() const;
};

/// Deterministic in spec; the grid is centered on the world origin.
/// Throws InvalidArgument if a landmark falls outside the grid.
Subject generate_phantom(const PhantomSpec& spec);

}  // namespace psidrr
