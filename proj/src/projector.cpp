#include "psidrr/projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "psidrr/error.hpp"
#include "psidrr/parallel.hpp"

namespace psidrr {

namespace {

// A ray expressed in continuous voxel-index coordinates of the unposed
// volume: index(t) = base + t * dir, t in mm along the world ray.
struct IndexRay {
  Vec3 base;
  Vec3 dir;
  double t_begin = 0.0;
  double t_end = 0.0;
};

// Maps world rays of the fixed camera into the volume's index space.
class RayMapper {
 public:
  RayMapper(const GridGeometry& g, const RigidTransform& pose, const CameraModel& camera)
      : camera_(camera), pose_(pose) {
    inverse_rotation_ = pose.rotation().transpose();
    for (int a = 0; a < 3; ++a) {
      origin_[a] = g.origin[a];
      inv_spacing_[a] = 1.0 / g.spacing[a];
      upper_[a] = static_cast<double>(g.dims[a]);
    }
    source_index_ = to_index(camera.source());
  }

  // Returns false when the ray misses the interpolation support entirely.
  bool ray(int u, int v, IndexRay& out) const {
    const Vec3 source = camera_.source();
    const Vec3 target = camera_.pixel_center(u, v);
    const Vec3 delta = target - source;
    const double length = delta.norm();
    const Vec3 dir_world = delta / length;

    out.base = source_index_;
    out.dir = (inverse_rotation_ * dir_world).cwiseProduct(inv_spacing_);

    // Trilinear support of the grid is the open box (-1, n) per axis.
    double t0 = 0.0;
    double t1 = length;
    for (int a = 0; a < 3; ++a) {
      const double b = out.dir[a];
      const double p = out.base[a];
      if (std::abs(b) < 1e-15) {
        if (p <= -1.0 || p >= upper_[a]) return false;
        continue;
      }
      double lo = (-1.0 - p) / b;
      double hi = (upper_[a] - p) / b;
      if (lo > hi) std::swap(lo, hi);
      t0 = std::max(t0, lo);
      t1 = std::min(t1, hi);
    }
    if (!(t1 > t0)) return false;
    out.t_begin = t0;
    out.t_end = t1;
    return true;
  }

 private:
  Vec3 to_index(const Vec3& world) const {
    const Vec3 unposed = pose_.apply_inverse(world);
    return (unposed - origin_).cwiseProduct(inv_spacing_);
  }

  const CameraModel& camera_;
  const RigidTransform& pose_;
  Mat3 inverse_rotation_;
  Vec3 origin_;
  Vec3 inv_spacing_;
  Vec3 upper_;
  Vec3 source_index_;
};

template <class T>
double sample_trilinear(const Volume3<T>& vol, const Vec3& idx) {
  const int nx = vol.geometry.dims[0];
  const int ny = vol.geometry.dims[1];
  const int nz = vol.geometry.dims[2];
  const double fx = std::floor(idx.x());
  const double fy = std::floor(idx.y());
  const double fz = std::floor(idx.z());
  const int i = static_cast<int>(fx);
  const int j = static_cast<int>(fy);
  const int k = static_cast<int>(fz);
  const double wx = idx.x() - fx;
  const double wy = idx.y() - fy;
  const double wz = idx.z() - fz;

  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(nx);
  const std::size_t sz = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);

  if (i >= 0 && j >= 0 && k >= 0 && i + 1 < nx && j + 1 < ny && k + 1 < nz) {
    const T* p = vol.data.data() + vol.index(i, j, k);
    const double c00 = p[0] + wx * (double(p[sx]) - p[0]);
    const double c10 = p[sy] + wx * (double(p[sy + sx]) - p[sy]);
    const double c01 = p[sz] + wx * (double(p[sz + sx]) - p[sz]);
    const double c11 = p[sz + sy] + wx * (double(p[sz + sy + sx]) - p[sz + sy]);
    const double c0 = c00 + wy * (c10 - c00);
    const double c1 = c01 + wy * (c11 - c01);
    return c0 + wz * (c1 - c0);
  }

  // Border: neighbours outside the grid read as zero.
  double sum = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const int kk = k + dz;
    if (kk < 0 || kk >= nz) continue;
    const double w_z = dz ? wz : 1.0 - wz;
    for (int dy = 0; dy < 2; ++dy) {
      const int jj = j + dy;
      if (jj < 0 || jj >= ny) continue;
      const double w_y = dy ? wy : 1.0 - wy;
      for (int dx = 0; dx < 2; ++dx) {
        const int ii = i + dx;
        if (ii < 0 || ii >= nx) continue;
        const double w_x = dx ? wx : 1.0 - wx;
        sum += w_x * w_y * w_z * double(vol.at(ii, jj, kk));
      }
    }
  }
  return sum;
}

std::size_t sample_count(const IndexRay& ray, double step) {
  return static_cast<std::size_t>(std::ceil((ray.t_end - ray.t_begin) / step));
}

double integrate_ray(const AttenuationVolume& vol, const IndexRay& ray, double step) {
  const std::size_t n = sample_count(ray, step);
  double sum = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double t = ray.t_begin + (static_cast<double>(s) + 0.5) * step;
    sum += sample_trilinear(vol, ray.base + t * ray.dir);
  }
  return sum * step;
}

bool ray_hits_mask(const MaskVolume& mask, const IndexRay& ray, double step, double threshold) {
  const std::size_t n = sample_count(ray, step);
  bool hit = false;
  for (std::size_t s = 0; s < n; ++s) {
    const double t = ray.t_begin + (static_cast<double>(s) + 0.5) * step;
    hit |= sample_trilinear(mask, ray.base + t * ray.dir) > threshold;
  }
  return hit;
}

// One march producing both outputs; bitwise equal to the two separate passes.
void march_pair(const VolumePair& vp, const IndexRay& ray, double step, double threshold, double& integral,
                bool& hit) {
  const std::size_t n = sample_count(ray, step);
  double sum = 0.0;
  hit = false;
  for (std::size_t s = 0; s < n; ++s) {
    const double t = ray.t_begin + (static_cast<double>(s) + 0.5) * step;
    const Vec3 idx = ray.base + t * ray.dir;
    sum += sample_trilinear(vp.attenuation, idx);
    hit |= sample_trilinear(vp.mask, idx) > threshold;
  }
  integral = sum * step;
}

void normalize_image(IntensityImage& img) {
  const float peak = *std::max_element(img.data.begin(), img.data.end());
  if (peak > 0.0f) {
    for (float& p : img.data) p /= peak;
  }
}

RenderedPair render_pair(const VolumePair& vp, const RigidTransform& pose, const CameraModel& camera,
                         const RenderSettings& settings) {
  validate(vp.attenuation);
  validate(vp.mask);
  const int nu = camera.detector_pixels[0];
  const int nv = camera.detector_pixels[1];
  const double step = settings.resolved_step(vp.attenuation.geometry);
  const RayMapper mapper(vp.attenuation.geometry, pose, camera);

  RenderedPair out{IntensityImage(nu, nv, camera.detector_pixel_mm, 0.0f), MaskImage(nu, nv, camera.detector_pixel_mm, 0)};
  IndexRay ray;
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      if (!mapper.ray(u, v, ray)) continue;
      double integral = 0.0;
      bool hit = false;
      march_pair(vp, ray, step, settings.mask_threshold, integral, hit);
      out.drr.at(u, v) = static_cast<float>(integral);
      out.mask.at(u, v) = hit ? 1 : 0;
    }
  }
  if (settings.normalize) normalize_image(out.drr);
  return out;
}

}  // namespace

void CameraModel::validate() const {
  if (!(source_to_isocenter_mm > 0.0) || !(source_to_detector_mm > source_to_isocenter_mm) ||
      !std::isfinite(source_to_detector_mm)) {
    throw InvalidArgument("camera requires 0 < source_to_isocenter_mm < source_to_detector_mm");
  }
  if (detector_pixels[0] < 1 || detector_pixels[1] < 1) throw InvalidArgument("detector needs at least 1x1 pixels");
  for (const double s : detector_pixel_mm) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("detector pixel size must be > 0");
  }
}

Vec3 CameraModel::pixel_center(int u, int v) const {
  const double x = (u - 0.5 * (detector_pixels[0] - 1)) * detector_pixel_mm[0];
  const double z = (v - 0.5 * (detector_pixels[1] - 1)) * detector_pixel_mm[1];
  return {x, -(source_to_detector_mm - source_to_isocenter_mm), z};
}

void to_json(nlohmann::json& j, const CameraModel& cam) {
  j = nlohmann::json{{"source_to_detector_mm", cam.source_to_detector_mm},
                     {"source_to_isocenter_mm", cam.source_to_isocenter_mm},
                     {"detector_pixels", cam.detector_pixels},
                     {"detector_pixel_mm", cam.detector_pixel_mm}};
}

void from_json(const nlohmann::json& j, CameraModel& cam) {
  CameraModel c;
  if (j.contains("source_to_detector_mm")) j.at("source_to_detector_mm").get_to(c.source_to_detector_mm);
  if (j.contains("source_to_isocenter_mm")) j.at("source_to_isocenter_mm").get_to(c.source_to_isocenter_mm);
  if (j.contains("detector_pixels")) j.at("detector_pixels").get_to(c.detector_pixels);
  if (j.contains("detector_pixel_mm")) j.at("detector_pixel_mm").get_to(c.detector_pixel_mm);
  cam = c;
}

void RenderSettings::validate() const {
  if (step_mm && (!(*step_mm > 0.0) || !std::isfinite(*step_mm))) throw InvalidArgument("step_mm must be > 0");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw InvalidArgument("mask_threshold must be in (0, 1)");
}

double RenderSettings::resolved_step(const GridGeometry& g) const {
  if (step_mm) return *step_mm;
  return 0.5 * std::min({g.spacing[0], g.spacing[1], g.spacing[2]});
}

void to_json(nlohmann::json& j, const RenderSettings& s) {
  j = nlohmann::json{{"mask_threshold", s.mask_threshold}, {"normalize", s.normalize}};
  j["step_mm"] = s.step_mm ? nlohmann::json(*s.step_mm) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RenderSettings& s) {
  RenderSettings r;
  if (j.contains("step_mm") && !j.at("step_mm").is_null()) r.step_mm = j.at("step_mm").get<double>();
  if (j.contains("mask_threshold")) j.at("mask_threshold").get_to(r.mask_threshold);
  if (j.contains("normalize")) j.at("normalize").get_to(r.normalize);
  s = r;
}

IntensityImage render_drr(const AttenuationVolume& volume, const RigidTransform& pose, const CameraModel& camera,
                          const RenderSettings& settings, unsigned threads) {
  camera.validate();
  settings.validate();
  validate(volume);

  const int nu = camera.detector_pixels[0];
  const int nv = camera.detector_pixels[1];
  const double step = settings.resolved_step(volume.geometry);
  const RayMapper mapper(volume.geometry, pose, camera);

  IntensityImage img(nu, nv, camera.detector_pixel_mm, 0.0f);
  parallel_for(static_cast<std::size_t>(nv), threads, [&](std::size_t row) {
    const int v = static_cast<int>(row);
    IndexRay ray;
    for (int u = 0; u < nu; ++u) {
      if (mapper.ray(u, v, ray)) img.at(u, v) = static_cast<float>(integrate_ray(volume, ray, step));
    }
  });

  if (settings.normalize) normalize_image(img);
  return img;
}

MaskImage project_mask(const MaskVolume& mask, const RigidTransform& pose, const CameraModel& camera,
                       const RenderSettings& settings, unsigned threads) {
  camera.validate();
  settings.validate();
  validate(mask);

  const int nu = camera.detector_pixels[0];
  const int nv = camera.detector_pixels[1];
  const double step = settings.resolved_step(mask.geometry);
  const RayMapper mapper(mask.geometry, pose, camera);

  MaskImage img(nu, nv, camera.detector_pixel_mm, 0);
  parallel_for(static_cast<std::size_t>(nv), threads, [&](std::size_t row) {
    const int v = static_cast<int>(row);
    IndexRay ray;
    for (int u = 0; u < nu; ++u) {
      if (mapper.ray(u, v, ray) && ray_hits_mask(mask, ray, step, settings.mask_threshold)) img.at(u, v) = 1;
    }
  });
  return img;
}

std::vector<RenderedPair> render_batch(std::span<const VolumePair> volumes, std::span<const RenderJob> jobs,
                                       const CameraModel& camera, const RenderSettings& settings,
                                       unsigned threads) {
  camera.validate();
  settings.validate();
  std::vector<RenderedPair> out(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    try {
      const RenderJob& job = jobs[i];
      if (job.volume >= volumes.size()) throw InvalidArgument("unknown volume index " + std::to_string(job.volume));
      const VolumePair& vp = volumes[job.volume];
      if (vp.attenuation.geometry == vp.mask.geometry) {
        out[i] = render_pair(vp, job.pose, camera, settings);
      } else {
        out[i].drr = render_drr(vp.attenuation, job.pose, camera, settings, 1);
        out[i].mask = project_mask(vp.mask, job.pose, camera, settings, 1);
      }
    } catch (const std::exception& e) {
      throw BatchError(i, e.what());
    }
  });
  return out;
}

}  // namespace psidrr
