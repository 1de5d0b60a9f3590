// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Oracles here are independent of the library code they check.
#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "psidrr/cli.hpp"
#include "psidrr/dataset.hpp"
#include "psidrr/metrics.hpp"
#include "psidrr/projector.hpp"
#include "psidrr/random.hpp"
#include "psidrr/subject.hpp"
#include "test_support.hpp"

using namespace psidrr;
using psidrr::testing::slurp;
using psidrr::testing::spit;
using psidrr::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what + "; ";
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "psidrr");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "  cli failed: %s", err.str().c_str());
  return code;
}

// ---------------------------------------------------------------------------

LandmarkSet random_landmarks(RandomStream& s) {
  auto jitter = [&](double x, double y, double z) {
    return Vec3(x + s.uniform(-20, 20), y + s.uniform(-20, 20), z + s.uniform(-20, 20));
  };
  return {jitter(110, 40, 30), jitter(-110, 40, 30), jitter(25, 45, -70), jitter(-25, 45, -70)};
}

double wrap180(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

Outcome psi_equivariance() {
  Outcome o;
  const auto t0 = Clock::now();
  RandomStream s(2024);
  double worst_rot = 0.0, worst_trans = 0.0;
  for (int set = 0; set < 100; ++set) {
    const LandmarkSet l = random_landmarks(s);
    const double base = compute_psi(l).degrees;
    for (int i = 0; i < 50; ++i) {
      const double theta = s.uniform(-30.0, 30.0);
      const Eigen::Matrix3d r = Eigen::AngleAxisd(theta * kDeg, Eigen::Vector3d::UnitX()).toRotationMatrix();
      const LandmarkSet rl{r * l.asis_left, r * l.asis_right, r * l.pt_left, r * l.pt_right};
      worst_rot = std::max(worst_rot, std::abs(wrap180(compute_psi(rl).degrees - base - theta)));

      const Vec3 t(s.uniform(-500, 500), s.uniform(-500, 500), s.uniform(-500, 500));
      const LandmarkSet tl{l.asis_left + t, l.asis_right + t, l.pt_left + t, l.pt_right + t};
      worst_trans = std::max(worst_trans, std::abs(compute_psi(tl).degrees - base));
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst_rot <= 1e-6, "rotation error above 1e-6 deg");
  o.require(worst_trans <= 1e-12, "translation changed PSI by more than 1e-12 deg");
  o.require(secs < 1.0, "runtime not under 1 s");
  o.detail += fmt("max rot err %.2e deg, max trans err %.2e deg, %.3f s", worst_rot, worst_trans, secs);
  return o;
}

// ---------------------------------------------------------------------------

double fwhm(const std::vector<double>& p) {
  const double half = 0.5 * *std::max_element(p.begin(), p.end());
  std::size_t l = 0;
  while (p[l + 1] < half) ++l;
  std::size_t r = p.size() - 1;
  while (p[r - 1] < half) --r;
  const double left = l + (half - p[l]) / (p[l + 1] - p[l]);
  const double right = (r - 1) + (p[r - 1] - half) / (p[r - 1] - p[r]);
  return right - left;
}

double chord_through_box(const Vec3& a, const Vec3& b, double h) {
  const Vec3 d = b - a;
  double t0 = 0.0, t1 = 1.0;
  for (int i = 0; i < 3; ++i) {
    double lo = (-h - a[i]) / d[i];
    double hi = (h - a[i]) / d[i];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t1 > t0 ? (t1 - t0) * d.norm() : 0.0;
}

Outcome magnification() {
  Outcome o;
  const auto t0 = Clock::now();
  const CameraModel cam;
  RenderSettings raw;
  raw.normalize = false;
  const auto img = render_drr(AttenuationVolume(GridGeometry::centered({50, 50, 50}, {2, 2, 2}), 1.0f), {}, cam, raw);

  std::vector<double> row(256), col(256);
  for (int i = 0; i < 256; ++i) {
    row[i] = img.at(i, 128);
    col[i] = img.at(128, i);
  }
  const double wu = fwhm(row) * cam.detector_pixel_mm[0];
  const double wv = fwhm(col) * cam.detector_pixel_mm[1];
  o.require(std::abs(wu - 150.0) <= 0.005 * 150.0, "u silhouette outside 0.5%");
  o.require(std::abs(wv - 150.0) <= 0.005 * 150.0, "v silhouette outside 0.5%");

  // Every ray that crosses front and back faces at least one voxel inside the
  // side faces; closer to an edge the one-voxel interpolation ramp of the side
  // face is part of the path.
  double worst_chord = 0.0;
  int rays = 0;
  const Vec3 src = cam.source();
  for (int v = 0; v < 256; ++v) {
    for (int u = 0; u < 256; ++u) {
      const Vec3 px = cam.pixel_center(u, v);
      const Vec3 front = src + (src.y() - 50.0) / (src.y() - px.y()) * (px - src);
      const Vec3 back = src + (src.y() + 50.0) / (src.y() - px.y()) * (px - src);
      if (std::max({std::abs(front.x()), std::abs(front.z()), std::abs(back.x()), std::abs(back.z())}) > 48.0) continue;
      const double chord = chord_through_box(src, px, 50.0);
      worst_chord = std::max(worst_chord, std::abs(img.at(u, v) - chord) / chord);
      ++rays;
    }
  }
  o.require(rays > 0, "no interior rays");
  o.require(worst_chord <= 0.01, "chord length outside 1%");
  const double secs = seconds_since(t0);
  o.require(secs < 10.0, "runtime not under 10 s");
  o.detail += fmt("silhouette %.3f x %.3f mm, ", wu, wv) + std::to_string(rays) + fmt(" chords max err %.3f%%, %.2f s", 100 * worst_chord, secs);
  return o;
}

// ---------------------------------------------------------------------------

// Ten default phantoms with 20 regression samples each at the default 256^2
// camera, generated once single-threaded and once multi-threaded.
struct DeterminismRun {
  TempDir dir{"acceptance"};
  unsigned threads = std::max(4u, std::thread::hardware_concurrency());
  double seconds_1 = 0.0, seconds_n = 0.0;
  bool generated = false;

  fs::path volumes() const { return dir / "volumes"; }
  fs::path root(unsigned t) const { return dir / ("ds_t" + std::to_string(t)); }

  void generate() {
    if (run_cli({"--out", dir.path().string(), "--seed", "11", "phantom", "gen", "--count", "10"}) != 0) return;
    auto gen = [&](unsigned t) {
      const auto t0 = Clock::now();
      const int code = run_cli({"--out", root(t).string(), "--seed", "1234", "--threads", std::to_string(t), "dataset",
                                "gen", "--preset", "reg", "--patients-dir", volumes().string(), "--n-per-patient",
                                "20"});
      return std::pair{code, seconds_since(t0)};
    };
    const auto [c1, s1] = gen(1);
    const auto [cn, sn] = gen(threads);
    seconds_1 = s1;
    seconds_n = sn;
    generated = c1 == 0 && cn == 0;
  }
};

Outcome determinism(DeterminismRun& run) {
  Outcome o;
  run.generate();
  o.require(run.generated, "generation failed");
  if (!o.pass) return o;

  std::set<fs::path> files_1, files_n;
  for (const auto& e : fs::recursive_directory_iterator(run.root(1)))
    if (e.is_regular_file()) files_1.insert(fs::relative(e.path(), run.root(1)));
  for (const auto& e : fs::recursive_directory_iterator(run.root(run.threads)))
    if (e.is_regular_file()) files_n.insert(fs::relative(e.path(), run.root(run.threads)));
  o.require(files_1 == files_n, "file sets differ");

  std::size_t differing = 0;
  for (const auto& rel : files_1) differing += slurp(run.root(1) / rel) != slurp(run.root(run.threads) / rel);
  o.require(differing == 0, std::to_string(differing) + " files differ");

  const auto m = read_manifest(run.root(1) / "manifest.jsonl");
  o.require(m.records.size() == 200, "expected 200 records");
  o.require(m.camera.detector_pixels == std::array<int, 2>{256, 256}, "expected 256^2 images");
  o.require(run.seconds_n < 300.0, "runtime not under 5 min");
  o.detail += std::to_string(files_1.size()) + " files identical; " +
              fmt("1 thread %.1f s, ", run.seconds_1) + std::to_string(run.threads) +
              fmt(" threads %.1f s on %.0f hardware thread(s)", run.seconds_n,
                  static_cast<double>(std::max(1u, std::thread::hardware_concurrency())));
  return o;
}

// p' = Rz Ry Rx (p - pivot) + pivot + t, then the APP normal from first principles.
double oracle_psi(const LandmarkSet& l, const RigidTransform& t) {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(t.euler_deg.z() * kDeg, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(t.euler_deg.y() * kDeg, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(t.euler_deg.x() * kDeg, Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  const auto pose = [&](const Vec3& p) -> Vec3 { return r * (p - t.pivot_mm) + t.pivot_mm + t.translation_mm; };
  const Vec3 al = pose(l.asis_left), ar = pose(l.asis_right);
  const Vec3 pt = 0.5 * (pose(l.pt_left) + pose(l.pt_right));
  const Vec3 n = (al - ar).cross(pt - 0.5 * (al + ar));
  return std::atan2(n.z(), n.y()) / kDeg;
}

Outcome label_soundness(const DeterminismRun& run) {
  Outcome o;
  o.require(run.generated, "no dataset");
  if (!o.pass) return o;
  const auto m = read_manifest(run.root(1) / "manifest.jsonl");
  double worst = 0.0;
  for (const auto& r : m.records) {
    // Landmarks straight from the patient's file, not the manifest copy.
    const auto l = read_landmarks(run.volumes() / (r.patient_id + "_landmarks.json"));
    worst = std::max(worst, std::abs(wrap180(r.psi_deg - oracle_psi(l, r.transform))));
  }
  o.require(!m.records.empty(), "no records");
  o.require(worst <= 1e-9, "label mismatch above 1e-9 deg");
  o.detail += std::to_string(m.records.size()) + fmt(" records, max err %.2e deg", worst);
  return o;
}

// ---------------------------------------------------------------------------

MaskImage mask_of(int w, int h, std::initializer_list<int> on) {
  MaskImage m(w, h, {1.0, 1.0});
  for (int i : on) m.data[static_cast<std::size_t>(i)] = 1;
  return m;
}

Outcome dice_cases() {
  Outcome o;
  const auto a = mask_of(4, 4, {0, 1, 2, 3});
  o.require(dice(a, a) == 1.0, "identical != 1");
  o.require(dice(a, mask_of(4, 4, {8, 9, 10, 11})) == 0.0, "disjoint != 0");
  o.require(dice(a, mask_of(4, 4, {2, 3, 4, 5})) == 0.5, "4/4/2 overlap != 0.5");

  RandomStream s(99);
  int asymmetric = 0;
  for (int i = 0; i < 1000; ++i) {
    const int w = 1 + static_cast<int>(s.below(40)), h = 1 + static_cast<int>(s.below(40));
    const double pa = s.uniform01(), pb = s.uniform01();
    MaskImage x(w, h, {1.0, 1.0}), y(w, h, {1.0, 1.0});
    for (auto& v : x.data) v = s.uniform01() < pa;
    for (auto& v : y.data) v = s.uniform01() < pb;
    const double d = dice(x, y);
    asymmetric += d != dice(y, x) || d < 0.0 || d > 1.0;
  }
  o.require(asymmetric == 0, std::to_string(asymmetric) + " asymmetric pairs");
  o.detail += "unit cases exact, 1000 random pairs symmetric";
  return o;
}

Outcome fold_properties() {
  Outcome o;
  DatasetManifest m;
  RandomStream s(7);
  char id[32];
  std::vector<PsiPair> pairs;
  for (int p = 0; p < 472; ++p) {
    std::snprintf(id, sizeof id, "patient_%03d", p);
    const int n = 1 + static_cast<int>(s.below(3));
    for (int k = 0; k < n; ++k) {
      SampleRecord r;
      r.patient_id = id;
      r.sample_id = std::string(id) + "_" + std::to_string(k);
      r.drr_path = "drr/" + r.sample_id + ".f32";
      r.mask_path = "masks/" + r.sample_id + ".pgm";
      m.records.push_back(r);
      pairs.push_back({r.sample_id, r.patient_id, 0.0, s.uniform(-10, 10)});
    }
  }
  std::string sizes;
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    const auto f = assign_folds(m, 4, seed);
    std::map<std::string, std::set<int>> folds_of;
    std::map<int, std::set<std::string>> patients_in;
    for (const auto& r : f.records) {
      folds_of[r.patient_id].insert(r.fold);
      patients_in[r.fold].insert(r.patient_id);
    }
    o.require(folds_of.size() == 472, "patients lost");
    o.require(std::all_of(folds_of.begin(), folds_of.end(), [](const auto& kv) { return kv.second.size() == 1; }),
              "a patient spans folds");
    o.require(patients_in.size() == 4, "expected 4 folds");
    for (const auto& [fold, ps] : patients_in) o.require(ps.size() == 118, "fold size != 118");
    if (sizes.empty())
      for (const auto& [fold, ps] : patients_in) sizes += (sizes.empty() ? "" : "/") + std::to_string(ps.size());
  }

  const auto report = psi_error_report(pairs);
  o.require(best_stratum_size(472) == 354, "best stratum size != 354");
  o.require(report.best.patients.size() == 354, "report best stratum != 354 patients");
  o.require(report.worst.patients.size() == 118, "report worst stratum != 118 patients");
  o.detail += "folds " + sizes + " over 3 seeds, strata " + std::to_string(report.best.patients.size()) + "/" +
              std::to_string(report.worst.patients.size());
  return o;
}

// ---------------------------------------------------------------------------

Outcome report_plumbing(const DeterminismRun& run) {
  Outcome o;
  o.require(run.generated, "no dataset");
  if (!o.pass) return o;
  const auto manifest = run.root(1) / "manifest.jsonl";
  const auto m = read_manifest(manifest);

  std::string csv = "sample_id,psi_pred_deg\n";
  for (const auto& r : m.records) csv += r.sample_id + "," + nlohmann::json(r.psi_deg).dump() + "\n";
  spit(run.dir / "predictions.csv", csv);
  fs::create_directories(run.dir / "pred_masks");
  for (const auto& r : m.records)
    fs::copy_file(run.root(1) / r.mask_path, run.dir / "pred_masks" / (r.sample_id + ".pgm"));

  const auto eval_dir = (run.dir / "eval").string();
  o.require(run_cli({"--out", eval_dir, "eval", "psi", "--pred-csv", (run.dir / "predictions.csv").string(),
                     "--manifest", manifest.string()}) == 0,
            "eval psi failed");
  o.require(run_cli({"--out", eval_dir, "eval", "seg", "--pred-dir", (run.dir / "pred_masks").string(), "--manifest",
                     manifest.string()}) == 0,
            "eval seg failed");
  if (!o.pass) return o;

  const auto report = nlohmann::json::parse(slurp(run.dir / "eval" / "report.json"));
  for (const char* key : {"overall", "best_75", "worst_25"}) {
    const auto& st = report.at("psi").at(key);
    o.require(st.at("mean_abs_error_deg") == 0.0 && st.at("std_abs_error_deg") == 0.0,
              std::string(key) + " is not 0 +- 0");
  }

  for (const char* out : {"plots_a", "plots_b"}) {
    o.require(run_cli({"--out", (run.dir / out).string(), "--seed", "5", "report", "plots", "--report-json",
                       (run.dir / "eval" / "report.json").string()}) == 0,
              "report plots failed");
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(run.dir / "plots_a")) {
    ++files;
    differing += slurp(e.path()) != slurp(run.dir / "plots_b" / e.path().filename());
  }
  o.require(files == 6, "expected 6 plot files");
  o.require(differing == 0, "plot output differs between runs");
  o.detail += "0 +- 0 overall/best_75/worst_25; " + std::to_string(files) + " plot files byte-identical";
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };

  DeterminismRun run;
  report("psi-equivariance", psi_equivariance);
  report("projection-magnification", magnification);
  report("determinism", [&] { return determinism(run); });
  report("label-soundness", [&] { return label_soundness(run); });
  report("dice-unit-cases", dice_cases);
  report("fold-properties", fold_properties);
  report("report-plumbing", [&] { return report_plumbing(run); });
  return failures == 0 ? 0 : 1;
}
