#include "psidrr/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "psidrr/dataset.hpp"
#include "psidrr/error.hpp"
#include "psidrr/metrics.hpp"
#include "psidrr/parallel.hpp"
#include "psidrr/phantom.hpp"
#include "psidrr/projector.hpp"
#include "psidrr/text.hpp"

namespace psidrr::cli {

namespace {

// Bad invocation or unusable inputs, detected before any work starts.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  fs::path out = ".";
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

CameraModel load_camera(const std::string& camera_json) {
  if (camera_json.empty()) return {};
  try {
    CameraModel cam = read_json_file(camera_json).get<CameraModel>();
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad camera JSON " + camera_json + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw UsageError("bad camera JSON " + camera_json + ": " + e.what());
  }
}

// Merges one section into <out>/report.json, keeping any other sections.
void update_report(const fs::path& out_dir, const std::string& key, const nlohmann::json& section) {
  fs::create_directories(out_dir);
  const fs::path path = out_dir / "report.json";
  nlohmann::json report = nlohmann::json::object();
  if (fs::exists(path)) {
    try {
      std::ifstream in(path, std::ios::binary);
      report = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
      report = nlohmann::json::object();
    }
    if (!report.is_object()) report = nlohmann::json::object();
  }
  report[key] = section;
  write_json_file(path, report);
}

std::string pad4(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

template <std::size_t N>
std::array<double, N> expand(const std::vector<double>& v, const char* flag) {
  std::array<double, N> out{};
  if (v.size() == 1) {
    out.fill(v[0]);
  } else if (v.size() == N) {
    std::copy(v.begin(), v.end(), out.begin());
  } else {
    throw UsageError(std::string(flag) + " takes 1 or " + std::to_string(N) + " values");
  }
  return out;
}

// --- phantom gen ------------------------------------------------------------

struct PhantomGenArgs {
  int count = 1;
  std::vector<double> dims{128};
  std::vector<double> spacing{2.0};
  double jitter = 0.15;
  double soft_tissue = 0.02;
  double bone = 0.06;
};

void phantom_gen(const PhantomGenArgs& a, const GlobalOptions& g, std::ostream& out) {
  if (a.count < 1) throw UsageError("--count must be >= 1");
  PhantomSpec base;
  const auto dims = expand<3>(a.dims, "--dims");
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1 || dims[i] != static_cast<int>(dims[i])) throw UsageError("--dims must be positive integers");
    base.dims[i] = static_cast<int>(dims[i]);
  }
  base.spacing = expand<3>(a.spacing, "--spacing");
  base.jitter = a.jitter;
  base.soft_tissue = a.soft_tissue;
  base.bone = a.bone;
  try {
    base.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  const fs::path dir = g.out / "volumes";
  fs::create_directories(dir);
  std::vector<std::string> ids(static_cast<std::size_t>(a.count));
  parallel_for(ids.size(), g.threads, [&](std::size_t i) {
    PhantomSpec spec = base;
    spec.seed = combine_seeds({g.seed, static_cast<std::uint64_t>(i)});
    ids[i] = "phantom_" + pad4(i);
    save_subject(generate_phantom(spec), dir, ids[i]);
  });

  out << nlohmann::json{{"patients_dir", dir.string()}, {"patients", ids}}.dump() << "\n";
}

// --- render -----------------------------------------------------------------

struct RenderArgs {
  std::string volume;
  std::string mask;
  std::string landmarks;
  double rx = 0, ry = 0, rz = 0, tx = 0, ty = 0, tz = 0;
  std::string camera_json;
  double step = 0.0;
  bool raw = false;
  std::string name = "render";
};

void render(const RenderArgs& a, const GlobalOptions& g, std::ostream& out) {
  const CameraModel camera = load_camera(a.camera_json);
  RenderSettings settings;
  if (a.step > 0.0) settings.step_mm = a.step;
  settings.normalize = !a.raw;

  AttenuationVolume ct;
  std::optional<MaskVolume> mask;
  std::optional<LandmarkSet> landmarks;
  try {
    ct = read_attenuation_volume(a.volume);
    if (!a.mask.empty()) mask = read_mask_volume(a.mask);
    if (!a.landmarks.empty()) landmarks = read_landmarks(a.landmarks);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (mask && !(mask->geometry == ct.geometry)) throw UsageError("mask grid differs from volume grid");

  const auto c = ct.geometry.center();
  RigidTransform pose;
  pose.euler_deg = {a.rx, a.ry, a.rz};
  pose.translation_mm = {a.tx, a.ty, a.tz};
  pose.pivot_mm = {c[0], c[1], c[2]};

  fs::create_directories(g.out);
  nlohmann::ordered_json summary;
  const fs::path drr_path = g.out / (a.name + ".f32");
  write_image(render_drr(ct, pose, camera, settings, g.threads), drr_path);
  summary["drr_path"] = drr_path.string();
  if (mask) {
    const fs::path mask_path = g.out / (a.name + "_mask.pgm");
    write_pgm(project_mask(*mask, pose, camera, settings, g.threads), mask_path);
    summary["mask_path"] = mask_path.string();
  }
  summary["transform"] = {{"euler_deg", {a.rx, a.ry, a.rz}},
                          {"translation_mm", {a.tx, a.ty, a.tz}},
                          {"pivot_mm", {c[0], c[1], c[2]}}};
  summary["camera"] = nlohmann::ordered_json::parse(nlohmann::json(camera).dump());
  if (landmarks) summary["psi_deg"] = psi_of_posed_patient(*landmarks, pose).degrees;

  const fs::path summary_path = g.out / (a.name + "_render.json");
  std::ofstream(summary_path, std::ios::binary | std::ios::trunc) << summary.dump(2) << "\n";
  out << summary.dump() << "\n";
}

// --- dataset gen / folds ----------------------------------------------------

struct DatasetGenArgs {
  std::string preset;
  std::string patients_dir;
  int n_per_patient = 0;
  std::vector<double> bounds;
  std::string camera_json;
  double step = 0.0;
};

void dataset_gen(const DatasetGenArgs& a, const GlobalOptions& g, std::ostream& out) {
  const DatasetPreset* preset = nullptr;
  try {
    preset = &find_preset(a.preset);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  GenerationOptions opts;
  opts.task = preset->task;
  opts.bounds = preset->bounds;
  opts.n_per_patient = a.n_per_patient > 0 ? a.n_per_patient : preset->n_per_patient;
  if (!a.bounds.empty()) {
    if (a.bounds.size() != 4) throw UsageError("--bounds takes rx,ry,rz,t");
    opts.bounds = {a.bounds[0], a.bounds[1], a.bounds[2], a.bounds[3]};
  }
  try {
    opts.bounds.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  opts.camera = load_camera(a.camera_json);
  if (a.step > 0.0) opts.settings.step_mm = a.step;
  opts.global_seed = g.seed;
  opts.threads = g.threads;
  opts.root = g.out;

  const auto ids = list_subjects(a.patients_dir);
  if (ids.empty()) throw UsageError("no *_landmarks.json patients in " + a.patients_dir);
  std::vector<SubjectSource> sources;
  for (const auto& id : ids) {
    sources.push_back({id, [dir = fs::path(a.patients_dir), id] { return load_subject(dir, id); }});
  }

  const DatasetManifest m = gen_dataset(sources, opts);
  out << nlohmann::json{{"manifest", (g.out / "manifest.jsonl").string()},
                        {"task", to_string(m.task)},
                        {"patients", ids.size()},
                        {"records", m.records.size()}}
             .dump()
      << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  try {
    return read_manifest(path);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
}

void dataset_folds(const std::string& manifest_path, int k, bool out_given, const GlobalOptions& g,
                   std::ostream& out) {
  DatasetManifest m = load_manifest(manifest_path);
  try {
    m = assign_folds(std::move(m), k, g.seed);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  fs::path target = manifest_path;
  if (out_given) {
    fs::create_directories(g.out);
    target = g.out / "manifest.jsonl";
  }
  write_manifest(m, target);

  std::map<int, std::set<std::string>> patients;
  for (const auto& r : m.records) patients[r.fold].insert(r.patient_id);
  nlohmann::json sizes = nlohmann::json::array();
  for (int f = 0; f < m.fold_count; ++f) sizes.push_back(patients[f].size());
  out << nlohmann::json{{"manifest", target.string()}, {"k", k}, {"patients_per_fold", sizes}}.dump() << "\n";
}

// --- eval -------------------------------------------------------------------

void eval_seg(const std::string& pred_dir, const std::string& manifest_path, std::optional<int> fold,
              const GlobalOptions& g, std::ostream& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  if (fold && (*fold < 0 || *fold >= m.fold_count)) throw UsageError("--fold is outside the manifest's folds");

  std::map<std::string, const SampleRecord*> by_id;
  for (const auto& r : m.records) by_id[r.sample_id] = &r;

  std::vector<const SampleRecord*> selected;
  if (fold) {
    for (const auto& r : m.records) {
      if (r.fold != *fold) continue;
      if (!fs::exists(fs::path(pred_dir) / (r.sample_id + ".pgm"))) {
        throw UsageError("missing prediction for held-out sample " + r.sample_id);
      }
      selected.push_back(&r);
    }
  } else {
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(pred_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") stems.push_back(entry.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    for (const auto& s : stems) {
      const auto it = by_id.find(s);
      if (it == by_id.end()) throw UsageError("prediction " + s + ".pgm matches no manifest sample");
      selected.push_back(it->second);
    }
  }
  if (selected.empty()) throw UsageError("no segmentation predictions to score");

  std::vector<ImageDice> scores(selected.size());
  parallel_for(selected.size(), g.threads, [&](std::size_t i) {
    const SampleRecord& r = *selected[i];
    const MaskImage truth = read_pgm(root / r.mask_path);
    const MaskImage pred = read_pgm(fs::path(pred_dir) / (r.sample_id + ".pgm"));
    if (pred.width != truth.width || pred.height != truth.height) {
      throw UsageError("prediction " + r.sample_id + " is " + std::to_string(pred.width) + "x" +
                       std::to_string(pred.height) + ", expected " + std::to_string(truth.width) + "x" +
                       std::to_string(truth.height));
    }
    scores[i] = {r.sample_id, dice(truth, pred)};
  });

  const SegScore score = score_segmentation(std::move(scores));
  update_report(g.out, "seg", to_json(score));
  out << nlohmann::json{{"report", (g.out / "report.json").string()},
                        {"count", score.per_image.size()},
                        {"mean_dice", score.mean},
                        {"std_dice", score.std}}
             .dump()
      << "\n";
}

std::vector<std::pair<std::string, double>> read_predictions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "sample_id,psi_pred_deg") {
    throw UsageError(path + ": header must be 'sample_id,psi_pred_deg'");
  }
  std::vector<std::pair<std::string, double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto comma = body.find(',');
    if (comma == std::string_view::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected 2 fields");
    const auto id = trim(body.substr(0, comma));
    const auto value = parse_number<double>(trim(body.substr(comma + 1)));
    if (id.empty() || !value) throw UsageError(path + ":" + std::to_string(line_no) + ": bad row");
    rows.emplace_back(std::string(id), *value);
  }
  return rows;
}

void eval_psi(const std::string& pred_csv, const std::string& manifest_path, const GlobalOptions& g,
              std::ostream& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  std::map<std::string, const SampleRecord*> by_id;
  for (const auto& r : m.records) by_id[r.sample_id] = &r;

  std::vector<PsiPair> pairs;
  for (const auto& [id, pred] : read_predictions_csv(pred_csv)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw UsageError("prediction for unknown sample " + id);
    pairs.push_back({id, it->second->patient_id, it->second->psi_deg, pred});
  }
  if (pairs.empty()) throw UsageError(pred_csv + " holds no predictions");

  PsiReport report;
  try {
    report = psi_error_report(pairs);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  update_report(g.out, "psi", to_json(report));
  out << nlohmann::json{{"report", (g.out / "report.json").string()},
                        {"samples", report.overall.count},
                        {"patients", report.per_patient.size()},
                        {"mean_abs_error_deg", report.overall.mean},
                        {"std_abs_error_deg", report.overall.std}}
             .dump()
      << "\n";
}

// --- report plots -----------------------------------------------------------

void report_plots(const std::string& report_json, int per_patient, const GlobalOptions& g, std::ostream& out) {
  const nlohmann::json j = read_json_file(report_json);
  std::optional<PsiReport> psi;
  std::optional<SegScore> seg;
  try {
    if (j.contains("psi")) psi = psi_report_from_json(j.at("psi"));
    if (j.contains("seg")) seg = seg_score_from_json(j.at("seg"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed report " + report_json + ": " + e.what());
  }
  if (!psi && !seg) throw UsageError(report_json + " has neither a 'psi' nor a 'seg' section");
  if (per_patient < 0) throw UsageError("--scatter-per-patient must be >= 0");

  PlotOptions opts;
  opts.scatter_per_patient = per_patient;
  opts.seed = g.seed;
  const auto files = emit_plots(psi ? &*psi : nullptr, seg ? &*seg : nullptr, g.out, opts);
  nlohmann::json names = nlohmann::json::array();
  for (const auto& f : files) names.push_back(f.string());
  out << nlohmann::json{{"files", names}}.dump() << "\n";
}

void report_error(std::ostream& err, const char* kind, const std::string& message) {
  err << nlohmann::json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pelvis DRR simulation, dataset generation and PSI/Dice evaluation", "psidrr"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Global random seed");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  auto* out_opt = app.add_option("--out", g.out, "Output directory");

  // phantom gen
  PhantomGenArgs pg;
  auto* phantom = app.add_subcommand("phantom", "Synthetic pelvis phantoms")->require_subcommand(1);
  auto* phantom_gen_cmd = phantom->add_subcommand("gen", "Write phantoms to <out>/volumes");
  phantom_gen_cmd->add_option("--count", pg.count, "Number of phantoms")->required();
  phantom_gen_cmd->add_option("--dims", pg.dims, "Voxels per axis (1 or 3 values)")->expected(1, 3)->delimiter(',');
  phantom_gen_cmd->add_option("--spacing", pg.spacing, "Voxel size in mm (1 or 3 values)")->expected(1, 3)->delimiter(',');
  phantom_gen_cmd->add_option("--jitter", pg.jitter, "Shape scale jitter fraction");
  phantom_gen_cmd->add_option("--soft-tissue", pg.soft_tissue, "Soft-tissue attenuation [1/mm]");
  phantom_gen_cmd->add_option("--bone", pg.bone, "Bone attenuation [1/mm]");

  // render
  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "Render one DRR and projected mask");
  render_cmd->add_option("--volume", ra.volume, "Attenuation volume (.mhd)")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--mask", ra.mask, "Pelvis mask volume (.mhd)")->check(CLI::ExistingFile);
  render_cmd->add_option("--landmarks", ra.landmarks, "Landmark JSON")->check(CLI::ExistingFile);
  render_cmd->add_option("--rx", ra.rx, "Rotation about x [deg]");
  render_cmd->add_option("--ry", ra.ry, "Rotation about y [deg]");
  render_cmd->add_option("--rz", ra.rz, "Rotation about z [deg]");
  render_cmd->add_option("--tx", ra.tx, "Translation x [mm]");
  render_cmd->add_option("--ty", ra.ty, "Translation y [mm]");
  render_cmd->add_option("--tz", ra.tz, "Translation z [mm]");
  render_cmd->add_option("--camera-json", ra.camera_json, "Camera model JSON")->check(CLI::ExistingFile);
  render_cmd->add_option("--step", ra.step, "Ray-march step [mm]");
  render_cmd->add_flag("--raw", ra.raw, "Keep raw line integrals (no max normalization)");
  render_cmd->add_option("--name", ra.name, "Output file stem");

  // dataset gen / folds
  DatasetGenArgs dg;
  std::string folds_manifest;
  int folds_k = 4;
  auto* dataset = app.add_subcommand("dataset", "Training datasets")->require_subcommand(1);
  auto* dataset_gen_cmd = dataset->add_subcommand("gen", "Render a dataset into <out>");
  dataset_gen_cmd->add_option("--preset", dg.preset, "seg | reg")->required();
  dataset_gen_cmd->add_option("--patients-dir", dg.patients_dir, "Directory of patients")->required()->check(CLI::ExistingDirectory);
  dataset_gen_cmd->add_option("--n-per-patient", dg.n_per_patient, "DRRs per patient (default from preset)");
  dataset_gen_cmd->add_option("--bounds", dg.bounds, "rx,ry,rz,t half-ranges")->delimiter(',')->expected(4);
  dataset_gen_cmd->add_option("--camera-json", dg.camera_json, "Camera model JSON")->check(CLI::ExistingFile);
  dataset_gen_cmd->add_option("--step", dg.step, "Ray-march step [mm]");
  auto* dataset_folds_cmd = dataset->add_subcommand("folds", "Assign patient-level folds");
  dataset_folds_cmd->add_option("--manifest", folds_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  dataset_folds_cmd->add_option("--k", folds_k, "Number of folds");

  // eval seg / psi
  std::string pred_dir, pred_csv, eval_manifest;
  std::optional<int> eval_fold;
  auto* eval = app.add_subcommand("eval", "Score predictions")->require_subcommand(1);
  auto* eval_seg_cmd = eval->add_subcommand("seg", "Dice of predicted masks");
  eval_seg_cmd->add_option("--pred-dir", pred_dir, "Directory of <sample_id>.pgm")->required()->check(CLI::ExistingDirectory);
  eval_seg_cmd->add_option("--manifest", eval_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  eval_seg_cmd->add_option("--fold", eval_fold, "Require predictions for every sample of this fold");
  auto* eval_psi_cmd = eval->add_subcommand("psi", "PSI error report");
  eval_psi_cmd->add_option("--pred-csv", pred_csv, "predictions.csv")->required()->check(CLI::ExistingFile);
  eval_psi_cmd->add_option("--manifest", eval_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);

  // report plots
  std::string report_json;
  int scatter_per_patient = 10;
  auto* report = app.add_subcommand("report", "Plot data")->require_subcommand(1);
  auto* report_plots_cmd = report->add_subcommand("plots", "CSV + SVG plots from report.json");
  report_plots_cmd->add_option("--report-json", report_json, "report.json")->required()->check(CLI::ExistingFile);
  report_plots_cmd->add_option("--scatter-per-patient", scatter_per_patient, "Scatter rows per patient (0 = all)");

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "validation", e.what());
    return kExitValidation;
  }

  try {
    if (phantom_gen_cmd->parsed()) {
      phantom_gen(pg, g, out);
    } else if (render_cmd->parsed()) {
      render(ra, g, out);
    } else if (dataset_gen_cmd->parsed()) {
      dataset_gen(dg, g, out);
    } else if (dataset_folds_cmd->parsed()) {
      dataset_folds(folds_manifest, folds_k, out_opt->count() > 0, g, out);
    } else if (eval_seg_cmd->parsed()) {
      eval_seg(pred_dir, eval_manifest, eval_fold, g, out);
    } else if (eval_psi_cmd->parsed()) {
      eval_psi(pred_csv, eval_manifest, g, out);
    } else if (report_plots_cmd->parsed()) {
      report_plots(report_json, scatter_per_patient, g, out);
    }
  } catch (const UsageError& e) {
    report_error(err, "validation", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    report_error(err, "runtime", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace psidrr::cli
