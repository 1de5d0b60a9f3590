#include "psidrr/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "psidrr/error.hpp"
#include "psidrr/random.hpp"

namespace psidrr {

namespace {

using ojson = nlohmann::ordered_json;

// Rendered samples held in memory at once per patient.
constexpr std::size_t kRenderChunk = 32;

ojson vec_json(const Vec3& v) { return ojson::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

ojson bounds_json(const TransformBounds& b) {
  return ojson{{"rot_x_deg", b.rot_x_deg}, {"rot_y_deg", b.rot_y_deg}, {"rot_z_deg", b.rot_z_deg},
               {"trans_mm", b.trans_mm}};
}

TransformBounds bounds_from_json(const nlohmann::json& j) {
  TransformBounds b{j.at("rot_x_deg").get<double>(), j.at("rot_y_deg").get<double>(),
                    j.at("rot_z_deg").get<double>(), j.at("trans_mm").get<double>()};
  b.validate();
  return b;
}

ojson header_json(const DatasetManifest& m) {
  ojson h;
  h["schema_version"] = m.schema_version;
  h["task"] = to_string(m.task);
  h["bounds"] = bounds_json(m.bounds);
  h["camera"] = ojson::parse(nlohmann::json(m.camera).dump());
  h["render"] = ojson::parse(nlohmann::json(m.settings).dump());
  h["global_seed"] = m.global_seed;
  h["fold_count"] = m.fold_count;
  h["fold_seed"] = m.fold_seed ? ojson(*m.fold_seed) : ojson(nullptr);
  ojson patients = ojson::object();
  for (const auto& [id, l] : m.landmarks) patients[id] = ojson::parse(nlohmann::json(l).dump());
  h["patients"] = std::move(patients);
  return h;
}

ojson record_json(const SampleRecord& r) {
  ojson j;
  j["sample_id"] = r.sample_id;
  j["patient_id"] = r.patient_id;
  j["drr_path"] = r.drr_path;
  j["mask_path"] = r.mask_path;
  j["psi_deg"] = r.psi_deg;
  j["transform"] = ojson{{"euler_deg", vec_json(r.transform.euler_deg)},
                         {"translation_mm", vec_json(r.transform.translation_mm)},
                         {"pivot_mm", vec_json(r.transform.pivot_mm)}};
  j["fold"] = r.fold;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.drr_path = j.at("drr_path").get<std::string>();
  r.mask_path = j.at("mask_path").get<std::string>();
  r.psi_deg = j.at("psi_deg").get<double>();
  const auto& t = j.at("transform");
  r.transform.euler_deg = vec_from_json(t.at("euler_deg"));
  r.transform.translation_mm = vec_from_json(t.at("translation_mm"));
  if (t.contains("pivot_mm")) r.transform.pivot_mm = vec_from_json(t.at("pivot_mm"));
  r.fold = j.at("fold").get<int>();
  return r;
}

std::string sample_name(const std::string& patient_id, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return patient_id + "_" + buf;
}

void check_manifest(const DatasetManifest& m) {
  if (m.fold_count < 1) throw FormatError("fold_count must be >= 1");
  std::set<std::string> ids;
  std::map<std::string, int> patient_fold;
  for (const auto& r : m.records) {
    if (!ids.insert(r.sample_id).second) throw FormatError("duplicate sample_id " + r.sample_id);
    if (r.fold < 0 || r.fold >= m.fold_count) throw FormatError("fold out of range for " + r.sample_id);
    if (!m.landmarks.contains(r.patient_id)) throw FormatError("no landmarks for patient " + r.patient_id);
    const auto [it, inserted] = patient_fold.emplace(r.patient_id, r.fold);
    if (!inserted && it->second != r.fold) throw FormatError("patient " + r.patient_id + " spans several folds");
  }
}

}  // namespace

std::string_view to_string(Task task) { return task == Task::segmentation ? "segmentation" : "regression"; }

Task task_from_string(std::string_view s) {
  if (s == "segmentation") return Task::segmentation;
  if (s == "regression") return Task::regression;
  throw FormatError("unknown task " + std::string(s));
}

const DatasetPreset& find_preset(std::string_view name) {
  if (name == "seg" || name == kSegPreset.name) return kSegPreset;
  if (name == "reg" || name == kRegPreset.name) return kRegPreset;
  throw InvalidArgument("unknown preset " + std::string(name));
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  check_manifest(m);
  std::string text = header_json(m).dump() + "\n";
  for (const auto& r : m.records) text += record_json(r).dump() + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  DatasetManifest m;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        const int version = j.at("schema_version").get<int>();
        if (version != kManifestSchemaVersion) {
          throw FormatError("manifest schema_version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kManifestSchemaVersion) + ")");
        }
        m.schema_version = version;
        m.task = task_from_string(j.at("task").get<std::string>());
        m.bounds = bounds_from_json(j.at("bounds"));
        m.camera = j.at("camera").get<CameraModel>();
        m.camera.validate();
        m.settings = j.at("render").get<RenderSettings>();
        m.global_seed = j.at("global_seed").get<std::uint64_t>();
        m.fold_count = j.at("fold_count").get<int>();
        if (!j.at("fold_seed").is_null()) m.fold_seed = j.at("fold_seed").get<std::uint64_t>();
        for (const auto& [id, l] : j.at("patients").items()) m.landmarks[id] = l.get<LandmarkSet>();
        have_header = true;
      } else {
        m.records.push_back(record_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError(path.string() + ": empty manifest");
  check_manifest(m);
  return m;
}

std::uint64_t sample_seed(std::uint64_t global_seed, std::string_view patient_id, int sample_index) {
  return combine_seeds({global_seed, hash_string(patient_id), static_cast<std::uint64_t>(sample_index)});
}

DatasetManifest gen_dataset(std::span<const SubjectSource> subjects, const GenerationOptions& options) {
  if (options.n_per_patient < 1) throw InvalidArgument("n_per_patient must be >= 1");
  options.bounds.validate();
  options.camera.validate();
  options.settings.validate();

  std::set<std::string> seen;
  for (const auto& s : subjects) {
    if (s.id.empty()) throw InvalidArgument("patient id must not be empty");
    if (!seen.insert(s.id).second) throw InvalidArgument("duplicate patient id " + s.id);
  }

  fs::create_directories(options.root / "images");
  fs::create_directories(options.root / "masks");

  DatasetManifest m;
  m.task = options.task;
  m.bounds = options.bounds;
  m.camera = options.camera;
  m.settings = options.settings;
  m.global_seed = options.global_seed;

  for (const auto& source : subjects) {
    Subject subject = source.load();
    validate(subject);
    m.landmarks[source.id] = subject.landmarks;

    const auto c = subject.ct.geometry.center();
    const Vec3 pivot(c[0], c[1], c[2]);
    const VolumePair volumes[] = {{std::move(subject.ct), std::move(subject.mask)}};

    std::vector<SampleRecord> records;
    std::vector<RenderJob> jobs;
    for (int i = 0; i < options.n_per_patient; ++i) {
      RandomStream stream(sample_seed(options.global_seed, source.id, i));
      SampleRecord r;
      r.sample_id = sample_name(source.id, i);
      r.patient_id = source.id;
      r.drr_path = "images/" + r.sample_id + ".f32";
      r.mask_path = "masks/" + r.sample_id + ".pgm";
      r.transform = sample_transform(stream, options.bounds, pivot);
      r.psi_deg = psi_of_posed_patient(subject.landmarks, r.transform).degrees;
      jobs.push_back({0, r.transform});
      records.push_back(std::move(r));
    }

    for (std::size_t begin = 0; begin < jobs.size(); begin += kRenderChunk) {
      const std::size_t count = std::min(kRenderChunk, jobs.size() - begin);
      std::vector<RenderedPair> rendered;
      try {
        rendered = render_batch(volumes, std::span(jobs).subspan(begin, count), options.camera, options.settings,
                                options.threads);
      } catch (const BatchError& e) {
        throw Error("patient " + source.id + " sample " + std::to_string(begin + e.job_index()) + ": " + e.what());
      }
      for (std::size_t i = 0; i < count; ++i) {
        const SampleRecord& r = records[begin + i];
        try {
          write_image(rendered[i].drr, options.root / r.drr_path);
          write_pgm(rendered[i].mask, options.root / r.mask_path);
        } catch (const Error& e) {
          throw Error("patient " + source.id + " sample " + std::to_string(begin + i) + ": " + e.what());
        }
      }
    }
    for (auto& r : records) m.records.push_back(std::move(r));
  }

  write_manifest(m, options.root / "manifest.jsonl");
  return m;
}

DatasetManifest assign_folds(DatasetManifest manifest, int k, std::uint64_t seed) {
  std::set<std::string> unique;
  for (const auto& r : manifest.records) unique.insert(r.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());

  if (k < 2) throw InvalidArgument("fold count must be >= 2");
  if (static_cast<std::size_t>(k) > patients.size()) {
    throw InvalidArgument("fold count " + std::to_string(k) + " exceeds patient count " +
                          std::to_string(patients.size()));
  }

  RandomStream stream(seed);
  for (std::size_t i = patients.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(stream.below(i + 1));
    std::swap(patients[i], patients[j]);
  }

  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < patients.size(); ++i) fold_of[patients[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  for (auto& r : manifest.records) r.fold = fold_of.at(r.patient_id);
  manifest.fold_count = k;
  manifest.fold_seed = seed;
  return manifest;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(const DatasetManifest& m, int held_out_fold) {
  if (held_out_fold < 0 || held_out_fold >= m.fold_count) {
    throw InvalidArgument("fold index " + std::to_string(held_out_fold) + " is outside [0, " +
                          std::to_string(m.fold_count) + ")");
  }
  std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
  for (const auto& r : m.records) (r.fold == held_out_fold ? out.second : out.first).push_back(r);
  return out;
}

}  // namespace psidrr
