#pragma once

// Dataset generation, manifests and patient-level cross-validation folds.
//
// Root layout: <root>/images/<sample_id>.f32 (+ .json sidecar),
// <root>/masks/<sample_id>.pgm and <root>/manifest.jsonl. The manifest's
// first line is a header object (schema_version, task, bounds, camera,
// render settings, seeds, fold count, per-patient landmarks); every other
// line is one SampleRecord.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psidrr/geometry.hpp"
#include "psidrr/projector.hpp"
#include "psidrr/subject.hpp"

namespace psidrr {

inline constexpr int kManifestSchemaVersion = 1;

enum class Task { segmentation, regression };

std::string_view to_string(Task task);
Task task_from_string(std::string_view s);

struct DatasetPreset {
  std::string_view name;
  Task task;
  TransformBounds bounds;
  int n_per_patient;
};

/// Many DRRs per CT under +-15 deg about every axis.
inline constexpr DatasetPreset kSegPreset{"seg-preset", Task::segmentation, kSegmentationBounds, 1000};
/// 500 DRRs per patient, +-15 deg about the lateral axis and +-5 deg otherwise.
inline constexpr DatasetPreset kRegPreset{"reg-preset", Task::regression, kRegressionBounds, 500};

/// Accepts "seg"/"seg-preset" and "reg"/"reg-preset".
const DatasetPreset& find_preset(std::string_view name);

struct SampleRecord {
  std::string sample_id;
  std::string patient_id;
  std::string drr_path;   // relative to the dataset root
  std::string mask_path;  // relative to the dataset root
  double psi_deg = 0.0;
  RigidTransform transform;
  int fold = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  Task task = Task::regression;
  TransformBounds bounds;
  CameraModel camera;
  RenderSettings settings;
  std::uint64_t global_seed = 0;
  int fold_count = 1;
  std::optional<std::uint64_t> fold_seed;
  std::map<std::string, LandmarkSet> landmarks;  // by patient id
  std::vector<SampleRecord> records;
};

void write_manifest(const DatasetManifest& m, const fs::path& path);
/// Throws FormatError on malformed lines or a schema_version other than ours.
DatasetManifest read_manifest(const fs::path& path);

/// A patient that is loaded only when its samples are rendered.
struct SubjectSource {
  std::string id;
  std::function<Subject()> load;
};

struct GenerationOptions {
  Task task = Task::regression;
  int n_per_patient = 1;
  TransformBounds bounds;
  CameraModel camera;
  RenderSettings settings;
  std::uint64_t global_seed = 0;
  unsigned threads = 0;
  fs::path root;
};

/// Seed of the pose stream for one sample; independent of generation order.
std::uint64_t sample_seed(std::uint64_t global_seed, std::string_view patient_id, int sample_index);

/// Renders n_per_patient posed DRR/mask pairs per subject, writes them under
/// options.root together with manifest.jsonl, and returns the manifest.
/// Every record starts in fold 0 of a single fold.
DatasetManifest gen_dataset(std::span<const SubjectSource> subjects, const GenerationOptions& options);

/// Shuffles patients by seed and deals them round-robin into k folds.
DatasetManifest assign_folds(DatasetManifest manifest, int k, std::uint64_t seed);

/// (training records, held-out records).
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(const DatasetManifest& m, int held_out_fold);

}  // namespace psidrr
