#pragma once

// Segmentation (Dice) and PSI-regression scoring, and the CSV/SVG data
// behind the evaluation plots. Standard deviations use the population
// convention (divide by N) throughout.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "psidrr/volume_io.hpp"

namespace psidrr {

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const MaskImage& a, const MaskImage& b);

struct SummaryStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Mean and population std; count 0 gives mean = std = 0.
SummaryStats summarize(std::span<const double> values);

struct ImageDice {
  std::string sample_id;
  double dice = 0.0;
};

struct SegScore {
  std::vector<ImageDice> per_image;
  double mean = 0.0;
  double std = 0.0;
};

SegScore score_segmentation(std::vector<ImageDice> per_image);

struct PsiPair {
  std::string sample_id;
  std::string patient_id;
  double psi_true = 0.0;
  double psi_pred = 0.0;
};

struct PsiSample {
  std::string sample_id;
  std::string patient_id;
  double psi_true = 0.0;
  double psi_pred = 0.0;
  double error = 0.0;  // pred - true
};

struct PatientError {
  std::string patient_id;
  std::size_t samples = 0;
  double mean_abs_error = 0.0;
};

struct Stratum {
  std::vector<std::string> patients;
  SummaryStats abs_error;  // over the stratum's samples
};

struct PsiReport {
  std::vector<PsiSample> per_sample;
  std::vector<PatientError> per_patient;  // sorted by patient id
  SummaryStats overall;                   // |error| over all samples
  Stratum best;                           // ceil(0.75 P) patients with the lowest mean |error|
  Stratum worst;                          // the remaining patients
};

/// Throws InvalidArgument on empty input, non-finite values, duplicate sample ids.
PsiReport psi_error_report(std::span<const PsiPair> pairs);

/// Size of the low-error stratum for P patients.
std::size_t best_stratum_size(std::size_t patients);

nlohmann::json to_json(const SegScore& s);
SegScore seg_score_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PsiReport& r);
PsiReport psi_report_from_json(const nlohmann::json& j);

struct PlotOptions {
  /// Scatter rows kept per patient; 0 keeps all.
  int scatter_per_patient = 10;
  std::uint64_t seed = 0;
};

/// Writes dice_box.csv/.svg (when seg is given) and psi_box.csv/.svg plus
/// psi_scatter.csv/.svg (when psi is given) into out_dir. Returns the paths
/// written, in that order.
std::vector<std::filesystem::path> emit_plots(const PsiReport* psi, const SegScore* seg,
                                              const std::filesystem::path& out_dir, const PlotOptions& options = {});

/// Scatter rows after per-patient subsampling, in report order.
std::vector<PsiSample> scatter_subsample(const PsiReport& report, const PlotOptions& options);

}  // namespace psidrr
