#include "psidrr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "psidrr/error.hpp"
#include "psidrr/random.hpp"
#include "psidrr/text.hpp"

namespace psidrr {

namespace fs = std::filesystem;

namespace {

using ojson = nlohmann::ordered_json;

ojson stats_json(const SummaryStats& s) {
  ojson j;
  j["count"] = s.count;
  j["mean_abs_error_deg"] = s.count ? ojson(s.mean) : ojson(nullptr);
  j["std_abs_error_deg"] = s.count ? ojson(s.std) : ojson(nullptr);
  return j;
}

SummaryStats stats_from_json(const nlohmann::json& j) {
  SummaryStats s;
  s.count = j.at("count").get<std::size_t>();
  if (s.count) {
    s.mean = j.at("mean_abs_error_deg").get<double>();
    s.std = j.at("std_abs_error_deg").get<double>();
  }
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Linear-interpolated quantile of sorted values.
double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, a);
  return buf;
}

// --- SVG -------------------------------------------------------------------

constexpr double kWidth = 400.0;
constexpr double kHeight = 400.0;
constexpr double kMargin = 50.0;

struct Axis {
  double lo = 0.0;
  double hi = 1.0;

  static Axis covering(double lo, double hi) {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
  }
  double map(double v, double out_lo, double out_hi) const { return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo); }
};

std::string svg_open(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", kWidth) + "\" height=\"" +
                  fmt("%.0f", kHeight) + "\">\n";
  s += "<text x=\"" + fmt("%.1f", kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title +
       "</text>\n";
  return s;
}

std::string line(double x1, double y1, double x2, double y2, const char* extra = "") {
  return "<line x1=\"" + fmt("%.2f", x1) + "\" y1=\"" + fmt("%.2f", y1) + "\" x2=\"" + fmt("%.2f", x2) + "\" y2=\"" +
         fmt("%.2f", y2) + "\" stroke=\"black\"" + extra + "/>\n";
}

std::string label(double x, double y, const std::string& text, const char* anchor = "middle") {
  return "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", y) + "\" text-anchor=\"" + anchor +
         "\" font-size=\"11\">" + text + "</text>\n";
}

std::string boxplot_svg(const std::string& title, const std::string& y_label, std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const Axis y = values.empty() ? Axis{0.0, 1.0} : Axis::covering(values.front(), values.back());
  auto ymap = [&](double v) { return y.map(v, kHeight - kMargin, kMargin); };
  const double cx = kWidth / 2;
  const double half = 50.0;

  std::string s = svg_open(title);
  s += line(kMargin, kMargin, kMargin, kHeight - kMargin);
  s += label(kMargin - 5, ymap(y.lo) + 4, fmt("%.3g", y.lo), "end");
  s += label(kMargin - 5, ymap(y.hi) + 4, fmt("%.3g", y.hi), "end");
  s += label(15, kHeight / 2, y_label, "start");
  if (!values.empty()) {
    const double q1 = quantile(values, 0.25), med = quantile(values, 0.5), q3 = quantile(values, 0.75);
    s += line(cx, ymap(values.front()), cx, ymap(q1));
    s += line(cx, ymap(q3), cx, ymap(values.back()));
    s += line(cx - half / 2, ymap(values.front()), cx + half / 2, ymap(values.front()));
    s += line(cx - half / 2, ymap(values.back()), cx + half / 2, ymap(values.back()));
    s += "<rect x=\"" + fmt("%.2f", cx - half) + "\" y=\"" + fmt("%.2f", ymap(q3)) + "\" width=\"" +
         fmt("%.2f", 2 * half) + "\" height=\"" + fmt("%.2f", ymap(q1) - ymap(q3)) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    s += line(cx - half, ymap(med), cx + half, ymap(med), " stroke-width=\"2\"");
  }
  return s + "</svg>\n";
}

std::string scatter_svg(const std::vector<PsiSample>& rows) {
  double lo = 0.0, hi = 0.0;
  if (!rows.empty()) {
    lo = hi = rows.front().psi_true;
    for (const auto& r : rows) {
      lo = std::min({lo, r.psi_true, r.psi_pred});
      hi = std::max({hi, r.psi_true, r.psi_pred});
    }
  }
  const Axis axis = Axis::covering(lo, hi);
  auto xmap = [&](double v) { return axis.map(v, kMargin, kWidth - kMargin); };
  auto ymap = [&](double v) { return axis.map(v, kHeight - kMargin, kMargin); };

  std::string s = svg_open("Estimated vs ground-truth PSI");
  s += line(kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin);
  s += line(kMargin, kMargin, kMargin, kHeight - kMargin);
  s += line(xmap(axis.lo), ymap(axis.lo), xmap(axis.hi), ymap(axis.hi), " stroke-dasharray=\"4 4\"");
  s += label(kWidth / 2, kHeight - 15, "ground-truth PSI [deg]");
  s += label(15, kHeight / 2, "estimated PSI [deg]", "start");
  s += label(kMargin, kHeight - kMargin + 15, fmt("%.3g", axis.lo));
  s += label(kWidth - kMargin, kHeight - kMargin + 15, fmt("%.3g", axis.hi));
  for (const auto& r : rows) {
    s += "<circle cx=\"" + fmt("%.2f", xmap(r.psi_true)) + "\" cy=\"" + fmt("%.2f", ymap(r.psi_pred)) +
         "\" r=\"2\"/>\n";
  }
  return s + "</svg>\n";
}

}  // namespace

double dice(const MaskImage& a, const MaskImage& b) {
  if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) {
    throw InvalidArgument("dice: mask dimensions differ");
  }
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0;
    const bool y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

SegScore score_segmentation(std::vector<ImageDice> per_image) {
  std::sort(per_image.begin(), per_image.end(),
            [](const ImageDice& a, const ImageDice& b) { return a.sample_id < b.sample_id; });
  std::vector<double> values;
  for (const auto& d : per_image) {
    if (!(d.dice >= 0.0 && d.dice <= 1.0)) throw InvalidArgument("Dice of " + d.sample_id + " is outside [0, 1]");
    values.push_back(d.dice);
  }
  const SummaryStats s = summarize(values);
  return {std::move(per_image), s.mean, s.std};
}

std::size_t best_stratum_size(std::size_t patients) { return (3 * patients + 3) / 4; }

PsiReport psi_error_report(std::span<const PsiPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("PSI report needs at least one sample");

  PsiReport report;
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.psi_true) || !std::isfinite(p.psi_pred)) {
      throw InvalidArgument("non-finite PSI value for sample " + p.sample_id);
    }
    if (!ids.insert(p.sample_id).second) throw InvalidArgument("duplicate sample id " + p.sample_id);
    report.per_sample.push_back({p.sample_id, p.patient_id, p.psi_true, p.psi_pred, p.psi_pred - p.psi_true});
  }
  // Canonical order makes every statistic independent of input order.
  std::sort(report.per_sample.begin(), report.per_sample.end(), [](const PsiSample& a, const PsiSample& b) {
    return std::tie(a.patient_id, a.sample_id) < std::tie(b.patient_id, b.sample_id);
  });

  std::map<std::string, std::vector<double>> abs_by_patient;
  std::vector<double> all_abs;
  for (const auto& s : report.per_sample) {
    abs_by_patient[s.patient_id].push_back(std::abs(s.error));
    all_abs.push_back(std::abs(s.error));
  }
  report.overall = summarize(all_abs);

  for (const auto& [id, errs] : abs_by_patient) {
    report.per_patient.push_back({id, errs.size(), summarize(errs).mean});
  }

  std::vector<const PatientError*> ranked;
  for (const auto& p : report.per_patient) ranked.push_back(&p);
  std::sort(ranked.begin(), ranked.end(), [](const PatientError* a, const PatientError* b) {
    return std::tie(a->mean_abs_error, a->patient_id) < std::tie(b->mean_abs_error, b->patient_id);
  });

  const std::size_t n_best = best_stratum_size(ranked.size());
  std::vector<double> best_abs, worst_abs;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const bool is_best = i < n_best;
    (is_best ? report.best : report.worst).patients.push_back(ranked[i]->patient_id);
  }
  const std::set<std::string> best_ids(report.best.patients.begin(), report.best.patients.end());
  for (const auto& [id, errs] : abs_by_patient) {
    auto& dst = best_ids.contains(id) ? best_abs : worst_abs;
    dst.insert(dst.end(), errs.begin(), errs.end());
  }
  report.best.abs_error = summarize(best_abs);
  report.worst.abs_error = summarize(worst_abs);
  return report;
}

nlohmann::json to_json(const SegScore& s) {
  ojson j;
  j["std_convention"] = "population";
  j["count"] = s.per_image.size();
  j["mean_dice"] = s.mean;
  j["std_dice"] = s.std;
  ojson rows = ojson::array();
  for (const auto& d : s.per_image) rows.push_back(ojson{{"sample_id", d.sample_id}, {"dice", d.dice}});
  j["per_image"] = std::move(rows);
  return nlohmann::json::parse(j.dump());
}

SegScore seg_score_from_json(const nlohmann::json& j) {
  SegScore s;
  for (const auto& row : j.at("per_image")) {
    s.per_image.push_back({row.at("sample_id").get<std::string>(), row.at("dice").get<double>()});
  }
  s.mean = j.at("mean_dice").get<double>();
  s.std = j.at("std_dice").get<double>();
  return s;
}

nlohmann::json to_json(const PsiReport& r) {
  // Built as ordered_json for a readable key order, returned as json.
  ojson j;
  j["std_convention"] = "population";
  j["error_sign"] = "pred - true";
  j["overall"] = stats_json(r.overall);
  auto stratum = [](const Stratum& s) {
    ojson out = stats_json(s.abs_error);
    out["patient_count"] = s.patients.size();
    out["patients"] = s.patients;
    return out;
  };
  j["best_75"] = stratum(r.best);
  j["worst_25"] = stratum(r.worst);
  ojson patients = ojson::array();
  for (const auto& p : r.per_patient) {
    patients.push_back(ojson{{"patient_id", p.patient_id}, {"samples", p.samples},
                             {"mean_abs_error_deg", p.mean_abs_error}});
  }
  j["per_patient"] = std::move(patients);
  ojson samples = ojson::array();
  for (const auto& s : r.per_sample) {
    samples.push_back(ojson{{"sample_id", s.sample_id},
                            {"patient_id", s.patient_id},
                            {"psi_true_deg", s.psi_true},
                            {"psi_pred_deg", s.psi_pred},
                            {"error_deg", s.error}});
  }
  j["per_sample"] = std::move(samples);
  return nlohmann::json(j);
}

PsiReport psi_report_from_json(const nlohmann::json& j) {
  PsiReport r;
  r.overall = stats_from_json(j.at("overall"));
  auto stratum = [](const nlohmann::json& s) {
    Stratum out;
    out.abs_error = stats_from_json(s);
    out.patients = s.at("patients").get<std::vector<std::string>>();
    return out;
  };
  r.best = stratum(j.at("best_75"));
  r.worst = stratum(j.at("worst_25"));
  for (const auto& p : j.at("per_patient")) {
    r.per_patient.push_back({p.at("patient_id").get<std::string>(), p.at("samples").get<std::size_t>(),
                             p.at("mean_abs_error_deg").get<double>()});
  }
  for (const auto& s : j.at("per_sample")) {
    r.per_sample.push_back({s.at("sample_id").get<std::string>(), s.at("patient_id").get<std::string>(),
                            s.at("psi_true_deg").get<double>(), s.at("psi_pred_deg").get<double>(),
                            s.at("error_deg").get<double>()});
  }
  return r;
}

std::vector<PsiSample> scatter_subsample(const PsiReport& report, const PlotOptions& options) {
  if (options.scatter_per_patient < 0) throw InvalidArgument("scatter_per_patient must be >= 0");
  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) rows_of[report.per_sample[i].patient_id].push_back(i);

  const auto limit = static_cast<std::size_t>(options.scatter_per_patient);
  std::vector<bool> keep(report.per_sample.size(), true);
  if (limit > 0) {
    for (auto& [id, rows] : rows_of) {
      if (rows.size() <= limit) continue;
      RandomStream stream(combine_seeds({options.seed, hash_string(id)}));
      for (std::size_t i = 0; i < limit; ++i) {
        const auto j = i + static_cast<std::size_t>(stream.below(rows.size() - i));
        std::swap(rows[i], rows[j]);
      }
      for (std::size_t i = limit; i < rows.size(); ++i) keep[rows[i]] = false;
    }
  }
  std::vector<PsiSample> out;
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    if (keep[i]) out.push_back(report.per_sample[i]);
  }
  return out;
}

std::vector<fs::path> emit_plots(const PsiReport* psi, const SegScore* seg, const fs::path& out_dir,
                                 const PlotOptions& options) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    written.push_back(out_dir / name);
  };

  if (seg) {
    std::string csv = "sample_id,dice\n";
    std::vector<double> values;
    for (const auto& d : seg->per_image) {
      csv += csv_field(d.sample_id) + "," + format_double(d.dice) + "\n";
      values.push_back(d.dice);
    }
    emit("dice_box.csv", csv);
    emit("dice_box.svg", boxplot_svg("Dice coefficient", "Dice", values));
  }

  if (psi) {
    std::string box = "patient_id,mean_abs_error_deg\n";
    std::vector<double> values;
    for (const auto& p : psi->per_patient) {
      box += csv_field(p.patient_id) + "," + format_double(p.mean_abs_error) + "\n";
      values.push_back(p.mean_abs_error);
    }
    emit("psi_box.csv", box);
    emit("psi_box.svg", boxplot_svg("Per-patient PSI error", "|error| [deg]", values));

    const auto rows = scatter_subsample(*psi, options);
    std::string scatter = "psi_true_deg,psi_pred_deg,patient_id\n";
    for (const auto& r : rows) {
      scatter += format_double(r.psi_true) + "," + format_double(r.psi_pred) + "," + csv_field(r.patient_id) + "\n";
    }
    emit("psi_scatter.csv", scatter);
    emit("psi_scatter.svg", scatter_svg(rows));
  }
  return written;
}

}  // namespace psidrr
