#include "psidrr/cli.hpp"

#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "psidrr/dataset.hpp"
#include "psidrr/metrics.hpp"
#include "psidrr/subject.hpp"
#include "test_support.hpp"

using namespace psidrr;
using psidrr::testing::slurp;
using psidrr::testing::spit;
using psidrr::testing::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "psidrr");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Every failure must be exactly one JSON line on stderr.
void check_error_line(const Result& r, const char* kind) {
  REQUIRE(!r.err.empty());
  CHECK(r.err.back() == '\n');
  CHECK(r.err.find('\n') == r.err.size() - 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j.at("error") == kind);
  CHECK(j.at("message").is_string());
}

// Small phantoms and detector so whole pipelines run in about a second.
void make_phantoms(const TempDir& dir, int count) {
  const auto r = run_cli({"--out", dir.path().string(), "phantom", "gen", "--count", std::to_string(count), "--dims",
                          "48", "--spacing", "5.5"});
  REQUIRE(r.code == 0);
}

std::string small_camera_json(const TempDir& dir) {
  const auto path = (dir / "camera.json").string();
  spit(path, R"({"detector_pixels":[40,40],"detector_pixel_mm":[6.0,6.0]})");
  return path;
}

Result gen_reg(const TempDir& dir, const std::string& root, const std::string& threads = "0") {
  return run_cli({"--out", root, "--seed", "5", "--threads", threads, "dataset", "gen", "--preset", "reg",
                  "--patients-dir", (dir / "volumes").string(), "--n-per-patient", "3", "--camera-json",
                  small_camera_json(dir)});
}

void write_truth_predictions(const fs::path& manifest, const fs::path& csv) {
  const auto m = read_manifest(manifest);
  std::string text = "sample_id,psi_pred_deg\n";
  for (const auto& r : m.records) text += r.sample_id + "," + nlohmann::json(r.psi_deg).dump() + "\n";
  spit(csv, text);
}

}  // namespace

TEST_CASE("help exits 0") {
  const auto r = run_cli({"--help"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("dataset") != std::string::npos);
}

TEST_CASE("validation errors exit 1 with a JSON line") {
  SUBCASE("no subcommand") { check_error_line(run_cli({}), "validation"); }
  SUBCASE("unknown flag") {
    const auto r = run_cli({"phantom", "gen", "--count", "1", "--bogus"});
    CHECK(r.code == cli::kExitValidation);
    check_error_line(r, "validation");
  }
  SUBCASE("missing input file") {
    const auto r = run_cli({"eval", "psi", "--pred-csv", "/nonexistent/p.csv", "--manifest", "/nonexistent/m.jsonl"});
    CHECK(r.code == cli::kExitValidation);
    check_error_line(r, "validation");
  }
  SUBCASE("bad numeric flag") {
    const auto r = run_cli({"phantom", "gen", "--count", "two"});
    CHECK(r.code == cli::kExitValidation);
  }
  SUBCASE("unknown preset") {
    TempDir dir("cli");
    const auto r = run_cli({"dataset", "gen", "--preset", "xyz", "--patients-dir", dir.path().string()});
    CHECK(r.code == cli::kExitValidation);
    check_error_line(r, "validation");
  }
}

TEST_CASE("schema version mismatch is a validation error") {
  TempDir dir("cli");
  make_phantoms(dir, 2);
  REQUIRE(gen_reg(dir, (dir / "ds").string()).code == 0);
  auto text = slurp(dir / "ds" / "manifest.jsonl");
  text.replace(text.find("\"schema_version\":1"), 18, "\"schema_version\":9");
  spit(dir / "ds" / "manifest.jsonl", text);
  const auto r = run_cli({"dataset", "folds", "--manifest", (dir / "ds" / "manifest.jsonl").string(), "--k", "2"});
  CHECK(r.code == cli::kExitValidation);
  check_error_line(r, "validation");
}

TEST_CASE("runtime failures exit 2") {
  TempDir dir("cli");
  spit(dir / "blocker", "x");
  const auto r = run_cli({"--out", (dir / "blocker").string(), "phantom", "gen", "--count", "1", "--dims", "48",
                          "--spacing", "5.5"});
  CHECK(r.code == cli::kExitRuntime);
  check_error_line(r, "runtime");
}

TEST_CASE("phantom gen writes the patient layout") {
  TempDir dir("cli");
  make_phantoms(dir, 3);
  CHECK(list_subjects(dir / "volumes") == std::vector<std::string>{"phantom_0000", "phantom_0001", "phantom_0002"});
  const auto s = load_subject(dir / "volumes", "phantom_0001");
  CHECK(s.ct.geometry.dims == std::array<int, 3>{48, 48, 48});
}

TEST_CASE("render with identity pose records the phantom's PSI") {
  TempDir dir("cli");
  make_phantoms(dir, 1);
  const auto v = (dir / "volumes").string();
  const auto r = run_cli({"--out", (dir / "r").string(), "render", "--volume", v + "/phantom_0000_ct.mhd", "--mask",
                          v + "/phantom_0000_mask.mhd", "--landmarks", v + "/phantom_0000_landmarks.json",
                          "--camera-json", small_camera_json(dir)});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "r" / "render.f32"));
  CHECK(fs::exists(dir / "r" / "render.json"));
  CHECK(fs::exists(dir / "r" / "render_mask.pgm"));
  const auto summary = nlohmann::json::parse(slurp(dir / "r" / "render_render.json"));
  const auto l = read_landmarks(v + "/phantom_0000_landmarks.json");
  CHECK(summary.at("psi_deg").get<double>() == compute_psi(l).degrees);
  CHECK(read_intensity_image(dir / "r" / "render.f32").width == 40);
}

TEST_CASE("render pose flags reach the transform") {
  TempDir dir("cli");
  make_phantoms(dir, 1);
  const auto v = (dir / "volumes").string();
  const auto r = run_cli({"render", "--volume", v + "/phantom_0000_ct.mhd", "--landmarks",
                          v + "/phantom_0000_landmarks.json", "--rx", "12.5", "--tz", "-4", "--camera-json",
                          small_camera_json(dir), "--out", (dir / "r").string(), "--name", "posed"});
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(slurp(dir / "r" / "posed_render.json"));
  CHECK(summary.at("transform").at("euler_deg")[0] == 12.5);
  CHECK(summary.at("transform").at("translation_mm")[2] == -4.0);
  const auto l = read_landmarks(v + "/phantom_0000_landmarks.json");
  CHECK(std::abs(summary.at("psi_deg").get<double>() - (compute_psi(l).degrees + 12.5)) < 1e-9);
  CHECK_FALSE(fs::exists(dir / "r" / "posed_mask.pgm"));
}

TEST_CASE("dataset gen then folds on 8 phantoms gives 4 folds of 2") {
  TempDir dir("cli");
  make_phantoms(dir, 8);
  const auto root = (dir / "ds").string();
  REQUIRE(gen_reg(dir, root).code == 0);
  auto m = read_manifest(dir / "ds" / "manifest.jsonl");
  CHECK(m.records.size() == 24);
  CHECK(m.task == Task::regression);
  CHECK(m.bounds == kRegressionBounds);

  const auto r = run_cli({"dataset", "folds", "--manifest", root + "/manifest.jsonl", "--k", "4", "--seed", "3"});
  REQUIRE(r.code == 0);
  m = read_manifest(dir / "ds" / "manifest.jsonl");
  CHECK(m.fold_count == 4);
  std::map<int, std::set<std::string>> folds;
  for (const auto& rec : m.records) folds[rec.fold].insert(rec.patient_id);
  REQUIRE(folds.size() == 4);
  for (const auto& [f, ps] : folds) CHECK(ps.size() == 2);

  const auto too_many = run_cli({"dataset", "folds", "--manifest", root + "/manifest.jsonl", "--k", "9"});
  CHECK(too_many.code == cli::kExitValidation);
}

TEST_CASE("same argv gives byte-identical outputs at any thread count") {
  TempDir dir("cli");
  make_phantoms(dir, 2);
  REQUIRE(gen_reg(dir, (dir / "t1").string(), "1").code == 0);
  REQUIRE(gen_reg(dir, (dir / "t4").string(), "4").code == 0);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "t1")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "t1");
    CAPTURE(rel.string());
    CHECK(slurp(entry.path()) == slurp(dir / "t4" / rel));
  }
}

TEST_CASE("eval psi on ground truth reports 0 +- 0") {
  TempDir dir("cli");
  make_phantoms(dir, 4);
  REQUIRE(gen_reg(dir, (dir / "ds").string()).code == 0);
  const auto manifest = dir / "ds" / "manifest.jsonl";
  write_truth_predictions(manifest, dir / "predictions.csv");

  const auto r = run_cli({"--out", (dir / "eval").string(), "eval", "psi", "--pred-csv",
                          (dir / "predictions.csv").string(), "--manifest", manifest.string()});
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval" / "report.json")).at("psi");
  for (const char* key : {"overall", "best_75", "worst_25"}) {
    CAPTURE(key);
    CHECK(report.at(key).at("mean_abs_error_deg") == 0.0);
    CHECK(report.at(key).at("std_abs_error_deg") == 0.0);
  }
  CHECK(report.at("overall").at("count") == 12);
  CHECK(report.at("best_75").at("patient_count") == 3);
  CHECK(report.at("worst_25").at("patient_count") == 1);
}

TEST_CASE("eval psi input checks") {
  TempDir dir("cli");
  make_phantoms(dir, 1);
  REQUIRE(gen_reg(dir, (dir / "ds").string()).code == 0);
  const auto manifest = (dir / "ds" / "manifest.jsonl").string();
  auto eval = [&](const std::string& csv) {
    spit(dir / "p.csv", csv);
    return run_cli({"--out", (dir / "eval").string(), "eval", "psi", "--pred-csv", (dir / "p.csv").string(),
                    "--manifest", manifest});
  };
  CHECK(eval("id,psi\nphantom_0000_0000,1\n").code == cli::kExitValidation);
  CHECK(eval("sample_id,psi_pred_deg\nnobody_0000,1\n").code == cli::kExitValidation);
  CHECK(eval("sample_id,psi_pred_deg\nphantom_0000_0000,abc\n").code == cli::kExitValidation);
  CHECK(eval("sample_id,psi_pred_deg\nphantom_0000_0000,nan\n").code == cli::kExitValidation);
  CHECK(eval("sample_id,psi_pred_deg\n").code == cli::kExitValidation);
  CHECK(eval("sample_id,psi_pred_deg\r\nphantom_0000_0000,1.5\r\n").code == cli::kExitOk);
}

TEST_CASE("eval seg and report plots share report.json") {
  TempDir dir("cli");
  make_phantoms(dir, 2);
  REQUIRE(gen_reg(dir, (dir / "ds").string()).code == 0);
  const auto manifest = dir / "ds" / "manifest.jsonl";
  const auto m = read_manifest(manifest);

  fs::create_directories(dir / "pred");
  for (const auto& r : m.records) fs::copy_file(dir / "ds" / r.mask_path, dir / "pred" / (r.sample_id + ".pgm"));
  write_truth_predictions(manifest, dir / "predictions.csv");

  const auto out = (dir / "eval").string();
  REQUIRE(run_cli({"--out", out, "eval", "seg", "--pred-dir", (dir / "pred").string(), "--manifest",
                   manifest.string()})
              .code == 0);
  REQUIRE(run_cli({"--out", out, "eval", "psi", "--pred-csv", (dir / "predictions.csv").string(), "--manifest",
                   manifest.string()})
              .code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval" / "report.json"));
  CHECK(report.contains("psi"));
  REQUIRE(report.contains("seg"));
  CHECK(report.at("seg").at("mean_dice") == 1.0);
  CHECK(report.at("seg").at("count") == 6);

  const auto plots = run_cli({"--out", (dir / "plots").string(), "report", "plots", "--report-json",
                              (dir / "eval" / "report.json").string()});
  REQUIRE(plots.code == 0);
  for (const char* f : {"dice_box.csv", "dice_box.svg", "psi_box.csv", "psi_box.svg", "psi_scatter.csv",
                        "psi_scatter.svg"}) {
    CHECK(fs::exists(dir / "plots" / f));
  }
  REQUIRE(run_cli({"--out", (dir / "plots2").string(), "report", "plots", "--report-json",
                   (dir / "eval" / "report.json").string()})
              .code == 0);
  for (const auto& entry : fs::directory_iterator(dir / "plots")) {
    CHECK(slurp(entry.path()) == slurp(dir / "plots2" / entry.path().filename()));
  }

  SUBCASE("prediction of the wrong size") {
    MaskImage small(3, 3, {1, 1});
    write_pgm(small, dir / "pred" / (m.records[0].sample_id + ".pgm"));
    const auto r = run_cli({"--out", out, "eval", "seg", "--pred-dir", (dir / "pred").string(), "--manifest",
                            manifest.string()});
    CHECK(r.code == cli::kExitValidation);
  }
  SUBCASE("held-out fold must be complete") {
    REQUIRE(run_cli({"dataset", "folds", "--manifest", manifest.string(), "--k", "2"}).code == 0);
    fs::remove(dir / "pred" / (m.records[0].sample_id + ".pgm"));
    const auto m2 = read_manifest(manifest);
    const int fold = m2.records[0].fold;
    const auto r = run_cli({"--out", out, "eval", "seg", "--pred-dir", (dir / "pred").string(), "--manifest",
                            manifest.string(), "--fold", std::to_string(fold)});
    CHECK(r.code == cli::kExitValidation);
    const auto ok = run_cli({"--out", out, "eval", "seg", "--pred-dir", (dir / "pred").string(), "--manifest",
                             manifest.string(), "--fold", std::to_string(1 - fold)});
    CHECK(ok.code == 0);
  }
}
