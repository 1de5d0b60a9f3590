#include "psidrr/subject.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "psidrr/error.hpp"

namespace psidrr {

namespace {

constexpr std::string_view kLandmarkSuffix = "_landmarks.json";

nlohmann::json point_json(const Vec3& p) { return nlohmann::json::array({p.x(), p.y(), p.z()}); }

Vec3 point_from_json(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw FormatError(std::string("landmark ") + key + " must be [x, y, z]");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace

void validate(const Subject& s) {
  validate(s.ct);
  validate(s.mask);
  if (!(s.ct.geometry == s.mask.geometry)) throw InvalidArgument("CT and mask grids differ");
}

void to_json(nlohmann::json& j, const LandmarkSet& l) {
  j = nlohmann::json{{"asis_left", point_json(l.asis_left)},
                     {"asis_right", point_json(l.asis_right)},
                     {"pt_left", point_json(l.pt_left)},
                     {"pt_right", point_json(l.pt_right)}};
}

void from_json(const nlohmann::json& j, LandmarkSet& l) {
  l.asis_left = point_from_json(j, "asis_left");
  l.asis_right = point_from_json(j, "asis_right");
  l.pt_left = point_from_json(j, "pt_left");
  l.pt_right = point_from_json(j, "pt_right");
}

void write_landmarks(const LandmarkSet& l, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out << nlohmann::json(l).dump() << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

LandmarkSet read_landmarks(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<LandmarkSet>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad landmarks file " + path.string() + ": " + e.what());
  }
}

void save_subject(const Subject& s, const fs::path& dir, const std::string& id) {
  validate(s);
  fs::create_directories(dir);
  write_volume(s.ct, dir / (id + "_ct.mhd"));
  write_volume(s.mask, dir / (id + "_mask.mhd"));
  write_landmarks(s.landmarks, dir / (id + std::string(kLandmarkSuffix)));
}

Subject load_subject(const fs::path& dir, const std::string& id) {
  Subject s;
  s.ct = read_attenuation_volume(dir / (id + "_ct.mhd"));
  s.mask = read_mask_volume(dir / (id + "_mask.mhd"));
  s.landmarks = read_landmarks(dir / (id + std::string(kLandmarkSuffix)));
  validate(s);
  return s;
}

std::vector<std::string> list_subjects(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > kLandmarkSuffix.size() && name.ends_with(kLandmarkSuffix)) {
      ids.push_back(name.substr(0, name.size() - kLandmarkSuffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace psidrr
