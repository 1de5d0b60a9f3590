#pragma once

// One patient's CT, pelvis mask and PSI landmarks, plus their on-disk layout:
//   <dir>/<id>_ct.mhd, <dir>/<id>_mask.mhd, <dir>/<id>_landmarks.json

#include <string>
#include <vector>

#include "json.hpp"
#include "psidrr/geometry.hpp"
#include "psidrr/volume_io.hpp"

namespace psidrr {

struct Subject {
  AttenuationVolume ct;
  MaskVolume mask;
  LandmarkSet landmarks;
};

/// Throws InvalidArgument unless ct and mask share a grid.
void validate(const Subject& s);

void to_json(nlohmann::json& j, const LandmarkSet& l);
void from_json(const nlohmann::json& j, LandmarkSet& l);

void write_landmarks(const LandmarkSet& l, const fs::path& path);
LandmarkSet read_landmarks(const fs::path& path);

void save_subject(const Subject& s, const fs::path& dir, const std::string& id);
Subject load_subject(const fs::path& dir, const std::string& id);

/// Subject ids found in dir (one per *_landmarks.json), sorted.
std::vector<std::string> list_subjects(const fs::path& dir);

}  // namespace psidrr
