#include "psidrr/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "psidrr/error.hpp"
#include "psidrr/text.hpp"

namespace psidrr {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

template <class T>
std::string encode_le(const std::vector<T>& values) {
  std::string out(values.size() * sizeof(T), '\0');
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T swapped = byteswap_value(values[i]);
      std::memcpy(out.data() + i * sizeof(T), &swapped, sizeof(T));
    }
  }
  return out;
}

template <class T>
std::vector<T> decode_le(const std::string& bytes) {
  std::vector<T> values(bytes.size() / sizeof(T));
  std::memcpy(values.data(), bytes.data(), values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& v : values) v = byteswap_value(v);
  }
  return values;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::string_view element_type_name(ElementKind kind) {
  return kind == ElementKind::attenuation_f32 ? "MET_FLOAT" : "MET_UCHAR";
}

template <class T>
constexpr ElementKind kind_of() {
  return std::is_same_v<T, float> ? ElementKind::attenuation_f32 : ElementKind::mask_u8;
}

// ---------------------------------------------------------------------------
// MetaImage header

struct MetaHeader {
  GridGeometry geometry;
  ElementKind kind = ElementKind::attenuation_f32;
  fs::path data_file;
};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = s.find_first_not_of(" \t", pos);
    if (start == std::string_view::npos) break;
    auto end = s.find_first_of(" \t", start);
    if (end == std::string_view::npos) end = s.size();
    parts.push_back(s.substr(start, end - start));
    pos = end;
  }
  return parts;
}

template <class T>
std::array<T, 3> parse_triple(const std::string& key, std::string_view value) {
  const auto parts = split_ws(value);
  if (parts.size() != 3) throw FormatError(key + " needs 3 values, got '" + std::string(value) + "'");
  std::array<T, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const auto v = parse_number<T>(parts[a]);
    if (!v) throw FormatError(key + ": cannot parse '" + std::string(parts[a]) + "'");
    out[a] = *v;
  }
  return out;
}

bool is_true(std::string_view v) { return v == "True" || v == "true" || v == "1"; }
bool is_false(std::string_view v) { return v == "False" || v == "false" || v == "0"; }

MetaHeader parse_header(const fs::path& header_path) {
  const std::string text = read_file(header_path);
  std::map<std::string, std::string> entries;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError(header_path.string() + ":" + std::to_string(line_no) + ": expected 'Key = Value'");
    }
    std::string key(trim(body.substr(0, eq)));
    std::string value(trim(body.substr(eq + 1)));
    if (key == "Origin" || key == "Position") key = "Offset";
    if (!entries.emplace(key, value).second) throw FormatError("duplicate header key " + key);
  }

  auto require = [&](const char* key) -> const std::string& {
    const auto it = entries.find(key);
    if (it == entries.end()) throw FormatError(std::string("missing header key ") + key);
    return it->second;
  };

  for (const auto& [key, value] : entries) {
    if (key == "NDims" || key == "DimSize" || key == "ElementSpacing" || key == "Offset" ||
        key == "ElementType" || key == "ElementDataFile" || key == "ObjectType" ||
        key == "AnatomicalOrientation" || key == "CenterOfRotation" || key == "Comment") {
      continue;
    }
    if (key == "BinaryData") {
      if (!is_true(value)) throw FormatError("only binary data is supported");
    } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
      if (!is_false(value)) throw FormatError("big-endian payloads are not supported");
    } else if (key == "CompressedData") {
      if (!is_false(value)) throw FormatError("compressed payloads are not supported");
    } else if (key == "ElementNumberOfChannels") {
      if (value != "1") throw FormatError("only single-channel volumes are supported");
    } else if (key == "HeaderSize") {
      if (value != "0") throw FormatError("raw header skipping is not supported");
    } else if (key == "TransformMatrix") {
      const auto parts = split_ws(value);
      static constexpr std::array<std::string_view, 9> identity{"1", "0", "0", "0", "1", "0", "0", "0", "1"};
      if (!std::equal(parts.begin(), parts.end(), identity.begin(), identity.end())) {
        throw FormatError("only identity TransformMatrix is supported");
      }
    } else {
      throw FormatError("unknown header key " + key);
    }
  }

  if (require("NDims") != "3") throw FormatError("NDims must be 3");

  MetaHeader h;
  h.geometry.dims = parse_triple<int>("DimSize", require("DimSize"));
  h.geometry.spacing = parse_triple<double>("ElementSpacing", require("ElementSpacing"));
  if (const auto it = entries.find("Offset"); it != entries.end()) {
    h.geometry.origin = parse_triple<double>("Offset", it->second);
  }

  const auto& type = require("ElementType");
  if (type == "MET_FLOAT") {
    h.kind = ElementKind::attenuation_f32;
  } else if (type == "MET_UCHAR") {
    h.kind = ElementKind::mask_u8;
  } else {
    throw FormatError("unsupported ElementType " + type);
  }

  const auto& data_file = require("ElementDataFile");
  if (data_file == "LOCAL" || data_file.starts_with("LIST")) {
    throw FormatError("ElementDataFile must name a separate raw file");
  }
  h.data_file = header_path.parent_path() / data_file;
  try {
    validate(h.geometry);
  } catch (const InvalidArgument& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  return h;
}

template <class T>
Volume3<T> load_payload(const MetaHeader& h) {
  const std::string bytes = read_file(h.data_file);
  const std::size_t expected = h.geometry.voxel_count() * sizeof(T);
  if (bytes.size() != expected) {
    throw FormatError("raw size mismatch for " + h.data_file.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  Volume3<T> v;
  v.geometry = h.geometry;
  v.data = decode_le<T>(bytes);
  try {
    validate(v);
  } catch (const InvalidArgument& e) {
    throw FormatError(h.data_file.string() + ": " + e.what());
  }
  return v;
}

template <class T>
void write_volume_impl(const Volume3<T>& v, const fs::path& header_path) {
  validate(v);
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  if (raw_path == header_path) throw InvalidArgument("volume header path must not end in .raw");

  const auto& g = v.geometry;
  auto triple = [](const auto& a) {
    std::string s;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i) s += ' ';
      if constexpr (std::is_same_v<std::decay_t<decltype(a[0])>, double>) {
        s += format_double(a[i]);
      } else {
        s += std::to_string(a[i]);
      }
    }
    return s;
  };

  std::string header;
  header += "ObjectType = Image\n";
  header += "NDims = 3\n";
  header += "BinaryData = True\n";
  header += "BinaryDataByteOrderMSB = False\n";
  header += "CompressedData = False\n";
  header += "Offset = " + triple(g.origin) + "\n";
  header += "ElementSpacing = " + triple(g.spacing) + "\n";
  header += "DimSize = " + triple(g.dims) + "\n";
  header += "ElementType = " + std::string(element_type_name(kind_of<T>())) + "\n";
  header += "ElementDataFile = " + raw_path.filename().string() + "\n";

  write_file(raw_path, encode_le(v.data));
  write_file(header_path, header);
}

// ---------------------------------------------------------------------------
// Images

struct ImageMeta {
  int width = 0;
  int height = 0;
  std::array<double, 2> spacing{};
  ElementKind kind = ElementKind::attenuation_f32;
};

ImageMeta read_sidecar(const fs::path& payload_path) {
  const auto path = sidecar_path(payload_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("bad sidecar " + path.string() + ": " + e.what());
  }
  ImageMeta m;
  try {
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    const auto& sp = j.at("pixel_spacing_mm");
    if (!sp.is_array() || sp.size() != 2) throw FormatError("pixel_spacing_mm must have 2 entries");
    m.spacing = {sp[0].get<double>(), sp[1].get<double>()};
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "intensity_f32") {
      m.kind = ElementKind::attenuation_f32;
    } else if (kind == "mask_u8") {
      m.kind = ElementKind::mask_u8;
    } else {
      throw FormatError("unknown image kind " + kind);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad sidecar " + path.string() + ": " + e.what());
  }
  if (m.width < 1 || m.height < 1) throw FormatError("image dimensions must be >= 1");
  if (!(m.spacing[0] > 0.0) || !(m.spacing[1] > 0.0) || !std::isfinite(m.spacing[0]) ||
      !std::isfinite(m.spacing[1])) {
    throw FormatError("pixel_spacing_mm must be positive");
  }
  return m;
}

template <class T>
Image2<T> load_image_payload(const fs::path& payload_path, const ImageMeta& m) {
  const std::string bytes = read_file(payload_path);
  const std::size_t expected = static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height) * sizeof(T);
  if (bytes.size() != expected) {
    throw FormatError("image payload size mismatch for " + payload_path.string() + ": expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  }
  Image2<T> img;
  img.width = m.width;
  img.height = m.height;
  img.pixel_spacing = m.spacing;
  img.data = decode_le<T>(bytes);
  try {
    validate(img);
  } catch (const InvalidArgument& e) {
    throw FormatError(payload_path.string() + ": " + e.what());
  }
  return img;
}

template <class T>
void write_image_impl(const Image2<T>& img, const fs::path& payload_path) {
  validate(img);
  const auto side = sidecar_path(payload_path);
  if (side == payload_path) throw InvalidArgument("image payload path must not end in .json");
  nlohmann::ordered_json j;
  j["width"] = img.width;
  j["height"] = img.height;
  j["pixel_spacing_mm"] = {img.pixel_spacing[0], img.pixel_spacing[1]};
  j["kind"] = std::is_same_v<T, float> ? "intensity_f32" : "mask_u8";
  write_file(payload_path, encode_le(img.data));
  write_file(side, j.dump() + "\n");
}

}  // namespace

std::string_view to_string(ElementKind kind) {
  return kind == ElementKind::attenuation_f32 ? "attenuation_f32" : "mask_u8";
}

std::array<double, 3> GridGeometry::center() const {
  std::array<double, 3> c{};
  for (int a = 0; a < 3; ++a) c[a] = origin[a] + 0.5 * (dims[a] - 1) * spacing[a];
  return c;
}

GridGeometry GridGeometry::centered(std::array<int, 3> dims, std::array<double, 3> spacing) {
  GridGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
  return g;
}

void validate(const GridGeometry& g) {
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 1) throw InvalidArgument("volume dims must be >= 1");
    if (!(g.spacing[a] > 0.0) || !std::isfinite(g.spacing[a])) throw InvalidArgument("volume spacing must be > 0");
    if (!std::isfinite(g.origin[a])) throw InvalidArgument("volume origin must be finite");
  }
}

void validate(const AttenuationVolume& v) {
  validate(v.geometry);
  if (v.data.size() != v.geometry.voxel_count()) throw InvalidArgument("volume data length does not match dims");
  for (const float x : v.data) {
    if (!std::isfinite(x) || x < 0.0f) throw InvalidArgument("attenuation voxels must be finite and >= 0");
  }
}

void validate(const MaskVolume& v) {
  validate(v.geometry);
  if (v.data.size() != v.geometry.voxel_count()) throw InvalidArgument("volume data length does not match dims");
  for (const auto x : v.data) {
    if (x > 1) throw InvalidArgument("mask voxels must be 0 or 1");
  }
}

namespace {
template <class T>
void validate_image_shape(const Image2<T>& img) {
  if (img.width < 1 || img.height < 1) throw InvalidArgument("image dimensions must be >= 1");
  for (const double s : img.pixel_spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("pixel spacing must be > 0");
  }
  if (img.data.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw InvalidArgument("image data length does not match dimensions");
  }
}
}  // namespace

void validate(const IntensityImage& img) {
  validate_image_shape(img);
  for (const float x : img.data) {
    if (!std::isfinite(x) || x < 0.0f) throw InvalidArgument("intensity pixels must be finite and >= 0");
  }
}

void validate(const MaskImage& img) {
  validate_image_shape(img);
  for (const auto x : img.data) {
    if (x > 1) throw InvalidArgument("mask pixels must be 0 or 1");
  }
}

AnyVolume read_volume(const fs::path& header_path) {
  const MetaHeader h = parse_header(header_path);
  if (h.kind == ElementKind::attenuation_f32) return load_payload<float>(h);
  return load_payload<std::uint8_t>(h);
}

AttenuationVolume read_attenuation_volume(const fs::path& header_path) {
  const MetaHeader h = parse_header(header_path);
  if (h.kind != ElementKind::attenuation_f32) throw FormatError(header_path.string() + " is not a MET_FLOAT volume");
  return load_payload<float>(h);
}

MaskVolume read_mask_volume(const fs::path& header_path) {
  const MetaHeader h = parse_header(header_path);
  if (h.kind != ElementKind::mask_u8) throw FormatError(header_path.string() + " is not a MET_UCHAR volume");
  return load_payload<std::uint8_t>(h);
}

void write_volume(const AttenuationVolume& v, const fs::path& header_path) { write_volume_impl(v, header_path); }
void write_volume(const MaskVolume& v, const fs::path& header_path) { write_volume_impl(v, header_path); }

fs::path sidecar_path(const fs::path& payload_path) {
  fs::path p = payload_path;
  p.replace_extension(".json");
  return p;
}

AnyImage read_image(const fs::path& payload_path) {
  const ImageMeta m = read_sidecar(payload_path);
  if (m.kind == ElementKind::attenuation_f32) return load_image_payload<float>(payload_path, m);
  return load_image_payload<std::uint8_t>(payload_path, m);
}

IntensityImage read_intensity_image(const fs::path& payload_path) {
  const ImageMeta m = read_sidecar(payload_path);
  if (m.kind != ElementKind::attenuation_f32) throw FormatError(payload_path.string() + " is not an intensity image");
  return load_image_payload<float>(payload_path, m);
}

MaskImage read_mask_image(const fs::path& payload_path) {
  const ImageMeta m = read_sidecar(payload_path);
  if (m.kind != ElementKind::mask_u8) throw FormatError(payload_path.string() + " is not a mask image");
  return load_image_payload<std::uint8_t>(payload_path, m);
}

void write_image(const IntensityImage& img, const fs::path& payload_path) { write_image_impl(img, payload_path); }
void write_image(const MaskImage& img, const fs::path& payload_path) { write_image_impl(img, payload_path); }

void write_pgm(const MaskImage& img, const fs::path& path) {
  validate(img);
  std::string bytes = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t header_size = bytes.size();
  bytes.resize(header_size + img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    bytes[header_size + i] = static_cast<char>(img.data[i] ? 255 : 0);
  }
  write_file(path, bytes);
}

MaskImage read_pgm(const fs::path& path, std::array<double, 2> pixel_spacing) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;

  // Header tokens are separated by whitespace; '#' starts a comment line.
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };

  if (next_token() != "P5") throw FormatError(path.string() + " is not a binary PGM (P5)");
  const auto width = parse_number<int>(next_token());
  const auto height = parse_number<int>(next_token());
  const auto maxval = parse_number<int>(next_token());
  if (!width || !height || !maxval || *width < 1 || *height < 1) throw FormatError("bad PGM header in " + path.string());
  if (*maxval != 255) throw FormatError("PGM maxval must be 255 in " + path.string());
  ++pos;  // single whitespace byte after maxval

  const std::size_t count = static_cast<std::size_t>(*width) * static_cast<std::size_t>(*height);
  if (bytes.size() < pos || bytes.size() - pos != count) {
    throw FormatError("PGM payload size mismatch in " + path.string());
  }

  MaskImage img(*width, *height, pixel_spacing);
  for (std::size_t i = 0; i < count; ++i) {
    const auto b = static_cast<unsigned char>(bytes[pos + i]);
    if (b != 0 && b != 255) throw FormatError("PGM mask pixels must be 0 or 255 in " + path.string());
    img.data[i] = b ? 1 : 0;
  }
  validate(img);
  return img;
}

}  // namespace psidrr
