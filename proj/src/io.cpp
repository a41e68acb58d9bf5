#include "vancl/io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vancl::io {

using core::ValidationError;

std::string encode_ppm(const core::RasterImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(3) * img.width * img.height) {
    throw ValidationError("raster image pixel buffer does not match its dimensions");
  }
  std::ostringstream os;
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::string out = os.str();
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_ppm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw ValidationError("truncated PPM header");
  return bytes.substr(start, pos - start);
}

}  // namespace

core::RasterImage decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (next_ppm_token(bytes, pos) != "P6") throw ValidationError("not a binary PPM (P6) file");
  const int w = std::stoi(next_ppm_token(bytes, pos));
  const int h = std::stoi(next_ppm_token(bytes, pos));
  const int maxval = std::stoi(next_ppm_token(bytes, pos));
  if (w <= 0 || h <= 0) throw ValidationError("PPM with non-positive dimensions");
  if (maxval != 255) throw ValidationError("only maxval 255 PPM is supported");
  if (pos >= bytes.size()) throw ValidationError("truncated PPM header");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(3) * w * h;
  if (bytes.size() - pos < need) throw ValidationError("truncated PPM pixel data");
  core::RasterImage img;
  img.width = w;
  img.height = h;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

void write_ppm(const std::filesystem::path& path, const core::RasterImage& img) {
  write_file(path, encode_ppm(img));
}

core::RasterImage read_ppm(const std::filesystem::path& path) {
  return decode_ppm(read_file(path));
}

nlohmann::json document_to_json(const core::Document& doc) {
  nlohmann::ordered_json j;
  j["doc_id"] = doc.doc_id;
  j["page_width_px"] = doc.page_width_px;
  j["page_height_px"] = doc.page_height_px;
  auto& segs = j["segments"] = nlohmann::ordered_json::array();
  for (const auto& s : doc.segments) {
    nlohmann::ordered_json sj;
    sj["id"] = s.id;
    sj["label"] = s.label;
    sj["box"] = {s.box_px.left, s.box_px.top, s.box_px.right, s.box_px.bottom};
    sj["tokens"] = s.tokens;
    segs.push_back(std::move(sj));
  }
  return j;
}

namespace {

const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                    const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError("missing field at " + path + "/" + key);
  return *it;
}

}  // namespace

core::Document document_from_json(const nlohmann::json& j, core::RasterImage image) {
  core::Document doc;
  doc.doc_id = require_field(j, "doc_id", "$").get<std::string>();
  doc.page_width_px = require_field(j, "page_width_px", "$").get<int>();
  doc.page_height_px = require_field(j, "page_height_px", "$").get<int>();
  doc.image = std::move(image);
  const auto& segs = require_field(j, "segments", "$");
  int idx = 0;
  for (const auto& sj : segs) {
    const std::string path = "$/segments/" + std::to_string(idx++);
    core::TextSegment seg;
    seg.id = require_field(sj, "id", path).get<int>();
    seg.label = require_field(sj, "label", path).get<std::string>();
    const auto& box = require_field(sj, "box", path);
    if (!box.is_array() || box.size() != 4) {
      throw ValidationError("field " + path + "/box must be [x1,y1,x2,y2]");
    }
    seg.box_px = core::PixelRect{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
                                 box[3].get<int>()};
    seg.box = core::normalize_box(seg.box_px, doc.page_width_px, doc.page_height_px, seg.id);
    seg.tokens = require_field(sj, "tokens", path).get<std::vector<std::string>>();
    doc.segments.push_back(std::move(seg));
  }
  return doc;
}

void write_document(const std::filesystem::path& dir, const core::Document& doc) {
  std::filesystem::create_directories(dir);
  write_file(dir / (doc.doc_id + ".json"), document_to_json(doc).dump(2) + "\n");
  write_ppm(dir / (doc.doc_id + ".ppm"), doc.image);
}

core::Document read_document(const std::filesystem::path& dir, const std::string& doc_id) {
  const auto j = nlohmann::json::parse(read_file(dir / (doc_id + ".json")));
  return document_from_json(j, read_ppm(dir / (doc_id + ".ppm")));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

}  // namespace vancl::io
