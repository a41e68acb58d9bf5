#include "vancl/paint.hpp"

#include <array>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vancl/io.hpp"

namespace vancl::paint {

using core::ValidationError;

std::string to_string(PaintMode mode) {
  switch (mode) {
    case PaintMode::kFill: return "FILL";
    case PaintMode::kOutline: return "OUTLINE";
    case PaintMode::kNone: return "NONE";
  }
  return "FILL";
}

PaintMode paint_mode_from_string(const std::string& s) {
  if (s == "FILL") return PaintMode::kFill;
  if (s == "OUTLINE") return PaintMode::kOutline;
  if (s == "NONE") return PaintMode::kNone;
  throw ValidationError("unknown paint mode: " + s + " (expected FILL|OUTLINE|NONE)");
}

ColorRGB color_from_hex(const std::string& hex) {
  if (hex.size() != 7 || hex[0] != '#') throw ValidationError("bad color literal: " + hex);
  auto nib = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ValidationError("bad color literal: " + hex);
  };
  auto byte = [&](int i) { return static_cast<std::uint8_t>(nib(hex[i]) * 16 + nib(hex[i + 1])); };
  return ColorRGB{byte(1), byte(3), byte(5)};
}

std::string to_hex(ColorRGB c) {
  static const char* digits = "0123456789ABCDEF";
  std::string s = "#......";
  s[1] = digits[c.r >> 4];
  s[2] = digits[c.r & 15];
  s[3] = digits[c.g >> 4];
  s[4] = digits[c.g & 15];
  s[5] = digits[c.b >> 4];
  s[6] = digits[c.b & 15];
  return s;
}

const PaintSpec& ColorScheme::spec_for(const std::string& label) const {
  if (none_for_all) {
    static const PaintSpec none_spec{ColorRGB{0, 0, 0}, PaintMode::kNone};
    return none_spec;
  }
  auto it = mapping.find(label);
  if (it == mapping.end()) {
    throw ValidationError("color scheme '" + name + "' has no entry for label " + label);
  }
  return it->second;
}

void ColorScheme::require_covers(const core::LabelSet& labels) const {
  for (const auto& l : labels.names) (void)spec_for(l);
  (void)spec_for(core::kOtherLabel);
}

ColorScheme ColorScheme::from_json(const nlohmann::json& j, const std::string& name) {
  ColorScheme s;
  s.name = name;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& entry = it.value();
    if (!entry.contains("rgb") || !entry["rgb"].is_array() || entry["rgb"].size() != 3) {
      throw ValidationError("scheme entry for " + it.key() + " needs rgb:[r,g,b]");
    }
    PaintSpec spec;
    spec.rgb = ColorRGB{entry["rgb"][0].get<std::uint8_t>(), entry["rgb"][1].get<std::uint8_t>(),
                        entry["rgb"][2].get<std::uint8_t>()};
    spec.mode = entry.contains("mode") ? paint_mode_from_string(entry["mode"].get<std::string>())
                                       : PaintMode::kFill;
    s.mapping[it.key()] = spec;
  }
  if (s.mapping.empty()) throw ValidationError("color scheme " + name + " is empty");
  return s;
}

nlohmann::json ColorScheme::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [label, spec] : mapping) {
    j[label] = {{"rgb", {spec.rgb.r, spec.rgb.g, spec.rgb.b}}, {"mode", to_string(spec.mode)}};
  }
  return j;
}

namespace {

ColorScheme make_scheme(int row, const std::array<const char*, 4>& hex, PaintMode mode) {
  // entry order: QUESTION, ANSWER, HEADER, OTHER
  ColorScheme s;
  s.name = "row" + std::to_string(row);
  s.mapping["QUESTION"] = PaintSpec{color_from_hex(hex[0]), mode};
  s.mapping["ANSWER"] = PaintSpec{color_from_hex(hex[1]), mode};
  s.mapping["HEADER"] = PaintSpec{color_from_hex(hex[2]), mode};
  s.mapping[core::kOtherLabel] = PaintSpec{color_from_hex(hex[3]), mode};
  return s;
}

}  // namespace

ColorScheme builtin_scheme(int row) {
  switch (row) {
    case 1: return make_scheme(1, {"#FF0000", "#0000FF", "#00FF00", "#FFA500"}, PaintMode::kFill);
    case 2: return make_scheme(2, {"#0000FF", "#FF0000", "#00FF00", "#FFA500"}, PaintMode::kFill);
    case 3: return make_scheme(3, {"#FFA500", "#00FF00", "#FF0000", "#0000FF"}, PaintMode::kFill);
    case 4: return make_scheme(4, {"#CCCCCC", "#999999", "#333333", "#000000"}, PaintMode::kFill);
    case 5: return make_scheme(5, {"#FF0000", "#FF6699", "#FF3366", "#FF0099"}, PaintMode::kFill);
    case 6: return make_scheme(6, {"#0000FF", "#0033CC", "#0099FF", "#0066CC"}, PaintMode::kFill);
    case 7: return make_scheme(7, {"#FF0000", "#0000FF", "#FFA500", "#00FF00"}, PaintMode::kOutline);
    case 8: return make_scheme(8, {"#FFFFFF", "#FFFFFF", "#FFFFFF", "#FFFFFF"}, PaintMode::kFill);
    default: throw ValidationError("unknown builtin scheme row: " + std::to_string(row));
  }
}

ColorScheme resolve_scheme(const std::string& ref) {
  if (ref == "none") {
    ColorScheme s;
    s.name = "none";
    s.none_for_all = true;
    return s;
  }
  if (ref.size() == 1 && ref[0] >= '1' && ref[0] <= '8') return builtin_scheme(ref[0] - '0');
  const auto j = nlohmann::json::parse(io::read_file(ref));
  return ColorScheme::from_json(j, std::filesystem::path(ref).stem().string());
}

namespace {

void fill_rect(core::RasterImage& img, const core::PixelRect& r, ColorRGB c) {
  for (int y = r.top; y < r.bottom; ++y) {
    for (int x = r.left; x < r.right; ++x) img.set(x, y, c.r, c.g, c.b);
  }
}

void outline_rect(core::RasterImage& img, const core::PixelRect& r, ColorRGB c) {
  for (int y = r.top; y < r.bottom; ++y) {
    for (int x = r.left; x < r.right; ++x) {
      if (y == r.top || y == r.bottom - 1 || x == r.left || x == r.right - 1) {
        img.set(x, y, c.r, c.g, c.b);
      }
    }
  }
}

}  // namespace

PaintedDocument paint_document(const core::Document& doc, const ColorScheme& scheme) {
  PaintedDocument out;
  out.source_doc_id = doc.doc_id;
  out.scheme_name = scheme.name;
  out.image = doc.image;
  for (const auto& seg : doc.segments) {
    const PaintSpec& spec = scheme.spec_for(seg.label);
    if (spec.mode == PaintMode::kNone) continue;
    const core::PixelRect r = roi_pixel_rect(seg.box, doc.image.width, doc.image.height);
    if (r.empty()) continue;
    if (spec.mode == PaintMode::kFill) {
      fill_rect(out.image, r, spec.rgb);
    } else {
      outline_rect(out.image, r, spec.rgb);
    }
  }
  return out;
}

}  // namespace vancl::paint
