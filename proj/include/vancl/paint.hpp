#pragma once

#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "vancl/core.hpp"

namespace vancl::paint {

enum class PaintMode { kFill, kOutline, kNone };

std::string to_string(PaintMode mode);
PaintMode paint_mode_from_string(const std::string& s);

struct ColorRGB {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const ColorRGB&) const = default;
};

ColorRGB color_from_hex(const std::string& hex);  // "#RRGGBB"
std::string to_hex(ColorRGB c);

struct PaintSpec {
  ColorRGB rgb;
  PaintMode mode = PaintMode::kFill;
  bool operator==(const PaintSpec&) const = default;
};

// Label (including OTHER) -> color + paint mode. std::map keeps iteration
// order deterministic.
struct ColorScheme {
  std::string name;
  std::map<std::string, PaintSpec> mapping;
  bool none_for_all = false;  // the "none" scheme: every label unpainted

  const PaintSpec& spec_for(const std::string& label) const;  // throws on missing label
  void require_covers(const core::LabelSet& labels) const;
  bool is_noop() const { return none_for_all; }

  static ColorScheme from_json(const nlohmann::json& j, const std::string& name);
  nlohmann::json to_json() const;
};

// Table rows 1..8: 1 standard, 2-3 swapped, 4 grayscale, 5 red family,
// 6 blue family, 7 outlines, 8 all white.
ColorScheme builtin_scheme(int row);

// Resolves "1".."8", "none" (every label unpainted), or a JSON file path.
ColorScheme resolve_scheme(const std::string& ref);

struct PaintedDocument {
  std::string source_doc_id;
  core::RasterImage image;
  std::string scheme_name;
};

// Paints segment boxes in document order (last writer wins on overlap).
// Pixels outside every box are bit-identical to the source image.
PaintedDocument paint_document(const core::Document& doc, const ColorScheme& scheme);

using core::roi_pixel_rect;

}  // namespace vancl::paint
