#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vancl::core {

// Raised for malformed user input / broken invariants; maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kOtherLabel = "OTHER";

// Axis-aligned rectangle in page pixel space, half-open [left,right) x [top,bottom).
struct PixelRect {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  int width() const { return right - left; }
  int height() const { return bottom - top; }
  bool empty() const { return right <= left || bottom <= top; }
  bool operator==(const PixelRect&) const = default;
};

// Coordinates on the 0..1000 page-relative grid.
struct BoundingBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool valid() const {
    return 0 <= x1 && x1 <= x2 && x2 <= 1000 && 0 <= y1 && y1 <= y2 && y2 <= 1000;
  }
  bool operator==(const BoundingBox&) const = default;
};

// Row-major RGB, 8 bits per channel.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size = 3 * width * height

  static RasterImage filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  bool operator==(const RasterImage&) const = default;
};

struct LabelSet {
  std::vector<std::string> names;  // OTHER is implicit, never listed

  bool contains(const std::string& name) const;
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;
};

struct TextSegment {
  int id = 0;
  std::vector<std::string> tokens;
  BoundingBox box;       // normalized grid
  PixelRect box_px;      // source pixel rectangle (kept for serialization fidelity)
  std::string label;     // entity type or OTHER
};

struct Document {
  std::string doc_id;
  std::vector<TextSegment> segments;  // reading order
  RasterImage image;
  int page_width_px = 0;
  int page_height_px = 0;

  int n_tokens() const;
};

struct Entity {
  std::string type;
  int start = 0;  // token index, half-open [start, end)
  int end = 0;

  bool operator==(const Entity&) const = default;
};

// One tag string per token, over {O} + {B-t, I-t}.
using TagSequence = std::vector<std::string>;

// Fixed tag order for a label set: O, B-l1, I-l1, B-l2, I-l2, ...
// The index order doubles as the Viterbi tie-break order.
class TagAlphabet {
 public:
  explicit TagAlphabet(const LabelSet& labels);

  int size() const { return static_cast<int>(tags_.size()); }
  const std::string& tag(int id) const { return tags_[id]; }
  const std::vector<std::string>& tags() const { return tags_; }
  int id_of(const std::string& tag) const;  // throws ValidationError on unknown tag

  bool is_outside(int id) const { return id == 0; }
  bool is_begin(int id) const { return id > 0 && (id - 1) % 2 == 0; }
  bool is_inside(int id) const { return id > 0 && (id - 1) % 2 == 1; }
  int label_index(int id) const { return id == 0 ? -1 : (id - 1) / 2; }
  const std::string& label_of(int id) const;
  int begin_id(int label_index) const { return 1 + 2 * label_index; }
  int inside_id(int label_index) const { return 2 + 2 * label_index; }

 private:
  std::vector<std::string> tags_;
  std::vector<std::string> labels_;
};

// --- operations -------------------------------------------------------------

// floor(coord * 1000 / page_dim) per coordinate. `segment_id` is only used in
// error messages (-1 = no segment context).
BoundingBox normalize_box(const PixelRect& box_px, int page_w, int page_h, int segment_id = -1);

// Inverse pixel mapping of normalize_box; clamped to the image bounds.
PixelRect roi_pixel_rect(const BoundingBox& box, int page_w_px, int page_h_px);

TagSequence tags_from_entities(const std::vector<Entity>& entities, int n_tokens);

// Tolerant reader: an I-t without a compatible predecessor opens a new entity.
std::vector<Entity> entities_from_tags(const TagSequence& tags);

bool is_valid_bio(const TagSequence& tags);

// Flat token list in segment order, then token order within segment.
std::vector<std::string> doc_tokens(const Document& doc);

// Segment index per serialized token.
std::vector<int> token_segment_index(const Document& doc);

// Gold entities: each non-OTHER segment is one entity over its token span.
std::vector<Entity> gold_entities(const Document& doc);

TagSequence gold_tags(const Document& doc);

// Checks segment boxes, token lists, labels, gold BIO validity and the image
// dimensions; throws ValidationError naming the offending segment.
void validate_document(const Document& doc, const LabelSet& labels);

}  // namespace vancl::core
