#include "vancl/core.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace vancl::core {

RasterImage RasterImage::filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RasterImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(3) * w * h);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

bool LabelSet::contains(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

int LabelSet::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void LabelSet::validate() const {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n == kOtherLabel) throw ValidationError("label set must not list OTHER explicitly");
    if (n.empty()) throw ValidationError("label set contains an empty name");
    if (!seen.insert(n).second) throw ValidationError("duplicate label name: " + n);
  }
}

int Document::n_tokens() const {
  int n = 0;
  for (const auto& s : segments) n += static_cast<int>(s.tokens.size());
  return n;
}

TagAlphabet::TagAlphabet(const LabelSet& labels) : labels_(labels.names) {
  tags_.reserve(1 + 2 * labels_.size());
  tags_.push_back("O");
  for (const auto& l : labels_) {
    tags_.push_back("B-" + l);
    tags_.push_back("I-" + l);
  }
}

int TagAlphabet::id_of(const std::string& tag) const {
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == tag) return static_cast<int>(i);
  }
  throw ValidationError("unknown tag: " + tag);
}

const std::string& TagAlphabet::label_of(int id) const {
  const int li = label_index(id);
  if (li < 0) throw ValidationError("tag O carries no label");
  return labels_[li];
}

BoundingBox normalize_box(const PixelRect& box_px, int page_w, int page_h, int segment_id) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << what << ": box (" << box_px.left << "," << box_px.top << "," << box_px.right << ","
       << box_px.bottom << ") on page " << page_w << "x" << page_h;
    if (segment_id >= 0) os << " for segment " << segment_id;
    throw ValidationError(os.str());
  };
  if (page_w <= 0 || page_h <= 0) fail("non-positive page dimensions");
  if (box_px.left < 0 || box_px.top < 0 || box_px.left > box_px.right ||
      box_px.top > box_px.bottom || box_px.right > page_w || box_px.bottom > page_h) {
    fail("out-of-page coordinates");
  }
  BoundingBox b;
  b.x1 = static_cast<int>(static_cast<std::int64_t>(box_px.left) * 1000 / page_w);
  b.y1 = static_cast<int>(static_cast<std::int64_t>(box_px.top) * 1000 / page_h);
  b.x2 = static_cast<int>(static_cast<std::int64_t>(box_px.right) * 1000 / page_w);
  b.y2 = static_cast<int>(static_cast<std::int64_t>(box_px.bottom) * 1000 / page_h);
  return b;
}

PixelRect roi_pixel_rect(const BoundingBox& box, int page_w_px, int page_h_px) {
  PixelRect r;
  r.left = static_cast<int>(static_cast<std::int64_t>(box.x1) * page_w_px / 1000);
  r.top = static_cast<int>(static_cast<std::int64_t>(box.y1) * page_h_px / 1000);
  r.right = static_cast<int>(static_cast<std::int64_t>(box.x2) * page_w_px / 1000);
  r.bottom = static_cast<int>(static_cast<std::int64_t>(box.y2) * page_h_px / 1000);
  r.left = std::clamp(r.left, 0, page_w_px);
  r.top = std::clamp(r.top, 0, page_h_px);
  r.right = std::clamp(r.right, 0, page_w_px);
  r.bottom = std::clamp(r.bottom, 0, page_h_px);
  return r;
}

TagSequence tags_from_entities(const std::vector<Entity>& entities, int n_tokens) {
  std::vector<Entity> sorted = entities;
  std::sort(sorted.begin(), sorted.end(),
            [](const Entity& a, const Entity& b) { return a.start < b.start; });
  for (const auto& e : sorted) {
    if (e.start < 0 || e.end > n_tokens || e.start >= e.end) {
      std::ostringstream os;
      os << "entity span (" << e.type << "," << e.start << "," << e.end
         << ") outside [0," << n_tokens << ")";
      throw ValidationError(os.str());
    }
  }
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].start < sorted[i - 1].end) {
      std::ostringstream os;
      os << "overlapping entities: (" << sorted[i - 1].type << "," << sorted[i - 1].start << ","
         << sorted[i - 1].end << ") and (" << sorted[i].type << "," << sorted[i].start << ","
         << sorted[i].end << ")";
      throw ValidationError(os.str());
    }
  }
  TagSequence tags(static_cast<std::size_t>(n_tokens), "O");
  for (const auto& e : sorted) {
    tags[e.start] = "B-" + e.type;
    for (int t = e.start + 1; t < e.end; ++t) tags[t] = "I-" + e.type;
  }
  return tags;
}

namespace {

// "" for O, entity type for B-/I- tags
std::string tag_type(const std::string& tag) {
  if (tag.size() >= 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return tag.substr(2);
  return "";
}

}  // namespace

std::vector<Entity> entities_from_tags(const TagSequence& tags) {
  std::vector<Entity> out;
  int open_start = -1;
  std::string open_type;
  auto close = [&](int end) {
    if (open_start >= 0) out.push_back(Entity{open_type, open_start, end});
    open_start = -1;
    open_type.clear();
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& tag = tags[i];
    const std::string type = tag_type(tag);
    if (type.empty()) {
      close(i);
    } else if (tag[0] == 'B') {
      close(i);
      open_start = i;
      open_type = type;
    } else {  // I-
      if (open_start < 0 || open_type != type) {
        close(i);
        open_start = i;  // tolerant: dangling I- opens an entity
        open_type = type;
      }
    }
  }
  close(static_cast<int>(tags.size()));
  return out;
}

bool is_valid_bio(const TagSequence& tags) {
  std::string prev_type;
  bool prev_in_entity = false;
  for (const auto& tag : tags) {
    const std::string type = tag_type(tag);
    if (!type.empty() && tag[0] == 'I') {
      if (!prev_in_entity || prev_type != type) return false;
    }
    prev_type = type;
    prev_in_entity = !type.empty();
  }
  return true;
}

std::vector<std::string> doc_tokens(const Document& doc) {
  std::vector<std::string> out;
  for (const auto& s : doc.segments) out.insert(out.end(), s.tokens.begin(), s.tokens.end());
  return out;
}

std::vector<int> token_segment_index(const Document& doc) {
  std::vector<int> out;
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    out.insert(out.end(), doc.segments[i].tokens.size(), static_cast<int>(i));
  }
  return out;
}

std::vector<Entity> gold_entities(const Document& doc) {
  std::vector<Entity> out;
  int pos = 0;
  for (const auto& s : doc.segments) {
    const int n = static_cast<int>(s.tokens.size());
    if (s.label != kOtherLabel) out.push_back(Entity{s.label, pos, pos + n});
    pos += n;
  }
  return out;
}

TagSequence gold_tags(const Document& doc) {
  return tags_from_entities(gold_entities(doc), doc.n_tokens());
}

void validate_document(const Document& doc, const LabelSet& labels) {
  labels.validate();
  if (doc.page_width_px <= 0 || doc.page_height_px <= 0) {
    throw ValidationError("document " + doc.doc_id + " has non-positive page dimensions");
  }
  if (doc.image.width != doc.page_width_px || doc.image.height != doc.page_height_px) {
    throw ValidationError("document " + doc.doc_id + " image dimensions disagree with page size");
  }
  if (doc.image.pixels.size() != static_cast<std::size_t>(3) * doc.image.width * doc.image.height) {
    throw ValidationError("document " + doc.doc_id + " has a malformed pixel buffer");
  }
  for (const auto& s : doc.segments) {
    std::ostringstream ctx;
    ctx << "document " << doc.doc_id << " segment " << s.id;
    if (s.tokens.empty()) throw ValidationError(ctx.str() + ": empty token list");
    for (const auto& t : s.tokens) {
      if (t.empty()) throw ValidationError(ctx.str() + ": empty token string");
    }
    if (!s.box.valid()) throw ValidationError(ctx.str() + ": box outside the normalized grid");
    if (s.label != kOtherLabel && !labels.contains(s.label)) {
      throw ValidationError(ctx.str() + ": unknown label " + s.label);
    }
  }
  if (!is_valid_bio(gold_tags(doc))) {
    throw ValidationError("document " + doc.doc_id + ": gold tags violate BIO validity");
  }
}

}  // namespace vancl::core
