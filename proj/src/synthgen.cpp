#include "vancl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vancl/io.hpp"
#include "vancl/rng.hpp"

namespace vancl::synthgen {

using core::ValidationError;

GenSpec GenSpec::defaults() {
  GenSpec s;
  s.label_vocab["QUESTION"] = {"name:", "date:",  "phone:", "fax:", "to:",    "from:",
                               "subj:", "dept:",  "ref:",   "addr:", "city:",  "state:",
                               "zip:",  "total:", "amount:", "qty:"};
  s.label_vocab["ANSWER"] = {"alpha", "bravo", "delta", "omega", "12.50", "2023-01-17",
                             "yes",   "no",    "acme",  "corp",  "unit-7", "blue",
                             "east",  "42",    "n/a",   "pending"};
  s.label_vocab["HEADER"] = {"invoice",  "receipt",  "summary",  "report",   "form",
                             "memo",     "order",    "statement", "account",  "survey",
                             "contract", "notice",   "manifest", "schedule", "agenda",
                             "ledger"};
  s.label_vocab[core::kOtherLabel] = {"page",  "of",    "see",      "note",   "misc",
                                      "void",  "draft", "copy",     "intern", "footer",
                                      "rev",   "v1.2",  "(c)",      "confid", "----",
                                      "..."};
  s.ambiguous_vocab = {"item", "value", "field", "entry", "data", "text", "info", "label",
                       "cell", "row",   "col",   "box",   "mark", "code", "tag",  "key"};
  s.style_map["QUESTION"] = SegmentStyle{{235, 235, 235}, true};
  s.style_map["ANSWER"] = SegmentStyle{{215, 215, 215}, false};
  s.style_map["HEADER"] = SegmentStyle{{195, 195, 195}, true};
  s.style_map[core::kOtherLabel] = SegmentStyle{{255, 255, 255}, false};
  return s;
}

void GenSpec::validate() const {
  labels.validate();
  if (n_train < 0 || n_test < 0) throw ValidationError("negative document counts");
  if (page_w <= 0 || page_h <= 0) throw ValidationError("non-positive page dimensions");
  if (grid_rows <= 0 || grid_cols <= 0) throw ValidationError("non-positive grid");
  if (segments_per_doc <= 0) throw ValidationError("segments_per_doc must be positive");
  if (segments_per_doc > grid_rows * grid_cols) {
    std::ostringstream os;
    os << "infeasible spec: " << segments_per_doc << " segments per document but only "
       << grid_rows * grid_cols << " grid cells";
    throw ValidationError(os.str());
  }
  if (min_tokens < 1 || max_tokens < min_tokens) throw ValidationError("bad token count range");
  if (ambiguity < 0.0 || ambiguity > 1.0) throw ValidationError("ambiguity must be in [0,1]");
  if (ambiguous_vocab.empty()) throw ValidationError("ambiguous vocabulary is empty");
  std::vector<std::string> all = labels.names;
  all.push_back(core::kOtherLabel);
  for (const auto& l : all) {
    auto vit = label_vocab.find(l);
    if (vit == label_vocab.end() || vit->second.empty()) {
      throw ValidationError("label " + l + " has no vocabulary");
    }
    if (style_map.find(l) == style_map.end()) {
      throw ValidationError("label " + l + " has no render style");
    }
  }
  // cells must leave room for the fixed insets plus at least one glyph row
  if (page_w / grid_cols < 20 || page_h / grid_rows < 20) {
    throw ValidationError("grid cells too small to render segments");
  }
}

nlohmann::json GenSpec::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["labels"] = labels.names;
  j["page_px"] = {page_w, page_h};
  j["grid"] = {grid_rows, grid_cols};
  j["segments_per_doc"] = segments_per_doc;
  j["tokens_per_segment"] = {min_tokens, max_tokens};
  j["ambiguity"] = ambiguity;
  nlohmann::ordered_json vocab;
  for (const auto& [l, v] : label_vocab) vocab[l] = v;
  j["label_vocab"] = vocab;
  j["ambiguous_vocab"] = ambiguous_vocab;
  nlohmann::ordered_json styles;
  for (const auto& [l, st] : style_map) {
    styles[l] = {{"bg", {st.bg[0], st.bg[1], st.bg[2]}}, {"border", st.border}};
  }
  j["style_map"] = styles;
  return j;
}

GenSpec GenSpec::from_json(const nlohmann::json& j) {
  GenSpec s = defaults();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("n_train")) s.n_train = j["n_train"].get<int>();
  if (j.contains("n_test")) s.n_test = j["n_test"].get<int>();
  if (j.contains("labels")) s.labels.names = j["labels"].get<std::vector<std::string>>();
  if (j.contains("page_px")) {
    s.page_w = j["page_px"][0].get<int>();
    s.page_h = j["page_px"][1].get<int>();
  }
  if (j.contains("grid")) {
    s.grid_rows = j["grid"][0].get<int>();
    s.grid_cols = j["grid"][1].get<int>();
  }
  if (j.contains("segments_per_doc")) s.segments_per_doc = j["segments_per_doc"].get<int>();
  if (j.contains("tokens_per_segment")) {
    s.min_tokens = j["tokens_per_segment"][0].get<int>();
    s.max_tokens = j["tokens_per_segment"][1].get<int>();
  }
  if (j.contains("ambiguity")) s.ambiguity = j["ambiguity"].get<double>();
  if (j.contains("label_vocab")) {
    s.label_vocab.clear();
    for (auto it = j["label_vocab"].begin(); it != j["label_vocab"].end(); ++it) {
      s.label_vocab[it.key()] = it.value().get<std::vector<std::string>>();
    }
  }
  if (j.contains("ambiguous_vocab")) {
    s.ambiguous_vocab = j["ambiguous_vocab"].get<std::vector<std::string>>();
  }
  if (j.contains("style_map")) {
    s.style_map.clear();
    for (auto it = j["style_map"].begin(); it != j["style_map"].end(); ++it) {
      SegmentStyle st;
      const auto& e = it.value();
      st.bg[0] = e["bg"][0].get<std::uint8_t>();
      st.bg[1] = e["bg"][1].get<std::uint8_t>();
      st.bg[2] = e["bg"][2].get<std::uint8_t>();
      st.border = e["border"].get<bool>();
      s.style_map[it.key()] = st;
    }
  }
  s.validate();
  return s;
}

std::string GenSpec::digest() const {
  const std::string dump = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace {

void draw_glyphs(core::RasterImage& img, const core::PixelRect& box,
                 const std::vector<std::string>& tokens) {
  // pseudo-glyphs: one 2x3 dark rectangle per character, 1 px gap, wrapping
  const int x0 = box.left + 4;
  const int y0 = box.top + 4;
  int x = x0;
  int y = y0;
  for (const auto& tok : tokens) {
    for (char c : tok) {
      (void)c;
      if (x + 2 > box.right - 2) {
        x = x0;
        y += 5;
      }
      if (y + 3 > box.bottom - 2) return;  // box full, truncate drawing
      for (int yy = y; yy < y + 3; ++yy) {
        for (int xx = x; xx < x + 2; ++xx) img.set(xx, yy, 30, 30, 30);
      }
      x += 3;
    }
    x += 3;  // word gap
  }
}

core::Document generate_document(const GenSpec& spec, const std::string& doc_id,
                                 std::uint64_t stream) {
  rng::Rng rng(rng::derive_seed(spec.seed, stream));

  // distinct cells, then reading order
  std::vector<int> cells(static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols);
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells);
  cells.resize(static_cast<std::size_t>(spec.segments_per_doc));
  std::sort(cells.begin(), cells.end());

  std::vector<std::string> all_labels = spec.labels.names;
  all_labels.push_back(core::kOtherLabel);

  const int cell_w = spec.page_w / spec.grid_cols;
  const int cell_h = spec.page_h / spec.grid_rows;

  core::Document doc;
  doc.doc_id = doc_id;
  doc.page_width_px = spec.page_w;
  doc.page_height_px = spec.page_h;
  doc.image = core::RasterImage::filled(spec.page_w, spec.page_h, 255, 255, 255);

  int next_id = 0;
  for (int cell : cells) {
    const int row = cell / spec.grid_cols;
    const int col = cell % spec.grid_cols;

    core::TextSegment seg;
    seg.id = next_id++;
    seg.label = all_labels[rng.uniform_int(all_labels.size())];

    const bool ambiguous = rng.bernoulli(spec.ambiguity);
    const auto& vocab = ambiguous ? spec.ambiguous_vocab : spec.label_vocab.at(seg.label);
    const int n_tokens =
        spec.min_tokens + static_cast<int>(rng.uniform_int(spec.max_tokens - spec.min_tokens + 1));
    for (int t = 0; t < n_tokens; ++t) {
      seg.tokens.push_back(vocab[rng.uniform_int(vocab.size())]);
    }

    core::PixelRect r;
    r.left = col * cell_w + 2 + static_cast<int>(rng.uniform_int(4));
    r.top = row * cell_h + 2 + static_cast<int>(rng.uniform_int(4));
    r.right = (col + 1) * cell_w - 2 - static_cast<int>(rng.uniform_int(4));
    r.bottom = (row + 1) * cell_h - 2 - static_cast<int>(rng.uniform_int(4));
    seg.box_px = r;
    seg.box = core::normalize_box(r, spec.page_w, spec.page_h, seg.id);

    const SegmentStyle& style = spec.style_map.at(seg.label);
    for (int y = r.top; y < r.bottom; ++y) {
      for (int x = r.left; x < r.right; ++x) {
        doc.image.set(x, y, style.bg[0], style.bg[1], style.bg[2]);
      }
    }
    if (style.border) {
      for (int y = r.top; y < r.bottom; ++y) {
        for (int x = r.left; x < r.right; ++x) {
          if (y == r.top || y == r.bottom - 1 || x == r.left || x == r.right - 1) {
            doc.image.set(x, y, 40, 40, 40);
          }
        }
      }
    }
    draw_glyphs(doc.image, r, seg.tokens);
    doc.segments.push_back(std::move(seg));
  }
  return doc;
}

std::string padded_id(const char* prefix, int i) {
  std::ostringstream os;
  os << prefix << "_";
  std::string n = std::to_string(i);
  for (std::size_t k = n.size(); k < 4; ++k) os << '0';
  os << n;
  return os.str();
}

}  // namespace

CorpusSplit generate_corpus(const GenSpec& spec) {
  spec.validate();
  CorpusSplit out;
  for (int i = 0; i < spec.n_train; ++i) {
    out.train.push_back(
        generate_document(spec, padded_id("train", i), static_cast<std::uint64_t>(i)));
  }
  for (int i = 0; i < spec.n_test; ++i) {
    out.test.push_back(generate_document(spec, padded_id("test", i),
                                         static_cast<std::uint64_t>(spec.n_train + i)));
  }
  return out;
}

namespace {

const nlohmann::json& funsd_field(const nlohmann::json& j, const char* key,
                                  const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError("FUNSD parse error: missing " + path + "/" + key);
  return *it;
}

std::string funsd_label(const std::string& raw, const std::string& path) {
  std::string up = raw;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "QUESTION" || up == "ANSWER" || up == "HEADER" || up == "OTHER") return up;
  throw ValidationError("FUNSD parse error: unknown label '" + raw + "' at " + path);
}

}  // namespace

core::Document load_funsd(const std::string& annotation_json, core::RasterImage image,
                          const std::string& doc_id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(annotation_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("FUNSD parse error: ") + e.what());
  }
  core::Document doc;
  doc.doc_id = doc_id;
  doc.page_width_px = image.width;
  doc.page_height_px = image.height;
  doc.image = std::move(image);

  const auto& form = funsd_field(j, "form", "$");
  int idx = 0;
  for (const auto& entry : form) {
    const std::string path = "$/form/" + std::to_string(idx++);
    core::TextSegment seg;
    seg.id = funsd_field(entry, "id", path).get<int>();
    seg.label = funsd_label(funsd_field(entry, "label", path).get<std::string>(), path);
    const auto& box = funsd_field(entry, "box", path);
    if (!box.is_array() || box.size() != 4) {
      throw ValidationError("FUNSD parse error: " + path + "/box must be [x1,y1,x2,y2]");
    }
    seg.box_px = core::PixelRect{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
                                 box[3].get<int>()};
    seg.box = core::normalize_box(seg.box_px, doc.page_width_px, doc.page_height_px, seg.id);
    const auto& words = funsd_field(entry, "words", path);
    int widx = 0;
    for (const auto& w : words) {
      const std::string wpath = path + "/words/" + std::to_string(widx++);
      const std::string text = funsd_field(w, "text", wpath).get<std::string>();
      if (!text.empty()) seg.tokens.push_back(text);  // word boxes discarded
    }
    // "linking" is ingested but ignored
    if (seg.tokens.empty()) continue;  // entries without transcribed words are dropped
    doc.segments.push_back(std::move(seg));
  }
  return doc;
}

std::vector<core::Document> subsample(const std::vector<core::Document>& train, double p,
                                      std::uint64_t seed) {
  if (p <= 0.0 || p > 1.0) {
    throw ValidationError("subsample fraction must be in (0,1], got " + std::to_string(p));
  }
  const std::size_t n = train.size();
  const std::size_t k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng::Rng rng(rng::derive_seed(seed, 0x5ab5a17ULL));
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<core::Document> out;
  out.reserve(k);
  for (std::size_t i : idx) out.push_back(train[i]);
  return out;
}

nlohmann::json write_corpus(const std::filesystem::path& dir, const CorpusSplit& corpus,
                            const GenSpec& spec) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["labels"] = spec.labels.names;
  manifest["page_px"] = {spec.page_w, spec.page_h};
  manifest["genspec_digest"] = spec.digest();
  auto ids = [](const std::vector<core::Document>& docs) {
    std::vector<std::string> v;
    for (const auto& d : docs) v.push_back(d.doc_id);
    return v;
  };
  manifest["train"] = ids(corpus.train);
  manifest["test"] = ids(corpus.test);
  manifest["genspec"] = spec.to_json();
  for (const auto& d : corpus.train) io::write_document(dir, d);
  for (const auto& d : corpus.test) io::write_document(dir, d);
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

LoadedCorpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  LoadedCorpus out;
  out.labels.names = manifest.at("labels").get<std::vector<std::string>>();
  out.genspec_digest = manifest.value("genspec_digest", "");
  for (const auto& id : manifest.at("train")) {
    out.split.train.push_back(io::read_document(dir, id.get<std::string>()));
  }
  for (const auto& id : manifest.at("test")) {
    out.split.test.push_back(io::read_document(dir, id.get<std::string>()));
  }
  return out;
}

}  // namespace vancl::synthgen
