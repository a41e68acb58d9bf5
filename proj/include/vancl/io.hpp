#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "vancl/core.hpp"

namespace vancl::io {

using json = nlohmann::json;

// Binary PPM, P6 maxval 255. Writes are byte-deterministic.
std::string encode_ppm(const core::RasterImage& img);
core::RasterImage decode_ppm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const core::RasterImage& img);
core::RasterImage read_ppm(const std::filesystem::path& path);

// Document JSON carries pixel-space boxes; normalized boxes are re-derived on load.
nlohmann::json document_to_json(const core::Document& doc);
core::Document document_from_json(const nlohmann::json& j, core::RasterImage image);

// Writes <doc_id>.json and <doc_id>.ppm under dir.
void write_document(const std::filesystem::path& dir, const core::Document& doc);
core::Document read_document(const std::filesystem::path& dir, const std::string& doc_id);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace vancl::io
