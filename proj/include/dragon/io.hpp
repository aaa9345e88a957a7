#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dragon/gauss_stats.hpp"
#include "dragon/matrix.hpp"

namespace dragon::io {

/// Text embedding file: header line "rows dim", then rows lines of dim
/// whitespace-separated float64 values. A binary variant starts with the
/// magic "DRGNEMB1" followed by two little-endian uint64 (rows, dim) and
/// row-major float64 data. load() detects the variant from the leading bytes.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m,
                     bool binary = false);

/// GaussStats JSON: {"mean": [...], "cov": [... row-major ...], "count": n}.
stats::GaussStats load_stats(const std::filesystem::path& path);
void save_stats(const std::filesystem::path& path, const stats::GaussStats& s);
std::string stats_to_json_string(const stats::GaussStats& s);

/// One float per line.
std::vector<double> load_scalars(const std::filesystem::path& path);
void save_scalars(const std::filesystem::path& path, const std::vector<double>& v);

/// Prompt file: one prompt per line, "<condition-id> <prompt text>".
struct Prompt {
  std::int64_t condition = 0;
  std::string text;
};
std::vector<Prompt> load_prompts(const std::filesystem::path& path);
void save_prompts(const std::filesystem::path& path, const std::vector<Prompt>& prompts);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

/// FNV-1a hash of a file's bytes, reported in eval reports for traceability.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace dragon::io
