#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "choreoseg/labels.hpp"
#include "json.hpp"

namespace choreoseg::pipeline {

enum class Category { Basic, Advanced };

std::string to_string(Category c);
/// "basic" or "advanced"; throws ParseError otherwise.
Category parse_category(const std::string& s);

/// One video of a dataset. Paths are absolute once loaded; in the index file
/// they are stored relative to the file's directory. Empty paths are allowed
/// for artifacts that have not been produced yet.
struct DatasetEntry {
  std::string video_id;
  Category category = Category::Basic;
  std::filesystem::path keypoints;
  std::filesystem::path audio;
  std::filesystem::path bones;
  std::filesystem::path spectrogram;
  std::filesystem::path annotations;
  labels::VideoMeta meta;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;

  const DatasetEntry& find(const std::string& video_id) const;
  /// Throws ConfigError on duplicate or empty ids.
  void validate_ids() const;
  /// Throws ConfigError when a referenced feature or label file is missing.
  void require_files() const;

  static DatasetIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct Division {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  nlohmann::json to_json() const;
  static Division from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kDivisionCount = 10;

/// Stratified 3:1:1 split: within each category of n videos, validation and
/// test each take round(n / 5) and training takes the rest. Division k shuffles
/// with a generator seeded by derive_seed(seed, k).
std::vector<Division> split_dataset(const DatasetIndex& index, std::uint64_t seed,
                                    std::size_t count = kDivisionCount);

}  // namespace choreoseg::pipeline
