#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace learnflow {

inline constexpr std::size_t kMaxChunkWords = 200;

struct Chunk {
  std::size_t index = 0;
  std::string text;
};

struct Material {
  std::string material_id;
  std::string title;
  std::string body;
  std::vector<Chunk> chunks;
};

struct RetrievalHit {
  std::string material_id;
  std::size_t chunk_index = 0;
  double score = 0.0;

  bool operator==(const RetrievalHit&) const = default;
};

/// Splits `body` at paragraph boundaries (blank lines) into chunks of at most
/// `kMaxChunkWords` words. Longer paragraphs are packed sentence by sentence
/// and single over-long sentences are hard-split. Chunk text is the word
/// sequence joined by single spaces.
std::vector<Chunk> chunk_text(std::string_view body);

/// Append-only corpus of reference materials with keyword-overlap retrieval.
class ContentStore {
 public:
  /// Returns the material id: `id` when given, otherwise a slug of the title
  /// (suffixed "-2", "-3", ... when taken). Throws Error("EmptyBody") for a
  /// body without words and Error("DuplicateMaterial") for a taken explicit id.
  std::string ingest(std::string title, std::string body,
                     std::optional<std::string> id = std::nullopt);

  /// Loads every .txt/.md file in `dir`; the filename stem is the material id.
  std::size_t load_directory(const std::filesystem::path& dir);

  /// Score = |query tokens ∩ chunk tokens| / |query tokens| over normalized,
  /// de-duplicated tokens. Sorted by score desc, then (material_id, index) asc.
  /// Zero scores are dropped. When `only` is given, materials outside it are
  /// ignored.
  std::vector<RetrievalHit> retrieve(std::string_view query, std::size_t k,
                                     const std::set<std::string>* only = nullptr) const;

  std::optional<Material> material(std::string_view id) const;
  std::optional<std::string> chunk_text(std::string_view id, std::size_t index) const;
  std::size_t size() const;

 private:
  struct Indexed {
    Material material;
    std::vector<std::set<std::string>> chunk_tokens;
  };

  mutable std::shared_mutex mu_;
  std::vector<Indexed> materials_;
};

}  // namespace learnflow
