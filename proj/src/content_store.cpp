#include "learnflow/content_store.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>

#include "learnflow/error.hpp"
#include "learnflow/text.hpp"

namespace learnflow {

namespace {

std::vector<std::vector<std::string>> paragraphs(std::string_view body) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> current;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto eol = body.find('\n', pos);
    if (eol == std::string_view::npos) eol = body.size();
    auto words = text::split_words(body.substr(pos, eol - pos));
    if (words.empty()) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.insert(current.end(), words.begin(), words.end());
    }
    pos = eol + 1;
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

bool ends_sentence(const std::string& word) {
  auto c = word.back();
  if (c == '"' || c == '\'' || c == ')') {
    if (word.size() < 2) return false;
    c = word[word.size() - 2];
  }
  return c == '.' || c == '!' || c == '?';
}

void emit(std::vector<Chunk>& out, const std::vector<std::string>& words) {
  out.push_back({out.size(), text::join(words, " ")});
}

void split_paragraph(std::vector<Chunk>& out, const std::vector<std::string>& words) {
  if (words.size() <= kMaxChunkWords) {
    emit(out, words);
    return;
  }
  std::vector<std::vector<std::string>> sentences(1);
  for (const auto& w : words) {
    sentences.back().push_back(w);
    if (ends_sentence(w)) sentences.emplace_back();
  }
  if (sentences.back().empty()) sentences.pop_back();

  std::vector<std::string> pending;
  for (const auto& sentence : sentences) {
    if (sentence.size() > kMaxChunkWords) {
      if (!pending.empty()) emit(out, pending);
      pending.clear();
      for (std::size_t i = 0; i < sentence.size(); i += kMaxChunkWords) {
        auto end = std::min(sentence.size(), i + kMaxChunkWords);
        emit(out, {sentence.begin() + static_cast<long>(i), sentence.begin() + static_cast<long>(end)});
      }
      continue;
    }
    if (pending.size() + sentence.size() > kMaxChunkWords) {
      emit(out, pending);
      pending.clear();
    }
    pending.insert(pending.end(), sentence.begin(), sentence.end());
  }
  if (!pending.empty()) emit(out, pending);
}

std::string slug(std::string_view title) {
  std::string s;
  for (char c : title) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      s.push_back(static_cast<char>(std::tolower(u)));
    } else if (!s.empty() && s.back() != '-') {
      s.push_back('-');
    }
  }
  while (!s.empty() && s.back() == '-') s.pop_back();
  return s.empty() ? "material" : s;
}

}  // namespace

std::vector<Chunk> chunk_text(std::string_view body) {
  std::vector<Chunk> chunks;
  for (const auto& p : paragraphs(body)) split_paragraph(chunks, p);
  return chunks;
}

std::string ContentStore::ingest(std::string title, std::string body,
                                 std::optional<std::string> id) {
  auto chunks = learnflow::chunk_text(body);
  if (chunks.empty()) throw Error("EmptyBody", "material '" + title + "' has no text");

  Indexed entry;
  for (const auto& c : chunks) {
    auto tokens = text::normalized_tokens(c.text);
    entry.chunk_tokens.emplace_back(tokens.begin(), tokens.end());
  }

  std::unique_lock lock(mu_);
  auto taken = [&](const std::string& candidate) {
    return std::any_of(materials_.begin(), materials_.end(),
                       [&](const Indexed& m) { return m.material.material_id == candidate; });
  };
  std::string material_id;
  if (id) {
    if (taken(*id)) throw Error("DuplicateMaterial", "material '" + *id + "' already exists");
    material_id = *id;
  } else {
    const auto base = slug(title);
    material_id = base;
    for (int n = 2; taken(material_id); ++n) material_id = base + "-" + std::to_string(n);
  }
  entry.material = {material_id, std::move(title), std::move(body), std::move(chunks)};
  materials_.push_back(std::move(entry));
  return material_id;
}

std::size_t ContentStore::load_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".txt" || ext == ".md")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    ingest(f.stem().string(), ss.str(), f.stem().string());
  }
  return files.size();
}

std::vector<RetrievalHit> ContentStore::retrieve(std::string_view query, std::size_t k,
                                                 const std::set<std::string>* only) const {
  if (k == 0) return {};
  auto q = text::normalized_tokens(query);
  std::set<std::string> query_tokens(q.begin(), q.end());
  if (query_tokens.empty()) return {};

  std::vector<RetrievalHit> hits;
  std::shared_lock lock(mu_);
  for (const auto& m : materials_) {
    if (only && !only->count(m.material.material_id)) continue;
    for (std::size_t i = 0; i < m.chunk_tokens.size(); ++i) {
      std::size_t shared = 0;
      for (const auto& t : query_tokens) shared += m.chunk_tokens[i].count(t);
      if (shared == 0) continue;
      hits.push_back({m.material.material_id, i,
                      static_cast<double>(shared) / static_cast<double>(query_tokens.size())});
    }
  }
  lock.unlock();

  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.material_id != b.material_id) return a.material_id < b.material_id;
    return a.chunk_index < b.chunk_index;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

std::optional<Material> ContentStore::material(std::string_view id) const {
  std::shared_lock lock(mu_);
  for (const auto& m : materials_) {
    if (m.material.material_id == id) return m.material;
  }
  return std::nullopt;
}

std::optional<std::string> ContentStore::chunk_text(std::string_view id, std::size_t index) const {
  std::shared_lock lock(mu_);
  for (const auto& m : materials_) {
    if (m.material.material_id == id && index < m.material.chunks.size()) {
      return m.material.chunks[index].text;
    }
  }
  return std::nullopt;
}

std::size_t ContentStore::size() const {
  std::shared_lock lock(mu_);
  return materials_.size();
}

}  // namespace learnflow
