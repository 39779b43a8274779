#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "learnflow/content_store.hpp"
#include "learnflow/error.hpp"
#include "learnflow/text.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace learnflow;

namespace {

std::string paragraph(int n, const std::string& word) {
  std::string s;
  for (int i = 0; i < n; ++i) {
    s += (i ? " " : "") + word + std::to_string(i);
    if (i % 15 == 14) s += ".";
  }
  return s;
}

std::string joined_words(const std::string& body) { return text::join(text::split_words(body), " "); }

}  // namespace

TEST_CASE("three paragraphs of 180, 150 and 120 words become three chunks") {
  const auto p1 = paragraph(180, "alpha"), p2 = paragraph(150, "beta"), p3 = paragraph(120, "gamma");
  auto chunks = chunk_text(p1 + "\n\n" + p2 + "\n\n" + p3);
  REQUIRE(chunks.size() == 3);
  CHECK(text::word_count(chunks[0].text) == 180);
  CHECK(text::word_count(chunks[1].text) == 150);
  CHECK(text::word_count(chunks[2].text) == 120);
  CHECK(chunks[1].text == joined_words(p2));
  for (std::size_t i = 0; i < chunks.size(); ++i) CHECK(chunks[i].index == i);
}

TEST_CASE("single word and empty body") {
  ContentStore store;
  auto id = store.ingest("Ecology", "ecology");
  auto m = store.material(id);
  REQUIRE(m);
  REQUIRE(m->chunks.size() == 1);
  CHECK(m->chunks[0].text == "ecology");
  CHECK_THROWS_AS(store.ingest("Empty", ""), Error);
  CHECK_THROWS_AS(store.ingest("Blank", "  \n\n  "), Error);
}

TEST_CASE("long paragraphs split at sentences, long sentences hard-split") {
  std::string sentences;
  for (int i = 0; i < 30; ++i) sentences += testing::words(12, "w" + std::to_string(i)) + ". ";
  auto chunks = chunk_text(sentences);
  CHECK(chunks.size() >= 2);
  for (const auto& c : chunks) {
    CHECK(text::word_count(c.text) <= kMaxChunkWords);
    CHECK(c.text.back() == '.');  // ends on a sentence boundary
  }
  auto giant = chunk_text(testing::words(450, "run"));
  REQUIRE(giant.size() == 3);
  CHECK(text::word_count(giant[0].text) == 200);
  CHECK(text::word_count(giant[2].text) == 50);
}

TEST_CASE("chunks reconstruct the body's word sequence") {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 50; ++round) {
    std::string body;
    const int paras = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int p = 0; p < paras; ++p) {
      const int n = std::uniform_int_distribution<int>(1, 420)(rng);
      body += paragraph(n, "t") + (p + 1 < paras ? "\n\n" : "");
    }
    std::vector<std::string> texts;
    for (const auto& c : chunk_text(body)) {
      CHECK(text::word_count(c.text) <= kMaxChunkWords);
      texts.push_back(c.text);
    }
    CHECK(text::join(texts, " ") == joined_words(body));
  }
}

TEST_CASE("retrieval examples") {
  ContentStore empty;
  CHECK(empty.retrieve("population density", 3).empty());

  ContentStore store;
  store.ingest("Populations", "Population density rises when food is plenty.\n\nRainfall varies by season.", "pop");
  store.ingest("Other", "Density of water is high.\n\nA population of birds.", "other");
  auto hits = store.retrieve("population density", 5);
  REQUIRE(!hits.empty());
  CHECK(hits[0].material_id == "pop");
  CHECK(hits[0].chunk_index == 0);
  CHECK(hits[0].score == doctest::Approx(1.0));
  REQUIRE(hits.size() == 3);
  CHECK(hits[1].material_id == "other");  // ties by (material_id, index)
  CHECK(hits[1].chunk_index == 0);
  CHECK(hits[2].chunk_index == 1);
  CHECK(store.retrieve("population density", 0).empty());
  CHECK(store.retrieve("...", 3).empty());
  CHECK(store.retrieve("population density", 5) == hits);

  std::set<std::string> only{"other"};
  for (const auto& h : store.retrieve("population density", 5, &only)) CHECK(h.material_id == "other");
}

TEST_CASE("ids: explicit, slugged and duplicates") {
  ContentStore store;
  CHECK(store.ingest("Biology Course", "cells") == "biology-course");
  CHECK(store.ingest("Biology Course", "more cells") == "biology-course-2");
  CHECK(store.ingest("x", "y", "fixed") == "fixed");
  CHECK_THROWS_AS(store.ingest("x", "y", "fixed"), Error);
  CHECK(store.size() == 3);
}

TEST_CASE("materials directory loads txt and md files by stem") {
  auto dir = std::filesystem::temp_directory_path() / "learnflow-materials-test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "biology-course.txt") << "Predators regulate prey populations.";
  std::ofstream(dir / "notes.md") << "# Notes\n\nCarrying capacity.";
  std::ofstream(dir / "ignored.pdf") << "binary";
  ContentStore store;
  CHECK(store.load_directory(dir) == 2);
  CHECK(store.material("biology-course"));
  CHECK(store.material("notes"));
  CHECK_FALSE(store.material("ignored"));
  std::filesystem::remove_all(dir);
}

// Oracle: an independent tokenizer and scorer over every chunk.
TEST_CASE("retrieval agrees with a brute-force scorer") {
  std::mt19937_64 rng(99);
  const std::vector<std::string> vocab{"Cell", "cell,", "energy", "ENERGY!", "river", "trade's", "trades",
                                       "ocean", "tide", "salt", "wind", "growth", "über", "naïve"};
  auto draw = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) {
      s += (i ? " " : "") + vocab[std::uniform_int_distribution<std::size_t>(0, vocab.size() - 1)(rng)];
      if (std::uniform_int_distribution<int>(0, 9)(rng) == 0) s += "\n\n";
    }
    return s;
  };
  for (int round = 0; round < 100; ++round) {
    ContentStore store;
    std::vector<testing::OracleChunk> chunks;
    const int n_materials = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int m = 0; m < n_materials; ++m) {
      const auto id = std::string(1, static_cast<char>('a' + std::uniform_int_distribution<int>(0, 25)(rng))) +
                      std::to_string(m);
      store.ingest("t", draw(std::uniform_int_distribution<int>(1, 60)(rng)), id);
      const auto mat = store.material(id);
      for (const auto& c : mat->chunks) chunks.push_back({id, c.index, c.text});
    }
    const auto query = draw(std::uniform_int_distribution<int>(0, 4)(rng));
    const auto k = std::uniform_int_distribution<std::size_t>(0, 8)(rng);
    const auto got = store.retrieve(query, k);
    const auto want = testing::brute_force_retrieve(chunks, query, k);
    INFO("query: " << query);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].material_id == want[i].material_id);
      CHECK(got[i].chunk_index == want[i].chunk_index);
      CHECK(got[i].score == doctest::Approx(want[i].score));
      CHECK(got[i].score > 0.0);
      CHECK(got[i].score <= 1.0);
    }
  }
}
