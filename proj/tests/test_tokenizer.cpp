#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "ec2lab/tok/bpe.hpp"
#include "ec2lab/world/world.hpp"

using namespace ec2lab;
using tok::BpeVocab;

namespace {

std::vector<std::string> corpus_instructions(size_t n) {
  auto eps = world::generate_corpus(7, n);
  std::vector<std::string> out;
  out.reserve(n);
  for (const auto& ep : eps) out.push_back(ep.instruction);
  return out;
}

std::string strip_spaces(const std::string& piece) {
  size_t i = piece.find_first_not_of(' ');
  return i == std::string::npos ? std::string() : piece.substr(i);
}

}  // namespace

TEST_CASE("pre_split: spaces attach to the following word") {
  CHECK(tok::pre_split("open the drawer") ==
        std::vector<std::string>{"open", " the", " drawer"});
  CHECK(tok::pre_split(" leading") == std::vector<std::string>{" leading"});
  CHECK(tok::pre_split("trailing  ") ==
        std::vector<std::string>{"trailing", "  "});
  CHECK(tok::pre_split("") == std::vector<std::string>{});
  CHECK(tok::pre_split("a  b") == std::vector<std::string>{"a", "  b"});
}

TEST_CASE("train_bpe: single-pair corpus") {
  auto vocab = tok::train_bpe({"aaaa"}, 3);
  // Base symbols are space plus 'a'; one merge slot remains.
  CHECK(vocab.size() == 3);
  REQUIRE(vocab.merges.size() == 1);
  CHECK(vocab.merges[0] == std::pair<std::string, std::string>{"a", "a"});
  CHECK(tok::encode(vocab, "aaaa") ==
        std::vector<int>{vocab.token_to_id.at("aa"), vocab.token_to_id.at("aa")});
}

TEST_CASE("train_bpe: lexicographic tie-break") {
  // "aabb" has pairs aa, ab, bb all with frequency 1.
  auto vocab = tok::train_bpe({"aabb"}, 4);
  REQUIRE(vocab.merges.size() == 1);
  CHECK(vocab.merges[0] == std::pair<std::string, std::string>{"a", "a"});
}

TEST_CASE("train_bpe: deterministic across runs") {
  auto corpus = corpus_instructions(300);
  auto a = tok::train_bpe(corpus, 128);
  auto b = tok::train_bpe(corpus, 128);
  CHECK(a.merges == b.merges);
  CHECK(a.id_to_token == b.id_to_token);
}

TEST_CASE("train_bpe: error contracts") {
  CHECK_THROWS_AS((void)tok::train_bpe({}, 10), std::invalid_argument);
  // "ab" has base symbols {space, a, b}; a target below that must throw.
  CHECK_THROWS_AS((void)tok::train_bpe({"ab"}, 2), std::invalid_argument);
}

TEST_CASE("encode/decode: basic contracts") {
  auto vocab = tok::train_bpe({"open the drawer"}, 32);
  CHECK(tok::encode(vocab, "") == std::vector<int>{});
  CHECK(tok::decode(vocab, {}) == "");
  CHECK_THROWS_WITH_AS((void)tok::encode(vocab, "oxen"),
                       doctest::Contains("0x78"), std::runtime_error);
  CHECK_THROWS_AS((void)tok::decode(vocab, {vocab.size()}),
                  std::runtime_error);
  CHECK_THROWS_AS((void)tok::decode(vocab, {-1}), std::runtime_error);
}

TEST_CASE("corpus vocab: round trip, whole words, prefix stability") {
  auto corpus = corpus_instructions(3000);
  auto vocab = tok::train_bpe(corpus, 128);
  CHECK(vocab.size() <= 128);

  // Exhaustive round trip over the training corpus.
  for (const auto& text : corpus)
    CHECK(tok::decode(vocab, tok::encode(vocab, text)) == text);

  // Merges never cross a word boundary: a token is spaces followed by
  // non-spaces, never the other way around.
  for (const auto& t : vocab.id_to_token) {
    size_t body = t.find_first_not_of(' ');
    if (body != std::string::npos)
      CHECK(t.find(' ', body) == std::string::npos);
  }

  // Every surface variant of a task word that occurs in the corpus has become
  // a single token.
  std::set<std::string> task_words = {"reach", "press",  "push",   "pick",
                                      "open",  "close",  "block",  "button",
                                      "drawer", "left",  "right"};
  std::set<std::string> seen_variants;
  for (const auto& text : corpus)
    for (const auto& piece : tok::pre_split(text))
      if (task_words.count(strip_spaces(piece))) seen_variants.insert(piece);
  CHECK(seen_variants.size() >= task_words.size());
  for (const auto& piece : seen_variants) {
    INFO("piece: '" << piece << "'");
    CHECK(tok::encode(vocab, piece).size() == 1);
  }

  // A fully merged word encodes to a single id.
  CHECK(tok::encode(vocab, " drawer").size() == 1);

  // Splitting at any space boundary never changes the encoding.
  for (size_t k = 0; k < corpus.size(); k += 97) {
    const auto& text = corpus[k];
    for (size_t i = 0; i < text.size(); ++i) {
      if (text[i] != ' ') continue;
      auto whole = tok::encode(vocab, text);
      auto left = tok::encode(vocab, text.substr(0, i));
      auto right = tok::encode(vocab, text.substr(i));
      left.insert(left.end(), right.begin(), right.end());
      CHECK(whole == left);
    }
  }
}

TEST_CASE("vocab file: JSON round trip") {
  auto corpus = corpus_instructions(300);
  auto vocab = tok::train_bpe(corpus, 128);
  std::string path = "/tmp/ec2lab_test_vocab.json";
  tok::save_vocab(vocab, path);
  auto back = tok::load_vocab(path);
  CHECK(back.merges == vocab.merges);
  CHECK(back.token_to_id == vocab.token_to_id);
  CHECK(back.id_to_token == vocab.id_to_token);
  for (size_t k = 0; k < corpus.size(); k += 23)
    CHECK(tok::encode(back, corpus[k]) == tok::encode(vocab, corpus[k]));
  std::remove(path.c_str());
}
