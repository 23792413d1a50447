#include "ec2lab/tok/bpe.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "ec2lab/util/fsio.hpp"
#include "json.hpp"

namespace ec2lab::tok {

std::vector<std::string> pre_split(const std::string& text) {
  std::vector<std::string> pieces;
  size_t i = 0;
  while (i < text.size()) {
    size_t start = i;
    while (i < text.size() && text[i] == ' ') ++i;      // spaces join the word
    while (i < text.size() && text[i] != ' ') ++i;      // the word itself
    pieces.push_back(text.substr(start, i - start));
  }
  return pieces;
}

namespace {

std::vector<std::string> to_symbols(const std::string& piece) {
  std::vector<std::string> out;
  out.reserve(piece.size());
  for (char c : piece) out.push_back(std::string(1, c));
  return out;
}

void apply_merge(std::vector<std::string>& syms,
                 const std::pair<std::string, std::string>& m) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
      out.push_back(m.first + m.second);
      i += 2;
    } else {
      out.push_back(syms[i]);
      ++i;
    }
  }
  syms = std::move(out);
}

std::string printable_byte(char c) {
  char buf[32];
  unsigned char u = static_cast<unsigned char>(c);
  if (u >= 0x20 && u < 0x7f)
    std::snprintf(buf, sizeof buf, "0x%02x '%c'", u, c);
  else
    std::snprintf(buf, sizeof buf, "0x%02x", u);
  return buf;
}

}  // namespace

BpeVocab train_bpe(const std::vector<std::string>& corpus, int target_vocab) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");

  std::set<char> bytes{' '};
  for (const auto& text : corpus)
    for (char c : text) bytes.insert(c);
  if (target_vocab < static_cast<int>(bytes.size()))
    throw std::invalid_argument(
        "train_bpe: target_vocab " + std::to_string(target_vocab) +
        " below base symbol count " + std::to_string(bytes.size()));

  BpeVocab vocab;
  for (char c : bytes) {
    vocab.token_to_id[std::string(1, c)] = vocab.size();
    vocab.id_to_token.push_back(std::string(1, c));
  }

  // Distinct pieces with counts; merges rewrite these in place.
  std::map<std::string, long> piece_count;
  for (const auto& text : corpus)
    for (const auto& p : pre_split(text)) ++piece_count[p];
  std::vector<std::pair<std::vector<std::string>, long>> pieces;
  pieces.reserve(piece_count.size());
  for (const auto& [p, n] : piece_count) pieces.push_back({to_symbols(p), n});

  while (vocab.size() < target_vocab) {
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (const auto& [syms, n] : pieces)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += n;
    if (pair_freq.empty()) break;  // every piece fully merged

    // Highest frequency; the map's key order gives the lexicographic tie-break.
    std::pair<std::string, std::string> best;
    long best_n = -1;
    for (const auto& [pr, n] : pair_freq)
      if (n > best_n) best = pr, best_n = n;

    for (auto& [syms, n] : pieces) apply_merge(syms, best);
    vocab.merges.push_back(best);
    std::string tok = best.first + best.second;
    vocab.token_to_id[tok] = vocab.size();
    vocab.id_to_token.push_back(tok);
  }
  return vocab;
}

std::vector<int> encode(const BpeVocab& vocab, const std::string& text) {
  std::vector<int> out;
  for (const auto& piece : pre_split(text)) {
    for (char c : piece)
      if (!vocab.token_to_id.count(std::string(1, c)))
        throw std::runtime_error("encode: unknown byte " + printable_byte(c));
    auto syms = to_symbols(piece);
    for (const auto& m : vocab.merges) apply_merge(syms, m);
    for (const auto& s : syms) out.push_back(vocab.token_to_id.at(s));
  }
  return out;
}

std::string decode(const BpeVocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size())
      throw std::runtime_error("decode: token id " + std::to_string(id) +
                               " outside vocab of " +
                               std::to_string(vocab.size()));
    out += vocab.id_to_token[static_cast<size_t>(id)];
  }
  return out;
}

void save_vocab(const BpeVocab& vocab, const std::string& path) {
  nlohmann::ordered_json j;
  j["merges"] = nlohmann::ordered_json::array();
  for (const auto& [a, b] : vocab.merges) j["merges"].push_back({a, b});
  j["token_to_id"] = nlohmann::ordered_json::object();
  for (const auto& tok : vocab.id_to_token)
    j["token_to_id"][tok] = vocab.token_to_id.at(tok);
  util::atomic_write(path, j.dump() + "\n");
}

BpeVocab load_vocab(const std::string& path) {
  auto j = nlohmann::json::parse(util::read_file(path));
  BpeVocab vocab;
  for (const auto& m : j.at("merges"))
    vocab.merges.push_back({m.at(0).get<std::string>(),
                            m.at(1).get<std::string>()});
  const auto& t2i = j.at("token_to_id");
  vocab.id_to_token.resize(t2i.size());
  for (auto it = t2i.begin(); it != t2i.end(); ++it) {
    int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(t2i.size()))
      throw std::runtime_error("load_vocab: id " + std::to_string(id) +
                               " not dense in " + path);
    vocab.token_to_id[it.key()] = id;
    vocab.id_to_token[static_cast<size_t>(id)] = it.key();
  }
  return vocab;
}

}  // namespace ec2lab::tok
