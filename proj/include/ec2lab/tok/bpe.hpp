#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ec2lab::tok {

// Byte-pair encoding over whitespace pre-split pieces. A piece is a run of
// non-space bytes together with the spaces immediately before it ("open",
// " the", " drawer"); merges never cross piece boundaries, so
// encode(a + " " + b) == encode(a) ++ encode(" " + b).
struct BpeVocab {
  std::vector<std::string> id_to_token;                    // dense ids
  std::map<std::string, int> token_to_id;
  std::vector<std::pair<std::string, std::string>> merges; // in learned order

  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Splits text into pieces as described above. A trailing run of spaces with
// nothing after it forms its own piece, so concatenating pieces restores the
// text byte for byte.
std::vector<std::string> pre_split(const std::string& text);

// Greedy highest-frequency pair merging until the vocabulary reaches
// target_vocab or no adjacent pair is left. Ties break toward the
// lexicographically smallest (left, right) pair. The space byte is always a
// base symbol; the rest are the bytes appearing in the corpus.
BpeVocab train_bpe(const std::vector<std::string>& corpus, int target_vocab);

std::vector<int> encode(const BpeVocab& vocab, const std::string& text);
std::string decode(const BpeVocab& vocab, const std::vector<int>& ids);

// JSON vocab file: {"merges": [[a, b], ...], "token_to_id": {...}}.
void save_vocab(const BpeVocab& vocab, const std::string& path);
BpeVocab load_vocab(const std::string& path);

}  // namespace ec2lab::tok
