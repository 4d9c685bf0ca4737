#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace dialcomp {

// Byte-pair-encoding vocabulary. Words are whitespace units; each word is
// split into UTF-8 code points plus a terminal "</w>" marker, and merges
// are applied in training order. Specials occupy ids 0..4.
struct BpeVocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;
  static constexpr int kFormatVersion = 1;

  std::vector<std::pair<std::string, std::string>> merges;  // training order
  std::vector<std::string> id_to_token;                     // index == id
  std::unordered_map<std::string, int> token_to_id;
  bool lowercase = true;

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool is_special(int id) const { return id >= 0 && id <= kUnk; }

  std::string to_json() const;
  static BpeVocab from_json(const std::string& text);
  void save(const std::string& path) const;
  static BpeVocab load(const std::string& path);

  // FNV-1a over the serialized form; recorded in checkpoints so a model is
  // never paired with the wrong vocabulary.
  uint64_t content_hash() const;
};

// Greedy BPE training: repeatedly merge the most frequent adjacent symbol
// pair (ties broken by lexicographic order of the merged string) until
// target_vocab_size tokens exist or no pair occurs at least twice.
BpeVocab train_bpe(const std::vector<std::string>& texts, int target_vocab_size,
                   bool lowercase = true);

std::vector<int> encode(const std::string& text, const BpeVocab& vocab);
std::string decode(const std::vector<int>& ids, const BpeVocab& vocab);

}  // namespace dialcomp
