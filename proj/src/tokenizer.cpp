#include "dialcomp/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dialcomp/errors.hpp"

namespace dialcomp {

namespace {

constexpr const char* kWordEnd = "</w>";

std::string lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// UTF-8 code points as separate symbols, then the word-end marker.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms;
  for (size_t i = 0; i < word.size();) {
    const unsigned char b = static_cast<unsigned char>(word[i]);
    size_t len = 1;
    if ((b & 0x80) == 0x00) len = 1;
    else if ((b & 0xE0) == 0xC0) len = 2;
    else if ((b & 0xF0) == 0xE0) len = 3;
    else if ((b & 0xF8) == 0xF0) len = 4;
    if (i + len > word.size()) len = 1;  // tolerate malformed byte
    syms.push_back(word.substr(i, len));
    i += len;
  }
  syms.push_back(kWordEnd);
  return syms;
}

// Replace non-overlapping (l, r) pairs left to right in one pass.
void apply_merge(std::vector<std::string>& syms, const std::string& l, const std::string& r) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
      out.push_back(l + r);
      i += 2;
    } else {
      out.push_back(std::move(syms[i]));
      i += 1;
    }
  }
  syms = std::move(out);
}

}  // namespace

BpeVocab train_bpe(const std::vector<std::string>& texts, int target_vocab_size,
                   bool lowercase) {
  if (texts.empty()) throw DataError("cannot train BPE on an empty corpus");

  // Word frequency table in first-seen order (deterministic).
  std::vector<std::pair<std::vector<std::string>, long long>> words;
  {
    std::map<std::string, size_t> index;
    for (const auto& raw : texts) {
      const std::string text = lowercase ? lower_ascii(raw) : raw;
      for (auto& w : split_words(text)) {
        auto it = index.find(w);
        if (it == index.end()) {
          index.emplace(w, words.size());
          words.push_back({word_symbols(w), 1});
        } else {
          words[it->second].second += 1;
        }
      }
    }
  }
  if (words.empty()) throw DataError("cannot train BPE: corpus contains no words");

  BpeVocab vocab;
  vocab.lowercase = lowercase;
  vocab.id_to_token = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};

  // Base inventory: all distinct code points plus the word-end marker,
  // sorted for determinism.
  {
    std::map<std::string, bool> base;
    for (const auto& [syms, freq] : words)
      for (const auto& s : syms) base[s] = true;
    const int required = static_cast<int>(base.size()) + static_cast<int>(vocab.id_to_token.size());
    if (target_vocab_size <= required)
      throw DataError("target vocab size " + std::to_string(target_vocab_size) +
                      " must exceed base inventory of " + std::to_string(required));
    for (const auto& [s, _] : base) vocab.id_to_token.push_back(s);
  }

  while (vocab.size() < target_vocab_size) {
    // Count adjacent pairs over the whole corpus.
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& [syms, freq] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += freq;

    std::pair<std::string, std::string> best;
    long long best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq ||
          (freq == best_freq && best_freq > 0 &&
           pair.first + pair.second < best.first + best.second)) {
        best = pair;
        best_freq = freq;
      }
    }
    if (best_freq < 2) break;

    vocab.merges.push_back(best);
    vocab.id_to_token.push_back(best.first + best.second);
    for (auto& [syms, freq] : words) apply_merge(syms, best.first, best.second);
  }

  for (int i = 0; i < vocab.size(); ++i) vocab.token_to_id[vocab.id_to_token[i]] = i;
  return vocab;
}

std::vector<int> encode(const std::string& text, const BpeVocab& vocab) {
  const std::string normalized = vocab.lowercase ? lower_ascii(text) : text;
  std::vector<int> ids;
  // Rank lookup so each word applies only the merges that can still fire.
  std::map<std::pair<std::string, std::string>, size_t> rank;
  for (size_t i = 0; i < vocab.merges.size(); ++i) rank[vocab.merges[i]] = i;

  for (const auto& word : split_words(normalized)) {
    auto syms = word_symbols(word);
    while (syms.size() > 1) {
      size_t best_rank = SIZE_MAX;
      std::pair<std::string, std::string> best;
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = rank.find({syms[i], syms[i + 1]});
        if (it != rank.end() && it->second < best_rank) {
          best_rank = it->second;
          best = it->first;
        }
      }
      if (best_rank == SIZE_MAX) break;
      apply_merge(syms, best.first, best.second);
    }
    for (const auto& s : syms) {
      auto it = vocab.token_to_id.find(s);
      ids.push_back(it == vocab.token_to_id.end() ? BpeVocab::kUnk : it->second);
    }
  }
  return ids;
}

std::string decode(const std::vector<int>& ids, const BpeVocab& vocab) {
  std::string joined;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size())
      throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
    if (vocab.is_special(id)) {
      if (id == BpeVocab::kUnk) joined += "\xEF\xBF\xBD";  // U+FFFD
      continue;
    }
    joined += vocab.id_to_token[id];
  }
  // Word-end markers become spaces.
  std::string out;
  size_t pos = 0;
  const std::string marker = kWordEnd;
  while (pos < joined.size()) {
    const size_t hit = joined.find(marker, pos);
    if (hit == std::string::npos) {
      out += joined.substr(pos);
      break;
    }
    out += joined.substr(pos, hit - pos);
    out += ' ';
    pos = hit + marker.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string BpeVocab::to_json() const {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["lowercase"] = lowercase;
  j["tokens"] = id_to_token;
  nlohmann::ordered_json jm = nlohmann::ordered_json::array();
  for (const auto& [l, r] : merges) jm.push_back({l, r});
  j["merges"] = std::move(jm);
  return j.dump(2) + "\n";
}

BpeVocab BpeVocab::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("vocab JSON parse error: ") + e.what());
  }
  if (j.value("format_version", -1) != kFormatVersion)
    throw DataError("unsupported vocab format_version");
  BpeVocab v;
  v.lowercase = j.value("lowercase", true);
  v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  if (v.id_to_token.size() < 5 || v.id_to_token[0] != "<pad>" || v.id_to_token[4] != "<unk>")
    throw DataError("vocab file missing special tokens");
  for (const auto& jm : j.at("merges"))
    v.merges.push_back({jm.at(0).get<std::string>(), jm.at(1).get<std::string>()});
  for (int i = 0; i < v.size(); ++i) {
    if (!v.token_to_id.emplace(v.id_to_token[i], i).second)
      throw DataError("vocab file contains duplicate token '" + v.id_to_token[i] + "'");
  }
  return v;
}

void BpeVocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file '" + path + "'");
  out << to_json();
}

BpeVocab BpeVocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocab file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

uint64_t BpeVocab::content_hash() const {
  const std::string s = to_json();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dialcomp
