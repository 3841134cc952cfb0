#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unit {

/// Closed word-level vocabulary. Ids 0..3 are reserved for the special tokens.
class Vocabulary {
 public:
  static constexpr int cls_id = 0;
  static constexpr int pad_id = 1;
  static constexpr int unk_id = 2;
  static constexpr int sep_id = 3;

  Vocabulary() : words_{"[CLS]", "[PAD]", "[UNK]", "[SEP]"} { reindex(); }

  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) add(w);
  }

  int add(const std::string& word) {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    words_.push_back(word);
    ids_[word] = static_cast<int>(words_.size() - 1);
    return ids_[word];
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }

  int id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? unk_id : it->second;
  }

  /// Whitespace split, lowercase, [CLS] prepended, unknown words -> [UNK].
  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids{cls_id};
    append_words(text, ids);
    return ids;
  }

  /// [CLS] first [SEP] second.
  std::vector<int> tokenize_pair(const std::string& first, const std::string& second) const {
    std::vector<int> ids = tokenize(first);
    ids.push_back(sep_id);
    append_words(second, ids);
    return ids;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (!out.empty()) out += ' ';
      out += word(id);
    }
    return out;
  }

  /// One token per line; the line number is the id.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
    for (const auto& w : words_) out << w << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary file " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) words.push_back(line);
    const std::vector<std::string> reserved{"[CLS]", "[PAD]", "[UNK]", "[SEP]"};
    if (words.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), words.begin())) {
      throw std::runtime_error("vocabulary file " + path + " does not start with the reserved tokens");
    }
    Vocabulary v;
    v.words_ = std::move(words);
    v.reindex();
    if (v.ids_.size() != v.words_.size()) throw std::runtime_error("vocabulary file " + path + " has duplicates");
    return v;
  }

 private:
  void append_words(const std::string& text, std::vector<int>& ids) const {
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
      ids.push_back(id(w));
    }
  }

  void reindex() {
    ids_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<int>(i);
  }

  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

}  // namespace unit
