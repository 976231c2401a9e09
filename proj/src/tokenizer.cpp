#include "xvspec/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace xvspec {

namespace {

std::string describe_symbol(unsigned char c) {
  char buf[32];
  if (c >= 0x20 && c < 0x7f) {
    std::snprintf(buf, sizeof(buf), "'%c' (0x%02x)", c, c);
  } else {
    std::snprintf(buf, sizeof(buf), "0x%02x", c);
  }
  return buf;
}

// Merges every non-overlapping (left, right) occurrence, scanning left to right.
bool merge_in_place(std::vector<TokenId>& seq, TokenId left, TokenId right, TokenId result) {
  if (seq.size() < 2) return false;
  bool changed = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < seq.size();) {
    if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
      seq[out++] = result;
      i += 2;
      changed = true;
    } else {
      seq[out++] = seq[i++];
    }
  }
  seq.resize(out);
  return changed;
}

}  // namespace

TokenId Tokenizer::add_surface(std::string surface) {
  auto it = ids_.find(surface);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(vocab_.size());
  ids_.emplace(surface, id);
  vocab_.push_back(std::move(surface));
  return id;
}

void Tokenizer::add_rule(TokenId left, TokenId right) {
  const TokenId result = add_surface(vocab_[left] + vocab_[right]);
  merges_.push_back({left, right, result});
  rank_.try_emplace({left, right}, merges_.size() - 1, result);
}

void Tokenizer::index_rules() {
  rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    rank_.try_emplace({merges_[r].left, merges_[r].right}, r, merges_[r].result);
  }
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, std::size_t num_merges) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");

  std::map<std::string, std::size_t> counts;
  std::array<bool, 256> seen{};
  for (const auto& s : corpus) {
    ++counts[s];
    for (unsigned char c : s) seen[c] = true;
  }

  Tokenizer tok;
  tok.symbol_ids_.fill(-1);
  for (int c = 0; c < 256; ++c) {
    if (!seen[c]) continue;
    tok.alphabet_.push_back(static_cast<char>(c));
    tok.symbol_ids_[c] = tok.add_surface(std::string(1, static_cast<char>(c)));
  }
  if (tok.alphabet_.empty()) throw std::invalid_argument("train_bpe: corpus has no symbols");

  std::vector<std::pair<std::vector<TokenId>, std::size_t>> words;
  words.reserve(counts.size());
  for (const auto& [s, n] : counts) {
    std::vector<TokenId> seq;
    seq.reserve(s.size());
    for (unsigned char c : s) seq.push_back(tok.symbol_ids_[c]);
    words.emplace_back(std::move(seq), n);
  }

  for (std::size_t step = 0; step < num_merges; ++step) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> pair_counts;
    for (const auto& [seq, n] : words) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) pair_counts[{seq[i], seq[i + 1]}] += n;
    }
    if (pair_counts.empty()) break;

    const std::pair<TokenId, TokenId>* best = nullptr;
    std::size_t best_count = 0;
    std::string best_surface;
    for (const auto& [pair, n] : pair_counts) {
      if (best != nullptr && n < best_count) continue;
      std::string merged = tok.vocab_[pair.first] + tok.vocab_[pair.second];
      bool better = best == nullptr || n > best_count;
      if (!better && n == best_count) {
        better = merged < best_surface ||
                 (merged == best_surface && tok.vocab_[pair.first] < tok.vocab_[best->first]);
      }
      if (better) {
        best = &pair;
        best_count = n;
        best_surface = std::move(merged);
      }
    }

    const auto [left, right] = *best;
    tok.add_rule(left, right);
    const TokenId result = tok.merges_.back().result;
    for (auto& [seq, n] : words) merge_in_place(seq, left, right, result);
  }
  return tok;
}

std::vector<TokenId> Tokenizer::tokenize(std::string_view text) const {
  std::vector<TokenId> seq;
  seq.reserve(text.size());
  for (unsigned char c : text) {
    const TokenId id = symbol_ids_[c];
    if (id < 0) throw std::invalid_argument("tokenize: symbol " + describe_symbol(c) + " is not in the alphabet");
    seq.push_back(id);
  }
  // Lowest-rank pair first; equivalent to replaying the rules in training order.
  while (seq.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = rank_.find({seq[i], seq[i + 1]});
      if (it != rank_.end() && it->second.first < best_rank) best_rank = it->second.first;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const MergeRule& rule = merges_[best_rank];
    merge_in_place(seq, rule.left, rule.right, rule.result);
  }
  return seq;
}

std::string Tokenizer::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += surface(id);
  return out;
}

const std::string& Tokenizer::surface(TokenId id) const {
  if (!valid(id)) throw std::out_of_range("tokenizer: unknown token id " + std::to_string(id));
  return vocab_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Tokenizer::find(std::string_view surface) const {
  auto it = ids_.find(std::string(surface));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<std::string, std::string>> Tokenizer::merge_surfaces() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(merges_.size());
  for (const auto& m : merges_) out.emplace_back(vocab_[m.left], vocab_[m.right]);
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merge_surfaces()) merges.push_back({l, r});
  return {{"version", kTokenizerFormatVersion}, {"alphabet", alphabet_}, {"merges", merges}, {"vocab", vocab_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& doc) {
  if (!doc.contains("version") || doc.at("version").get<int>() != kTokenizerFormatVersion) {
    throw std::runtime_error("tokenizer: unsupported format version");
  }
  Tokenizer tok;
  tok.symbol_ids_.fill(-1);
  const auto alphabet = doc.at("alphabet").get<std::string>();
  for (char c : alphabet) {
    const auto u = static_cast<unsigned char>(c);
    if (tok.symbol_ids_[u] >= 0) throw std::runtime_error("tokenizer: duplicate alphabet symbol");
    tok.alphabet_.push_back(c);
    tok.symbol_ids_[u] = tok.add_surface(std::string(1, c));
  }
  for (const auto& m : doc.at("merges")) {
    const auto left = tok.find(m.at(0).get<std::string>());
    const auto right = tok.find(m.at(1).get<std::string>());
    if (!left || !right) throw std::runtime_error("tokenizer: merge references an unknown token");
    tok.add_rule(*left, *right);
  }
  if (doc.contains("vocab") && doc.at("vocab").get<std::vector<std::string>>() != tok.vocab_) {
    throw std::runtime_error("tokenizer: vocab table disagrees with merges");
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("tokenizer: cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("tokenizer: cannot read " + path.string());
  return from_json(nlohmann::json::parse(in));
}

DirectMap DirectMap::build(const Tokenizer& draft, const Tokenizer& target) {
  DirectMap map;
  map.draft_to_target_.assign(draft.vocab_size(), -1);
  map.target_to_draft_.assign(target.vocab_size(), -1);
  for (std::size_t d = 0; d < draft.vocab_size(); ++d) {
    if (auto t = target.find(draft.vocab()[d])) {
      map.draft_to_target_[d] = *t;
      map.target_to_draft_[static_cast<std::size_t>(*t)] = static_cast<TokenId>(d);
      map.domain_.push_back(static_cast<TokenId>(d));
    }
  }
  return map;
}

std::optional<TokenId> DirectMap::to_target(TokenId draft) const {
  if (draft < 0 || static_cast<std::size_t>(draft) >= draft_to_target_.size()) return std::nullopt;
  const TokenId t = draft_to_target_[static_cast<std::size_t>(draft)];
  if (t < 0) return std::nullopt;
  return t;
}

std::optional<TokenId> DirectMap::to_draft(TokenId target) const {
  if (target < 0 || static_cast<std::size_t>(target) >= target_to_draft_.size()) return std::nullopt;
  const TokenId d = target_to_draft_[static_cast<std::size_t>(target)];
  if (d < 0) return std::nullopt;
  return d;
}

DirectMap DirectMap::inverse() const {
  DirectMap inv;
  inv.draft_to_target_ = target_to_draft_;
  inv.target_to_draft_ = draft_to_target_;
  for (std::size_t i = 0; i < inv.draft_to_target_.size(); ++i) {
    if (inv.draft_to_target_[i] >= 0) inv.domain_.push_back(static_cast<TokenId>(i));
  }
  return inv;
}

}  // namespace xvspec
