#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xvspec/rng.hpp"

namespace xvspec {

inline constexpr int kTokenizerFormatVersion = 1;

struct MergeRule {
  TokenId left;
  TokenId right;
  TokenId result;
};

/// Byte-pair tokenizer over a fixed alphabet of single-byte symbols.
///
/// Ids 0..|alphabet|-1 are the base symbols in byte order; merged tokens follow
/// in the order they were first produced. Immutable once built, so one
/// instance can be shared by any number of readers.
class Tokenizer {
 public:
  /// Learns up to `num_merges` rules from `corpus`. Each string is an
  /// independent unit; pairs never span two strings. The most frequent pair
  /// wins, ties go to the lexicographically smallest merged string.
  static Tokenizer train(std::span<const std::string> corpus, std::size_t num_merges);

  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  const std::string& surface(TokenId id) const;
  std::optional<TokenId> find(std::string_view surface) const;
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < vocab_.size(); }

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::string& alphabet() const { return alphabet_; }
  const std::vector<MergeRule>& merges() const { return merges_; }
  const std::vector<std::string>& vocab() const { return vocab_; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.alphabet_ == b.alphabet_ && a.vocab_ == b.vocab_ && a.merge_surfaces() == b.merge_surfaces();
  }

 private:
  struct PairHash {
    std::size_t operator()(std::pair<TokenId, TokenId> p) const noexcept {
      return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
                                        static_cast<std::uint32_t>(p.second));
    }
  };

  TokenId add_surface(std::string surface);
  void add_rule(TokenId left, TokenId right);
  void index_rules();
  std::vector<std::pair<std::string, std::string>> merge_surfaces() const;

  std::string alphabet_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<MergeRule> merges_;
  // pair -> (rank, result); first rule wins for a repeated pair
  std::unordered_map<std::pair<TokenId, TokenId>, std::pair<std::size_t, TokenId>, PairHash> rank_;
  std::array<TokenId, 256> symbol_ids_{};
};

/// Bidirectional id map between the tokens two vocabularies share verbatim.
class DirectMap {
 public:
  DirectMap() = default;
  static DirectMap build(const Tokenizer& draft, const Tokenizer& target);

  std::optional<TokenId> to_target(TokenId draft) const;
  std::optional<TokenId> to_draft(TokenId target) const;
  bool has_draft(TokenId draft) const { return to_target(draft).has_value(); }

  /// Draft ids that have a target image, ascending.
  const std::vector<TokenId>& draft_domain() const { return domain_; }
  std::size_t size() const { return domain_.size(); }
  std::size_t draft_vocab_size() const { return draft_to_target_.size(); }
  std::size_t target_vocab_size() const { return target_to_draft_.size(); }

  /// The same pairing seen from the other side.
  DirectMap inverse() const;

 private:
  std::vector<TokenId> draft_to_target_;
  std::vector<TokenId> target_to_draft_;
  std::vector<TokenId> domain_;
};

}  // namespace xvspec
