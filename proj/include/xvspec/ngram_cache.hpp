#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvspec/tokenizer.hpp"

namespace xvspec {

inline constexpr int kCacheFormatVersion = 1;

enum class EvictionPolicy { LRU, LFU };

std::string to_string(EvictionPolicy policy);
EvictionPolicy parse_eviction_policy(std::string_view name);

/// One cached translation: a run of >= 2 drafter tokens whose text is exactly
/// one target token.
struct NGramEntry {
  TokenId target_token = -1;
  std::vector<TokenId> draft_seq;
  std::uint64_t hit_count = 0;
  std::uint64_t last_used = 0;
  std::uint64_t created_at = 0;
  std::uint64_t serial = 0;  // insertion order, final tie-break for eviction

  friend bool operator==(const NGramEntry&, const NGramEntry&) = default;
};

struct CacheCounters {
  std::uint64_t inserts = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  friend bool operator==(const CacheCounters&, const CacheCounters&) = default;
};

struct CacheStats {
  std::size_t size = 0;
  std::size_t memory_estimate = 0;
  double growth_rate = 0.0;
  double hit_rate = 0.0;
};

struct CacheMatch {
  NGramEntry entry;
  std::size_t matched_len = 0;
};

/// Drafter-to-target n-gram cache keyed by the drafter token run.
///
/// Timestamps come from a logical clock the owner advances with set_clock();
/// inserts stamp their explicit step. A capacity, when set, is enforced on
/// every insert by evicting the policy's victim first.
class NGramCache {
 public:
  NGramCache(std::shared_ptr<const Tokenizer> draft_tokenizer, std::shared_ptr<const Tokenizer> target_tokenizer,
             EvictionPolicy policy = EvictionPolicy::LFU, std::optional<std::size_t> capacity = std::nullopt);

  /// Adds (target <- draft_seq). Returns false if the run is already cached.
  /// Throws if the surfaces disagree or the run is shorter than two tokens.
  bool insert(TokenId target_token, std::span<const TokenId> draft_seq, std::uint64_t step);

  /// Longest cached run that is a prefix of tokens[start..]. Hits bump the
  /// entry's hit count and recency.
  std::optional<CacheMatch> lookup_longest(std::span<const TokenId> tokens, std::size_t start);

  /// Evicts until size <= capacity. LRU removes the stalest entry; LFU the
  /// least-hit one, ties by staleness then insertion order.
  std::vector<NGramEntry> evict_if_needed();

  CacheStats stats_snapshot(std::uint64_t tokens_processed) const;

  const NGramEntry* find(std::span<const TokenId> draft_seq) const;
  std::vector<const NGramEntry*> entries_for_target(TokenId target_token) const;
  /// Entries in insertion order.
  std::vector<NGramEntry> entries() const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::optional<std::size_t> capacity() const { return capacity_; }
  void set_capacity(std::optional<std::size_t> capacity);
  EvictionPolicy policy() const { return policy_; }
  const CacheCounters& counters() const { return counters_; }
  std::uint64_t clock() const { return clock_; }
  void set_clock(std::uint64_t step) { clock_ = step; }
  void clear();

  const Tokenizer& draft_tokenizer() const { return *draft_tok_; }
  const Tokenizer& target_tokenizer() const { return *target_tok_; }

  /// The JSON-lines record written for one entry.
  std::string entry_record(const NGramEntry& entry) const;

  void save(const std::filesystem::path& path) const;
  static NGramCache load(const std::filesystem::path& path, std::shared_ptr<const Tokenizer> draft_tokenizer,
                         std::shared_ptr<const Tokenizer> target_tokenizer);

  /// Structural equality: entries with metadata, policy, capacity, counters.
  bool same_contents(const NGramCache& other) const;

 private:
  void check_entry(TokenId target_token, std::span<const TokenId> draft_seq) const;
  std::map<std::vector<TokenId>, NGramEntry>::iterator victim();
  void erase(std::map<std::vector<TokenId>, NGramEntry>::iterator it);

  std::shared_ptr<const Tokenizer> draft_tok_;
  std::shared_ptr<const Tokenizer> target_tok_;
  EvictionPolicy policy_;
  std::optional<std::size_t> capacity_;
  std::map<std::vector<TokenId>, NGramEntry> entries_;
  std::multimap<TokenId, std::vector<TokenId>> by_target_;
  CacheCounters counters_;
  std::uint64_t clock_ = 0;
  std::uint64_t next_serial_ = 0;
  std::size_t max_len_ = 0;
};

}  // namespace xvspec
