#include "xvspec/ngram_cache.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace xvspec {

std::string to_string(EvictionPolicy policy) { return policy == EvictionPolicy::LRU ? "lru" : "lfu"; }

EvictionPolicy parse_eviction_policy(std::string_view name) {
  if (name == "lru" || name == "LRU") return EvictionPolicy::LRU;
  if (name == "lfu" || name == "LFU") return EvictionPolicy::LFU;
  throw std::invalid_argument("unknown eviction policy '" + std::string(name) + "'");
}

NGramCache::NGramCache(std::shared_ptr<const Tokenizer> draft_tokenizer,
                       std::shared_ptr<const Tokenizer> target_tokenizer, EvictionPolicy policy,
                       std::optional<std::size_t> capacity)
    : draft_tok_(std::move(draft_tokenizer)),
      target_tok_(std::move(target_tokenizer)),
      policy_(policy),
      capacity_(capacity) {
  if (!draft_tok_ || !target_tok_) throw std::invalid_argument("NGramCache: tokenizers are required");
}

void NGramCache::check_entry(TokenId target_token, std::span<const TokenId> draft_seq) const {
  if (draft_seq.size() < 2) throw std::invalid_argument("NGramCache: n-gram must span at least two drafter tokens");
  const std::string& want = target_tok_->surface(target_token);
  if (draft_tok_->detokenize(draft_seq) != want) {
    throw std::invalid_argument("NGramCache: drafter run does not spell target token '" + want + "'");
  }
}

bool NGramCache::insert(TokenId target_token, std::span<const TokenId> draft_seq, std::uint64_t step) {
  check_entry(target_token, draft_seq);
  std::vector<TokenId> key(draft_seq.begin(), draft_seq.end());
  if (entries_.contains(key)) return false;
  if (capacity_ && *capacity_ == 0) return false;
  while (capacity_ && entries_.size() >= *capacity_) {
    erase(victim());
    ++counters_.evictions;
  }
  NGramEntry entry;
  entry.target_token = target_token;
  entry.draft_seq = key;
  entry.last_used = step;
  entry.created_at = step;
  entry.serial = next_serial_++;
  by_target_.emplace(target_token, key);
  max_len_ = std::max(max_len_, key.size());
  entries_.emplace(std::move(key), std::move(entry));
  clock_ = std::max(clock_, step);
  ++counters_.inserts;
  return true;
}

std::optional<CacheMatch> NGramCache::lookup_longest(std::span<const TokenId> tokens, std::size_t start) {
  if (start >= tokens.size()) throw std::out_of_range("lookup_longest: start out of bounds");
  const std::size_t remaining = tokens.size() - start;
  for (std::size_t len = std::min(max_len_, remaining); len >= 2; --len) {
    std::vector<TokenId> key(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                             tokens.begin() + static_cast<std::ptrdiff_t>(start + len));
    auto it = entries_.find(key);
    if (it == entries_.end()) continue;
    ++it->second.hit_count;
    it->second.last_used = clock_;
    ++counters_.hits;
    return CacheMatch{it->second, len};
  }
  ++counters_.misses;
  return std::nullopt;
}

std::map<std::vector<TokenId>, NGramEntry>::iterator NGramCache::victim() {
  auto rank = [this](const NGramEntry& e) {
    return policy_ == EvictionPolicy::LRU ? std::make_tuple(e.last_used, std::uint64_t{0}, e.serial)
                                          : std::make_tuple(e.hit_count, e.last_used, e.serial);
  };
  auto best = entries_.begin();
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (rank(it->second) < rank(best->second)) best = it;
  }
  return best;
}

void NGramCache::erase(std::map<std::vector<TokenId>, NGramEntry>::iterator it) {
  auto [lo, hi] = by_target_.equal_range(it->second.target_token);
  for (auto r = lo; r != hi; ++r) {
    if (r->second == it->first) {
      by_target_.erase(r);
      break;
    }
  }
  entries_.erase(it);
}

std::vector<NGramEntry> NGramCache::evict_if_needed() {
  std::vector<NGramEntry> evicted;
  while (capacity_ && entries_.size() > *capacity_) {
    auto it = victim();
    evicted.push_back(it->second);
    erase(it);
    ++counters_.evictions;
  }
  return evicted;
}

void NGramCache::set_capacity(std::optional<std::size_t> capacity) { capacity_ = capacity; }

void NGramCache::clear() {
  entries_.clear();
  by_target_.clear();
  max_len_ = 0;
}

CacheStats NGramCache::stats_snapshot(std::uint64_t tokens_processed) const {
  if (tokens_processed == 0) throw std::invalid_argument("stats_snapshot: tokens_processed must be positive");
  CacheStats s;
  s.size = entries_.size();
  for (const auto& [key, e] : entries_) s.memory_estimate += entry_record(e).size();
  s.growth_rate = static_cast<double>(s.size) / static_cast<double>(tokens_processed);
  const auto lookups = counters_.hits + counters_.misses;
  s.hit_rate = lookups == 0 ? 0.0 : static_cast<double>(counters_.hits) / static_cast<double>(lookups);
  return s;
}

const NGramEntry* NGramCache::find(std::span<const TokenId> draft_seq) const {
  auto it = entries_.find(std::vector<TokenId>(draft_seq.begin(), draft_seq.end()));
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<const NGramEntry*> NGramCache::entries_for_target(TokenId target_token) const {
  std::vector<const NGramEntry*> out;
  auto [lo, hi] = by_target_.equal_range(target_token);
  for (auto r = lo; r != hi; ++r) out.push_back(&entries_.at(r->second));
  return out;
}

std::vector<NGramEntry> NGramCache::entries() const {
  std::vector<NGramEntry> out;
  out.reserve(entries_.size());
  for (const auto& [key, e] : entries_) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.serial < b.serial; });
  return out;
}

std::string NGramCache::entry_record(const NGramEntry& entry) const {
  std::vector<std::string> drafts;
  drafts.reserve(entry.draft_seq.size());
  for (TokenId d : entry.draft_seq) drafts.push_back(draft_tok_->surface(d));
  nlohmann::json rec = {{"target_surface", target_tok_->surface(entry.target_token)},
                        {"draft_surfaces", drafts},
                        {"hit_count", entry.hit_count},
                        {"last_used", entry.last_used},
                        {"created_at", entry.created_at}};
  return rec.dump();
}

void NGramCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cache: cannot write " + path.string());
  nlohmann::json header = {{"version", kCacheFormatVersion},
                           {"policy", to_string(policy_)},
                           {"capacity", capacity_ ? nlohmann::json(*capacity_) : nlohmann::json(nullptr)},
                           {"clock", clock_},
                           {"counters",
                            {{"inserts", counters_.inserts},
                             {"hits", counters_.hits},
                             {"misses", counters_.misses},
                             {"evictions", counters_.evictions}}}};
  out << header.dump() << '\n';
  for (const auto& e : entries()) out << entry_record(e) << '\n';
}

NGramCache NGramCache::load(const std::filesystem::path& path, std::shared_ptr<const Tokenizer> draft_tokenizer,
                            std::shared_ptr<const Tokenizer> target_tokenizer) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cache: cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("cache: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("cache: corrupt header: ") + e.what());
  }
  if (!header.contains("version") || header.at("version") != kCacheFormatVersion) {
    throw std::runtime_error("cache: unsupported format version " +
                             (header.contains("version") ? header.at("version").dump() : std::string("<none>")));
  }
  std::optional<std::size_t> capacity;
  if (!header.at("capacity").is_null()) capacity = header.at("capacity").get<std::size_t>();
  NGramCache cache(std::move(draft_tokenizer), std::move(target_tokenizer),
                   parse_eviction_policy(header.at("policy").get<std::string>()), capacity);
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      const auto target = cache.target_tok_->find(rec.at("target_surface").get<std::string>());
      if (!target) throw std::runtime_error("cache: unknown target surface");
      std::vector<TokenId> seq;
      for (const auto& s : rec.at("draft_surfaces")) {
        const auto d = cache.draft_tok_->find(s.get<std::string>());
        if (!d) throw std::runtime_error("cache: unknown drafter surface '" + s.get<std::string>() + "'");
        seq.push_back(*d);
      }
      cache.check_entry(*target, seq);
      if (cache.entries_.contains(seq)) throw std::runtime_error("cache: duplicate entry");
      NGramEntry e;
      e.target_token = *target;
      e.draft_seq = seq;
      e.hit_count = rec.at("hit_count").get<std::uint64_t>();
      e.last_used = rec.at("last_used").get<std::uint64_t>();
      e.created_at = rec.at("created_at").get<std::uint64_t>();
      e.serial = cache.next_serial_++;
      cache.by_target_.emplace(e.target_token, seq);
      cache.max_len_ = std::max(cache.max_len_, seq.size());
      cache.entries_.emplace(std::move(seq), std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("cache: corrupt record: ") + e.what());
  }
  if (capacity && cache.entries_.size() > *capacity) throw std::runtime_error("cache: file exceeds its capacity");
  cache.clock_ = header.value("clock", std::uint64_t{0});
  if (header.contains("counters")) {
    const auto& c = header.at("counters");
    cache.counters_ = {c.at("inserts").get<std::uint64_t>(), c.at("hits").get<std::uint64_t>(),
                       c.at("misses").get<std::uint64_t>(), c.at("evictions").get<std::uint64_t>()};
  }
  return cache;
}

bool NGramCache::same_contents(const NGramCache& other) const {
  if (policy_ != other.policy_ || capacity_ != other.capacity_ || counters_ != other.counters_ ||
      clock_ != other.clock_) {
    return false;
  }
  const auto a = entries();
  const auto b = other.entries();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].target_token != b[i].target_token || a[i].draft_seq != b[i].draft_seq ||
        a[i].hit_count != b[i].hit_count || a[i].last_used != b[i].last_used ||
        a[i].created_at != b[i].created_at) {
      return false;
    }
  }
  return true;
}

}  // namespace xvspec
