#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "rhsim/util.hpp"

namespace rhsim {

// ---------------------------------------------------------------------------
// A single-level set-associative cache with strict LRU replacement, sitting
// between attacker accesses and DRAM. Slice selection hashes the physical
// address through XOR masks; congruent addresses share a (slice, set) pair.
// ---------------------------------------------------------------------------

struct SliceHash {
  std::vector<std::uint64_t> xor_masks;  // bit k of the slice id = parity(phys & mask[k])
};

struct CacheConfig {
  std::uint32_t slices = 1;
  std::uint32_t sets_per_slice = 8;
  std::uint32_t ways = 2;
  std::uint32_t line_bytes = 64;
  SliceHash slice_hash;

  void validate() const {
    if (slices < 1 || sets_per_slice < 1 || ways < 1 || line_bytes < 1)
      throw std::invalid_argument("CacheConfig: all counts must be >= 1");
    if ((line_bytes & (line_bytes - 1)) != 0)
      throw std::invalid_argument("CacheConfig: line_bytes must be a power of two");
  }
};

enum class AccessOutcome { Hit, Miss, Uncached };

struct UncachedRegion {
  std::uint64_t begin = 0;  // inclusive
  std::uint64_t end = 0;    // exclusive
  enum class Kind { Dma, Rdma } kind = Kind::Dma;
};

struct CacheTraceEntry {
  Tick tick;
  std::uint64_t phys;
  AccessOutcome outcome;
};

class Cache {
 public:
  explicit Cache(const CacheConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    sets_.assign(std::size_t(cfg_.slices) * cfg_.sets_per_slice, {});
  }

  const CacheConfig& config() const { return cfg_; }

  std::uint32_t slice_of(std::uint64_t phys) const {
    std::uint32_t s = 0;
    for (std::size_t k = 0; k < cfg_.slice_hash.xor_masks.size(); ++k)
      s |= parity64(phys & cfg_.slice_hash.xor_masks[k]) << k;
    return s % cfg_.slices;
  }
  std::uint32_t set_of(std::uint64_t phys) const {
    return static_cast<std::uint32_t>((phys / cfg_.line_bytes) % cfg_.sets_per_slice);
  }
  std::uint64_t line_tag(std::uint64_t phys) const { return phys / cfg_.line_bytes; }

  void add_uncached_region(const UncachedRegion& r) {
    if (r.end <= r.begin) throw std::invalid_argument("UncachedRegion: empty range");
    for (const auto& o : regions_)
      if (r.begin < o.end && o.begin < r.end)
        throw std::invalid_argument("UncachedRegion: overlapping ranges");
    regions_.push_back(r);
  }
  const std::vector<UncachedRegion>& uncached_regions() const { return regions_; }

  bool is_uncached(std::uint64_t phys) const {
    for (const auto& r : regions_)
      if (phys >= r.begin && phys < r.end) return true;
    return false;
  }

  // A Hit touches LRU state only; a Miss inserts the line, evicting the LRU
  // victim of its set. Uncached and non-temporal accesses never enter the
  // cache. Callers forward Miss/Uncached outcomes to DRAM.
  AccessOutcome access(std::uint64_t phys, Tick tick, bool non_temporal = false) {
    AccessOutcome out;
    if (is_uncached(phys) || non_temporal) {
      ++uncached_count_;
      out = AccessOutcome::Uncached;
    } else {
      auto& lines = set_ref(phys);
      std::uint64_t tag = line_tag(phys);
      auto it = std::find(lines.begin(), lines.end(), tag);
      if (it != lines.end()) {
        lines.erase(it);
        lines.push_back(tag);  // MRU at the back
        ++hits_;
        out = AccessOutcome::Hit;
      } else {
        if (lines.size() >= cfg_.ways) lines.erase(lines.begin());
        lines.push_back(tag);
        ++misses_;
        out = AccessOutcome::Miss;
      }
    }
    if (trace_enabled_) trace_.push_back({tick, phys, out});
    return out;
  }

  // clflush model: drops the line if resident, no-op otherwise.
  void flush_line(std::uint64_t phys) {
    auto& lines = set_ref(phys);
    auto it = std::find(lines.begin(), lines.end(), line_tag(phys));
    if (it != lines.end()) lines.erase(it);
  }

  bool resident(std::uint64_t phys) const {
    const auto& lines = sets_[set_index(phys)];
    return std::find(lines.begin(), lines.end(), line_tag(phys)) != lines.end();
  }

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t uncached_count() const { return uncached_count_; }

  void set_trace_enabled(bool on) { trace_enabled_ = on; }
  const std::vector<CacheTraceEntry>& trace() const { return trace_; }

  static void write_trace_csv(std::ostream& os, const std::vector<CacheTraceEntry>& trace) {
    os << "tick,address,outcome\n";
    for (const auto& t : trace) {
      const char* o = t.outcome == AccessOutcome::Hit      ? "hit"
                      : t.outcome == AccessOutcome::Miss   ? "miss"
                                                           : "uncached";
      os << t.tick << ',' << t.phys << ',' << o << '\n';
    }
  }

 private:
  std::size_t set_index(std::uint64_t phys) const {
    return std::size_t(slice_of(phys)) * cfg_.sets_per_slice + set_of(phys);
  }
  std::vector<std::uint64_t>& set_ref(std::uint64_t phys) { return sets_[set_index(phys)]; }

  CacheConfig cfg_;
  std::vector<std::vector<std::uint64_t>> sets_;  // LRU order, MRU at back
  std::vector<UncachedRegion> regions_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::uint64_t uncached_count_ = 0;
  bool trace_enabled_ = false;
  std::vector<CacheTraceEntry> trace_;
};

struct EvictionSet {
  std::uint64_t target = 0;
  std::vector<std::uint64_t> members;
};

// Eviction-set discovery driven purely by Hit/Miss observations, mirroring
// the epistemic position of an attacker who cannot read the slice hash.
// `Port` is anything with `AccessOutcome access(std::uint64_t phys)`.
//
// Returns an empty optional when the candidate pool cannot evict the target
// (fewer congruent addresses than ways).
template <typename Port>
std::optional<EvictionSet> build_eviction_set(Port& port, std::uint64_t target,
                                              std::vector<std::uint64_t> pool) {
  pool.erase(std::remove(pool.begin(), pool.end(), target), pool.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  auto evicts = [&](const std::vector<std::uint64_t>& addrs) {
    port.access(target);
    for (std::uint64_t a : addrs) port.access(a);
    return port.access(target) == AccessOutcome::Miss;
  };

  if (!evicts(pool)) return std::nullopt;

  // reduce to a minimal evicting set
  std::vector<std::uint64_t> working = pool;
  for (std::uint64_t candidate : pool) {
    std::vector<std::uint64_t> without;
    without.reserve(working.size());
    for (std::uint64_t a : working)
      if (a != candidate) without.push_back(a);
    if (without.size() < working.size() && evicts(without)) working = std::move(without);
  }

  // pull back every other congruent pool member: prime the candidate, touch
  // the minimal set, and see whether the candidate was displaced
  std::vector<std::uint64_t> members = working;
  for (std::uint64_t candidate : pool) {
    if (std::find(working.begin(), working.end(), candidate) != working.end()) continue;
    port.access(candidate);
    for (std::uint64_t a : working) port.access(a);
    if (port.access(candidate) == AccessOutcome::Miss) members.push_back(candidate);
  }
  std::sort(members.begin(), members.end());

  return EvictionSet{target, std::move(members)};
}

template <typename Port>
void evict_via_set(Port& port, const EvictionSet& set) {
  for (std::uint64_t a : set.members) port.access(a);
}

}  // namespace rhsim
