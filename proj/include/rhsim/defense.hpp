#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rhsim/cache.hpp"
#include "rhsim/dram.hpp"
#include "rhsim/osmem.hpp"
#include "rhsim/util.hpp"

namespace rhsim {

enum class AttackStage { LP, RH, EV, SE };

inline const char* stage_name(AttackStage s) {
  switch (s) {
    case AttackStage::LP: return "LP";
    case AttackStage::RH: return "RH";
    case AttackStage::EV: return "EV";
    case AttackStage::SE: return "SE";
  }
  return "?";
}

enum class CountermeasureKind {
  DoubleRefresh,
  Para,
  Pra,
  Trr,
  Ecc,
  Anvil,
  Bcatt,
  Gcatt,
  GuardIon,
  Alis,
  ZebRam,
  FootprintDetector,
  DisallowClflush,
  HashTree,
};

inline const char* countermeasure_name(CountermeasureKind k) {
  switch (k) {
    case CountermeasureKind::DoubleRefresh: return "double_refresh";
    case CountermeasureKind::Para: return "para";
    case CountermeasureKind::Pra: return "pra";
    case CountermeasureKind::Trr: return "trr";
    case CountermeasureKind::Ecc: return "ecc";
    case CountermeasureKind::Anvil: return "anvil";
    case CountermeasureKind::Bcatt: return "bcatt";
    case CountermeasureKind::Gcatt: return "gcatt";
    case CountermeasureKind::GuardIon: return "guardion";
    case CountermeasureKind::Alis: return "alis";
    case CountermeasureKind::ZebRam: return "zebram";
    case CountermeasureKind::FootprintDetector: return "footprint_detector";
    case CountermeasureKind::DisallowClflush: return "disallow_clflush";
    case CountermeasureKind::HashTree: return "hash_tree";
  }
  return "?";
}

struct Countermeasure {
  CountermeasureKind kind = CountermeasureKind::Trr;
  double probability = 1.0;        // PARA / PRA
  std::uint64_t threshold = 32;    // TRR row-activation / ANVIL row-miss threshold
  Tick window = 4096;              // TRR / ANVIL counting window
  std::uint32_t radius = 1;        // TRR refresh radius
  std::uint32_t gcatt_split = 8;   // G-CATT: kernel rows live below this frame
  std::uint32_t gap = 1;           // G-CATT guard band width
  std::uint32_t word_bytes = 8;    // ECC word
  Tick scan_interval = 512;        // hash-tree integrity scan
  double footprint_fraction = 0.5; // of total frames

  void validate() const {
    if (!(probability > 0.0) || probability > 1.0)
      throw std::invalid_argument("Countermeasure: probability must be in (0, 1]");
    if (threshold < 1) throw std::invalid_argument("Countermeasure: threshold must be >= 1");
    if (word_bytes < 1 || scan_interval < 1 || window < 1)
      throw std::invalid_argument("Countermeasure: parameters must be >= 1");
  }
};

struct Detection {
  std::string countermeasure;
  AttackStage stage = AttackStage::RH;
};

struct DetectedError : std::runtime_error {
  Detection detection;
  explicit DetectedError(Detection d)
      : std::runtime_error(d.countermeasure + " detected the attack"), detection(std::move(d)) {}
};

// ---------------------------------------------------------------------------
// DefenseSet: the installed countermeasures, hooked into frame allocation,
// the activation path, the read path and the tick stream of one machine.
// ---------------------------------------------------------------------------

class DefenseSet {
 public:
  DefenseSet() = default;

  void configure(std::vector<Countermeasure> list, std::uint64_t seed) {
    for (auto& c : list) c.validate();
    active_ = std::move(list);
    rng_ = Rng(seed ^ 0x9e3779b97f4a7c15ULL);
  }

  bool empty() const { return active_.empty(); }
  const std::vector<Countermeasure>& active() const { return active_; }

  bool has(CountermeasureKind k) const {
    for (const auto& c : active_)
      if (c.kind == k) return true;
    return false;
  }
  const Countermeasure* find(CountermeasureKind k) const {
    for (const auto& c : active_)
      if (c.kind == k) return &c;
    return nullptr;
  }

  // Called once the machine exists, before any attack activity. BCATT's
  // blacklist is built from the fault map as known at install time; entries
  // that appear later (module aging) are invisible to it.
  void install(Dram& dram, OsState& os) {
    if (const Countermeasure* c = find(CountermeasureKind::DoubleRefresh)) {
      (void)c;
      dram.refresh_config().mode = RefreshConfig::Mode::Doubled;
      note_engaged(CountermeasureKind::DoubleRefresh);
    }
    if (find(CountermeasureKind::Ecc) || find(CountermeasureKind::HashTree))
      shadow_ = dram.cells();
    if (find(CountermeasureKind::Bcatt)) {
      for (const auto& e : dram.fault_map().entries) {
        std::uint64_t phys = physical_address(e.victim, dram.geometry(), dram.mapping());
        FrameId f = static_cast<FrameId>(phys / os.page_bytes());
        if (os.allocator().is_free(f)) {
          os.allocator().reserve_guard(f);
          note_engaged(CountermeasureKind::Bcatt);
        }
      }
    }
    if (find(CountermeasureKind::Gcatt) || find(CountermeasureKind::ZebRam) ||
        find(CountermeasureKind::GuardIon) || find(CountermeasureKind::Alis)) {
      PlacementPolicy policy;
      policy.filter = [this, &dram, &os](FrameId first, std::uint32_t count, const Owner& owner,
                                         const AllocFlags& flags) {
        return allow_alloc(dram, os, first, count, owner, flags);
      };
      policy.after_alloc = [this, &dram, &os](FrameId first, std::uint32_t count,
                                              const Owner& owner, const AllocFlags& flags) {
        after_alloc(dram, os, first, count, owner, flags);
      };
      os.allocator().set_policy(std::move(policy));
    }
  }

  bool disallows_clflush() const { return has(CountermeasureKind::DisallowClflush); }

  // Activation-path hooks. `cache_miss` separates demand misses (what a
  // performance counter sees) from uncached traffic.
  void on_activate(Dram& dram, const DramCoordinate& coord, Tick tick, bool cache_miss) {
    const std::uint64_t grow = coord.global_row(dram.geometry());
    if (const Countermeasure* c = find(CountermeasureKind::Trr)) {
      auto& slot = trr_counts_[grow];
      if (tick - slot.window_start >= c->window) slot = {0, tick};
      if (++slot.count >= c->threshold) {
        slot = {0, tick};
        dram.refresh_rows(rows_within(dram, grow, c->radius), tick);
        note_engaged(CountermeasureKind::Trr);
      }
    }
    if (const Countermeasure* c = find(CountermeasureKind::Para)) {
      note_engaged(CountermeasureKind::Para);
      if (rng_.chance(c->probability))
        dram.refresh_rows(adjacent_rows(dram, grow), tick);
    }
    if (const Countermeasure* c = find(CountermeasureKind::Pra)) {
      note_engaged(CountermeasureKind::Pra);
      if (rng_.chance(c->probability)) {
        auto rows = adjacent_rows(dram, grow);
        const std::uint32_t per_bank = dram.geometry().rows_per_bank;
        const std::uint64_t bank_base = grow / per_bank * per_bank;
        rows.push_back(bank_base + rng_.uniform(per_bank));
        dram.refresh_rows(rows, tick);
      }
    }
    if (const Countermeasure* c = find(CountermeasureKind::Anvil)) {
      if (cache_miss) {
        auto& bank = anvil_banks_[grow / dram.geometry().rows_per_bank];
        if (tick - bank.window_start >= c->window) bank = {{}, tick};
        // rows marked hot once their miss count crosses the threshold; an
        // early refresh needs misses from more than one row of the bank,
        // which is why same-row hammering slips past
        if (++bank.counts[grow] >= c->threshold) {
          std::size_t hot = 0;
          for (const auto& [row, n] : bank.counts)
            if (n >= c->threshold) ++hot;
          if (hot >= 2) {
            std::vector<std::uint64_t> victims;
            for (const auto& [row, n] : bank.counts)
              if (n >= c->threshold) {
                auto adj = adjacent_rows(dram, row);
                victims.insert(victims.end(), adj.begin(), adj.end());
              }
            bank = {{}, tick};
            dram.refresh_rows(victims, tick);
            note_engaged(CountermeasureKind::Anvil);
          }
        }
      }
    }
  }

  // Periodic work; throws DetectedError when the hash-tree scan finds a
  // modification the OS never made.
  void on_tick(const Dram& dram, Tick tick) {
    if (const Countermeasure* c = find(CountermeasureKind::HashTree)) {
      if (tick >= last_scan_ + c->scan_interval) {
        last_scan_ = tick;
        const auto& cells = dram.cells();
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i] != shadow_[i]) {
            note_engaged(CountermeasureKind::HashTree);
            throw DetectedError({countermeasure_name(CountermeasureKind::HashTree),
                                 AttackStage::RH});
          }
        }
      }
    }
  }

  // ECC sits on the read path. One divergent bit per word is corrected
  // transparently, two raise an uncorrectable-error machine check, three or
  // more pass through unnoticed (the crafted multi-flip evasion).
  std::uint8_t filter_read(const Dram& dram, std::uint64_t phys) {
    const Countermeasure* c = find(CountermeasureKind::Ecc);
    if (!c) return dram.read_phys(phys);
    const std::uint64_t base = phys / c->word_bytes * c->word_bytes;
    int diff_bits = 0;
    for (std::uint32_t i = 0; i < c->word_bytes && base + i < shadow_.size(); ++i)
      diff_bits += __builtin_popcount(dram.read_phys(base + i) ^ shadow_[base + i]);
    if (diff_bits == 0) return dram.read_phys(phys);
    note_engaged(CountermeasureKind::Ecc);
    if (diff_bits == 1) {
      ++ecc_corrections_;
      return shadow_[phys];
    }
    if (diff_bits == 2)
      throw DetectedError({countermeasure_name(CountermeasureKind::Ecc), AttackStage::RH});
    return dram.read_phys(phys);  // >= 3 divergent bits: code word looks valid
  }

  // OS-mediated writes keep the reference copies current.
  void on_os_write(std::uint64_t phys, std::uint8_t value) {
    if (phys < shadow_.size()) shadow_[phys] = value;
  }

  // Consulted by the location-preparation loop after attacker allocations.
  void check_footprint(std::uint32_t attacker_frames, std::uint32_t total_frames) {
    if (const Countermeasure* c = find(CountermeasureKind::FootprintDetector)) {
      if (attacker_frames > c->footprint_fraction * total_frames) {
        note_engaged(CountermeasureKind::FootprintDetector);
        throw DetectedError({countermeasure_name(CountermeasureKind::FootprintDetector),
                             AttackStage::LP});
      }
    }
  }

  void note_engaged(CountermeasureKind k) { engaged_.insert(k); }
  bool engaged(CountermeasureKind k) const { return engaged_.count(k) > 0; }
  bool any_engaged() const { return !engaged_.empty(); }
  std::uint64_t ecc_corrections() const { return ecc_corrections_; }

 private:
  std::vector<std::uint64_t> adjacent_rows(const Dram& dram, std::uint64_t grow) const {
    return rows_within(dram, grow, 1);
  }

  std::vector<std::uint64_t> rows_within(const Dram& dram, std::uint64_t grow,
                                         std::uint32_t radius) const {
    const std::uint32_t per_bank = dram.geometry().rows_per_bank;
    const std::uint64_t bank_base = grow / per_bank * per_bank;
    const std::uint32_t row = static_cast<std::uint32_t>(grow - bank_base);
    std::vector<std::uint64_t> out;
    for (std::int64_t d = -std::int64_t(radius); d <= std::int64_t(radius); ++d) {
      if (d == 0) continue;
      std::int64_t r = std::int64_t(row) + d;
      if (r >= 0 && r < std::int64_t(per_bank)) out.push_back(bank_base + r);
    }
    return out;
  }

  bool allow_alloc(Dram& dram, OsState& os, FrameId first, std::uint32_t count,
                   const Owner& owner, const AllocFlags& flags) {
    (void)flags;
    if (const Countermeasure* c = find(CountermeasureKind::Gcatt)) {
      // static partition: kernel below the split, everything else above the
      // guard band; rows inside the band stay empty
      for (std::uint32_t i = 0; i < count; ++i) {
        std::uint64_t row = frame_row(dram, os, first + i);
        if (owner.kind == OwnerKind::Kernel) {
          if (row >= c->gcatt_split) {
            note_engaged(CountermeasureKind::Gcatt);
            return false;
          }
        } else if (owner.kind == OwnerKind::User || owner.kind == OwnerKind::Shared) {
          if (row < c->gcatt_split + c->gap) {
            note_engaged(CountermeasureKind::Gcatt);
            return false;
          }
        }
      }
    }
    if (find(CountermeasureKind::ZebRam)) {
      // odd rows are absorbing guards; only even rows hold data
      for (std::uint32_t i = 0; i < count; ++i) {
        if (frame_row(dram, os, first + i) % 2 != 0) {
          note_engaged(CountermeasureKind::ZebRam);
          return false;
        }
      }
    }
    return true;
  }

  void after_alloc(Dram& dram, OsState& os, FrameId first, std::uint32_t count,
                   const Owner& owner, const AllocFlags& flags) {
    (void)dram;
    (void)owner;
    const bool guard_dma = find(CountermeasureKind::GuardIon) && flags.dma;
    const bool guard_net = find(CountermeasureKind::Alis) && flags.rdma;
    if (!guard_dma && !guard_net) return;
    for (std::uint32_t i = 0; i < count; ++i) {
      FrameId f = first + i;
      if (f > 0 && os.allocator().is_free(f - 1)) os.allocator().reserve_guard(f - 1);
      if (f + 1 < os.allocator().frame_count() && os.allocator().is_free(f + 1))
        os.allocator().reserve_guard(f + 1);
    }
    note_engaged(guard_dma ? CountermeasureKind::GuardIon : CountermeasureKind::Alis);
  }

  static std::uint64_t frame_row(const Dram& dram, const OsState& os, FrameId f) {
    std::uint64_t phys = std::uint64_t(f) * os.page_bytes();
    return map_address(phys, dram.geometry(), dram.mapping()).global_row(dram.geometry());
  }

  struct TrrSlot {
    std::uint64_t count = 0;
    Tick window_start = 0;
  };
  struct AnvilBank {
    std::map<std::uint64_t, std::uint64_t> counts;
    Tick window_start = 0;
  };

  std::vector<Countermeasure> active_;
  Rng rng_{1};
  std::vector<std::uint8_t> shadow_;
  std::map<std::uint64_t, TrrSlot> trr_counts_;
  std::map<std::uint64_t, AnvilBank> anvil_banks_;
  Tick last_scan_ = 0;
  std::set<CountermeasureKind> engaged_;
  std::uint64_t ecc_corrections_ = 0;
};

}  // namespace rhsim
