#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rhsim/util.hpp"

namespace rhsim {

// ---------------------------------------------------------------------------
// Geometry and addressing
// ---------------------------------------------------------------------------

struct DramGeometry {
  std::uint32_t channels = 1;
  std::uint32_t dimms_per_channel = 1;
  std::uint32_t ranks_per_dimm = 1;
  std::uint32_t banks_per_rank = 1;
  std::uint32_t rows_per_bank = 64;
  std::uint32_t bytes_per_row = 64;

  std::uint64_t total_banks() const {
    return std::uint64_t(channels) * dimms_per_channel * ranks_per_dimm * banks_per_rank;
  }
  std::uint64_t total_rows() const { return total_banks() * rows_per_bank; }
  std::uint64_t total_bytes() const { return total_rows() * bytes_per_row; }

  void validate() const {
    if (channels < 1 || dimms_per_channel < 1 || ranks_per_dimm < 1 || banks_per_rank < 1 ||
        rows_per_bank < 1 || bytes_per_row < 1)
      throw std::invalid_argument("DramGeometry: all counts must be >= 1");
    if ((bytes_per_row & (bytes_per_row - 1)) != 0)
      throw std::invalid_argument("DramGeometry: bytes_per_row must be a power of two");
  }
};

struct DramCoordinate {
  std::uint32_t channel = 0;
  std::uint32_t dimm = 0;
  std::uint32_t rank = 0;
  std::uint32_t bank = 0;
  std::uint32_t row = 0;
  std::uint32_t byte_offset = 0;
  std::uint8_t bit_offset = 0;

  bool operator==(const DramCoordinate& o) const {
    return channel == o.channel && dimm == o.dimm && rank == o.rank && bank == o.bank &&
           row == o.row && byte_offset == o.byte_offset && bit_offset == o.bit_offset;
  }

  // flat bank index within the geometry
  std::uint64_t bank_index(const DramGeometry& g) const {
    return ((std::uint64_t(channel) * g.dimms_per_channel + dimm) * g.ranks_per_dimm + rank) *
               g.banks_per_rank +
           bank;
  }
  // flat row index within the geometry
  std::uint64_t global_row(const DramGeometry& g) const {
    return bank_index(g) * g.rows_per_bank + row;
  }

  void validate(const DramGeometry& g) const {
    if (channel >= g.channels || dimm >= g.dimms_per_channel || rank >= g.ranks_per_dimm ||
        bank >= g.banks_per_rank || row >= g.rows_per_bank || byte_offset >= g.bytes_per_row ||
        bit_offset >= 8)
      throw RangeError("DramCoordinate out of geometry bounds");
  }
};

// Physical-to-DRAM mapping. Row-major linear decomposition with optional
// XOR folding of row bits into the bank index; the masks keep the mapping
// bijective because for a fixed row the bank transform is an involution.
struct AddressMapping {
  std::vector<std::uint64_t> bank_xor_row_masks;  // mask k applies to bank bit k

  void validate(const DramGeometry& g) const {
    if (bank_xor_row_masks.empty()) return;
    if ((g.banks_per_rank & (g.banks_per_rank - 1)) != 0)
      throw std::invalid_argument("AddressMapping: XOR masks require power-of-two bank count");
    std::uint32_t bank_bits = 0;
    while ((1u << bank_bits) < g.banks_per_rank) ++bank_bits;
    if (bank_xor_row_masks.size() > bank_bits)
      throw std::invalid_argument("AddressMapping: more XOR masks than bank bits");
  }
};

inline std::uint32_t mapped_bank(std::uint32_t bank, std::uint32_t row, const AddressMapping& m) {
  for (std::size_t k = 0; k < m.bank_xor_row_masks.size(); ++k)
    bank ^= parity64(std::uint64_t(row) & m.bank_xor_row_masks[k]) << k;
  return bank;
}

inline DramCoordinate map_address(std::uint64_t phys, const DramGeometry& g,
                                  const AddressMapping& m = {}) {
  if (phys >= g.total_bytes()) throw RangeError("map_address: physical address out of range");
  DramCoordinate c;
  c.byte_offset = static_cast<std::uint32_t>(phys % g.bytes_per_row);
  std::uint64_t idx = phys / g.bytes_per_row;
  c.row = static_cast<std::uint32_t>(idx % g.rows_per_bank);
  idx /= g.rows_per_bank;
  c.bank = static_cast<std::uint32_t>(idx % g.banks_per_rank);
  idx /= g.banks_per_rank;
  c.rank = static_cast<std::uint32_t>(idx % g.ranks_per_dimm);
  idx /= g.ranks_per_dimm;
  c.dimm = static_cast<std::uint32_t>(idx % g.dimms_per_channel);
  idx /= g.dimms_per_channel;
  c.channel = static_cast<std::uint32_t>(idx);
  c.bank = mapped_bank(c.bank, c.row, m);
  return c;
}

inline std::uint64_t physical_address(const DramCoordinate& c, const DramGeometry& g,
                                      const AddressMapping& m = {}) {
  c.validate(g);
  std::uint32_t bank = mapped_bank(c.bank, c.row, m);  // involution undoes the fold
  std::uint64_t idx = c.channel;
  idx = idx * g.dimms_per_channel + c.dimm;
  idx = idx * g.ranks_per_dimm + c.rank;
  idx = idx * g.banks_per_rank + bank;
  idx = idx * g.rows_per_bank + c.row;
  return idx * g.bytes_per_row + c.byte_offset;
}

// ---------------------------------------------------------------------------
// Row buffer, refresh, faults
// ---------------------------------------------------------------------------

struct RowBufferPolicy {
  enum class Kind { OpenPage, ClosePage, Adaptive };
  Kind kind = Kind::OpenPage;
  Tick idle_ticks = 1;  // Adaptive only: buffer auto-closes after this much idle time

  void validate() const {
    if (kind == Kind::Adaptive && idle_ticks < 1)
      throw std::invalid_argument("RowBufferPolicy: adaptive idle_ticks must be >= 1");
  }
};

struct RefreshConfig {
  enum class Mode { Standard, Doubled };
  Tick interval_ticks = 4096;  // stands in for the 64 ms refresh requirement
  Mode mode = Mode::Standard;

  Tick effective_interval() const {
    return mode == Mode::Doubled ? std::max<Tick>(1, interval_ticks / 2) : interval_ticks;
  }
  void validate() const {
    if (interval_ticks < 2) throw std::invalid_argument("RefreshConfig: interval must be >= 2");
  }
};

enum class FlipDirection { OneToZero, ZeroToOne };

inline bool pre_flip_bit(FlipDirection d) { return d == FlipDirection::OneToZero; }
inline bool post_flip_bit(FlipDirection d) { return d == FlipDirection::ZeroToOne; }

struct FaultEntry {
  DramCoordinate victim;  // bit-granular victim cell
  FlipDirection direction = FlipDirection::OneToZero;
  std::uint64_t threshold = 64;  // aggressor activations needed within one victim window
  double probability = 1.0;      // in (0, 1]
  std::uint32_t blast_radius = 1;
};

struct FaultMapParams {
  double density = 0.05;             // probability a row hosts an entry
  double one_to_zero_fraction = 1.0;
  double radius2_fraction = 0.0;     // fraction of entries with blast_radius 2
  std::uint64_t threshold = 64;
  double probability = 1.0;
};

struct FaultMap {
  std::vector<FaultEntry> entries;

  void validate(const DramGeometry& g) const {
    for (const auto& e : entries) {
      e.victim.validate(g);
      if (e.threshold < 1) throw std::invalid_argument("FaultEntry: threshold must be >= 1");
      if (!(e.probability > 0.0) || e.probability > 1.0)
        throw std::invalid_argument("FaultEntry: probability must be in (0, 1]");
      if (e.blast_radius < 1) throw std::invalid_argument("FaultEntry: blast_radius must be >= 1");
    }
    for (std::size_t i = 0; i < entries.size(); ++i)
      for (std::size_t j = i + 1; j < entries.size(); ++j)
        if (entries[i].victim == entries[j].victim)
          throw std::invalid_argument("FaultMap: duplicate victim coordinate");
  }

  static FaultMap generate(const DramGeometry& g, const FaultMapParams& p, std::uint64_t seed) {
    Rng rng(seed);
    FaultMap map;
    for (std::uint32_t ch = 0; ch < g.channels; ++ch)
      for (std::uint32_t di = 0; di < g.dimms_per_channel; ++di)
        for (std::uint32_t ra = 0; ra < g.ranks_per_dimm; ++ra)
          for (std::uint32_t ba = 0; ba < g.banks_per_rank; ++ba)
            for (std::uint32_t ro = 0; ro < g.rows_per_bank; ++ro) {
              if (!rng.chance(p.density)) continue;
              FaultEntry e;
              e.victim = {ch, di, ra, ba, ro,
                          static_cast<std::uint32_t>(rng.uniform(g.bytes_per_row)),
                          static_cast<std::uint8_t>(rng.uniform(8))};
              e.direction = rng.chance(p.one_to_zero_fraction) ? FlipDirection::OneToZero
                                                               : FlipDirection::ZeroToOne;
              e.blast_radius = rng.chance(p.radius2_fraction) ? 2 : 1;
              e.threshold = p.threshold;
              e.probability = p.probability;
              map.entries.push_back(e);
            }
    return map;
  }
};

struct FlipEvent {
  std::size_t entry_index = 0;
  DramCoordinate victim;
  FlipDirection direction = FlipDirection::OneToZero;
  std::uint32_t aggressor_row = 0;  // row index within the bank
  Tick tick = 0;
};

struct AccessResult {
  enum class ServedFrom { RowBuffer, RowArray };
  ServedFrom served = ServedFrom::RowArray;
  std::vector<FlipEvent> flips;  // flips applied by this activation
};

// ---------------------------------------------------------------------------
// Dram: cells, row buffers, activation ledger, refresh and the fault engine.
//
// Flip semantics: an entry becomes eligible when some row within its blast
// radius accumulates `threshold` activations counted since the later of that
// row's own refresh and the victim row's refresh. At the first eligible
// activation in a victim window the engine rolls the entry's probability
// once; whatever the outcome, the entry stays quiet until the victim row is
// refreshed again. A fired flip only applies while the victim bit still
// holds the pre-flip value.
// ---------------------------------------------------------------------------

class Dram {
 public:
  Dram(const DramGeometry& g, const AddressMapping& mapping, const RowBufferPolicy& policy,
       const RefreshConfig& refresh, const FaultMap& faults, std::uint64_t seed)
      : geom_(g),
        mapping_(mapping),
        policy_(policy),
        refresh_(refresh),
        faults_(faults),
        rng_(seed) {
    geom_.validate();
    mapping_.validate(g);
    policy_.validate();
    refresh_.validate();
    faults_.validate(g);
    cells_.assign(geom_.total_bytes(), 0);
    ledger_.assign(geom_.total_rows(), 0);
    banks_.assign(geom_.total_banks(), BankState{});
    entry_rt_.assign(faults_.entries.size(), EntryRuntime{});
  }

  const DramGeometry& geometry() const { return geom_; }
  const AddressMapping& mapping() const { return mapping_; }
  const RowBufferPolicy& row_buffer_policy() const { return policy_; }
  const RefreshConfig& refresh_config() const { return refresh_; }
  RefreshConfig& refresh_config() { return refresh_; }
  const FaultMap& fault_map() const { return faults_; }

  // Append entries after construction; models fault positions appearing over
  // the module's lifetime (used by countermeasure-aging scenarios).
  void add_fault_entries(const std::vector<FaultEntry>& extra) {
    for (const auto& e : extra) {
      faults_.entries.push_back(e);
      entry_rt_.push_back(EntryRuntime{});
    }
    faults_.validate(geom_);
  }

  std::uint64_t activation_count() const { return activations_; }
  const std::vector<FlipEvent>& flip_log() const { return flip_log_; }
  const std::vector<std::uint64_t>& ledger() const { return ledger_; }

  AccessResult activate(const DramCoordinate& coord, Tick tick) {
    coord.validate(geom_);
    BankState& bank = banks_[coord.bank_index(geom_)];
    if (bank.seen_access && tick < bank.last_tick)
      throw std::invalid_argument("Dram::activate: tick went backwards within a bank");

    bool increment = false;
    AccessResult result;
    switch (policy_.kind) {
      case RowBufferPolicy::Kind::OpenPage:
        if (bank.open && bank.open_row == coord.row) {
          result.served = AccessResult::ServedFrom::RowBuffer;
        } else {
          bank.open = true;
          bank.open_row = coord.row;
          increment = true;
        }
        break;
      case RowBufferPolicy::Kind::ClosePage:
        increment = true;
        bank.open = false;
        break;
      case RowBufferPolicy::Kind::Adaptive: {
        bool idle_closed =
            bank.open && bank.seen_access && tick - bank.last_tick >= policy_.idle_ticks;
        if (bank.open && !idle_closed && bank.open_row == coord.row) {
          result.served = AccessResult::ServedFrom::RowBuffer;
        } else {
          bank.open = true;
          bank.open_row = coord.row;
          increment = true;
        }
        break;
      }
    }
    bank.last_tick = tick;
    bank.seen_access = true;

    if (increment) {
      ++activations_;
      std::uint64_t grow = coord.global_row(geom_);
      ++ledger_[grow];
      result.flips = fault_check(coord, tick);
    }
    return result;
  }

  // One call per tick. Rows refresh round-robin so that every row is
  // refreshed exactly once per effective interval.
  std::vector<std::uint64_t> refresh_step(Tick tick) {
    std::vector<std::uint64_t> refreshed;
    const Tick interval = refresh_.effective_interval();
    const std::uint64_t rows = geom_.total_rows();
    refresh_acc_ += rows;
    while (refresh_acc_ >= interval) {
      refresh_acc_ -= interval;
      std::uint64_t row = refresh_cursor_;
      refresh_cursor_ = (refresh_cursor_ + 1) % rows;
      refresh_row(row, tick);
      refreshed.push_back(row);
    }
    return refreshed;
  }

  // Targeted refresh used by activation-path countermeasures (TRR, PARA...).
  void refresh_rows(const std::vector<std::uint64_t>& global_rows, Tick tick) {
    for (std::uint64_t r : global_rows) refresh_row(r, tick);
  }

  std::uint8_t read_byte(const DramCoordinate& coord) const {
    coord.validate(geom_);
    return cells_[physical_address(coord, geom_, mapping_)];
  }
  void write_byte(const DramCoordinate& coord, std::uint8_t value) {
    coord.validate(geom_);
    cells_[physical_address(coord, geom_, mapping_)] = value;
  }

  std::uint8_t read_phys(std::uint64_t phys) const {
    if (phys >= cells_.size()) throw RangeError("Dram::read_phys: out of range");
    return cells_[phys];
  }
  void write_phys(std::uint64_t phys, std::uint8_t value) {
    if (phys >= cells_.size()) throw RangeError("Dram::write_phys: out of range");
    cells_[phys] = value;
  }

  bool read_bit(const DramCoordinate& coord) const {
    return (read_byte(coord) >> coord.bit_offset) & 1;
  }

  const std::vector<std::uint8_t>& cells() const { return cells_; }

  // Line-oriented hex dump, one row per line, for golden-file comparisons.
  void dump(std::ostream& os) const {
    os << "# dram v1 ch dimm rank bank row bytes\n";
    for (std::uint32_t ch = 0; ch < geom_.channels; ++ch)
      for (std::uint32_t di = 0; di < geom_.dimms_per_channel; ++di)
        for (std::uint32_t ra = 0; ra < geom_.ranks_per_dimm; ++ra)
          for (std::uint32_t ba = 0; ba < geom_.banks_per_rank; ++ba)
            for (std::uint32_t ro = 0; ro < geom_.rows_per_bank; ++ro) {
              std::vector<std::uint8_t> row_bytes(geom_.bytes_per_row);
              for (std::uint32_t b = 0; b < geom_.bytes_per_row; ++b)
                row_bytes[b] = read_byte({ch, di, ra, ba, ro, b, 0});
              os << ch << ' ' << di << ' ' << ra << ' ' << ba << ' ' << ro << ' '
                 << bytes_to_hex(row_bytes) << '\n';
            }
  }

 private:
  struct BankState {
    bool open = false;
    std::uint32_t open_row = 0;
    Tick last_tick = 0;
    bool seen_access = false;
  };

  // Per-entry window bookkeeping: `rolled` marks that the one probability
  // roll of the current victim window has been spent; `window_start` fixes
  // the ledger baseline of each nearby row at the victim's last refresh.
  struct EntryRuntime {
    bool rolled = false;
    std::map<std::uint64_t, std::uint64_t> window_start;
  };

  std::vector<FlipEvent> fault_check(const DramCoordinate& aggressor, Tick tick) {
    std::vector<FlipEvent> fired;
    const std::uint64_t aggr_global = aggressor.global_row(geom_);
    for (std::size_t i = 0; i < faults_.entries.size(); ++i) {
      const FaultEntry& e = faults_.entries[i];
      if (e.victim.channel != aggressor.channel || e.victim.dimm != aggressor.dimm ||
          e.victim.rank != aggressor.rank || e.victim.bank != aggressor.bank)
        continue;
      std::uint32_t dist = e.victim.row > aggressor.row ? e.victim.row - aggressor.row
                                                        : aggressor.row - e.victim.row;
      if (dist < 1 || dist > e.blast_radius) continue;
      EntryRuntime& rt = entry_rt_[i];
      if (rt.rolled) continue;
      std::uint64_t base = 0;
      if (auto it = rt.window_start.find(aggr_global); it != rt.window_start.end())
        base = it->second;
      std::uint64_t effective = ledger_[aggr_global] - base;
      if (effective < e.threshold) continue;
      if (read_bit(e.victim) != pre_flip_bit(e.direction)) continue;
      rt.rolled = true;
      if (!rng_.chance(e.probability)) continue;
      std::uint8_t v = read_byte(e.victim);
      v = post_flip_bit(e.direction) ? (v | (1u << e.victim.bit_offset))
                                     : (v & ~(1u << e.victim.bit_offset));
      write_byte(e.victim, v);
      FlipEvent ev{i, e.victim, e.direction, aggressor.row, tick};
      flip_log_.push_back(ev);
      fired.push_back(ev);
    }
    return fired;
  }

  void refresh_row(std::uint64_t global_row, Tick) {
    ledger_[global_row] = 0;
    const std::uint64_t bank_idx = global_row / geom_.rows_per_bank;
    const std::uint32_t row = static_cast<std::uint32_t>(global_row % geom_.rows_per_bank);
    for (std::size_t i = 0; i < faults_.entries.size(); ++i) {
      const FaultEntry& e = faults_.entries[i];
      const std::uint64_t victim_bank = e.victim.bank_index(geom_);
      if (victim_bank != bank_idx) continue;
      EntryRuntime& rt = entry_rt_[i];
      std::uint32_t dist =
          e.victim.row > row ? e.victim.row - row : row - e.victim.row;
      if (e.victim.row == row) {
        // victim recharged: new window, new roll, new ledger baselines
        rt.rolled = false;
        rt.window_start.clear();
        std::uint32_t lo = e.victim.row > e.blast_radius ? e.victim.row - e.blast_radius : 0;
        std::uint32_t hi = std::min(geom_.rows_per_bank - 1, e.victim.row + e.blast_radius);
        for (std::uint32_t r = lo; r <= hi; ++r) {
          std::uint64_t g = bank_idx * geom_.rows_per_bank + r;
          if (ledger_[g] != 0) rt.window_start[g] = ledger_[g];
        }
      } else if (dist <= e.blast_radius) {
        // an aggressor-candidate row was refreshed; its ledger restarted
        rt.window_start.erase(global_row);
      }
    }
  }

  DramGeometry geom_;
  AddressMapping mapping_;
  RowBufferPolicy policy_;
  RefreshConfig refresh_;
  FaultMap faults_;
  Rng rng_;

  std::vector<std::uint8_t> cells_;
  std::vector<std::uint64_t> ledger_;
  std::vector<BankState> banks_;
  std::vector<EntryRuntime> entry_rt_;
  std::vector<FlipEvent> flip_log_;
  std::uint64_t activations_ = 0;

  std::uint64_t refresh_acc_ = 0;
  std::uint64_t refresh_cursor_ = 0;
};

}  // namespace rhsim
