#pragma once

#include <memory>
#include <optional>

#include "rhsim/cache.hpp"
#include "rhsim/defense.hpp"
#include "rhsim/dram.hpp"
#include "rhsim/osmem.hpp"

namespace rhsim {

struct WorldSpec {
  DramGeometry geometry;
  AddressMapping mapping;
  RowBufferPolicy row_buffer;
  RefreshConfig refresh;
  FaultMap faults;
  std::vector<FaultEntry> aged_faults;  // appear after countermeasure install
  bool cache_present = true;
  CacheConfig cache;
  std::uint32_t page_bytes = 64;
  std::uint32_t kernel_reserved_frames = 4;
  bool dedup_enabled = false;
  std::vector<FileObject> files;

  std::uint32_t frame_count() const {
    return static_cast<std::uint32_t>(geometry.total_bytes() / page_bytes);
  }

  void validate() const {
    geometry.validate();
    if (page_bytes != geometry.bytes_per_row)
      throw std::invalid_argument("WorldSpec: page_bytes must equal bytes_per_row");
    std::uint32_t frames = frame_count();
    if (frames == 0 || (frames & (frames - 1)) != 0)
      throw std::invalid_argument("WorldSpec: frame count must be a power of two");
  }
};

// One self-contained simulation instance: DRAM behind an optional cache,
// the OS model on top, countermeasure hooks woven through all paths.
// Attacker memory accesses advance the abstract clock one tick each; OS
// byte traffic is instantaneous but still visible to read/write hooks.
class Machine : public PhysMemory {
 public:
  Machine(const WorldSpec& spec, const std::vector<Countermeasure>& defenses, std::uint64_t seed)
      : dram_(spec.geometry, spec.mapping, spec.row_buffer, spec.refresh, spec.faults, seed),
        cache_present_(spec.cache_present) {
    spec.validate();
    if (cache_present_) cache_.emplace(spec.cache);
    os_ = std::make_unique<OsState>(*this, spec.frame_count(), spec.page_bytes);
    defenses_.configure(defenses, seed);

    for (std::uint32_t i = 0; i < spec.kernel_reserved_frames; ++i)
      os_->allocator().alloc_frame(kernel_owner());
    for (const auto& f : spec.files) os_->create_file(f);
    os_->set_dedup_enabled(spec.dedup_enabled);

    defenses_.install(dram_, *os_);
    if (!spec.aged_faults.empty()) dram_.add_fault_entries(spec.aged_faults);
  }

  Dram& dram() { return dram_; }
  const Dram& dram() const { return dram_; }
  bool cache_present() const { return cache_present_; }
  Cache& cache() { return *cache_; }
  OsState& os() { return *os_; }
  DefenseSet& defenses() { return defenses_; }
  const DefenseSet& defenses() const { return defenses_; }

  Tick now() const { return tick_; }
  std::uint64_t attacker_accesses() const { return attacker_accesses_; }

  // One attacker memory access: one tick of simulated time. Refresh runs
  // first, then the access flows through the cache (when present) and on a
  // miss or uncached path reaches DRAM, where the fault engine and the
  // activation-path countermeasures see it.
  AccessOutcome attacker_access(std::uint64_t phys, bool non_temporal = false) {
    if (phys >= dram_.geometry().total_bytes())
      throw RangeError("attacker_access: address out of range");
    const Tick t = tick_++;
    dram_.refresh_step(t);
    defenses_.on_tick(dram_, t);
    ++attacker_accesses_;

    AccessOutcome out = AccessOutcome::Uncached;
    if (cache_present_) out = cache_->access(phys, t, non_temporal);
    if (out != AccessOutcome::Hit) {
      DramCoordinate coord = map_address(phys, dram_.geometry(), dram_.mapping());
      dram_.activate(coord, t);
      defenses_.on_activate(dram_, coord, t, out == AccessOutcome::Miss);
    }
    return out;
  }

  void attacker_flush(std::uint64_t phys) {
    if (cache_present_) cache_->flush_line(phys);
  }

  // Ticks with no memory traffic (verification latency and the like).
  void idle_ticks(Tick n) {
    for (Tick i = 0; i < n; ++i) {
      const Tick t = tick_++;
      dram_.refresh_step(t);
      defenses_.on_tick(dram_, t);
    }
  }

  // PhysMemory: the OS-level byte port. Reads pass the ECC filter, writes
  // update the countermeasures' reference copies.
  std::uint8_t mem_read(std::uint64_t phys) override { return defenses_.filter_read(dram_, phys); }
  void mem_write(std::uint64_t phys, std::uint8_t value) override {
    dram_.write_phys(phys, value);
    defenses_.on_os_write(phys, value);
  }

  // Access port used by eviction-set construction and hammering loops.
  struct Port {
    Machine& m;
    AccessOutcome access(std::uint64_t phys) { return m.attacker_access(phys); }
  };
  Port port() { return Port{*this}; }

 private:
  Dram dram_;
  bool cache_present_;
  std::optional<Cache> cache_;
  std::unique_ptr<OsState> os_;
  DefenseSet defenses_;
  Tick tick_ = 0;
  std::uint64_t attacker_accesses_ = 0;
};

}  // namespace rhsim
