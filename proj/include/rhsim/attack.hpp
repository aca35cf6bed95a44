#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rhsim/machine.hpp"

namespace rhsim {

// ---------------------------------------------------------------------------
// Origins and capabilities
// ---------------------------------------------------------------------------

enum class OriginKind { UPro, PPro, Website, Network };

inline const char* origin_name(OriginKind o) {
  switch (o) {
    case OriginKind::UPro: return "UPro";
    case OriginKind::PPro: return "PPro";
    case OriginKind::Website: return "Website";
    case OriginKind::Network: return "Network";
  }
  return "?";
}

enum Capability : std::uint16_t {
  CapFlushInstruction = 1 << 0,
  CapNonTemporal = 1 << 1,
  CapPagemapRead = 1 << 2,
  CapUncachedDma = 1 << 3,
  CapUncachedRdma = 1 << 4,
  CapEvictionSets = 1 << 5,
  CapHugePages = 1 << 6,
  CapDedupControl = 1 << 7,
  CapNativeCode = 1 << 8,
  CapPacketOnly = 1 << 9,
};

using CapSet = std::uint16_t;

// Remote origins gain conditional capabilities only from declared victim
// properties: how the far end handles packets is not the attacker's choice.
struct VictimProperties {
  bool rdma_buffers = false;        // packets land in uncached RDMA memory
  bool flush_on_packets = false;    // victim flushes packet buffers itself
  bool cat_partitioning = false;    // CAT-like way restriction aids eviction
  bool observable_behavior = false; // service-level behavior visible remotely
};

inline CapSet capabilities_for(OriginKind origin, const VictimProperties& props) {
  switch (origin) {
    case OriginKind::UPro:
      return CapFlushInstruction | CapNonTemporal | CapUncachedDma | CapEvictionSets |
             CapHugePages | CapNativeCode;
    case OriginKind::PPro:
      return capabilities_for(OriginKind::UPro, props) | CapPagemapRead | CapDedupControl;
    case OriginKind::Website:
      return CapEvictionSets | CapHugePages;
    case OriginKind::Network: {
      CapSet caps = CapPacketOnly;
      if (props.rdma_buffers) caps |= CapUncachedRdma;
      if (props.flush_on_packets) caps |= CapFlushInstruction;
      if (props.cat_partitioning) caps |= CapEvictionSets;
      return caps;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

enum class TargetClass { Epro, Epuo, Dpro, Dpuo };

inline const char* target_class_name(TargetClass c) {
  switch (c) {
    case TargetClass::Epro: return "EPRO";
    case TargetClass::Epuo: return "EPUO";
    case TargetClass::Dpro: return "DPRO";
    case TargetClass::Dpuo: return "DPUO";
  }
  return "?";
}

inline bool target_readable(TargetClass c) {
  return c == TargetClass::Epro || c == TargetClass::Dpro;
}
inline bool target_privilege_differs(TargetClass c) {
  return c == TargetClass::Dpro || c == TargetClass::Dpuo;
}

enum class TargetKind { PageTable, PasswdUid, Opcode, Pointer };

struct TargetSpec {
  TargetClass cls = TargetClass::Epro;
  TargetKind kind = TargetKind::Pointer;
  std::string path;                  // file-backed targets
  std::uint32_t record_uid = 1001;   // passwd record to corrupt
  std::uint32_t uid_byte = 0;        // which UID byte a single run flips
  std::uint32_t byte_offset = 8;     // opcode: file offset; pointer: page offset
  std::vector<std::uint8_t> bits = {0};
  FlipDirection direction = FlipDirection::OneToZero;
  std::uint32_t pte_index = 0;
  FrameId pte_frame = 4;             // frame the victim PTE points at
  std::uint32_t ptr_value = 5;       // pointer targets: stored value
};

// ---------------------------------------------------------------------------
// Techniques
// ---------------------------------------------------------------------------

enum class LpTechnique { A1, A2, A3, A4, None };
enum class BypassTechnique { Ba1, Ba2, Ba3, None };
enum class PatternTechnique { Bb1, Bb2, Bb3 };
enum class EvTechnique { C1, C2 };

inline const char* lp_name(LpTechnique t) {
  switch (t) {
    case LpTechnique::A1: return "A1";
    case LpTechnique::A2: return "A2";
    case LpTechnique::A3: return "A3";
    case LpTechnique::A4: return "A4";
    case LpTechnique::None: return "none";
  }
  return "?";
}
inline const char* bypass_name(BypassTechnique t) {
  switch (t) {
    case BypassTechnique::Ba1: return "Ba1";
    case BypassTechnique::Ba2: return "Ba2";
    case BypassTechnique::Ba3: return "Ba3";
    case BypassTechnique::None: return "none";
  }
  return "?";
}
inline const char* pattern_name(PatternTechnique t) {
  switch (t) {
    case PatternTechnique::Bb1: return "Bb1";
    case PatternTechnique::Bb2: return "Bb2";
    case PatternTechnique::Bb3: return "Bb3";
  }
  return "?";
}
inline const char* ev_name(EvTechnique t) { return t == EvTechnique::C1 ? "C1" : "C2"; }

struct ExpressiveTarget {
  std::uint32_t byte = 0;  // index within the UID field
  std::uint8_t bit = 0;
  FlipDirection direction = FlipDirection::OneToZero;
};

struct AttackScenario {
  OriginKind origin = OriginKind::UPro;
  TargetSpec target;
  LpTechnique lp = LpTechnique::None;
  BypassTechnique bypass = BypassTechnique::Ba1;
  PatternTechnique pattern = PatternTechnique::Bb1;
  EvTechnique ev = EvTechnique::C1;
  bool se_enabled = false;
  std::uint64_t hammer_budget = 20000;
  bool ba1_non_temporal = false;  // Ba1 via non-temporal stores instead of clflush
  VictimProperties props;
  std::vector<ExpressiveTarget> expressive;
  std::string notes;

  void validate() const {
    if (hammer_budget < 1) throw std::invalid_argument("AttackScenario: budget must be >= 1");
  }
};

// Everything needed to run one simulation instance.
struct ScenarioSpec {
  std::string name;
  std::uint64_t seed = 1;
  WorldSpec world;
  AttackScenario attack;
  std::vector<Countermeasure> defenses;
  Tick post_rh_idle = 1024;          // verification latency between RH and EV
  std::uint32_t lp_attempt_budget = 0;  // 0: one pass over all frames
  std::uint32_t lp_headroom = 4;        // frames A2 gives back before the trigger
  std::uint32_t arena_frames = 0;       // attacker working set at world build
  std::uint32_t arena_dma_frames = 0;
  std::uint32_t arena_rdma_frames = 0;
};

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

struct FeasibilityVerdict {
  bool feasible = true;
  std::string reason;
  std::vector<std::string> notes;
};

inline FeasibilityVerdict check_feasibility_with_caps(const AttackScenario& sc, CapSet caps) {
  FeasibilityVerdict v;
  auto fail = [&](const std::string& why) {
    v.feasible = false;
    v.reason = why;
    return v;
  };
  switch (sc.bypass) {
    case BypassTechnique::Ba1:
      if (!(caps & (CapFlushInstruction | CapNonTemporal)))
        return fail("Ba1 needs a cache-flush or non-temporal instruction");
      if (sc.ba1_non_temporal && !(caps & CapNonTemporal))
        return fail("non-temporal accesses unavailable to this origin");
      if (!sc.ba1_non_temporal && !(caps & CapFlushInstruction))
        return fail("flush instruction unavailable to this origin");
      break;
    case BypassTechnique::Ba2:
      if (!(caps & CapEvictionSets)) return fail("Ba2 needs eviction-set construction");
      break;
    case BypassTechnique::Ba3:
      if (!(caps & (CapUncachedDma | CapUncachedRdma)))
        return fail("Ba3 needs uncached DMA or RDMA memory");
      break;
    case BypassTechnique::None:
      break;  // platforms without a cache in the access path
  }
  if (sc.pattern == PatternTechnique::Bb2) {
    bool contiguity = sc.lp == LpTechnique::A2;
    if (!(caps & (CapPagemapRead | CapHugePages)) && !contiguity)
      return fail("Bb2 needs address knowledge or physically contiguous memory");
  }
  if (sc.lp == LpTechnique::A3 && !(caps & CapDedupControl))
    return fail("A3 needs control over page merging, a privileged facility");
  if (sc.ev == EvTechnique::C1 && !target_readable(sc.target.cls))
    return fail("C1 needs a readable target");
  if (sc.ev == EvTechnique::C2 && sc.origin == OriginKind::Network &&
      !sc.props.observable_behavior)
    return fail("behavior judgment is impractical through a packet interface");
  if (sc.origin == OriginKind::Website && sc.pattern == PatternTechnique::Bb3)
    v.notes.push_back("one-location hammering from a website has no published precedent");
  return v;
}

inline FeasibilityVerdict check_feasibility(const AttackScenario& sc) {
  return check_feasibility_with_caps(sc, capabilities_for(sc.origin, sc.props));
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

enum class AttackStatus {
  Success,
  InfeasibleCombination,
  PlacementFailed,
  NoFlip,
  WrongFlip,
  NotPersisted,
  Detected,
};

inline const char* status_name(AttackStatus s) {
  switch (s) {
    case AttackStatus::Success: return "Success";
    case AttackStatus::InfeasibleCombination: return "InfeasibleCombination";
    case AttackStatus::PlacementFailed: return "PlacementFailed";
    case AttackStatus::NoFlip: return "NoFlip";
    case AttackStatus::WrongFlip: return "WrongFlip";
    case AttackStatus::NotPersisted: return "NotPersisted";
    case AttackStatus::Detected: return "Detected";
  }
  return "?";
}

struct StageRecord {
  bool lp_run = false;
  std::uint32_t placement_attempts = 0;
  std::uint32_t footprint_peak_frames = 0;
  bool placement_achieved = false;
  std::int64_t victim_frame = -1;
  std::vector<std::size_t> chosen_entries;

  bool rh_run = false;
  std::uint64_t activations = 0;
  std::vector<std::uint32_t> aggressor_rows;
  std::vector<FlipEvent> flips;

  bool ev_run = false;
  std::string ev_result;

  bool se_run = false;
  bool persisted = false;
  std::string disk_uid_hex;  // expressive runs: UID bytes on disk after the loop
};

struct AttackOutcome {
  AttackStatus status = AttackStatus::Success;
  AttackStage failed_stage = AttackStage::LP;
  std::string detail;
  std::string detected_by;
  bool infeasible_due_to_defense = false;
  std::vector<StageRecord> loops;
  std::set<std::string> marks;
  std::vector<std::string> notes;
};

// ---------------------------------------------------------------------------
// The attack driver
// ---------------------------------------------------------------------------

namespace detail {

struct StageFail {
  AttackStatus status;
  AttackStage stage;
  std::string detail;
};

struct RequiredFlip {
  std::uint32_t page_offset = 0;
  std::uint8_t bit = 0;
  FlipDirection direction = FlipDirection::OneToZero;
};

}  // namespace detail

constexpr std::uint32_t kAttackerUid = 1001;
constexpr std::uint32_t kVictimUid = 1000;

class AttackRun {
 public:
  AttackRun(Machine& m, const ScenarioSpec& spec) : m_(m), spec_(spec), sc_(spec.attack) {}

  AttackOutcome execute() {
    AttackOutcome out;
    mark(out, origin_name(sc_.origin));
    mark(out, target_class_name(sc_.target.cls));
    try {
      run_feasibility_gate(out);
      setup_world(out);
      if (sc_.se_enabled && !sc_.expressive.empty()) {
        run_expressive(out);
      } else {
        StageRecord rec;
        run_single(out, rec, required_flips_single());
        out.loops.push_back(std::move(rec));
      }
      out.status = AttackStatus::Success;
    } catch (const detail::StageFail& f) {
      out.status = f.status;
      out.failed_stage = f.stage;
      out.detail = f.detail;
    } catch (const DetectedError& d) {
      out.status = AttackStatus::Detected;
      out.failed_stage = d.detection.stage;
      out.detected_by = d.detection.countermeasure;
      out.detail = d.what();
    }
    if (!pending_rec_.empty()) {
      for (auto& r : pending_rec_) out.loops.push_back(std::move(r));
      pending_rec_.clear();
    }
    return out;
  }

 private:
  // ---- feasibility ---------------------------------------------------------

  void run_feasibility_gate(AttackOutcome& out) {
    FeasibilityVerdict plain = check_feasibility(sc_);
    for (const auto& n : plain.notes) out.notes.push_back(n);
    if (!plain.feasible)
      throw detail::StageFail{AttackStatus::InfeasibleCombination, AttackStage::LP, plain.reason};
    CapSet caps = capabilities_for(sc_.origin, sc_.props);
    if (m_.defenses().disallows_clflush()) {
      CapSet stripped = caps & ~CapFlushInstruction;
      FeasibilityVerdict defended = check_feasibility_with_caps(sc_, stripped);
      if (!defended.feasible) {
        m_.defenses().note_engaged(CountermeasureKind::DisallowClflush);
        out.infeasible_due_to_defense = true;
        throw detail::StageFail{AttackStatus::InfeasibleCombination, AttackStage::RH,
                                defended.reason};
      }
    }
  }

  // ---- world setup ----------------------------------------------------------

  void setup_world(AttackOutcome&) {
    auto& alloc = m_.os().allocator();
    for (std::uint32_t i = 0; i < spec_.arena_frames; ++i)
      arena_.push_back(alloc.alloc_frame(user_owner(kAttackerUid)));
    for (std::uint32_t i = 0; i < spec_.arena_dma_frames; ++i)
      arena_.push_back(alloc.alloc_frame(user_owner(kAttackerUid), AllocFlags{true, false}));
    for (std::uint32_t i = 0; i < spec_.arena_rdma_frames; ++i)
      arena_.push_back(alloc.alloc_frame(user_owner(kAttackerUid), AllocFlags{false, true}));
    if (sc_.lp == LpTechnique::None || sc_.lp == LpTechnique::A3 || sc_.lp == LpTechnique::A4)
      create_victim_natural();
  }

  // ---- required flips --------------------------------------------------------

  std::vector<detail::RequiredFlip> required_flips_single() {
    std::vector<detail::RequiredFlip> req;
    for (std::uint8_t b : sc_.target.bits)
      req.push_back({target_page_offset(), b, sc_.target.direction});
    return req;
  }

  std::uint32_t target_page_offset() {
    const TargetSpec& t = sc_.target;
    switch (t.kind) {
      case TargetKind::PasswdUid:
        return static_cast<std::uint32_t>((uid_field_offset() + t.uid_byte) %
                                          m_.os().page_bytes());
      case TargetKind::Opcode:
        return t.byte_offset % m_.os().page_bytes();
      case TargetKind::Pointer:
        return t.byte_offset;
      case TargetKind::PageTable:
        return t.pte_index * static_cast<std::uint32_t>(kPteBytes);
    }
    return 0;
  }

  std::size_t uid_field_offset() {
    const FileObject& f = m_.os().disk_file(sc_.target.path);
    for (const auto& rec : parse_passwd(f.disk_bytes))
      if (rec.uid_text == std::to_string(sc_.target.record_uid)) return rec.uid_range.offset;
    throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                            "passwd record not found"};
  }

  std::size_t target_abs_offset() {
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid: return uid_field_offset() + sc_.target.uid_byte;
      case TargetKind::Opcode: return sc_.target.byte_offset;
      default: return sc_.target.byte_offset;
    }
  }

  // ---- victim object management ----------------------------------------------

  void create_victim_natural() {
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid:
      case TargetKind::Opcode: {
        m_.os().load_file(sc_.target.path);
        break;
      }
      case TargetKind::PageTable: {
        pt_index_ = m_.os().create_page_table(kAttackerUid);
        m_.os().map_page(pt_index_, 0, sc_.target.pte_frame, 3);
        break;
      }
      case TargetKind::Pointer: {
        data_page_id_ = m_.os().create_data_page(kVictimUid, pointer_page_content());
        break;
      }
    }
    victim_exists_ = true;
  }

  std::vector<std::uint8_t> pointer_page_content() const {
    std::vector<std::uint8_t> content(m_.os().page_bytes(), 0);
    std::uint32_t v = sc_.target.ptr_value;
    for (int i = 0; i < 4; ++i)
      content[sc_.target.byte_offset + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
    return content;
  }

  FrameId victim_frame() {
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid:
      case TargetKind::Opcode: {
        std::uint32_t page =
            static_cast<std::uint32_t>(target_abs_offset() / m_.os().page_bytes());
        const PageCacheEntry* e = m_.os().find_cache_entry(sc_.target.path, page);
        if (!e)
          throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                                  "target page not cached"};
        return e->frame;
      }
      case TargetKind::PageTable:
        return m_.os().page_table(pt_index_).frame;
      case TargetKind::Pointer:
        return m_.os().data_page(data_page_id_).frame;
    }
    return 0;
  }

  // Moves the victim to a fresh frame, excluding recently tried ones; the
  // generic try-and-abort step.
  void relocate_victim() {
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid:
      case TargetKind::Opcode: {
        std::uint32_t page =
            static_cast<std::uint32_t>(target_abs_offset() / m_.os().page_bytes());
        m_.os().evict_page(sc_.target.path, page);
        m_.os().load_file(sc_.target.path);
        break;
      }
      case TargetKind::PageTable: {
        auto& pt = m_.os().page_table(pt_index_);
        auto content = m_.os().read_frame(pt.frame);
        relocate_history_.insert(pt.frame);
        m_.os().allocator().free_frame(pt.frame);
        FrameId fresh;
        try {
          fresh = m_.os().allocator().alloc_frame(kernel_owner(), {}, &relocate_history_);
        } catch (const OutOfMemoryError&) {
          relocate_history_.clear();
          fresh = m_.os().allocator().alloc_frame(kernel_owner());
        }
        m_.os().write_frame(fresh, content);
        pt.frame = fresh;
        break;
      }
      case TargetKind::Pointer: {
        auto content = m_.os().read_data_page(data_page_id_);
        relocate_history_.insert(m_.os().data_page(data_page_id_).frame);
        m_.os().release_data_page(data_page_id_);
        try {
          data_page_id_ = m_.os().create_data_page(kVictimUid, content, std::nullopt,
                                                   &relocate_history_);
        } catch (const OutOfMemoryError&) {
          relocate_history_.clear();
          data_page_id_ = m_.os().create_data_page(kVictimUid, content);
        }
        break;
      }
    }
  }

  // A1: one more victim copy preceded by an attacker pad page, so sprayed
  // copies end up interleaved with attacker-reachable rows.
  void spray_victim_copy() {
    arena_.push_back(m_.os().allocator().alloc_frame(user_owner(kAttackerUid)));
    switch (sc_.target.kind) {
      case TargetKind::PageTable: {
        pt_index_ = m_.os().create_page_table(kAttackerUid);
        m_.os().map_page(pt_index_, 0, sc_.target.pte_frame, 3);
        break;
      }
      case TargetKind::Pointer: {
        data_page_id_ = m_.os().create_data_page(kVictimUid, pointer_page_content());
        break;
      }
      default:
        throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                                "object spraying needs a sprayable object"};
    }
    victim_exists_ = true;
  }

  // ---- fault-map matching ------------------------------------------------------

  bool entry_matches(const FaultEntry& e, const detail::RequiredFlip& r) const {
    std::uint64_t phys = physical_address(e.victim, m_.dram().geometry(), m_.dram().mapping());
    return phys % m_.os().page_bytes() == r.page_offset && e.victim.bit_offset == r.bit &&
           e.direction == r.direction;
  }

  FrameId entry_frame(const FaultEntry& e) const {
    std::uint64_t phys = physical_address(e.victim, m_.dram().geometry(), m_.dram().mapping());
    return static_cast<FrameId>(phys / m_.os().page_bytes());
  }

  // All required flips present on this frame -> the entry indices, else empty.
  std::vector<std::size_t> frame_match(FrameId frame,
                                       const std::vector<detail::RequiredFlip>& req) const {
    const auto& entries = m_.dram().fault_map().entries;
    std::vector<std::size_t> chosen;
    for (const auto& r : req) {
      bool found = false;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entry_frame(entries[i]) == frame && entry_matches(entries[i], r)) {
          chosen.push_back(i);
          found = true;
          break;
        }
      }
      if (!found) return {};
    }
    return chosen;
  }

  std::vector<FrameId> matching_frames(const std::vector<detail::RequiredFlip>& req) const {
    std::vector<FrameId> out;
    for (FrameId f = 0; f < m_.os().allocator().frame_count(); ++f)
      if (!frame_match(f, req).empty()) out.push_back(f);
    return out;
  }

  // ---- LP ---------------------------------------------------------------------

  void note_footprint(StageRecord& rec) {
    std::uint32_t held = m_.os().allocator().owned_frames(user_owner(kAttackerUid));
    rec.footprint_peak_frames = std::max(rec.footprint_peak_frames, held);
    m_.defenses().check_footprint(held, m_.os().allocator().frame_count());
  }

  void run_lp(AttackOutcome& out, StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    rec.lp_run = true;
    validate_flippable(req);
    switch (sc_.lp) {
      case LpTechnique::None: lp_none(rec, req); break;
      case LpTechnique::A1: lp_spray(rec, req); break;
      case LpTechnique::A2: lp_forced_padding(rec, req); break;
      case LpTechnique::A3: lp_induced_replacement(rec, req); break;
      case LpTechnique::A4: lp_try_and_abort(rec, req); break;
    }
    if (sc_.lp != LpTechnique::None) mark(out, lp_name(sc_.lp));
    rec.victim_frame = victim_frame();
    rec.chosen_entries = frame_match(victim_frame(), req);
    rec.placement_achieved = !rec.chosen_entries.empty();
    if (rec.chosen_entries.empty() && !planned_entries_.empty())
      rec.chosen_entries = planned_entries_;  // hammering proceeds on the plan
  }

  void lp_none(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    rec.placement_attempts = 1;
    // prefer faults under the victim's natural position, else the plan is
    // the nearest matching frame
    planned_entries_ = frame_match(victim_frame(), req);
    if (planned_entries_.empty()) {
      auto frames = matching_frames(req);
      if (!frames.empty()) planned_entries_ = frame_match(frames.front(), req);
    }
  }

  void lp_spray(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    if (matching_frames(req).empty())
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "no vulnerable position matches the target"};
    while (true) {
      try {
        spray_victim_copy();
      } catch (const OutOfMemoryError&) {
        throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                                "memory exhausted before a copy landed on a vulnerable row"};
      }
      ++rec.placement_attempts;
      note_footprint(rec);
      if (!frame_match(victim_frame(), req).empty()) {
        planned_entries_ = frame_match(victim_frame(), req);
        // one more pad so the copy has attacker rows on both sides
        try {
          arena_.push_back(m_.os().allocator().alloc_frame(user_owner(kAttackerUid)));
        } catch (const OutOfMemoryError&) {
        }
        return;
      }
    }
  }

  void lp_forced_padding(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    auto& alloc = m_.os().allocator();
    AllocFlags flags;
    if (sc_.bypass == BypassTechnique::Ba3) {
      flags.dma = (capabilities_for(sc_.origin, sc_.props) & CapUncachedDma) != 0;
      flags.rdma = !flags.dma;
    }
    // occupy every frame the OS will hand out
    while (true) {
      try {
        arena_.push_back(alloc.alloc_frame(user_owner(kAttackerUid), flags));
      } catch (const OutOfMemoryError&) {
        break;
      }
      note_footprint(rec);
    }
    // pick an obtainable vulnerable frame
    FrameId chosen_frame = 0;
    bool found = false;
    for (FrameId f : matching_frames(req)) {
      if (alloc.owner_of(f) == user_owner(kAttackerUid)) {
        chosen_frame = f;
        found = true;
        break;
      }
    }
    if (!found)
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "no vulnerable frame was obtainable"};
    planned_entries_ = frame_match(chosen_frame, req);
    free_arena_frame(chosen_frame);
    // give the OS room to breathe so the trigger itself cannot fail
    for (std::uint32_t i = 0; i < spec_.lp_headroom && !arena_.empty(); ++i) {
      FrameId top = *std::max_element(arena_.begin(), arena_.end());
      free_arena_frame(top);
    }
    rec.placement_attempts = 1;
    try {
      create_victim_natural();
    } catch (const OutOfMemoryError&) {
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "victim trigger failed: out of memory"};
    }
  }

  void lp_induced_replacement(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    if (sc_.target.kind != TargetKind::Pointer)
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "induced replacement models data pages only"};
    auto victim_content = m_.os().read_data_page(data_page_id_);
    auto frames = matching_frames(req);
    if (frames.empty())
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "no vulnerable position matches the target"};
    auto& alloc = m_.os().allocator();
    FrameId chosen_frame = 0;
    bool got = false;
    std::vector<FrameId> grabbed;
    while (!got) {
      FrameId f;
      try {
        f = alloc.alloc_frame(user_owner(kAttackerUid));
      } catch (const OutOfMemoryError&) {
        break;
      }
      grabbed.push_back(f);
      note_footprint(rec);
      if (std::find(frames.begin(), frames.end(), f) != frames.end()) {
        chosen_frame = f;
        got = true;
      }
    }
    for (FrameId f : grabbed)
      if (!(got && f == chosen_frame)) alloc.free_frame(f);
    if (!got)
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "no vulnerable frame was obtainable"};
    alloc.free_frame(chosen_frame);
    planned_entries_ = frame_match(chosen_frame, req);

    // forge first, then induce the victim page's re-creation; the merge pass
    // keeps the earlier page's frame
    forged_page_id_ = m_.os().create_data_page(kAttackerUid, victim_content, chosen_frame);
    relocate_victim();
    m_.os().dedup_merge_pass();
    rec.placement_attempts = 1;
    if (m_.os().data_page(data_page_id_).frame != chosen_frame)
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "merge did not land the victim on the forged page"};
  }

  void lp_try_and_abort(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    if (matching_frames(req).empty())
      throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                              "no vulnerable position matches the target"};
    std::uint32_t budget =
        spec_.lp_attempt_budget ? spec_.lp_attempt_budget : m_.os().allocator().frame_count();
    for (std::uint32_t attempt = 0; attempt < budget; ++attempt) {
      ++rec.placement_attempts;
      note_footprint(rec);
      if (!frame_match(victim_frame(), req).empty()) {
        planned_entries_ = frame_match(victim_frame(), req);
        return;
      }
      relocate_victim();
    }
    if (!frame_match(victim_frame(), req).empty()) {
      planned_entries_ = frame_match(victim_frame(), req);
      return;
    }
    throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                            "no vulnerable position found within the attempt budget"};
  }

  void free_arena_frame(FrameId f) {
    auto it = std::find(arena_.begin(), arena_.end(), f);
    if (it != arena_.end()) {
      m_.os().allocator().free_frame(f);
      arena_.erase(it);
    }
  }

  // The flip can only fire while the victim cell holds the pre-flip value.
  void validate_flippable(const std::vector<detail::RequiredFlip>& req) {
    std::uint8_t original = 0;
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid:
      case TargetKind::Opcode:
        original = m_.os().disk_file(sc_.target.path).disk_bytes.at(target_abs_offset());
        break;
      case TargetKind::PageTable:
        original = static_cast<std::uint8_t>(sc_.target.pte_frame & 0xff);
        break;
      case TargetKind::Pointer:
        original = static_cast<std::uint8_t>(sc_.target.ptr_value & 0xff);
        break;
    }
    for (const auto& r : req)
      if (((original >> r.bit) & 1) != (pre_flip_bit(r.direction) ? 1 : 0))
        throw detail::StageFail{AttackStatus::PlacementFailed, AttackStage::LP,
                                "target bit does not hold the pre-flip value"};
  }

  // ---- RH ---------------------------------------------------------------------

  std::uint64_t frame_global_row(FrameId f) const {
    std::uint64_t phys = std::uint64_t(f) * m_.os().page_bytes();
    return map_address(phys, m_.dram().geometry(), m_.dram().mapping())
        .global_row(m_.dram().geometry());
  }

  FrameId row_frame(std::uint64_t global_row) const {
    const auto& g = m_.dram().geometry();
    DramCoordinate c;
    c.row = static_cast<std::uint32_t>(global_row % g.rows_per_bank);
    std::uint64_t bi = global_row / g.rows_per_bank;
    c.bank = static_cast<std::uint32_t>(bi % g.banks_per_rank);
    bi /= g.banks_per_rank;
    c.rank = static_cast<std::uint32_t>(bi % g.ranks_per_dimm);
    bi /= g.ranks_per_dimm;
    c.dimm = static_cast<std::uint32_t>(bi % g.dimms_per_channel);
    c.channel = static_cast<std::uint32_t>(bi / g.dimms_per_channel);
    return static_cast<FrameId>(physical_address(c, g, m_.dram().mapping()) /
                                m_.os().page_bytes());
  }

  bool row_hammerable(std::uint64_t global_row) const {
    FrameId f = row_frame(global_row);
    const Owner& o = m_.os().allocator().owner_of(f);
    if (!(o == user_owner(kAttackerUid))) return false;
    if (sc_.bypass == BypassTechnique::Ba3) {
      const AllocFlags& fl = m_.os().allocator().flags_of(f);
      if (!fl.dma && !fl.rdma) return false;
    }
    return true;
  }

  AllocFlags hammer_alloc_flags() const {
    AllocFlags flags;
    if (sc_.bypass == BypassTechnique::Ba3) {
      flags.dma = (capabilities_for(sc_.origin, sc_.props) & CapUncachedDma) != 0;
      flags.rdma = !flags.dma;
    }
    return flags;
  }

  bool grab_frame_if_free(FrameId f, const AllocFlags& flags) {
    auto& alloc = m_.os().allocator();
    if (f >= alloc.frame_count() || !alloc.is_free(f)) return false;
    std::set<FrameId> others;
    for (FrameId x = 0; x < alloc.frame_count(); ++x)
      if (x != f) others.insert(x);
    try {
      arena_.push_back(alloc.alloc_frame(user_owner(kAttackerUid), flags, &others));
      return true;
    } catch (const OutOfMemoryError&) {
      return false;  // a placement policy refused the frame
    }
  }

  // The attacker maps hammer pages next to the planned victim row. Frames
  // another owner holds, or that a placement policy protects, stay out of
  // reach; the pattern then degrades to whatever rows are available.
  void secure_aggressor_frames(std::uint64_t v, std::uint32_t radius) {
    const auto& g = m_.dram().geometry();
    const AllocFlags flags = hammer_alloc_flags();
    const std::uint64_t bank_base = v / g.rows_per_bank * g.rows_per_bank;
    auto try_row = [&](std::int64_t r) {
      if (r < std::int64_t(bank_base) || r >= std::int64_t(bank_base + g.rows_per_bank))
        return false;
      if (row_hammerable(r)) return true;
      return grab_frame_if_free(row_frame(r), flags);
    };
    switch (sc_.pattern) {
      case PatternTechnique::Bb2:
        try_row(std::int64_t(v) - radius);
        try_row(std::int64_t(v) + radius);
        break;
      case PatternTechnique::Bb3:
        if (!try_row(std::int64_t(v) - radius)) try_row(std::int64_t(v) + radius);
        break;
      case PatternTechnique::Bb1: {
        if (!try_row(std::int64_t(v) - radius)) try_row(std::int64_t(v) + radius);
        bool have_far = false;
        for (std::uint64_t r = bank_base; r < bank_base + g.rows_per_bank; ++r) {
          std::uint64_t dist = r > v ? r - v : v - r;
          if (dist > std::uint64_t(radius) + 1 && row_hammerable(r)) have_far = true;
        }
        if (!have_far) {
          for (std::uint64_t r = bank_base; r < bank_base + g.rows_per_bank; ++r) {
            std::uint64_t dist = r > v ? r - v : v - r;
            if (dist > std::uint64_t(radius) + 1 && grab_frame_if_free(row_frame(r), flags))
              break;
          }
        }
        break;
      }
    }
  }

  std::optional<std::uint64_t> nearest_hammerable(std::uint64_t v, int side,
                                                  std::uint32_t preferred_dist,
                                                  const std::set<std::uint64_t>& taken) const {
    // side: -1 below, +1 above, 0 both; prefers the exact distance, then closer rows
    const auto& g = m_.dram().geometry();
    std::uint64_t bank_base = v / g.rows_per_bank * g.rows_per_bank;
    std::uint64_t bank_end = bank_base + g.rows_per_bank;
    auto usable = [&](std::int64_t r) {
      return r >= std::int64_t(bank_base) && r < std::int64_t(bank_end) &&
             std::uint64_t(r) != v && !taken.count(r) && row_hammerable(r);
    };
    if (usable(std::int64_t(v) - std::int64_t(preferred_dist)) && side <= 0)
      return v - preferred_dist;
    if (usable(std::int64_t(v) + std::int64_t(preferred_dist)) && side >= 0)
      return v + preferred_dist;
    for (std::uint32_t d = 1; d < g.rows_per_bank; ++d) {
      if (side <= 0 && usable(std::int64_t(v) - std::int64_t(d))) return v - d;
      if (side >= 0 && usable(std::int64_t(v) + std::int64_t(d))) return v + d;
    }
    return std::nullopt;
  }

  std::vector<std::uint64_t> plan_aggressors(std::uint64_t v, std::uint32_t radius) {
    const auto& g = m_.dram().geometry();
    std::set<std::uint64_t> taken;
    std::vector<std::uint64_t> rows;
    auto push = [&](std::optional<std::uint64_t> r) {
      if (r && !taken.count(*r)) {
        rows.push_back(*r);
        taken.insert(*r);
      }
    };
    switch (sc_.pattern) {
      case PatternTechnique::Bb1: {
        push(nearest_hammerable(v, 0, radius, taken));
        // a second far row keeps the bank's row buffer thrashing
        std::uint64_t bank_base = v / g.rows_per_bank * g.rows_per_bank;
        for (std::uint64_t r = bank_base; r < bank_base + g.rows_per_bank; ++r) {
          std::uint64_t dist = r > v ? r - v : v - r;
          if (dist > std::uint64_t(radius) + 1 && !taken.count(r) && row_hammerable(r)) {
            rows.push_back(r);
            taken.insert(r);
            break;
          }
        }
        break;
      }
      case PatternTechnique::Bb2:
        push(nearest_hammerable(v, -1, radius, taken));
        push(nearest_hammerable(v, +1, radius, taken));
        break;
      case PatternTechnique::Bb3:
        push(nearest_hammerable(v, 0, radius, taken));
        break;
    }
    return rows;
  }

  void hammer_access(std::uint64_t phys) {
    switch (sc_.bypass) {
      case BypassTechnique::Ba1:
        if (sc_.ba1_non_temporal) {
          m_.attacker_access(phys, true);
        } else {
          m_.attacker_access(phys);
          m_.attacker_flush(phys);
        }
        break;
      case BypassTechnique::Ba2: {
        auto it = eviction_sets_.find(phys);
        if (it != eviction_sets_.end()) {
          auto port = m_.port();
          evict_via_set(port, it->second);
        }
        m_.attacker_access(phys);
        break;
      }
      case BypassTechnique::Ba3:
      case BypassTechnique::None:
        m_.attacker_access(phys);
        break;
    }
  }

  void prepare_bypass(const std::vector<std::uint64_t>& aggressor_addrs) {
    if (sc_.bypass == BypassTechnique::Ba3 && m_.cache_present() && !uncached_registered_) {
      // expose the attacker's DMA/RDMA frames as uncached ranges
      auto& alloc = m_.os().allocator();
      std::uint32_t page = m_.os().page_bytes();
      FrameId start = 0;
      bool in_run = false;
      for (FrameId f = 0; f <= alloc.frame_count(); ++f) {
        bool dma = f < alloc.frame_count() && alloc.owner_of(f) == user_owner(kAttackerUid) &&
                   (alloc.flags_of(f).dma || alloc.flags_of(f).rdma);
        if (dma && !in_run) {
          start = f;
          in_run = true;
        } else if (!dma && in_run) {
          in_run = false;
          m_.cache().add_uncached_region({std::uint64_t(start) * page, std::uint64_t(f) * page,
                                          alloc.flags_of(start).rdma
                                              ? UncachedRegion::Kind::Rdma
                                              : UncachedRegion::Kind::Dma});
        }
      }
      uncached_registered_ = true;
    }
    if (sc_.bypass == BypassTechnique::Ba2) {
      std::vector<std::uint64_t> pool;
      auto& alloc = m_.os().allocator();
      for (FrameId f = 0; f < alloc.frame_count(); ++f)
        if (alloc.owner_of(f) == user_owner(kAttackerUid))
          pool.push_back(std::uint64_t(f) * m_.os().page_bytes());
      auto port = m_.port();
      for (std::uint64_t a : aggressor_addrs) {
        if (eviction_sets_.count(a)) continue;
        auto es = build_eviction_set(port, a, pool);
        if (!es)
          throw detail::StageFail{AttackStatus::NoFlip, AttackStage::RH,
                                  "could not build an eviction set for an aggressor"};
        eviction_sets_[a] = std::move(*es);
      }
    }
  }

  void run_rh(AttackOutcome& out, StageRecord& rec) {
    rec.rh_run = true;
    const auto& entries = m_.dram().fault_map().entries;
    std::uint64_t v;
    std::uint32_t radius = 1;
    if (!rec.chosen_entries.empty()) {
      const FaultEntry& e = entries[rec.chosen_entries.front()];
      v = e.victim.global_row(m_.dram().geometry());
      radius = e.blast_radius;
    } else {
      v = frame_global_row(victim_frame());  // nothing matched: hammer around the victim
    }
    auto aggressors = plan_aggressors(v, radius);
    if (aggressors.empty())
      throw detail::StageFail{AttackStatus::NoFlip, AttackStage::RH,
                              "no hammerable rows near the target"};
    std::vector<std::uint64_t> addrs;
    for (std::uint64_t r : aggressors) {
      rec.aggressor_rows.push_back(static_cast<std::uint32_t>(r % m_.dram().geometry().rows_per_bank));
      addrs.push_back(std::uint64_t(row_frame(r)) * m_.os().page_bytes());
    }
    const std::size_t log_start = m_.dram().flip_log().size();
    prepare_bypass(addrs);
    mark(out, bypass_name(sc_.bypass) == std::string("none") ? "" : bypass_name(sc_.bypass));
    mark(out, pattern_name(sc_.pattern));
    auto all_fired = [&] {
      for (std::size_t idx : rec.chosen_entries) {
        bool hit = false;
        for (std::size_t i = log_start; i < m_.dram().flip_log().size(); ++i)
          if (m_.dram().flip_log()[i].entry_index == idx) hit = true;
        if (!hit) return false;
      }
      return !rec.chosen_entries.empty();
    };

    const std::uint64_t start_accesses = m_.attacker_accesses();
    while (m_.attacker_accesses() - start_accesses < sc_.hammer_budget && !all_fired()) {
      for (std::uint64_t a : addrs) {
        hammer_access(a);
        if (all_fired()) break;
      }
    }
    rec.activations = m_.attacker_accesses() - start_accesses;
    rec.flips.assign(m_.dram().flip_log().begin() + log_start, m_.dram().flip_log().end());
    if (rec.flips.empty())
      throw detail::StageFail{AttackStatus::NoFlip, AttackStage::RH,
                              "hammer budget exhausted without a bit flip"};
  }

  // ---- EV ---------------------------------------------------------------------

  std::uint8_t apply_required(std::uint8_t original,
                              const std::vector<detail::RequiredFlip>& req) const {
    for (const auto& r : req) {
      if (post_flip_bit(r.direction))
        original |= (1u << r.bit);
      else
        original &= ~(1u << r.bit);
    }
    return original;
  }

  void run_ev(AttackOutcome& out, StageRecord& rec,
              const std::vector<detail::RequiredFlip>& req) {
    rec.ev_run = true;
    m_.idle_ticks(spec_.post_rh_idle);
    bool flips_fired = !rec.flips.empty();

    enum class Probe { Expected, Original, Other } probe = Probe::Other;
    switch (sc_.target.kind) {
      case TargetKind::PasswdUid:
      case TargetKind::Opcode: {
        std::uint8_t disk_original = m_.os().disk_file(sc_.target.path).disk_bytes[
            target_abs_offset()];
        std::uint8_t expected = apply_required(disk_original, req);
        std::uint8_t seen = m_.os().read_cached_byte(sc_.target.path, target_abs_offset());
        if (sc_.ev == EvTechnique::C2 && sc_.target.kind == TargetKind::PasswdUid) {
          // behavioral probe: what UID would a login resolve to
          seen = m_.os().read_cached_byte(sc_.target.path, target_abs_offset());
        }
        probe = seen == expected ? Probe::Expected
                : seen == disk_original ? Probe::Original
                                        : Probe::Other;
        break;
      }
      case TargetKind::PageTable: {
        FrameId expected = sc_.target.pte_frame;
        for (const auto& r : req) expected ^= (1u << r.bit);
        PteBits bits = m_.os().walk(pt_index_, 0);
        probe = bits.frame == expected ? Probe::Expected
                : bits.frame == sc_.target.pte_frame ? Probe::Original
                                                     : Probe::Other;
        break;
      }
      case TargetKind::Pointer: {
        std::uint32_t expected = sc_.target.ptr_value;
        for (const auto& r : req) {
          std::uint32_t bit = 1u << r.bit;
          if (post_flip_bit(r.direction))
            expected |= bit;
          else
            expected &= ~bit;
        }
        auto content = m_.os().read_data_page(data_page_id_);
        std::uint32_t seen = 0;
        for (int i = 3; i >= 0; --i)
          seen = (seen << 8) | content[sc_.target.byte_offset + i];
        probe = seen == expected ? Probe::Expected
                : seen == sc_.target.ptr_value ? Probe::Original
                                               : Probe::Other;
        break;
      }
    }
    mark(out, ev_name(sc_.ev));
    if (probe == Probe::Expected) {
      rec.ev_result = "verified";
      return;
    }
    if (probe == Probe::Original) {
      if (sc_.ev == EvTechnique::C1 || !flips_fired) {
        // the read-back shows no error at all
        rec.ev_result = "no observable flip";
        throw detail::StageFail{AttackStatus::NoFlip, AttackStage::RH, rec.ev_result};
      }
      rec.ev_result = "flips landed outside the target";
      throw detail::StageFail{AttackStatus::WrongFlip, AttackStage::EV, rec.ev_result};
    }
    rec.ev_result = "unexpected value at the target";
    throw detail::StageFail{AttackStatus::WrongFlip, AttackStage::EV, rec.ev_result};
  }

  // ---- SE ---------------------------------------------------------------------

  void run_se(StageRecord& rec, const std::vector<detail::RequiredFlip>& req) {
    rec.se_run = true;
    if (sc_.target.kind != TargetKind::PasswdUid)
      throw detail::StageFail{AttackStatus::NotPersisted, AttackStage::SE,
                              "victim page holds no attacker-editable field"};
    // chsh: rewrite our own shell in place, same length, to dirty the page
    auto shell_range = m_.os().passwd_field_range(sc_.target.path, kAttackerUid,
                                                  OsState::PasswdField::Shell);
    auto shell_bytes =
        m_.os().read_cached_range(sc_.target.path, shell_range.offset, shell_range.length);
    std::string shell(shell_bytes.begin(), shell_bytes.end());
    if (!shell.empty()) shell.back() = shell.back() == 'z' ? 'a' : shell.back() + 1;
    m_.os().legit_write_passwd_field(sc_.target.path, kAttackerUid, OsState::PasswdField::Shell,
                                     shell, kAttackerUid);
    m_.os().sync_flush();

    std::uint8_t disk_byte = m_.os().disk_file(sc_.target.path).disk_bytes[target_abs_offset()];
    bool ok = true;
    for (const auto& r : req)
      if (((disk_byte >> r.bit) & 1) != (post_flip_bit(r.direction) ? 1 : 0)) ok = false;
    rec.persisted = ok;
    if (!ok)
      throw detail::StageFail{AttackStatus::NotPersisted, AttackStage::SE,
                              "flip did not reach the disk"};
  }

  // ---- pipelines -----------------------------------------------------------------

  void run_single(AttackOutcome& out, StageRecord& rec,
                  const std::vector<detail::RequiredFlip>& req) {
    pending_rec_.push_back(StageRecord{});
    StageRecord& r = pending_rec_.back();
    run_lp(out, r, req);
    run_rh(out, r);
    run_ev(out, r, req);
    if (sc_.se_enabled) run_se(r, req);
    rec = r;
    pending_rec_.pop_back();
  }

  // The four-stage loop: place, hammer, verify, persist - once per target
  // bit, each persisted flip surviving the next loop's reload.
  void run_expressive(AttackOutcome& out) {
    std::size_t uid_off = uid_field_offset();
    for (const auto& t : sc_.expressive) {
      sc_.target.uid_byte = t.byte;
      sc_.target.bits = {t.bit};
      sc_.target.direction = t.direction;
      planned_entries_.clear();
      relocate_history_.clear();
      StageRecord rec;
      run_single(out, rec, required_flips_single());
      rec.disk_uid_hex = disk_uid_hex(uid_off);
      out.loops.push_back(std::move(rec));
    }
    // terminal check: the disk now spells the forged UID
    const auto& disk = m_.os().disk_file(sc_.target.path).disk_bytes;
    for (const auto& t : sc_.expressive) {
      std::uint8_t b = disk[uid_off + t.byte];
      bool want = post_flip_bit(t.direction);
      if (((b >> t.bit) & 1) != (want ? 1 : 0))
        throw detail::StageFail{AttackStatus::WrongFlip, AttackStage::SE,
                                "accumulated disk state does not match the goal"};
    }
  }

  std::string disk_uid_hex(std::size_t uid_off) {
    const auto& disk = m_.os().disk_file(sc_.target.path).disk_bytes;
    std::string uid_text = std::to_string(sc_.target.record_uid);
    std::vector<std::uint8_t> bytes(disk.begin() + uid_off,
                                    disk.begin() + uid_off + uid_text.size());
    return bytes_to_hex(bytes);
  }

  void mark(AttackOutcome& out, const std::string& m) {
    if (!m.empty()) out.marks.insert(m);
  }

  Machine& m_;
  const ScenarioSpec& spec_;
  AttackScenario sc_;

  std::vector<FrameId> arena_;
  bool victim_exists_ = false;
  std::size_t pt_index_ = 0;
  std::uint64_t data_page_id_ = 0;
  std::uint64_t forged_page_id_ = 0;
  std::set<FrameId> relocate_history_;
  std::vector<std::size_t> planned_entries_;
  std::map<std::uint64_t, EvictionSet> eviction_sets_;
  bool uncached_registered_ = false;
  std::vector<StageRecord> pending_rec_;
};

struct ScenarioRun {
  std::unique_ptr<Machine> machine;
  AttackOutcome outcome;
};

inline ScenarioRun run_scenario(const ScenarioSpec& spec) {
  ScenarioRun run;
  run.machine = std::make_unique<Machine>(spec.world, spec.defenses, spec.seed);
  AttackRun driver(*run.machine, spec);
  run.outcome = driver.execute();
  return run;
}

}  // namespace rhsim
