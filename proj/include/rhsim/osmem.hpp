#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rhsim/util.hpp"

namespace rhsim {

// ---------------------------------------------------------------------------
// Frames and ownership
// ---------------------------------------------------------------------------

using FrameId = std::uint32_t;

enum class OwnerKind { Free, Kernel, User, Shared, Guard };

struct Owner {
  OwnerKind kind = OwnerKind::Free;
  std::uint32_t uid = 0;  // meaningful for User

  bool operator==(const Owner& o) const { return kind == o.kind && uid == o.uid; }
};

inline Owner kernel_owner() { return {OwnerKind::Kernel, 0}; }
inline Owner user_owner(std::uint32_t uid) { return {OwnerKind::User, uid}; }
inline Owner shared_owner() { return {OwnerKind::Shared, 0}; }

struct AllocFlags {
  bool dma = false;
  bool rdma = false;
};

// Placement policy hooks used by the countermeasure layer: `filter` vetoes
// candidate placements, `after_alloc` lets a policy reserve guard frames
// once an allocation lands.
struct PlacementPolicy {
  std::function<bool(FrameId first, std::uint32_t count, const Owner&, const AllocFlags&)> filter;
  std::function<void(FrameId first, std::uint32_t count, const Owner&, const AllocFlags&)>
      after_alloc;
};

// Buddy allocator over a power-of-two number of frames. Allocation is
// deterministic: the lowest-address aligned block that satisfies the
// placement policy wins, so steering attacks replay identically.
class FrameAllocator {
 public:
  explicit FrameAllocator(std::uint32_t frame_count) : frame_count_(frame_count) {
    if (frame_count == 0 || (frame_count & (frame_count - 1)) != 0)
      throw std::invalid_argument("FrameAllocator: frame count must be a power of two");
    max_order_ = 0;
    while ((1u << max_order_) < frame_count_) ++max_order_;
    free_lists_.assign(max_order_ + 1, {});
    free_lists_[max_order_].insert(0);
    owners_.assign(frame_count_, Owner{});
    flags_.assign(frame_count_, AllocFlags{});
  }

  std::uint32_t frame_count() const { return frame_count_; }
  std::uint32_t max_order() const { return max_order_; }
  const Owner& owner_of(FrameId f) const { return owners_.at(f); }
  const AllocFlags& flags_of(FrameId f) const { return flags_.at(f); }

  void set_policy(PlacementPolicy policy) { policy_ = std::move(policy); }

  // Allocates a 2^order block; returns its first frame.
  FrameId alloc(std::uint32_t order, const Owner& owner, const AllocFlags& flags = {},
                const std::set<FrameId>* exclude = nullptr) {
    if (order > max_order_) throw std::invalid_argument("FrameAllocator: order too large");
    const std::uint32_t count = 1u << order;
    for (FrameId base = 0; base < frame_count_; base += count) {
      if (!block_free(base, order)) continue;
      if (exclude) {
        bool excluded = false;
        for (std::uint32_t i = 0; i < count && !excluded; ++i)
          excluded = exclude->count(base + i) > 0;
        if (excluded) continue;
      }
      if (policy_.filter && !policy_.filter(base, count, owner, flags)) continue;
      carve(base, order);
      for (std::uint32_t i = 0; i < count; ++i) {
        owners_[base + i] = owner;
        flags_[base + i] = flags;
      }
      if (policy_.after_alloc) policy_.after_alloc(base, count, owner, flags);
      return base;
    }
    throw OutOfMemoryError("FrameAllocator: no block satisfies the request");
  }

  FrameId alloc_frame(const Owner& owner, const AllocFlags& flags = {},
                      const std::set<FrameId>* exclude = nullptr) {
    return alloc(0, owner, flags, exclude);
  }

  void free_block(FrameId base, std::uint32_t order) {
    const std::uint32_t count = 1u << order;
    if (base % count != 0 || base + count > frame_count_)
      throw std::invalid_argument("FrameAllocator: misaligned free");
    for (std::uint32_t i = 0; i < count; ++i) {
      if (owners_[base + i].kind == OwnerKind::Free || owners_[base + i].kind == OwnerKind::Guard)
        throw std::invalid_argument("FrameAllocator: double free");
      owners_[base + i] = Owner{};
      flags_[base + i] = AllocFlags{};
    }
    // coalesce with free buddies
    std::uint32_t k = order;
    while (k < max_order_) {
      FrameId buddy = base ^ (1u << k);
      auto it = free_lists_[k].find(buddy);
      if (it == free_lists_[k].end()) break;
      free_lists_[k].erase(it);
      base = std::min(base, buddy);
      ++k;
    }
    free_lists_[k].insert(base);
  }

  void free_frame(FrameId f) { free_block(f, 0); }

  // Permanently reserves a frame (guard rows, disabled pages). The frame is
  // pulled out of the free lists and never handed out again.
  void reserve_guard(FrameId f) {
    if (owners_[f].kind != OwnerKind::Free) return;
    carve(f, 0);
    owners_[f] = Owner{OwnerKind::Guard, 0};
  }

  bool is_free(FrameId f) const { return owners_.at(f).kind == OwnerKind::Free; }

  std::uint32_t free_frames() const {
    std::uint32_t n = 0;
    for (std::uint32_t k = 0; k <= max_order_; ++k)
      n += static_cast<std::uint32_t>(free_lists_[k].size()) << k;
    return n;
  }
  std::uint32_t owned_frames(const Owner& owner) const {
    std::uint32_t n = 0;
    for (const auto& o : owners_)
      if (o == owner) ++n;
    return n;
  }
  std::uint32_t guard_frames() const {
    std::uint32_t n = 0;
    for (const auto& o : owners_)
      if (o.kind == OwnerKind::Guard) ++n;
    return n;
  }

  const std::set<FrameId>& free_list(std::uint32_t order) const { return free_lists_.at(order); }

  // Conservation: free + guard + owned == total.
  bool conserved() const {
    std::uint32_t owned = 0;
    for (const auto& o : owners_)
      if (o.kind != OwnerKind::Free && o.kind != OwnerKind::Guard) ++owned;
    return free_frames() + guard_frames() + owned == frame_count_;
  }

 private:
  bool block_free(FrameId base, std::uint32_t order) const {
    // free iff some free block of order >= `order` covers [base, base+2^order)
    for (std::uint32_t j = order; j <= max_order_; ++j) {
      FrameId enclosing = base & ~((1u << j) - 1);
      if (free_lists_[j].count(enclosing)) return true;
    }
    return false;
  }

  // Splits free blocks until exactly [base, base+2^order) is carved out.
  void carve(FrameId base, std::uint32_t order) {
    std::uint32_t j = order;
    FrameId enclosing = 0;
    for (j = order; j <= max_order_; ++j) {
      enclosing = base & ~((1u << j) - 1);
      if (free_lists_[j].count(enclosing)) break;
    }
    free_lists_[j].erase(enclosing);
    while (j > order) {
      --j;
      FrameId half = enclosing + (1u << j);
      if (base < half) {
        free_lists_[j].insert(half);
      } else {
        free_lists_[j].insert(enclosing);
        enclosing = half;
      }
    }
  }

  std::uint32_t frame_count_;
  std::uint32_t max_order_;
  std::vector<std::set<FrameId>> free_lists_;  // block bases per order
  std::vector<Owner> owners_;
  std::vector<AllocFlags> flags_;
  PlacementPolicy policy_;
};

// ---------------------------------------------------------------------------
// Files, the passwd model
// ---------------------------------------------------------------------------

struct FileMode {
  bool owner_write = true;
  bool world_read = true;

  std::string to_string() const {
    std::string s = "r";
    s += owner_write ? 'w' : '-';
    s += "-r--r--";
    if (!world_read) s = "rw-------";
    return s;
  }
};

struct PasswdRecord {
  std::string name;
  std::uint32_t uid = 0;
  std::string shell;
};

// `name:x:<uid>:<shell>\n` — password itself lives in a different file and
// shows up here only as the literal marker byte 'x'.
inline std::vector<std::uint8_t> serialize_passwd(const std::vector<PasswdRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.name;
    out += ":x:";
    out += std::to_string(r.uid);
    out += ":";
    out += r.shell;
    out += "\n";
  }
  return std::vector<std::uint8_t>(out.begin(), out.end());
}

struct PasswdFieldRange {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct ParsedPasswdRecord {
  std::string name;
  std::string uid_text;
  std::string shell;
  PasswdFieldRange uid_range;
  PasswdFieldRange shell_range;
};

inline std::vector<ParsedPasswdRecord> parse_passwd(const std::vector<std::uint8_t>& bytes) {
  std::vector<ParsedPasswdRecord> out;
  std::size_t pos = 0;
  const std::string text(bytes.begin(), bytes.end());
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    std::size_t c1 = line.find(':');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(':', c1 + 1);
    std::size_t c3 = c2 == std::string::npos ? std::string::npos : line.find(':', c2 + 1);
    if (c3 != std::string::npos) {
      ParsedPasswdRecord r;
      r.name = line.substr(0, c1);
      r.uid_text = line.substr(c2 + 1, c3 - c2 - 1);
      r.shell = line.substr(c3 + 1);
      r.uid_range = {pos + c2 + 1, c3 - c2 - 1};
      r.shell_range = {pos + c3 + 1, line.size() - c3 - 1};
      out.push_back(std::move(r));
    }
    pos = eol + 1;
  }
  return out;
}

struct FileObject {
  std::string path;
  std::vector<std::uint8_t> disk_bytes;
  FileMode mode;
  std::uint32_t owner_uid = 0;
};

struct PageCacheEntry {
  std::string path;
  std::uint32_t page_index = 0;
  FrameId frame = 0;
  bool dirty = false;  // set only by OS-mediated writes, never by the fault engine
};

// ---------------------------------------------------------------------------
// Page tables
// ---------------------------------------------------------------------------

struct PteBits {
  FrameId frame = 0;
  std::uint8_t perms = 0;
  bool valid = false;
};

constexpr std::size_t kPteBytes = 8;

// ---------------------------------------------------------------------------
// Deduplicated data pages
// ---------------------------------------------------------------------------

struct DataPage {
  std::uint64_t id = 0;
  std::uint32_t owner_uid = 0;
  FrameId frame = 0;
  std::uint64_t created_seq = 0;
};

// ---------------------------------------------------------------------------
// OsState: the machinery attacks steer. Byte traffic goes through a
// PhysMemory port supplied by the machine so countermeasure read hooks see
// every OS-level access.
// ---------------------------------------------------------------------------

class PhysMemory {
 public:
  virtual ~PhysMemory() = default;
  virtual std::uint8_t mem_read(std::uint64_t phys) = 0;
  virtual void mem_write(std::uint64_t phys, std::uint8_t value) = 0;
};

class OsState {
 public:
  OsState(PhysMemory& mem, std::uint32_t frame_count, std::uint32_t page_bytes)
      : mem_(mem), alloc_(frame_count), page_bytes_(page_bytes) {}

  FrameAllocator& allocator() { return alloc_; }
  const FrameAllocator& allocator() const { return alloc_; }
  std::uint32_t page_bytes() const { return page_bytes_; }
  std::uint64_t frame_base(FrameId f) const { return std::uint64_t(f) * page_bytes_; }

  void set_dedup_enabled(bool on) { dedup_enabled_ = on; }
  bool dedup_enabled() const { return dedup_enabled_; }

  // ---- disk -------------------------------------------------------------

  void create_file(const FileObject& file) { disk_[file.path] = file; }
  bool file_exists(const std::string& path) const { return disk_.count(path) > 0; }
  const FileObject& disk_file(const std::string& path) const {
    auto it = disk_.find(path);
    if (it == disk_.end()) throw NotFoundError("no such file: " + path);
    return it->second;
  }

  // ---- page cache ---------------------------------------------------------

  // Loads every page of a file into the cache. Reload placement avoids the
  // frames the page recently occupied, cycling the file through memory the
  // way repeated evict-and-reload does on a real kernel.
  std::vector<std::size_t> load_file(const std::string& path) {
    const FileObject& file = disk_file(path);
    std::vector<std::size_t> indices;
    const std::uint32_t pages =
        static_cast<std::uint32_t>((file.disk_bytes.size() + page_bytes_ - 1) / page_bytes_);
    for (std::uint32_t p = 0; p < pages; ++p) {
      if (find_cache_entry(path, p)) continue;
      FrameId frame = alloc_page_frame(path, p);
      PageCacheEntry entry{path, p, frame, false};
      for (std::uint32_t b = 0; b < page_bytes_; ++b) {
        std::size_t off = std::size_t(p) * page_bytes_ + b;
        std::uint8_t v = off < file.disk_bytes.size() ? file.disk_bytes[off] : 0;
        mem_.mem_write(frame_base(frame) + b, v);
      }
      cache_.push_back(entry);
      indices.push_back(cache_.size() - 1);
    }
    return indices;
  }

  PageCacheEntry* find_cache_entry(const std::string& path, std::uint32_t page) {
    for (auto& e : cache_)
      if (e.path == path && e.page_index == page) return &e;
    return nullptr;
  }
  const PageCacheEntry* find_cache_entry(const std::string& path, std::uint32_t page) const {
    for (const auto& e : cache_)
      if (e.path == path && e.page_index == page) return &e;
    return nullptr;
  }

  // Drops a clean entry; the frame returns to the allocator and is recorded
  // in the page's placement history.
  void evict_page(const std::string& path, std::uint32_t page) {
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      if (cache_[i].path != path || cache_[i].page_index != page) continue;
      if (cache_[i].dirty)
        throw std::logic_error("evict_page: refusing to drop a dirty page");
      history_[{path, page}].insert(cache_[i].frame);
      alloc_.free_frame(cache_[i].frame);
      cache_.erase(cache_.begin() + i);
      return;
    }
    throw NotFoundError("evict_page: page not cached");
  }

  std::uint8_t read_cached_byte(const std::string& path, std::size_t offset) {
    const std::uint32_t page = static_cast<std::uint32_t>(offset / page_bytes_);
    const PageCacheEntry* e = find_cache_entry(path, page);
    if (!e) throw NotFoundError("read_cached_byte: page not cached");
    return mem_.mem_read(frame_base(e->frame) + offset % page_bytes_);
  }

  std::vector<std::uint8_t> read_cached_range(const std::string& path, std::size_t offset,
                                              std::size_t len) {
    std::vector<std::uint8_t> out(len);
    for (std::size_t i = 0; i < len; ++i) out[i] = read_cached_byte(path, offset + i);
    return out;
  }

  // ---- legitimate writes and write-back ----------------------------------

  enum class PasswdField { Uid, Shell };

  // The suid-command authorization table boiled down to what the attack
  // needs: a user may rewrite the shell of their own record (chsh), nobody
  // but root touches a UID directly. Same-length replacement keeps every
  // other byte of the page intact.
  void legit_write_passwd_field(const std::string& path, std::uint32_t record_uid,
                                PasswdField field, const std::string& value,
                                std::uint32_t actor_uid) {
    if (field == PasswdField::Uid && actor_uid != 0)
      throw PermissionError("uid field is root-only");
    if (field == PasswdField::Shell && actor_uid != 0 && actor_uid != record_uid)
      throw PermissionError("shell field writable only by its owner");

    auto ranges = passwd_field_range(path, record_uid, field);
    if (value.size() != ranges.length)
      throw std::invalid_argument("legit_write: replacement length must match field length");
    write_cached_bytes(path, ranges.offset,
                       std::vector<std::uint8_t>(value.begin(), value.end()));
  }

  // The passwd command updates credentials in the shadow file, so flushing
  // after it never touches /etc/passwd pages.
  void passwd_command(std::uint32_t actor_uid, const std::string& shadow_path) {
    if (!file_exists(shadow_path)) throw NotFoundError("no shadow file");
    load_file(shadow_path);
    std::uint8_t v = read_cached_byte(shadow_path, 0);
    write_cached_bytes(shadow_path, 0, {v});
    (void)actor_uid;
  }

  // Writes every dirty page back byte-for-byte; undeclared modifications in
  // the same page ride along.
  std::size_t sync_flush() {
    std::size_t flushed = 0;
    for (auto& e : cache_) {
      if (!e.dirty) continue;
      FileObject& file = disk_[e.path];
      for (std::uint32_t b = 0; b < page_bytes_; ++b) {
        std::size_t off = std::size_t(e.page_index) * page_bytes_ + b;
        if (off >= file.disk_bytes.size()) break;
        file.disk_bytes[off] = mem_.mem_read(frame_base(e.frame) + b);
      }
      e.dirty = false;
      ++flushed;
    }
    return flushed;
  }

  PasswdFieldRange passwd_field_range(const std::string& path, std::uint32_t record_uid,
                                      PasswdField field) {
    const FileObject& file = disk_file(path);
    auto cached = read_cached_range(path, 0, file.disk_bytes.size());
    for (const auto& rec : parse_passwd(cached)) {
      if (rec.uid_text != std::to_string(record_uid)) continue;
      return field == PasswdField::Uid ? rec.uid_range : rec.shell_range;
    }
    throw NotFoundError("passwd record not found");
  }

  // ---- dedup --------------------------------------------------------------

  std::uint64_t create_data_page(std::uint32_t owner_uid,
                                 const std::vector<std::uint8_t>& content,
                                 std::optional<FrameId> at_frame = std::nullopt,
                                 const std::set<FrameId>* exclude = nullptr) {
    FrameId frame;
    if (at_frame) {
      if (!alloc_.is_free(*at_frame)) throw std::invalid_argument("requested frame is not free");
      std::set<FrameId> others;
      for (FrameId f = 0; f < alloc_.frame_count(); ++f)
        if (f != *at_frame) others.insert(f);
      frame = alloc_.alloc_frame(user_owner(owner_uid), {}, &others);
    } else {
      frame = alloc_.alloc_frame(user_owner(owner_uid), {}, exclude);
    }
    write_frame(frame, content);
    DataPage page{next_page_id_++, owner_uid, frame, next_seq_++};
    pages_.push_back(page);
    frame_refs_[frame] = 1;
    return page.id;
  }

  DataPage& data_page(std::uint64_t id) {
    for (auto& p : pages_)
      if (p.id == id) return p;
    throw NotFoundError("no such data page");
  }

  std::vector<std::uint8_t> read_data_page(std::uint64_t id) {
    const DataPage& p = data_page(id);
    return read_frame(p.frame);
  }

  // Merges byte-identical pages copy-on-write style. The canonical frame is
  // the earliest-created page's, which is what lets a forger who writes
  // first end up backing the victim.
  std::size_t dedup_merge_pass() {
    if (!dedup_enabled_) return 0;
    std::size_t merges = 0;
    std::map<std::string, std::uint64_t> canon_by_content;  // content -> page id
    // earliest page wins canonical status
    std::vector<DataPage*> order;
    for (auto& p : pages_) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const DataPage* a, const DataPage* b) { return a->created_seq < b->created_seq; });
    for (DataPage* p : order) {
      std::string content = frame_content_key(p->frame);
      auto it = canon_by_content.find(content);
      if (it == canon_by_content.end()) {
        canon_by_content[content] = p->id;
        continue;
      }
      DataPage& canon = data_page(it->second);
      if (canon.frame == p->frame) continue;
      FrameId old = p->frame;
      p->frame = canon.frame;
      ++frame_refs_[canon.frame];
      if (--frame_refs_[old] == 0) {
        alloc_.free_frame(old);
        frame_refs_.erase(old);
      }
      ++merges;
    }
    return merges;
  }

  std::uint32_t frame_refcount(FrameId f) const {
    auto it = frame_refs_.find(f);
    return it == frame_refs_.end() ? 0 : it->second;
  }

  // Legitimate write to a data page. A shared (merged) frame splits first;
  // fault-engine writes never come through here, so they never split.
  void write_data_page(std::uint64_t id, std::size_t offset,
                       const std::vector<std::uint8_t>& bytes, std::uint32_t actor_uid) {
    DataPage& p = data_page(id);
    if (p.owner_uid != actor_uid) throw PermissionError("data page owned by someone else");
    if (frame_refs_[p.frame] > 1) {
      std::vector<std::uint8_t> content = read_frame(p.frame);
      --frame_refs_[p.frame];
      FrameId copy = alloc_.alloc_frame(user_owner(p.owner_uid));
      write_frame(copy, content);
      p.frame = copy;
      frame_refs_[copy] = 1;
    }
    for (std::size_t i = 0; i < bytes.size(); ++i)
      mem_.mem_write(frame_base(p.frame) + offset + i, bytes[i]);
  }

  void release_data_page(std::uint64_t id) {
    for (std::size_t i = 0; i < pages_.size(); ++i) {
      if (pages_[i].id != id) continue;
      FrameId f = pages_[i].frame;
      if (--frame_refs_[f] == 0) {
        alloc_.free_frame(f);
        frame_refs_.erase(f);
      }
      pages_.erase(pages_.begin() + i);
      return;
    }
    throw NotFoundError("no such data page");
  }

  const std::vector<DataPage>& data_pages() const { return pages_; }

  // ---- page tables ----------------------------------------------------------

  struct PageTable {
    std::uint32_t owner_uid = 0;
    FrameId frame = 0;
    std::map<std::uint32_t, std::uint32_t> slot_of_vpage;
    std::uint32_t next_slot = 0;
  };

  std::size_t create_page_table(std::uint32_t owner_uid,
                                const std::set<FrameId>* exclude = nullptr) {
    PageTable pt;
    pt.owner_uid = owner_uid;
    pt.frame = alloc_.alloc_frame(kernel_owner(), {}, exclude);
    for (std::uint32_t b = 0; b < page_bytes_; ++b) mem_.mem_write(frame_base(pt.frame) + b, 0);
    tables_.push_back(pt);
    return tables_.size() - 1;
  }

  PageTable& page_table(std::size_t idx) { return tables_.at(idx); }
  std::size_t page_table_count() const { return tables_.size(); }

  void map_page(std::size_t table_idx, std::uint32_t vpage, FrameId frame, std::uint8_t perms) {
    PageTable& pt = tables_.at(table_idx);
    std::uint32_t slot;
    auto it = pt.slot_of_vpage.find(vpage);
    if (it != pt.slot_of_vpage.end()) {
      slot = it->second;
    } else {
      slot = pt.next_slot++;
      if (std::size_t(slot + 1) * kPteBytes > page_bytes_)
        throw OutOfMemoryError("page table full");
      pt.slot_of_vpage[vpage] = slot;
    }
    std::uint64_t base = frame_base(pt.frame) + std::size_t(slot) * kPteBytes;
    mem_.mem_write(base + 0, frame & 0xff);
    mem_.mem_write(base + 1, (frame >> 8) & 0xff);
    mem_.mem_write(base + 2, (frame >> 16) & 0xff);
    mem_.mem_write(base + 3, (frame >> 24) & 0xff);
    mem_.mem_write(base + 4, perms);
    mem_.mem_write(base + 5, 1);  // valid
    mem_.mem_write(base + 6, 0);
    mem_.mem_write(base + 7, 0);
  }

  PteBits walk(std::size_t table_idx, std::uint32_t vpage) {
    PageTable& pt = tables_.at(table_idx);
    auto it = pt.slot_of_vpage.find(vpage);
    if (it == pt.slot_of_vpage.end()) throw NotFoundError("walk: vpage not mapped");
    std::uint64_t base = frame_base(pt.frame) + std::size_t(it->second) * kPteBytes;
    PteBits bits;
    bits.frame = mem_.mem_read(base + 0) | (mem_.mem_read(base + 1) << 8) |
                 (mem_.mem_read(base + 2) << 16) |
                 (std::uint32_t(mem_.mem_read(base + 3)) << 24);
    bits.perms = mem_.mem_read(base + 4);
    bits.valid = mem_.mem_read(base + 5) != 0;
    return bits;
  }

  // /proc/self/pagemap: privileged introspection of the true frame.
  FrameId pagemap_query(std::size_t table_idx, std::uint32_t vpage, bool has_pagemap_cap) {
    if (!has_pagemap_cap) throw PermissionError("pagemap requires privileged process");
    PteBits bits = walk(table_idx, vpage);
    if (!bits.valid) throw NotFoundError("pagemap: vpage not mapped");
    return bits.frame;
  }

  // ---- frame helpers ---------------------------------------------------------

  std::vector<std::uint8_t> read_frame(FrameId f) {
    std::vector<std::uint8_t> out(page_bytes_);
    for (std::uint32_t b = 0; b < page_bytes_; ++b) out[b] = mem_.mem_read(frame_base(f) + b);
    return out;
  }
  void write_frame(FrameId f, const std::vector<std::uint8_t>& bytes) {
    for (std::uint32_t b = 0; b < page_bytes_; ++b)
      mem_.mem_write(frame_base(f) + b, b < bytes.size() ? bytes[b] : 0);
  }

  void clear_reload_history(const std::string& path, std::uint32_t page) {
    history_.erase({path, page});
  }

  // ---- disk manifest ----------------------------------------------------------

  void dump_disk(std::ostream& os) const {
    os << "# rhsim disk v1\n";
    for (const auto& [path, file] : disk_)
      os << path << ' ' << file.mode.to_string() << ' ' << file.owner_uid << ' '
         << bytes_to_hex(file.disk_bytes) << '\n';
  }

  void load_disk(std::istream& is) {
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string path, mode, hex;
      std::uint32_t uid;
      if (!(ls >> path >> mode >> uid >> hex))
        throw std::invalid_argument("disk manifest: malformed line: " + line);
      FileObject f;
      f.path = path;
      f.owner_uid = uid;
      f.mode.owner_write = mode.size() > 1 && mode[1] == 'w';
      f.mode.world_read = mode.size() > 7 && mode[7] == 'r';
      f.disk_bytes = hex_to_bytes(hex);
      disk_[path] = f;
    }
  }

  const std::vector<PageCacheEntry>& page_cache() const { return cache_; }

 private:
  FrameId alloc_page_frame(const std::string& path, std::uint32_t page) {
    auto hist = history_.find({path, page});
    if (hist != history_.end() && !hist->second.empty()) {
      try {
        return alloc_.alloc_frame(shared_owner(), {}, &hist->second);
      } catch (const OutOfMemoryError&) {
        history_.erase(hist);  // cycle exhausted; start over
      }
    }
    return alloc_.alloc_frame(shared_owner());
  }

  void write_cached_bytes(const std::string& path, std::size_t offset,
                          const std::vector<std::uint8_t>& bytes) {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      std::size_t off = offset + i;
      const std::uint32_t page = static_cast<std::uint32_t>(off / page_bytes_);
      PageCacheEntry* e = find_cache_entry(path, page);
      if (!e) throw NotFoundError("legit_write: page not cached");
      mem_.mem_write(frame_base(e->frame) + off % page_bytes_, bytes[i]);
      e->dirty = true;
    }
  }

  std::string frame_content_key(FrameId f) {
    return bytes_to_hex(read_frame(f));
  }

  PhysMemory& mem_;
  FrameAllocator alloc_;
  std::uint32_t page_bytes_;

  std::map<std::string, FileObject> disk_;
  std::vector<PageCacheEntry> cache_;
  std::map<std::pair<std::string, std::uint32_t>, std::set<FrameId>> history_;

  bool dedup_enabled_ = false;
  std::vector<DataPage> pages_;
  std::map<FrameId, std::uint32_t> frame_refs_;
  std::uint64_t next_page_id_ = 1;
  std::uint64_t next_seq_ = 1;

  std::vector<PageTable> tables_;
};

}  // namespace rhsim
