#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhsim/attack.hpp"

namespace rhsim {

using Json = nlohmann::json;

// Config errors keep the offending field path so the CLI can point at it.
struct ConfigError : std::runtime_error {
  enum class Kind { Syntax, UnknownIdentifier, Constraint };
  Kind kind;
  std::string field;

  ConfigError(Kind k, std::string field_path, const std::string& message)
      : std::runtime_error(field_path.empty() ? message : field_path + ": " + message),
        kind(k),
        field(std::move(field_path)) {}
};

namespace cfg {

constexpr int kSchemaVersion = 1;

inline std::string join(const std::string& a, const std::string& b) {
  return a.empty() ? b : a + "." + b;
}

inline const Json& expect_object(const Json& j, const std::string& path) {
  if (!j.is_object())
    throw ConfigError(ConfigError::Kind::Constraint, path, "expected an object");
  return j;
}

// Unknown keys are rejected so a typo cannot silently fall back to defaults.
inline void check_keys(const Json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok)
      throw ConfigError(ConfigError::Kind::UnknownIdentifier, join(path, it.key()),
                        "unknown field");
  }
}

template <typename T>
T get_or(const Json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(ConfigError::Kind::Constraint, join(path, key), e.what());
  }
}

template <typename T>
T get_req(const Json& j, const std::string& path, const char* key) {
  if (!j.contains(key))
    throw ConfigError(ConfigError::Kind::Constraint, join(path, key), "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(ConfigError::Kind::Constraint, join(path, key), e.what());
  }
}

template <typename T>
T parse_enum(const Json& j, const std::string& path, const char* key,
             std::initializer_list<std::pair<const char*, T>> table,
             std::optional<T> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(ConfigError::Kind::Constraint, join(path, key), "missing required field");
  }
  std::string v = get_req<std::string>(j, path, key);
  for (const auto& [name, value] : table)
    if (v == name) return value;
  throw ConfigError(ConfigError::Kind::UnknownIdentifier, join(path, key),
                    "unknown identifier '" + v + "'");
}

inline FlipDirection parse_direction(const Json& j, const std::string& path, const char* key,
                                     FlipDirection fallback = FlipDirection::OneToZero) {
  return parse_enum<FlipDirection>(j, path, key,
                                   {{"one_to_zero", FlipDirection::OneToZero},
                                    {"zero_to_one", FlipDirection::ZeroToOne}},
                                   fallback);
}

inline FaultEntry parse_fault_entry(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path,
             {"channel", "dimm", "rank", "bank", "row", "byte", "bit", "direction", "threshold",
              "probability", "blast_radius"});
  FaultEntry e;
  e.victim.channel = get_or<std::uint32_t>(j, path, "channel", 0);
  e.victim.dimm = get_or<std::uint32_t>(j, path, "dimm", 0);
  e.victim.rank = get_or<std::uint32_t>(j, path, "rank", 0);
  e.victim.bank = get_or<std::uint32_t>(j, path, "bank", 0);
  e.victim.row = get_req<std::uint32_t>(j, path, "row");
  e.victim.byte_offset = get_req<std::uint32_t>(j, path, "byte");
  e.victim.bit_offset = get_or<std::uint8_t>(j, path, "bit", 0);
  e.direction = parse_direction(j, path, "direction");
  e.threshold = get_or<std::uint64_t>(j, path, "threshold", 64);
  e.probability = get_or<double>(j, path, "probability", 1.0);
  e.blast_radius = get_or<std::uint32_t>(j, path, "blast_radius", 1);
  return e;
}

inline Json fault_entry_to_json(const FaultEntry& e) {
  return Json{{"channel", e.victim.channel},
              {"dimm", e.victim.dimm},
              {"rank", e.victim.rank},
              {"bank", e.victim.bank},
              {"row", e.victim.row},
              {"byte", e.victim.byte_offset},
              {"bit", e.victim.bit_offset},
              {"direction", e.direction == FlipDirection::OneToZero ? "one_to_zero" : "zero_to_one"},
              {"threshold", e.threshold},
              {"probability", e.probability},
              {"blast_radius", e.blast_radius}};
}

inline Countermeasure parse_countermeasure(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path,
             {"kind", "probability", "threshold", "window", "radius", "gcatt_split", "gap",
              "word_bytes", "scan_interval", "footprint_fraction"});
  Countermeasure c;
  c.kind = parse_enum<CountermeasureKind>(
      j, path, "kind",
      {{"double_refresh", CountermeasureKind::DoubleRefresh},
       {"para", CountermeasureKind::Para},
       {"pra", CountermeasureKind::Pra},
       {"trr", CountermeasureKind::Trr},
       {"ecc", CountermeasureKind::Ecc},
       {"anvil", CountermeasureKind::Anvil},
       {"bcatt", CountermeasureKind::Bcatt},
       {"gcatt", CountermeasureKind::Gcatt},
       {"guardion", CountermeasureKind::GuardIon},
       {"alis", CountermeasureKind::Alis},
       {"zebram", CountermeasureKind::ZebRam},
       {"footprint_detector", CountermeasureKind::FootprintDetector},
       {"disallow_clflush", CountermeasureKind::DisallowClflush},
       {"hash_tree", CountermeasureKind::HashTree}});
  c.probability = get_or<double>(j, path, "probability", 1.0);
  c.threshold = get_or<std::uint64_t>(j, path, "threshold", 32);
  c.window = get_or<Tick>(j, path, "window", 4096);
  c.radius = get_or<std::uint32_t>(j, path, "radius", 1);
  c.gcatt_split = get_or<std::uint32_t>(j, path, "gcatt_split", 8);
  c.gap = get_or<std::uint32_t>(j, path, "gap", 1);
  c.word_bytes = get_or<std::uint32_t>(j, path, "word_bytes", 8);
  c.scan_interval = get_or<Tick>(j, path, "scan_interval", 512);
  c.footprint_fraction = get_or<double>(j, path, "footprint_fraction", 0.5);
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw ConfigError(ConfigError::Kind::Constraint, path, e.what());
  }
  return c;
}

inline Json countermeasure_to_json(const Countermeasure& c) {
  return Json{{"kind", countermeasure_name(c.kind)},
              {"probability", c.probability},
              {"threshold", c.threshold},
              {"window", c.window},
              {"radius", c.radius},
              {"gcatt_split", c.gcatt_split},
              {"gap", c.gap},
              {"word_bytes", c.word_bytes},
              {"scan_interval", c.scan_interval},
              {"footprint_fraction", c.footprint_fraction}};
}

}  // namespace cfg

inline ScenarioSpec parse_config_json(const Json& root) {
  using namespace cfg;
  expect_object(root, "");
  check_keys(root, "", {"schema_version", "name", "seed", "dram", "cache", "os", "attack",
                        "defenses", "run"});
  int version = get_req<int>(root, "", "schema_version");
  if (version != kSchemaVersion)
    throw ConfigError(ConfigError::Kind::Constraint, "schema_version",
                      "unsupported schema version " + std::to_string(version));

  ScenarioSpec spec;
  spec.name = get_or<std::string>(root, "", "name", "scenario");
  spec.seed = get_or<std::uint64_t>(root, "", "seed", 1);

  // ---- dram ----
  Json dram = root.value("dram", Json::object());
  expect_object(dram, "dram");
  check_keys(dram, "dram", {"geometry", "row_buffer", "refresh", "mapping", "fault_map"});
  {
    Json g = dram.value("geometry", Json::object());
    check_keys(g, "dram.geometry",
               {"channels", "dimms", "ranks", "banks", "rows", "row_bytes"});
    spec.world.geometry.channels = get_or<std::uint32_t>(g, "dram.geometry", "channels", 1);
    spec.world.geometry.dimms_per_channel = get_or<std::uint32_t>(g, "dram.geometry", "dimms", 1);
    spec.world.geometry.ranks_per_dimm = get_or<std::uint32_t>(g, "dram.geometry", "ranks", 1);
    spec.world.geometry.banks_per_rank = get_or<std::uint32_t>(g, "dram.geometry", "banks", 1);
    spec.world.geometry.rows_per_bank = get_or<std::uint32_t>(g, "dram.geometry", "rows", 64);
    spec.world.geometry.bytes_per_row = get_or<std::uint32_t>(g, "dram.geometry", "row_bytes", 64);

    Json rb = dram.value("row_buffer", Json::object());
    check_keys(rb, "dram.row_buffer", {"policy", "idle_ticks"});
    spec.world.row_buffer.kind = parse_enum<RowBufferPolicy::Kind>(
        rb, "dram.row_buffer", "policy",
        {{"open_page", RowBufferPolicy::Kind::OpenPage},
         {"close_page", RowBufferPolicy::Kind::ClosePage},
         {"adaptive", RowBufferPolicy::Kind::Adaptive}},
        RowBufferPolicy::Kind::OpenPage);
    spec.world.row_buffer.idle_ticks = get_or<Tick>(rb, "dram.row_buffer", "idle_ticks", 4);

    Json rf = dram.value("refresh", Json::object());
    check_keys(rf, "dram.refresh", {"interval_ticks", "mode"});
    spec.world.refresh.interval_ticks =
        get_or<Tick>(rf, "dram.refresh", "interval_ticks", 100000);
    spec.world.refresh.mode = parse_enum<RefreshConfig::Mode>(
        rf, "dram.refresh", "mode",
        {{"standard", RefreshConfig::Mode::Standard}, {"doubled", RefreshConfig::Mode::Doubled}},
        RefreshConfig::Mode::Standard);

    Json mp = dram.value("mapping", Json::object());
    check_keys(mp, "dram.mapping", {"bank_xor_row_masks"});
    spec.world.mapping.bank_xor_row_masks =
        get_or<std::vector<std::uint64_t>>(mp, "dram.mapping", "bank_xor_row_masks", {});

    Json fm = dram.value("fault_map", Json::object());
    check_keys(fm, "dram.fault_map", {"entries", "generate", "aged_entries"});
    if (fm.contains("generate")) {
      Json gen = fm.at("generate");
      check_keys(gen, "dram.fault_map.generate",
                 {"seed", "density", "one_to_zero_fraction", "radius2_fraction", "threshold",
                  "probability"});
      FaultMapParams p;
      p.density = get_or<double>(gen, "dram.fault_map.generate", "density", 0.05);
      p.one_to_zero_fraction =
          get_or<double>(gen, "dram.fault_map.generate", "one_to_zero_fraction", 1.0);
      p.radius2_fraction =
          get_or<double>(gen, "dram.fault_map.generate", "radius2_fraction", 0.0);
      p.threshold = get_or<std::uint64_t>(gen, "dram.fault_map.generate", "threshold", 64);
      p.probability = get_or<double>(gen, "dram.fault_map.generate", "probability", 1.0);
      std::uint64_t gseed = get_or<std::uint64_t>(gen, "dram.fault_map.generate", "seed", 1);
      spec.world.faults = FaultMap::generate(spec.world.geometry, p, gseed);
    }
    if (fm.contains("entries")) {
      std::size_t i = 0;
      for (const auto& ej : fm.at("entries"))
        spec.world.faults.entries.push_back(
            parse_fault_entry(ej, "dram.fault_map.entries[" + std::to_string(i++) + "]"));
    }
    if (fm.contains("aged_entries")) {
      std::size_t i = 0;
      for (const auto& ej : fm.at("aged_entries"))
        spec.world.aged_faults.push_back(
            parse_fault_entry(ej, "dram.fault_map.aged_entries[" + std::to_string(i++) + "]"));
    }
  }

  // ---- cache ----
  Json cache = root.value("cache", Json::object());
  expect_object(cache, "cache");
  check_keys(cache, "cache", {"present", "slices", "sets", "ways", "line_bytes",
                              "slice_xor_masks"});
  spec.world.cache_present = get_or<bool>(cache, "cache", "present", true);
  spec.world.cache.slices = get_or<std::uint32_t>(cache, "cache", "slices", 1);
  spec.world.cache.sets_per_slice = get_or<std::uint32_t>(cache, "cache", "sets", 8);
  spec.world.cache.ways = get_or<std::uint32_t>(cache, "cache", "ways", 2);
  spec.world.cache.line_bytes = get_or<std::uint32_t>(cache, "cache", "line_bytes", 64);
  spec.world.cache.slice_hash.xor_masks =
      get_or<std::vector<std::uint64_t>>(cache, "cache", "slice_xor_masks", {});

  // ---- os ----
  Json os = root.value("os", Json::object());
  expect_object(os, "os");
  check_keys(os, "os", {"kernel_reserved_frames", "dedup", "files"});
  spec.world.page_bytes = spec.world.geometry.bytes_per_row;
  spec.world.kernel_reserved_frames =
      get_or<std::uint32_t>(os, "os", "kernel_reserved_frames", 4);
  spec.world.dedup_enabled = get_or<bool>(os, "os", "dedup", false);
  if (os.contains("files")) {
    std::size_t i = 0;
    for (const auto& fj : os.at("files")) {
      std::string path = "os.files[" + std::to_string(i++) + "]";
      expect_object(fj, path);
      check_keys(fj, path, {"path", "kind", "owner_uid", "records", "hex", "world_read"});
      FileObject f;
      f.path = get_req<std::string>(fj, path, "path");
      f.owner_uid = get_or<std::uint32_t>(fj, path, "owner_uid", 0);
      f.mode.world_read = get_or<bool>(fj, path, "world_read", true);
      std::string kind = get_or<std::string>(fj, path, "kind", "binary");
      if (kind == "passwd") {
        std::vector<PasswdRecord> records;
        for (const auto& rj : fj.value("records", Json::array())) {
          PasswdRecord r;
          r.name = get_req<std::string>(rj, path + ".records", "name");
          r.uid = get_req<std::uint32_t>(rj, path + ".records", "uid");
          r.shell = get_or<std::string>(rj, path + ".records", "shell", "/bin/sh");
          records.push_back(r);
        }
        f.disk_bytes = serialize_passwd(records);
      } else if (kind == "binary") {
        f.disk_bytes = hex_to_bytes(get_or<std::string>(fj, path, "hex", ""));
      } else {
        throw ConfigError(ConfigError::Kind::UnknownIdentifier, path + ".kind",
                          "unknown identifier '" + kind + "'");
      }
      spec.world.files.push_back(std::move(f));
    }
  }

  // ---- attack ----
  Json atk = root.value("attack", Json::object());
  expect_object(atk, "attack");
  check_keys(atk, "attack",
             {"origin", "target", "lp", "bypass", "ba1_non_temporal", "pattern", "ev",
              "se_enabled", "hammer_budget", "victim_properties", "expressive_targets", "notes"});
  spec.attack.origin = parse_enum<OriginKind>(atk, "attack", "origin",
                                              {{"upro", OriginKind::UPro},
                                               {"ppro", OriginKind::PPro},
                                               {"website", OriginKind::Website},
                                               {"network", OriginKind::Network}});
  {
    Json tj = atk.value("target", Json::object());
    check_keys(tj, "attack.target",
               {"class", "kind", "path", "record_uid", "uid_byte", "byte_offset", "bits",
                "direction", "pte_index", "pte_frame", "ptr_value"});
    TargetSpec& t = spec.attack.target;
    t.cls = parse_enum<TargetClass>(tj, "attack.target", "class",
                                    {{"epro", TargetClass::Epro},
                                     {"epuo", TargetClass::Epuo},
                                     {"dpro", TargetClass::Dpro},
                                     {"dpuo", TargetClass::Dpuo}});
    t.kind = parse_enum<TargetKind>(tj, "attack.target", "kind",
                                    {{"page_table", TargetKind::PageTable},
                                     {"passwd_uid", TargetKind::PasswdUid},
                                     {"opcode", TargetKind::Opcode},
                                     {"pointer", TargetKind::Pointer}});
    t.path = get_or<std::string>(tj, "attack.target", "path", "");
    t.record_uid = get_or<std::uint32_t>(tj, "attack.target", "record_uid", 1001);
    t.uid_byte = get_or<std::uint32_t>(tj, "attack.target", "uid_byte", 0);
    t.byte_offset = get_or<std::uint32_t>(tj, "attack.target", "byte_offset", 8);
    t.bits = get_or<std::vector<std::uint8_t>>(tj, "attack.target", "bits", {0});
    t.direction = parse_direction(tj, "attack.target", "direction");
    t.pte_index = get_or<std::uint32_t>(tj, "attack.target", "pte_index", 0);
    t.pte_frame = get_or<FrameId>(tj, "attack.target", "pte_frame", 4);
    t.ptr_value = get_or<std::uint32_t>(tj, "attack.target", "ptr_value", 5);
  }
  spec.attack.lp = parse_enum<LpTechnique>(atk, "attack", "lp",
                                           {{"A1", LpTechnique::A1},
                                            {"A2", LpTechnique::A2},
                                            {"A3", LpTechnique::A3},
                                            {"A4", LpTechnique::A4},
                                            {"none", LpTechnique::None}},
                                           LpTechnique::None);
  spec.attack.bypass = parse_enum<BypassTechnique>(atk, "attack", "bypass",
                                                   {{"Ba1", BypassTechnique::Ba1},
                                                    {"Ba2", BypassTechnique::Ba2},
                                                    {"Ba3", BypassTechnique::Ba3},
                                                    {"none", BypassTechnique::None}},
                                                   BypassTechnique::Ba1);
  spec.attack.ba1_non_temporal = get_or<bool>(atk, "attack", "ba1_non_temporal", false);
  spec.attack.pattern = parse_enum<PatternTechnique>(atk, "attack", "pattern",
                                                     {{"Bb1", PatternTechnique::Bb1},
                                                      {"Bb2", PatternTechnique::Bb2},
                                                      {"Bb3", PatternTechnique::Bb3}},
                                                     PatternTechnique::Bb1);
  spec.attack.ev = parse_enum<EvTechnique>(
      atk, "attack", "ev", {{"C1", EvTechnique::C1}, {"C2", EvTechnique::C2}}, EvTechnique::C1);
  spec.attack.se_enabled = get_or<bool>(atk, "attack", "se_enabled", false);
  spec.attack.hammer_budget = get_or<std::uint64_t>(atk, "attack", "hammer_budget", 20000);
  if (atk.contains("victim_properties")) {
    for (const auto& pj : atk.at("victim_properties")) {
      std::string p = pj.get<std::string>();
      if (p == "rdma")
        spec.attack.props.rdma_buffers = true;
      else if (p == "flush_on_packets")
        spec.attack.props.flush_on_packets = true;
      else if (p == "cat")
        spec.attack.props.cat_partitioning = true;
      else if (p == "observable_behavior")
        spec.attack.props.observable_behavior = true;
      else
        throw ConfigError(ConfigError::Kind::UnknownIdentifier, "attack.victim_properties",
                          "unknown identifier '" + p + "'");
    }
  }
  if (atk.contains("expressive_targets")) {
    for (const auto& ej : atk.at("expressive_targets")) {
      check_keys(ej, "attack.expressive_targets", {"byte", "bit", "direction"});
      ExpressiveTarget t;
      t.byte = get_req<std::uint32_t>(ej, "attack.expressive_targets", "byte");
      t.bit = get_or<std::uint8_t>(ej, "attack.expressive_targets", "bit", 0);
      t.direction = parse_direction(ej, "attack.expressive_targets", "direction");
      spec.attack.expressive.push_back(t);
    }
  }
  spec.attack.notes = get_or<std::string>(atk, "attack", "notes", "");

  // ---- defenses ----
  if (root.contains("defenses")) {
    std::size_t i = 0;
    for (const auto& dj : root.at("defenses"))
      spec.defenses.push_back(
          cfg::parse_countermeasure(dj, "defenses[" + std::to_string(i++) + "]"));
  }

  // ---- run knobs ----
  Json run = root.value("run", Json::object());
  expect_object(run, "run");
  check_keys(run, "run",
             {"post_rh_idle", "lp_attempt_budget", "lp_headroom", "arena_frames",
              "arena_dma_frames", "arena_rdma_frames"});
  spec.post_rh_idle = get_or<Tick>(run, "run", "post_rh_idle", 1024);
  spec.lp_attempt_budget = get_or<std::uint32_t>(run, "run", "lp_attempt_budget", 0);
  spec.lp_headroom = get_or<std::uint32_t>(run, "run", "lp_headroom", 4);
  spec.arena_frames = get_or<std::uint32_t>(run, "run", "arena_frames", 0);
  spec.arena_dma_frames = get_or<std::uint32_t>(run, "run", "arena_dma_frames", 0);
  spec.arena_rdma_frames = get_or<std::uint32_t>(run, "run", "arena_rdma_frames", 0);

  // constraint validation happens eagerly so errors carry a field, not a
  // stack trace from the middle of a run
  try {
    spec.world.validate();
    spec.world.faults.validate(spec.world.geometry);
    spec.world.row_buffer.validate();
    spec.world.refresh.validate();
    spec.world.mapping.validate(spec.world.geometry);
    if (spec.world.cache_present) spec.world.cache.validate();
    spec.attack.validate();
  } catch (const std::exception& e) {
    throw ConfigError(ConfigError::Kind::Constraint, "", e.what());
  }
  return spec;
}

inline ScenarioSpec parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(ConfigError::Kind::Syntax, "", e.what());
  }
  return parse_config_json(root);
}

// Canonical serialization: defaults applied, keys sorted (nlohmann objects
// iterate sorted). The report embeds this form and digests hash it.
inline Json config_to_json(const ScenarioSpec& spec) {
  Json root;
  root["schema_version"] = cfg::kSchemaVersion;
  root["name"] = spec.name;
  root["seed"] = spec.seed;

  const DramGeometry& g = spec.world.geometry;
  root["dram"]["geometry"] = {{"channels", g.channels}, {"dimms", g.dimms_per_channel},
                              {"ranks", g.ranks_per_dimm}, {"banks", g.banks_per_rank},
                              {"rows", g.rows_per_bank},  {"row_bytes", g.bytes_per_row}};
  const char* policy = spec.world.row_buffer.kind == RowBufferPolicy::Kind::OpenPage
                           ? "open_page"
                           : spec.world.row_buffer.kind == RowBufferPolicy::Kind::ClosePage
                                 ? "close_page"
                                 : "adaptive";
  root["dram"]["row_buffer"] = {{"policy", policy},
                                {"idle_ticks", spec.world.row_buffer.idle_ticks}};
  root["dram"]["refresh"] = {
      {"interval_ticks", spec.world.refresh.interval_ticks},
      {"mode", spec.world.refresh.mode == RefreshConfig::Mode::Doubled ? "doubled" : "standard"}};
  root["dram"]["mapping"] = {{"bank_xor_row_masks", spec.world.mapping.bank_xor_row_masks}};
  Json entries = Json::array();
  for (const auto& e : spec.world.faults.entries) entries.push_back(cfg::fault_entry_to_json(e));
  root["dram"]["fault_map"]["entries"] = entries;
  Json aged = Json::array();
  for (const auto& e : spec.world.aged_faults) aged.push_back(cfg::fault_entry_to_json(e));
  root["dram"]["fault_map"]["aged_entries"] = aged;

  root["cache"] = {{"present", spec.world.cache_present},
                   {"slices", spec.world.cache.slices},
                   {"sets", spec.world.cache.sets_per_slice},
                   {"ways", spec.world.cache.ways},
                   {"line_bytes", spec.world.cache.line_bytes},
                   {"slice_xor_masks", spec.world.cache.slice_hash.xor_masks}};

  Json files = Json::array();
  for (const auto& f : spec.world.files)
    files.push_back(Json{{"path", f.path},
                         {"kind", "binary"},
                         {"owner_uid", f.owner_uid},
                         {"world_read", f.mode.world_read},
                         {"hex", bytes_to_hex(f.disk_bytes)}});
  root["os"] = {{"kernel_reserved_frames", spec.world.kernel_reserved_frames},
                {"dedup", spec.world.dedup_enabled},
                {"files", files}};

  const AttackScenario& a = spec.attack;
  const char* origin = a.origin == OriginKind::UPro      ? "upro"
                       : a.origin == OriginKind::PPro    ? "ppro"
                       : a.origin == OriginKind::Website ? "website"
                                                         : "network";
  const char* cls = a.target.cls == TargetClass::Epro   ? "epro"
                    : a.target.cls == TargetClass::Epuo ? "epuo"
                    : a.target.cls == TargetClass::Dpro ? "dpro"
                                                        : "dpuo";
  const char* kind = a.target.kind == TargetKind::PageTable   ? "page_table"
                     : a.target.kind == TargetKind::PasswdUid ? "passwd_uid"
                     : a.target.kind == TargetKind::Opcode    ? "opcode"
                                                              : "pointer";
  Json props = Json::array();
  if (a.props.rdma_buffers) props.push_back("rdma");
  if (a.props.flush_on_packets) props.push_back("flush_on_packets");
  if (a.props.cat_partitioning) props.push_back("cat");
  if (a.props.observable_behavior) props.push_back("observable_behavior");
  Json expressive = Json::array();
  for (const auto& t : a.expressive)
    expressive.push_back(Json{
        {"byte", t.byte},
        {"bit", t.bit},
        {"direction", t.direction == FlipDirection::OneToZero ? "one_to_zero" : "zero_to_one"}});
  root["attack"] = {
      {"origin", origin},
      {"target",
       {{"class", cls},
        {"kind", kind},
        {"path", a.target.path},
        {"record_uid", a.target.record_uid},
        {"uid_byte", a.target.uid_byte},
        {"byte_offset", a.target.byte_offset},
        {"bits", a.target.bits},
        {"direction",
         a.target.direction == FlipDirection::OneToZero ? "one_to_zero" : "zero_to_one"},
        {"pte_index", a.target.pte_index},
        {"pte_frame", a.target.pte_frame},
        {"ptr_value", a.target.ptr_value}}},
      {"lp", lp_name(a.lp)},
      {"bypass", bypass_name(a.bypass)},
      {"ba1_non_temporal", a.ba1_non_temporal},
      {"pattern", pattern_name(a.pattern)},
      {"ev", ev_name(a.ev)},
      {"se_enabled", a.se_enabled},
      {"hammer_budget", a.hammer_budget},
      {"victim_properties", props},
      {"expressive_targets", expressive},
      {"notes", a.notes}};

  Json defenses = Json::array();
  for (const auto& c : spec.defenses) defenses.push_back(cfg::countermeasure_to_json(c));
  root["defenses"] = defenses;

  root["run"] = {{"post_rh_idle", spec.post_rh_idle},
                 {"lp_attempt_budget", spec.lp_attempt_budget},
                 {"lp_headroom", spec.lp_headroom},
                 {"arena_frames", spec.arena_frames},
                 {"arena_dma_frames", spec.arena_dma_frames},
                 {"arena_rdma_frames", spec.arena_rdma_frames}};
  return root;
}

inline std::string config_digest(const ScenarioSpec& spec) {
  return to_hex(fnv1a64(config_to_json(spec).dump()));
}

}  // namespace rhsim
