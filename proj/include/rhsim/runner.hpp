#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rhsim/config.hpp"

namespace rhsim {

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

struct RunReport {
  std::string digest;
  std::string name;
  Json config;  // canonical form; the record alone can reproduce the run
  AttackOutcome outcome;
  double wall_ms = 0.0;  // informational only, never serialized

  Json to_record() const {
    Json rec;
    rec["digest"] = digest;
    rec["name"] = name;
    rec["status"] = status_name(outcome.status);
    if (outcome.status != AttackStatus::Success) {
      rec["failed_stage"] = stage_name(outcome.failed_stage);
      rec["detail"] = outcome.detail;
    }
    if (!outcome.detected_by.empty()) rec["detected_by"] = outcome.detected_by;
    rec["marks"] = std::vector<std::string>(outcome.marks.begin(), outcome.marks.end());
    rec["notes"] = outcome.notes;
    Json loops = Json::array();
    for (const auto& l : outcome.loops) {
      Json lj;
      lj["lp_run"] = l.lp_run;
      lj["placement_attempts"] = l.placement_attempts;
      lj["footprint_peak_frames"] = l.footprint_peak_frames;
      lj["placement_achieved"] = l.placement_achieved;
      lj["victim_frame"] = l.victim_frame;
      lj["rh_run"] = l.rh_run;
      lj["activations"] = l.activations;
      lj["aggressor_rows"] = l.aggressor_rows;
      Json flips = Json::array();
      for (const auto& f : l.flips)
        flips.push_back(Json{{"bank", f.victim.bank},
                             {"row", f.victim.row},
                             {"byte", f.victim.byte_offset},
                             {"bit", f.victim.bit_offset},
                             {"direction",
                              f.direction == FlipDirection::OneToZero ? "1to0" : "0to1"},
                             {"tick", f.tick},
                             {"aggressor_row", f.aggressor_row}});
      lj["flips"] = flips;
      lj["ev_run"] = l.ev_run;
      lj["ev_result"] = l.ev_result;
      lj["se_run"] = l.se_run;
      lj["persisted"] = l.persisted;
      if (!l.disk_uid_hex.empty()) lj["disk_uid"] = l.disk_uid_hex;
      loops.push_back(std::move(lj));
    }
    rec["loops"] = loops;
    rec["config"] = config;
    return rec;
  }
};

inline RunReport run_one(const ScenarioSpec& spec) {
  RunReport report;
  report.name = spec.name;
  report.config = config_to_json(spec);
  report.digest = to_hex(fnv1a64(report.config.dump()));
  auto t0 = std::chrono::steady_clock::now();
  auto run = run_scenario(spec);
  report.outcome = std::move(run.outcome);
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Isolated instances make batch order irrelevant; reports sort by digest so
// any parallelism degree emits identical bytes.
inline std::vector<RunReport> run_batch(const std::vector<ScenarioSpec>& specs,
                                        unsigned parallelism) {
  std::vector<RunReport> reports(specs.size());
  if (parallelism <= 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) reports[i] = run_one(specs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= specs.size()) return;
        reports[i] = run_one(specs[i]);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < parallelism; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::sort(reports.begin(), reports.end(),
            [](const RunReport& a, const RunReport& b) { return a.digest < b.digest; });
  return reports;
}

inline std::string records_text(const std::vector<RunReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    out += r.to_record().dump();
    out += '\n';
  }
  return out;
}

// Re-derives the mark set from the stage records; a checkmark nobody
// exercised is a bug in the replication, not a result.
inline std::set<std::string> audit_marks(const ScenarioSpec& spec, const AttackOutcome& out) {
  std::set<std::string> marks;
  if (out.status == AttackStatus::Success || !out.loops.empty()) {
    marks.insert(origin_name(spec.attack.origin));
    marks.insert(target_class_name(spec.attack.target.cls));
  }
  for (const auto& l : out.loops) {
    if (l.lp_run && spec.attack.lp != LpTechnique::None && l.placement_attempts > 0)
      marks.insert(lp_name(spec.attack.lp));
    if (l.rh_run && l.activations > 0) {
      if (spec.attack.bypass != BypassTechnique::None)
        marks.insert(bypass_name(spec.attack.bypass));
      marks.insert(pattern_name(spec.attack.pattern));
    }
    if (l.ev_run) marks.insert(ev_name(spec.attack.ev));
  }
  return marks;
}

// ---------------------------------------------------------------------------
// Countermeasure evaluation
// ---------------------------------------------------------------------------

struct DefenseVerdict {
  std::string countermeasure;
  std::string scenario;
  enum class Result { Blocked, Bypassed, NotApplicable } result = Result::Blocked;
  AttackStage stage = AttackStage::RH;  // meaningful when Blocked
  std::string mechanism;

  std::string to_string() const {
    switch (result) {
      case Result::Blocked:
        return "Blocked(" + std::string(stage_name(stage)) + ")";
      case Result::Bypassed:
        return "Bypassed(" + mechanism + ")";
      case Result::NotApplicable:
        return "NotApplicable";
    }
    return "?";
  }
};

inline DefenseVerdict evaluate(const Countermeasure& cm, ScenarioSpec spec) {
  spec.defenses = {cm};
  auto run = run_scenario(spec);
  DefenseVerdict v;
  v.countermeasure = countermeasure_name(cm.kind);
  v.scenario = spec.name;
  if (run.outcome.status == AttackStatus::Success) {
    if (run.machine->defenses().any_engaged()) {
      v.result = DefenseVerdict::Result::Bypassed;
      v.mechanism = spec.attack.notes.empty() ? "attack completed despite the countermeasure"
                                              : spec.attack.notes;
    } else {
      v.result = DefenseVerdict::Result::NotApplicable;
    }
  } else {
    v.result = DefenseVerdict::Result::Blocked;
    v.stage = run.outcome.failed_stage == AttackStage::SE ? AttackStage::EV
                                                          : run.outcome.failed_stage;
    v.mechanism = run.outcome.detail;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Table replications
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& table1_attack_ids() {
  static const std::vector<std::string> ids = {
      "flipping_bits", "gain_kernel",  "new_approach",     "rowhammer_js", "dedup_est_machina",
      "one_bit_flips", "flip_feng_shui", "drammer",        "curious_case", "good_go_bad",
      "sgx_bomb",      "another_flip", "glitch",           "throwhammer",  "rampage",
      "still_hammerable", "pfa",       "nethammer"};
  return ids;
}

inline const std::vector<std::string>& table1_columns() {
  static const std::vector<std::string> cols = {
      "UPro", "PPro", "Website", "Network", "EPRO", "EPUO", "DPRO", "DPUO", "A1", "A2",
      "A3",   "A4",   "Ba1",     "Ba2",     "Ba3",  "Bb1",  "Bb2",  "Bb3",  "C1", "C2"};
  return cols;
}

inline const std::vector<std::string>& table2_defense_ids() {
  static const std::vector<std::string> ids = {
      "bcatt", "footprint_detector", "ecc",  "trr",   "pra",      "anvil", "disallow_clflush",
      "double_refresh", "hash_tree", "gcatt", "guardion", "alis", "zebram"};
  return ids;
}

struct Table1Row {
  std::string attack;
  std::string title;
  std::set<std::string> expected;
  std::set<std::string> exercised;
  std::vector<std::string> errors;  // mismatches, failed variants, audit gaps
  bool ok() const { return errors.empty() && expected == exercised; }
};

struct Table1Result {
  std::vector<Table1Row> rows;
  std::vector<std::string> errors;  // corpus-level problems
  bool ok() const {
    if (!errors.empty()) return false;
    for (const auto& r : rows)
      if (!r.ok()) return false;
    return true;
  }
};

inline Table1Result replicate_table1(const std::string& corpus_dir) {
  namespace fs = std::filesystem;
  Table1Result result;
  for (const auto& id : table1_attack_ids()) {
    fs::path file = fs::path(corpus_dir) / "table1" / (id + ".json");
    if (!fs::exists(file)) {
      result.errors.push_back("missing scenario fixture for attack '" + id + "' (" +
                              file.string() + ")");
      continue;
    }
    Table1Row row;
    row.attack = id;
    std::ifstream in(file);
    Json fixture;
    try {
      fixture = Json::parse(in);
    } catch (const Json::parse_error& e) {
      result.errors.push_back(id + ": " + e.what());
      continue;
    }
    row.title = fixture.value("title", id);
    for (const auto& m : fixture.value("expected_marks", Json::array()))
      row.expected.insert(m.get<std::string>());
    for (const auto& vj : fixture.value("variants", Json::array())) {
      ScenarioSpec spec;
      try {
        spec = parse_config_json(vj);
      } catch (const ConfigError& e) {
        row.errors.push_back(std::string("variant parse error: ") + e.what());
        continue;
      }
      auto run = run_scenario(spec);
      if (run.outcome.status != AttackStatus::Success) {
        row.errors.push_back("variant '" + spec.name + "' did not complete: " +
                             status_name(run.outcome.status) + " (" + run.outcome.detail + ")");
        continue;
      }
      if (audit_marks(spec, run.outcome) != run.outcome.marks) {
        row.errors.push_back("variant '" + spec.name +
                             "' reported marks its trace does not back");
        continue;
      }
      row.exercised.insert(run.outcome.marks.begin(), run.outcome.marks.end());
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline std::string table1_text(const Table1Result& result) {
  std::ostringstream os;
  const auto& cols = table1_columns();
  os << std::left << std::setw(20) << "attack";
  for (const auto& c : cols) os << std::setw(8) << c;
  os << "ok\n";
  for (const auto& row : result.rows) {
    os << std::left << std::setw(20) << row.attack;
    for (const auto& c : cols) {
      bool got = row.exercised.count(c) > 0;
      bool want = row.expected.count(c) > 0;
      const char* cell = got == want ? (got ? "x" : ".") : (got ? "x!" : ".!");
      os << std::setw(8) << cell;
    }
    os << (row.ok() ? "yes" : "NO") << "\n";
    for (const auto& e : row.errors) os << "    error: " << e << "\n";
    if (row.expected != row.exercised) {
      for (const auto& c : cols) {
        if (row.expected.count(c) && !row.exercised.count(c))
          os << "    missing mark: " << row.attack << " / " << c << "\n";
        if (!row.expected.count(c) && row.exercised.count(c))
          os << "    extra mark: " << row.attack << " / " << c << "\n";
      }
    }
  }
  for (const auto& e : result.errors) os << "error: " << e << "\n";
  os << (result.ok() ? "table1: all rows match\n" : "table1: MISMATCH\n");
  return os.str();
}

struct Table2Row {
  std::string defense;
  std::string title;
  std::string expected_affected;
  bool expected_reliable = false;
  std::string derived_affected;
  bool derived_reliable = false;
  std::string note;
  std::vector<std::string> errors;
  bool ok() const {
    return errors.empty() && derived_affected == expected_affected &&
           derived_reliable == expected_reliable;
  }
};

struct Table2Result {
  std::vector<Table2Row> rows;
  std::vector<std::string> errors;
  bool ok() const {
    if (!errors.empty()) return false;
    for (const auto& r : rows)
      if (!r.ok()) return false;
    return true;
  }
};

inline Table2Result replicate_table2(const std::string& corpus_dir) {
  namespace fs = std::filesystem;
  Table2Result result;
  for (const auto& id : table2_defense_ids()) {
    fs::path file = fs::path(corpus_dir) / "table2" / (id + ".json");
    if (!fs::exists(file)) {
      result.errors.push_back("missing fixture for countermeasure '" + id + "' (" +
                              file.string() + ")");
      continue;
    }
    Table2Row row;
    row.defense = id;
    std::ifstream in(file);
    Json fixture;
    try {
      fixture = Json::parse(in);
    } catch (const Json::parse_error& e) {
      result.errors.push_back(id + ": " + e.what());
      continue;
    }
    row.title = fixture.value("title", id);
    row.expected_affected = fixture.value("expected_affected", "");
    row.expected_reliable = fixture.value("expected_reliable", false);
    row.note = fixture.value("notes", "");
    Countermeasure cm;
    ScenarioSpec blocked_demo;
    try {
      cm = cfg::parse_countermeasure(fixture.at("defense"), id + ".defense");
      blocked_demo = parse_config_json(fixture.at("blocked_demo"));
    } catch (const std::exception& e) {
      row.errors.push_back(e.what());
      result.rows.push_back(std::move(row));
      continue;
    }

    // the demo must succeed undefended, or it proves nothing
    {
      ScenarioSpec baseline = blocked_demo;
      baseline.defenses.clear();
      auto run = run_scenario(baseline);
      if (run.outcome.status != AttackStatus::Success)
        row.errors.push_back("baseline run failed: " + std::string(status_name(run.outcome.status)) +
                             " (" + run.outcome.detail + ")");
    }
    DefenseVerdict blocked = evaluate(cm, blocked_demo);
    if (blocked.result != DefenseVerdict::Result::Blocked) {
      row.errors.push_back("countermeasure did not block its canonical attack: " +
                           blocked.to_string());
    } else {
      row.derived_affected = stage_name(blocked.stage);
    }

    if (fixture.contains("bypass_demo")) {
      ScenarioSpec bypass_demo;
      try {
        bypass_demo = parse_config_json(fixture.at("bypass_demo"));
      } catch (const std::exception& e) {
        row.errors.push_back(e.what());
        result.rows.push_back(std::move(row));
        continue;
      }
      DefenseVerdict bypassed = evaluate(cm, bypass_demo);
      if (bypassed.result != DefenseVerdict::Result::Bypassed)
        row.errors.push_back("documented bypass did not go through: " + bypassed.to_string());
      row.derived_reliable = false;
    } else {
      row.derived_reliable = true;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline std::string table2_text(const Table2Result& result) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "countermeasure" << std::setw(12) << "affected"
     << std::setw(12) << "reliable" << "ok\n";
  for (const auto& row : result.rows) {
    os << std::left << std::setw(22) << row.defense << std::setw(12)
       << (row.derived_affected.empty() ? "-" : row.derived_affected) << std::setw(12)
       << (row.derived_reliable ? "yes" : "no") << (row.ok() ? "yes" : "NO") << "\n";
    if (row.derived_affected != row.expected_affected)
      os << "    affected-primitive mismatch: derived " << row.derived_affected << ", expected "
         << row.expected_affected << "\n";
    if (row.derived_reliable != row.expected_reliable)
      os << "    reliability mismatch: derived " << (row.derived_reliable ? "yes" : "no")
         << ", expected " << (row.expected_reliable ? "yes" : "no") << "\n";
    for (const auto& e : row.errors) os << "    error: " << e << "\n";
    if (!row.note.empty()) os << "    note: " << row.note << "\n";
  }
  for (const auto& e : result.errors) os << "error: " << e << "\n";
  os << (result.ok() ? "table2: all rows match\n" : "table2: MISMATCH\n");
  return os.str();
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
  double value = 0.0;
  RunReport report;
};

inline std::vector<SweepPoint> run_sweep(const Json& base_config, const std::string& pointer,
                                         double start, double stop, double step) {
  if (step <= 0) throw std::invalid_argument("sweep: step must be positive");
  std::vector<SweepPoint> points;
  for (double v = start; v <= stop + 1e-9; v += step) {
    Json config = base_config;
    Json::json_pointer ptr{pointer};
    const Json& old = base_config.at(ptr);
    if (old.is_number_integer() || old.is_number_unsigned())
      config[ptr] = static_cast<std::int64_t>(v);
    else
      config[ptr] = v;
    ScenarioSpec spec = parse_config_json(config);
    SweepPoint p;
    p.value = v;
    p.report = run_one(spec);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace rhsim
