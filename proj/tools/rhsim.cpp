#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "rhsim/runner.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

std::string human_report(const rhsim::RunReport& r) {
  std::ostringstream os;
  os << "scenario   " << r.name << "\n";
  os << "digest     " << r.digest << "\n";
  os << "status     " << rhsim::status_name(r.outcome.status) << "\n";
  if (r.outcome.status != rhsim::AttackStatus::Success) {
    os << "stage      " << rhsim::stage_name(r.outcome.failed_stage) << "\n";
    os << "detail     " << r.outcome.detail << "\n";
  }
  if (!r.outcome.detected_by.empty()) os << "detected   " << r.outcome.detected_by << "\n";
  os << "marks      ";
  for (const auto& m : r.outcome.marks) os << m << ' ';
  os << "\n";
  for (std::size_t i = 0; i < r.outcome.loops.size(); ++i) {
    const auto& l = r.outcome.loops[i];
    os << "loop " << i + 1 << "     attempts=" << l.placement_attempts
       << " frame=" << l.victim_frame << " activations=" << l.activations
       << " flips=" << l.flips.size();
    if (l.ev_run) os << " ev=" << l.ev_result;
    if (l.se_run) os << " persisted=" << (l.persisted ? "yes" : "no");
    if (!l.disk_uid_hex.empty()) os << " disk_uid=0x" << l.disk_uid_hex;
    os << "\n";
  }
  for (const auto& n : r.outcome.notes) os << "note       " << n << "\n";
  os << "wall       " << r.wall_ms << " ms\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rhsim - deterministic simulator of the rowhammer attack life-cycle"};
  app.require_subcommand(1);

  std::string out_path;
  std::string format = "table";
  std::string corpus = "scenarios";
  std::uint64_t seed_override = 0;
  bool have_seed = false;
  app.add_option("--out", out_path, "write output to a file instead of stdout");
  app.add_option("--format", format, "output format: table or records")
      ->check(CLI::IsMember({"table", "records"}));
  app.add_option("--corpus", corpus, "directory holding the bundled scenario corpus");
  app.add_option("--seed", seed_override, "override the scenario seed")
      ->each([&](const std::string&) { have_seed = true; });

  std::string config_path;
  auto* cmd_run = app.add_subcommand("run", "run one scenario and print its report");
  cmd_run->add_option("config", config_path, "scenario config file")->required();
  std::string trace_path;
  cmd_run->add_option("--trace", trace_path, "write the cache hit/miss trace as CSV");

  auto* cmd_feas = app.add_subcommand("feasibility", "check a scenario's technique combination");
  cmd_feas->add_option("config", config_path, "scenario config file")->required();

  auto* cmd_t1 = app.add_subcommand("table1", "replicate the attack-analysis matrix");
  auto* cmd_t2 = app.add_subcommand("table2", "replicate the countermeasure matrix");

  auto* cmd_expr = app.add_subcommand("expressive", "run a multi-flip store-error attack");
  cmd_expr->add_option("config", config_path, "scenario config file")->required();

  auto* cmd_sweep = app.add_subcommand("sweep", "run a scenario across a parameter range");
  std::string sweep_param;
  std::string sweep_range;
  cmd_sweep->add_option("config", config_path, "scenario config file")->required();
  cmd_sweep->add_option("--param", sweep_param, "JSON pointer to the parameter, e.g. /attack/hammer_budget")
      ->required();
  cmd_sweep->add_option("--range", sweep_range, "start:stop:step")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*cmd_run) {
      rhsim::ScenarioSpec spec = rhsim::parse_config(slurp(config_path));
      if (have_seed) spec.seed = seed_override;
      if (!trace_path.empty()) {
        auto run = [&] {
          auto r = rhsim::run_scenario(spec);
          return std::move(r);
        }();
        // re-run with tracing on: the machine is rebuilt so the trace covers
        // the whole run
        auto machine = std::make_unique<rhsim::Machine>(spec.world, spec.defenses, spec.seed);
        if (machine->cache_present()) machine->cache().set_trace_enabled(true);
        rhsim::AttackRun driver(*machine, spec);
        auto outcome = driver.execute();
        if (machine->cache_present()) {
          std::ofstream tf(trace_path);
          rhsim::Cache::write_trace_csv(tf, machine->cache().trace());
        }
        rhsim::RunReport report;
        report.name = spec.name;
        report.config = rhsim::config_to_json(spec);
        report.digest = rhsim::to_hex(rhsim::fnv1a64(report.config.dump()));
        report.outcome = std::move(outcome);
        emit(format == "records" ? report.to_record().dump() + "\n" : human_report(report),
             out_path);
        return 0;
      }
      rhsim::RunReport report = rhsim::run_one(spec);
      emit(format == "records" ? report.to_record().dump() + "\n" : human_report(report),
           out_path);
      return 0;
    }

    if (*cmd_feas) {
      rhsim::ScenarioSpec spec = rhsim::parse_config(slurp(config_path));
      auto verdict = rhsim::check_feasibility(spec.attack);
      std::ostringstream os;
      os << (verdict.feasible ? "feasible" : "infeasible") << "\n";
      if (!verdict.feasible) os << "reason: " << verdict.reason << "\n";
      for (const auto& n : verdict.notes) os << "note: " << n << "\n";
      emit(os.str(), out_path);
      return verdict.feasible ? 0 : 1;
    }

    if (*cmd_t1) {
      auto result = rhsim::replicate_table1(corpus);
      if (format == "records") {
        std::string text;
        for (const auto& row : result.rows) {
          rhsim::Json rec{{"attack", row.attack},
                          {"expected", std::vector<std::string>(row.expected.begin(),
                                                                row.expected.end())},
                          {"exercised", std::vector<std::string>(row.exercised.begin(),
                                                                 row.exercised.end())},
                          {"errors", row.errors},
                          {"ok", row.ok()}};
          text += rec.dump() + "\n";
        }
        emit(text, out_path);
      } else {
        emit(rhsim::table1_text(result), out_path);
      }
      return result.ok() ? 0 : 1;
    }

    if (*cmd_t2) {
      auto result = rhsim::replicate_table2(corpus);
      if (format == "records") {
        std::string text;
        for (const auto& row : result.rows) {
          rhsim::Json rec{{"countermeasure", row.defense},
                          {"affected", row.derived_affected},
                          {"reliable", row.derived_reliable},
                          {"expected_affected", row.expected_affected},
                          {"expected_reliable", row.expected_reliable},
                          {"errors", row.errors},
                          {"note", row.note},
                          {"ok", row.ok()}};
          text += rec.dump() + "\n";
        }
        emit(text, out_path);
      } else {
        emit(rhsim::table2_text(result), out_path);
      }
      return result.ok() ? 0 : 1;
    }

    if (*cmd_expr) {
      rhsim::ScenarioSpec spec = rhsim::parse_config(slurp(config_path));
      if (have_seed) spec.seed = seed_override;
      rhsim::RunReport report = rhsim::run_one(spec);
      emit(format == "records" ? report.to_record().dump() + "\n" : human_report(report),
           out_path);
      return report.outcome.status == rhsim::AttackStatus::Success ? 0 : 1;
    }

    if (*cmd_sweep) {
      auto base = rhsim::Json::parse(slurp(config_path));
      double start = 0, stop = 0, step = 1;
      if (std::sscanf(sweep_range.c_str(), "%lf:%lf:%lf", &start, &stop, &step) != 3)
        throw rhsim::ConfigError(rhsim::ConfigError::Kind::Syntax, "--range",
                                 "expected start:stop:step");
      auto points = rhsim::run_sweep(base, sweep_param, start, stop, step);
      std::ostringstream os;
      if (format == "records") {
        for (const auto& p : points) {
          rhsim::Json rec = p.report.to_record();
          rec["sweep_param"] = sweep_param;
          rec["sweep_value"] = p.value;
          os << rec.dump() << "\n";
        }
      } else {
        os << std::left << std::setw(14) << "value" << std::setw(22) << "status"
           << "flips\n";
        for (const auto& p : points) {
          std::size_t flips = 0;
          for (const auto& l : p.report.outcome.loops) flips += l.flips.size();
          os << std::left << std::setw(14) << p.value << std::setw(22)
             << rhsim::status_name(p.report.outcome.status) << flips << "\n";
        }
      }
      emit(os.str(), out_path);
      return 0;
    }
  } catch (const rhsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
