#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mil/baselines.hpp"
#include "mil/errors.hpp"
#include "mil/runner.hpp"
#include "mil/serialize.hpp"

namespace fs = std::filesystem;
using namespace mil;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string resolve_manifest(const std::string& data_arg) {
  fs::path p(data_arg);
  if (fs::is_directory(p)) p /= "manifest.json";
  return p.string();
}

std::uint64_t env_seed_fallback(std::uint64_t seed, bool seed_given) {
  if (seed_given) return seed;
  if (const char* env = std::getenv("MIL_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return seed;
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir,
                 bool force, std::uint64_t seed, bool seed_given) {
  BenchmarkSpec spec = desk_default_benchmark();
  if (!spec_path.empty()) spec = benchmark_spec_from_json_file(spec_path);
  if (seed_given) spec.seed = seed;
  std::string manifest = generate_benchmark(spec, out_dir, force);
  std::cout << manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_arg,
              const std::string& method_id, const std::string& phase_order,
              const std::string& out_dir, std::uint64_t seed, bool seed_given,
              int epochs_override) {
  ModelConfig cfg =
      config_path.empty() ? ModelConfig{} : config_from_json_file(config_path);
  cfg.seed = env_seed_fallback(seed_given ? seed : cfg.seed, seed_given);
  if (epochs_override > 0) cfg.epochs = epochs_override;
  validate(cfg);
  Method method = parse_method(method_id);
  Dataset ds = load_manifest(resolve_manifest(data_arg));
  std::vector<int> order = resolve_phase_order(ds, split_csv(phase_order));
  RunResult rr = run_experiment(ds, order, cfg, method, out_dir);
  std::cout << report_to_markdown(rr.report);
  if (!out_dir.empty()) {
    std::cout << "outputs written to " << out_dir << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_arg) {
  ModelState model = load_checkpoint(checkpoint);
  Dataset ds = load_manifest(resolve_manifest(data_arg));
  std::cout.setf(std::ios::fixed);
  std::cout.precision(2);
  std::vector<const ModalityData*> mods;
  for (const auto& mod : ds.modalities) {
    std::cout << mod.name << ": " << eval_accuracy(model, mod, mod.test)
              << "\n";
    mods.push_back(&mod);
  }
  if (has_paired_test_set(ds)) {
    std::cout << "a_multi: "
              << late_fusion_accuracy(model, mods,
                                      model.config.fuse_probabilities)
              << "\n";
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_md, const std::string& out_csv,
               bool curves) {
  std::ostringstream md, csv;
  md.setf(std::ios::fixed);
  md.precision(2);
  csv.setf(std::ios::fixed);
  csv.precision(2);
  md << "| method |";
  csv << "method";
  bool header_done = false;

  struct Row {
    EvalReport report;
    std::string dir;
  };
  std::vector<Row> rows;
  for (const auto& dir : run_dirs) {
    fs::path rp = fs::path(dir) / "reports" / "eval_report.json";
    EvalReport r;
    try {
      r = report_from_json_file(rp.string());
    } catch (const std::exception& e) {
      throw DataError("run " + dir + ": " + e.what());
    }
    // self-consistency gate: recomputed AA must match stored AA
    for (int m = 1; m <= r.s.phases; ++m) {
      if (std::abs(average_accuracy(r.s, m) - r.aa[m - 1]) > 1e-6) {
        throw DataError("run " + dir + ": stored AA disagrees with S-matrix");
      }
    }
    rows.push_back({std::move(r), dir});
  }
  if (rows.empty()) throw DataError("no run directories given");

  const int t = rows.front().report.s.phases;
  for (int m = 1; m <= t; ++m) {
    for (int n = 1; n <= m; ++n) {
      md << " S_" << m << "," << n << " |";
      csv << ",S_" << m << "_" << n;
    }
  }
  md << " AA_" << t << " | A_multi |\n|---|";
  for (int m = 1; m <= t; ++m)
    for (int n = 1; n <= m; ++n) md << "---|";
  md << "---|---|\n";
  csv << ",AA_" << t << ",A_multi\n";
  header_done = true;
  (void)header_done;

  for (const auto& row : rows) {
    const auto& r = row.report;
    if (r.s.phases != t) {
      throw DataError("run " + row.dir + ": phase count differs");
    }
    md << "| " << r.method << " |";
    csv << r.method;
    for (int m = 1; m <= t; ++m) {
      for (int n = 1; n <= m; ++n) {
        md << " " << r.s.entry(m, n) << " |";
        csv << "," << r.s.entry(m, n);
      }
    }
    md << " " << r.aa[t - 1] << " | " << r.a_multi << " |\n";
    csv << "," << r.aa[t - 1] << "," << r.a_multi << "\n";
  }

  std::cout << md.str();
  auto write_out = [](const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
  };
  write_out(out_md, md.str());
  write_out(out_csv, csv.str());

  if (curves) {
    for (const auto& row : rows) {
      for (int phase = 1;; ++phase) {
        fs::path tp = fs::path(row.dir) / "reports" /
                      ("train_phase_" + std::to_string(phase) + ".json");
        if (!fs::exists(tp)) break;
        std::ifstream in(tp);
        nlohmann::json j;
        in >> j;
        fs::path out_path = fs::path(row.dir) / "tables" /
                            ("curves_phase_" + std::to_string(phase) + ".csv");
        std::ofstream out(out_path);
        out << "epoch,cls,align,penalty,total,val_acc\n";
        int e = 0;
        for (const auto& je : j.at("epochs")) {
          out << ++e << "," << je.at("cls").get<double>() << ","
              << je.at("align").get<double>() << ","
              << je.at("penalty").get<double>() << ","
              << je.at("total").get<double>() << ","
              << je.at("val_acc").get<double>() << "\n";
        }
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-incremental learning experiments"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_arg, method_id = "harmony";
  std::string phase_order, checkpoint, out_md, out_csv;
  std::vector<std::string> run_dirs;
  std::uint64_t seed = 0;
  bool force = false, curves = false;
  int epochs_override = 0;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic benchmark");
  gen->add_option("--spec", spec_path, "Benchmark spec JSON");
  gen->add_option("--out", out_dir, "Output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "Generation seed");
  gen->add_flag("--force", force, "Overwrite an existing benchmark");

  auto* train = app.add_subcommand("train", "Run a phase-sequential experiment");
  train->add_option("--config", config_path, "Model config JSON");
  train->add_option("--data", data_arg, "Dataset dir or manifest")->required();
  train->add_option("--method", method_id, "Method id");
  train->add_option("--phase-order", phase_order,
                    "Comma-separated modality names/ids");
  train->add_option("--out", out_dir, "Run output directory");
  auto* train_seed = train->add_option("--seed", seed, "Experiment seed");
  train->add_option("--epochs", epochs_override, "Override epochs");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint base path (no .bin)")
      ->required();
  ev->add_option("--data", data_arg, "Dataset dir or manifest")->required();

  auto* rep = app.add_subcommand("report", "Aggregate run reports");
  rep->add_option("runs", run_dirs, "Run directories")->required();
  rep->add_option("--out-md", out_md, "Write markdown table here");
  rep->add_option("--out-csv", out_csv, "Write CSV table here");
  rep->add_flag("--curves", curves, "Emit per-epoch loss-curve CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(spec_path, out_dir, force, seed,
                          gen_seed->count() > 0);
    }
    if (train->parsed()) {
      return cmd_train(config_path, data_arg, method_id, phase_order, out_dir,
                       seed, train_seed->count() > 0, epochs_override);
    }
    if (ev->parsed()) return cmd_eval(checkpoint, data_arg);
    if (rep->parsed()) return cmd_report(run_dirs, out_md, out_csv, curves);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
