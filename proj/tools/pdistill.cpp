#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pdistill/errors.hpp"
#include "pdistill/harness.hpp"
#include "pdistill/mdp.hpp"
#include "pdistill/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdistill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitConfig = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int parallelism = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file");
  cmd->add_option("--set", o.overrides, "Override a config entry, e.g. --set teacher.temperature=1")
      ->take_all();
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--out-dir", o.out_dir, "Directory for outputs");
  cmd->add_option("--parallelism", o.parallelism, "Worker threads")->check(CLI::PositiveNumber);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Loads the config document and applies overrides. Nothing is written to
// disk before this succeeds.
json load_document(const CommonOptions& o, const json& defaults = json::object()) {
  json doc = defaults;
  if (!o.config_path.empty()) {
    json file;
    try {
      file = json::parse(read_file(o.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError(o.config_path + ": top level must be an object");
    doc.merge_patch(file);
  }
  for (const auto& s : o.overrides) apply_override(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  return doc;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

int cmd_gen(const CommonOptions& o, std::optional<int> width, std::optional<int> height) {
  json doc = load_document(o, {{"methods", {"teacher_distill"}}});
  if (width) doc["world"]["width"] = *width;
  if (height) doc["world"]["height"] = *height;
  const ExperimentConfig config = parse_config(doc);
  if (config.world.kind != WorldKind::Random) throw ConfigError("gen needs world.kind = random");
  // The master seed is the world seed here, so `gen --seed 7` names world 7.
  const GridWorld world =
      generate_random_mdp(config.seed, config.world.gen, config.world.width,
                          config.world.height, config.world.eta, config.world.p_term,
                          config.observation);
  const fs::path dir(o.out_dir);
  const std::string stem = "mdp_" + std::to_string(config.seed);
  write_json(dir / (stem + ".json"), to_json(world));
  write_text(dir / (stem + ".txt"), to_ascii(world));
  std::cout << to_ascii(world);
  return kExitOk;
}

int cmd_train_teacher(const CommonOptions& o, int world_index) {
  const json doc = load_document(o, {{"methods", {"teacher_distill"}}});
  const ExperimentConfig config = parse_config(doc);
  if (world_index < 0 || world_index >= config.world.count)
    throw ConfigError("--world-index out of range");
  const WorldInstance world = make_world(config, world_index);
  const PreparedTeacher teacher = prepare_teacher(config, world);
  const fs::path path =
      fs::path(o.out_dir) / ("teacher_" + std::to_string(world.mdp_seed) + ".json");
  write_json(path, teacher.bundle.to_json());
  const json summary = {{"mdp_seed", world.mdp_seed},
                        {"return_mean", teacher.return_mean},
                        {"return_sem", teacher.return_sem},
                        {"clean_return_mean", teacher.clean_return_mean},
                        {"corrupted_keys", teacher.corrupted_keys},
                        {"visited_keys", teacher.visited_keys},
                        {"path", path.string()}};
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_distill(const CommonOptions& o, std::string method, int world_index,
                std::uint64_t run_seed) {
  json defaults = json::object();
  if (!method.empty()) defaults["methods"] = {method};
  json doc = load_document(o, defaults);
  if (!method.empty()) doc["methods"] = {method};
  const ExperimentConfig config = parse_config(doc);
  if (method.empty()) method = config.methods.front();
  if (world_index < 0 || world_index >= config.world.count)
    throw ConfigError("--world-index out of range");

  const WorldInstance world = make_world(config, world_index);
  const PreparedTeacher teacher = prepare_teacher(config, world);
  const RunRecord record = run_single(config, world, teacher, method, run_seed);
  if (record.error) {
    std::cerr << "run failed: " << *record.error << "\n";
    return kExitRunFailure;
  }
  const fs::path path = fs::path(o.out_dir) / (std::to_string(world.mdp_seed) + "_" + method +
                                               "_" + std::to_string(run_seed) + ".csv");
  write_text(path, format_csv(record.rows));
  const EvalRow& last = record.rows.back();
  std::printf("%s mdp %llu step %ld: return %.4f (teacher %.4f), xent under student %.4f\n",
              method.c_str(), static_cast<unsigned long long>(world.mdp_seed), last.step,
              last.ret_student, last.ret_teacher_ref, last.xent_student);
  return kExitOk;
}

int cmd_sweep(const CommonOptions& o) {
  const ExperimentConfig config = parse_config(load_document(o));
  const SweepResult result = run_sweep(config, o.parallelism);
  write_sweep_outputs(o.out_dir, config, result);
  const std::size_t failures = result.failures();
  std::printf("%zu runs, %zu failed; outputs in %s\n", result.runs.size(), failures,
              o.out_dir.c_str());
  return failures == 0 ? kExitOk : kExitRunFailure;
}

int cmd_verify(const CommonOptions& o, int random_thetas) {
  VerifyOptions options;
  if (o.seed) options.seed = *o.seed;
  options.random_thetas = random_thetas;
  const json report = verify_report(options);
  write_json(fs::path(o.out_dir) / "verify.json", report);
  std::cout << report.dump(2) << "\n";
  return report.at("pass").get<bool>() ? kExitOk : kExitRunFailure;
}

int cmd_report(const CommonOptions& o, const std::vector<std::string>& csv_paths) {
  std::vector<EvalRow> rows;
  for (const auto& p : csv_paths) {
    auto part = parse_csv(read_file(p));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const json summary = summarize(rows);
  write_json(fs::path(o.out_dir) / "report.json", summary);
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular policy distillation workbench"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* gen = app.add_subcommand("gen", "Generate a random grid world (JSON and ASCII)");
  add_common(gen, common);
  std::optional<int> width, height;
  gen->add_option("--width", width, "Grid width");
  gen->add_option("--height", height, "Grid height");

  auto* teacher = app.add_subcommand("train-teacher", "Train and save the teacher of one world");
  add_common(teacher, common);
  int world_index = 0;
  teacher->add_option("--world-index", world_index, "Index of the world within the config");

  auto* distill = app.add_subcommand("distill", "Run a single distillation");
  add_common(distill, common);
  std::string method;
  std::uint64_t run_seed = 0;
  distill->add_option("--method", method, "Preset name (defaults to the first config method)");
  distill->add_option("--world-index", world_index, "Index of the world within the config");
  distill->add_option("--run-seed", run_seed, "Run seed");

  auto* sweep = app.add_subcommand("sweep", "Run every (world, method, seed) of a config");
  add_common(sweep, common);

  auto* verify = app.add_subcommand("verify", "Exact-dynamics checks on small worlds");
  add_common(verify, common);
  int random_thetas = 10;
  verify->add_option("--random-thetas", random_thetas, "Random parameter draws per check")
      ->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Summarize harness CSV files");
  add_common(report, common);
  std::vector<std::string> csv_paths;
  report->add_option("csv", csv_paths, "CSV files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen(common, width, height);
    if (*teacher) return cmd_train_teacher(common, world_index);
    if (*distill) return cmd_distill(common, method, world_index, run_seed);
    if (*sweep) return cmd_sweep(common);
    if (*verify) return cmd_verify(common, random_thetas);
    if (*report) return cmd_report(common, csv_paths);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidParams& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailure;
  }
  return kExitConfig;
}
