#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tvrl/data/synthetic.hpp"
#include "tvrl/trajectory.hpp"

namespace tvrl::cli {

/// One CLI invocation: command, optional config file, dotted-key overrides
/// and the output directory. Every run writes a resolved-config snapshot into
/// output_dir before doing any work, and a MANIFEST of artifact hashes after.
struct RunSpec {
  std::string command;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string output_dir;
};

namespace detail {

inline void apply_override(nlohmann::json& cfg, const std::string& key,
                           const std::string& value) {
  nlohmann::json* node = &cfg;
  size_t pos = 0;
  while (true) {
    size_t dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw config_error("override: empty key segment in " + key);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

inline nlohmann::json default_config(const std::string& command) {
  nlohmann::json cfg;
  cfg["command"] = command;
  cfg["seed"] = 0;
  if (command == "generate-data") {
    cfg["kind"] = "longitudinal";
    cfg["n"] = 100;
    cfg["generator"] = nlohmann::json::object();
  } else if (command == "pretrain") {
    cfg["data"] = "";
    cfg["pretrain"] = PretrainConfig{};
  } else if (command == "probe") {
    cfg["data"] = "";
    cfg["checkpoint"] = "";
    cfg["probe"] = ProbeConfig{};
    cfg["seed_count"] = 0;  // when > 0, seeds = seed .. seed+count-1
  } else if (command == "evaluate") {
    cfg["data"] = "";
    cfg["checkpoints"] = nlohmann::json::array();
    cfg["tasks"] = nlohmann::json::array();      // empty: all manifest tasks
    cfg["fractions"] = {0.01, 1.0};
    cfg["probe"] = ProbeConfig{};
    cfg["seed_count"] = 0;
  } else if (command == "viz-trajectory") {
    cfg["data"] = "";
    cfg["checkpoint"] = "";
    cfg["sequence"] = "";
  } else {
    throw config_error("unknown command: " + command);
  }
  return cfg;
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

inline uint64_t hash_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw io_error("cannot hash " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  return fnv1a64(bytes.data(), bytes.size());
}

/// MANIFEST.json: every artifact under the output dir with size and hash,
/// sorted by path for reproducibility.
inline void write_manifest(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out_dir))
    if (e.is_regular_file() && e.path().filename() != "MANIFEST.json")
      files.push_back(fs::relative(e.path(), out_dir));
  std::sort(files.begin(), files.end());
  nlohmann::json manifest;
  manifest["files"] = nlohmann::json::array();
  for (const auto& rel : files) {
    manifest["files"].push_back({{"path", rel.generic_string()},
                                 {"bytes", fs::file_size(out_dir / rel)},
                                 {"fnv64", hash_file(out_dir / rel)}});
  }
  std::ofstream f(out_dir / "MANIFEST.json");
  f << manifest.dump(2) << "\n";
}

inline std::vector<uint64_t> resolve_seeds(const nlohmann::json& cfg,
                                           const ProbeConfig& probe) {
  int count = cfg.value("seed_count", 0);
  if (count > 0) {
    std::vector<uint64_t> seeds;
    uint64_t base = cfg.value("seed", uint64_t{0});
    for (int i = 0; i < count; ++i) seeds.push_back(base + i);
    return seeds;
  }
  return probe.seeds;
}

// -- command bodies ---------------------------------------------------------

inline void run_generate(const nlohmann::json& cfg, const std::filesystem::path& out) {
  std::string kind = cfg.at("kind").get<std::string>();
  int n = cfg.at("n").get<int>();
  uint64_t seed = cfg.at("seed").get<uint64_t>();
  DatasetManifest m;
  if (kind == "cardiac") {
    CardiacSynthConfig gc = cfg.value("generator", nlohmann::json::object());
    m = generate_cardiac_synthetic(n, gc, seed);
  } else if (kind == "longitudinal") {
    LongitudinalSynthConfig gc = cfg.value("generator", nlohmann::json::object());
    m = generate_longitudinal_synthetic(n, gc, seed);
  } else {
    throw config_error("generate-data: kind must be cardiac or longitudinal");
  }
  save_dataset(m, out.string());
  std::cout << "generated " << m.records.size() << " sequences (" << kind
            << ", unit " << m.unit << ") under " << out << "\n";
}

inline void run_pretrain(const nlohmann::json& cfg, const std::filesystem::path& out) {
  std::string data_dir = cfg.at("data").get<std::string>();
  if (data_dir.empty()) throw config_error("pretrain: --data is required");
  DatasetManifest data = load_dataset(data_dir);
  data.validate();
  PretrainConfig pc = cfg.at("pretrain").get<PretrainConfig>();
  pc.seed = cfg.at("seed").get<uint64_t>();
  pc.validate();
  std::string ckpt = pretrain<float>(pc, data, out.string());
  std::cout << "pretrained " << to_string(pc.strategy) << " for " << pc.epochs
            << " epochs; checkpoint at " << ckpt << "\n";
}

inline void run_probe_cmd(const nlohmann::json& cfg, const std::filesystem::path& out) {
  std::string data_dir = cfg.at("data").get<std::string>();
  std::string ckpt = cfg.at("checkpoint").get<std::string>();
  if (data_dir.empty() || ckpt.empty())
    throw config_error("probe: --data and --checkpoint are required");
  DatasetManifest data = load_dataset(data_dir);
  auto loaded = load_checkpoint<float>(ckpt);
  ProbeConfig pc = cfg.at("probe").get<ProbeConfig>();
  pc.seeds = resolve_seeds(cfg, pc);
  pc.validate();
  BenchmarkEntry entry = run_probe(*loaded.model, data, pc, loaded.meta.strategy);
  BenchmarkReport report;
  report.entries.push_back(entry);
  nlohmann::json j = report;
  std::ofstream f(out / "probe_report.json");
  f << j.dump(2) << "\n";
  std::cout << format_table(report);
}

inline void run_evaluate(const nlohmann::json& cfg, const std::filesystem::path& out) {
  std::string data_dir = cfg.at("data").get<std::string>();
  if (data_dir.empty()) throw config_error("evaluate: --data is required");
  auto ckpts = cfg.at("checkpoints").get<std::vector<std::string>>();
  if (ckpts.empty()) throw config_error("evaluate: at least one --checkpoint");
  DatasetManifest data = load_dataset(data_dir);
  std::vector<std::string> tasks = cfg.at("tasks").get<std::vector<std::string>>();
  if (tasks.empty())
    for (const auto& t : data.tasks) tasks.push_back(t.name);
  auto fractions = cfg.at("fractions").get<std::vector<double>>();
  ProbeConfig pc = cfg.at("probe").get<ProbeConfig>();
  pc.seeds = resolve_seeds(cfg, pc);

  BenchmarkReport report;
  for (const auto& ckpt : ckpts) {
    auto loaded = load_checkpoint<float>(ckpt);
    for (const auto& task : tasks)
      for (double frac : fractions) {
        ProbeConfig one = pc;
        one.task = task;
        one.fraction = frac;
        one.validate();
        report.entries.push_back(
            run_probe(*loaded.model, data, one, loaded.meta.strategy));
      }
  }
  nlohmann::json j = report;
  std::ofstream f(out / "benchmark_report.json");
  f << j.dump(2) << "\n";
  std::string table = format_table(report);
  std::ofstream tf(out / "benchmark_report.txt");
  tf << table;
  std::cout << table;
}

inline void run_viz(const nlohmann::json& cfg, const std::filesystem::path& out) {
  std::string data_dir = cfg.at("data").get<std::string>();
  std::string ckpt = cfg.at("checkpoint").get<std::string>();
  if (data_dir.empty() || ckpt.empty())
    throw config_error("viz-trajectory: --data and --checkpoint are required");
  DatasetManifest data = load_dataset(data_dir);
  auto loaded = load_checkpoint<float>(ckpt);
  std::string wanted = cfg.value("sequence", std::string{});
  const SequenceRecord* rec = nullptr;
  for (const auto& r : data.records) {
    if (!wanted.empty() && r.sequence_id == wanted) rec = &r;
    if (wanted.empty() && r.split == Split::kTest && r.length() >= 3 && !rec)
      rec = &r;
  }
  if (!rec)
    throw config_error(wanted.empty() ? "viz-trajectory: no usable test sequence"
                                      : "viz-trajectory: sequence not found: " + wanted);
  auto res = export_trajectory(*loaded.model, *rec, (out / "trajectory.csv").string(),
                               (out / "trajectory.png").string());
  if (res.degenerate)
    std::cout << "warning: degenerate latent covariance; coordinates are zeros\n";
  std::cout << "sequence " << rec->sequence_id << ": " << rec->length()
            << " frames, top-2 variance share "
            << static_cast<int>(100.0 * res.variance_share + 0.5) << "%\n";
}

}  // namespace detail

/// Execute one run. Returns the process exit code (0 success; 2 usage error;
/// 3 invalid configuration; 1 runtime failure).
inline int run(const RunSpec& spec) {
  namespace fs = std::filesystem;
  try {
    nlohmann::json cfg;
    try {
      cfg = detail::default_config(spec.command);
    } catch (const config_error& e) {
      std::cerr << "usage error: " << e.what() << "\n";
      return 2;
    }
    if (!spec.config_path.empty()) {
      std::ifstream f(spec.config_path);
      if (!f) throw config_error("cannot open config file: " + spec.config_path);
      nlohmann::json file_cfg = nlohmann::json::parse(f, nullptr, true, true);
      file_cfg.erase("command");  // the CLI subcommand wins
      detail::merge_into(cfg, file_cfg);
    }
    for (const auto& [k, v] : spec.overrides) detail::apply_override(cfg, k, v);

    fs::path out = spec.output_dir;
    if (out.empty()) {
      const char* root = std::getenv("TVRL_OUT_ROOT");
      out = fs::path(root ? root : "runs") / spec.command;
    }
    fs::create_directories(out);
    {
      std::ofstream snap(out / "resolved_config.json");
      if (!snap) throw io_error("cannot write resolved_config.json under " + out.string());
      snap << cfg.dump(2) << "\n";
    }

    if (spec.command == "generate-data")
      detail::run_generate(cfg, out);
    else if (spec.command == "pretrain")
      detail::run_pretrain(cfg, out);
    else if (spec.command == "probe")
      detail::run_probe_cmd(cfg, out);
    else if (spec.command == "evaluate")
      detail::run_evaluate(cfg, out);
    else if (spec.command == "viz-trajectory")
      detail::run_viz(cfg, out);

    detail::write_manifest(out);
    return 0;
  } catch (const config_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tvrl::cli
