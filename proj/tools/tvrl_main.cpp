// Command-line entry point: dataset generation, pretraining, linear probing,
// benchmark evaluation and trajectory visualization as reproducible runs.

#include <CLI11.hpp>

#include "tvrl/cli.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--out", args.out,
                  "output directory (default: $TVRL_OUT_ROOT/<command>)");
  cmd->add_option("--set", args.sets, "override as dotted.key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "run seed; all randomness derives from it")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

tvrl::cli::RunSpec to_spec(const std::string& command, const CommonArgs& args,
                           std::vector<std::pair<std::string, std::string>> extra) {
  tvrl::cli::RunSpec spec;
  spec.command = command;
  spec.config_path = args.config;
  spec.output_dir = args.out;
  if (args.seed_given)
    spec.overrides.emplace_back("seed", std::to_string(args.seed));
  for (const auto& s : args.sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "usage error: --set expects key=value, got: " << s << "\n";
      std::exit(2);
    }
    spec.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (auto& kv : extra) spec.overrides.push_back(std::move(kv));
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporally-variant representation learning toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, pre_args, probe_args, eval_args, viz_args;

  auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
  std::string kind = "longitudinal";
  int n = 100;
  gen->add_option("--kind", kind, "cardiac | longitudinal");
  gen->add_option("--n", n, "number of sequences");
  add_common(gen, gen_args);

  auto* pre = app.add_subcommand("pretrain", "pretrain an encoder");
  std::string data, strategy;
  int epochs = -1, batch = -1;
  pre->add_option("--data", data, "dataset directory")->required();
  pre->add_option("--strategy", strategy, "csimclr | csimclr-te | tvrl | multiclip");
  pre->add_option("--epochs", epochs, "override pretrain.epochs");
  pre->add_option("--batch-size", batch, "override pretrain.batch_size");
  add_common(pre, pre_args);

  auto* probe = app.add_subcommand("probe", "linear-probe a frozen checkpoint");
  std::string pdata, ckpt, task, fraction;
  int seed_count = 0;
  probe->add_option("--data", pdata, "dataset directory")->required();
  probe->add_option("--checkpoint", ckpt, "checkpoint base path (without .bin)")
      ->required();
  probe->add_option("--task", task, "task name from the dataset manifest")->required();
  probe->add_option("--fraction", fraction, "label fraction, e.g. 0.01 or 1.0");
  probe->add_option("--seeds", seed_count, "number of probe seeds (seed..seed+n-1)");
  add_common(probe, probe_args);

  auto* ev = app.add_subcommand("evaluate", "multi-checkpoint benchmark report");
  std::vector<std::string> ckpts, tasks;
  std::vector<double> fractions;
  std::string edata;
  int eval_seeds = 0;
  ev->add_option("--data", edata, "dataset directory")->required();
  ev->add_option("--checkpoint", ckpts, "checkpoint base path (repeatable)")
      ->required();
  ev->add_option("--task", tasks, "task names (default: all in the manifest)");
  ev->add_option("--fraction", fractions, "label fractions (default 0.01 1.0)");
  ev->add_option("--seeds", eval_seeds, "number of probe seeds");
  add_common(ev, eval_args);

  auto* viz = app.add_subcommand("viz-trajectory", "export latent trajectory CSV+plot");
  std::string vdata, vckpt, sequence;
  viz->add_option("--data", vdata, "dataset directory")->required();
  viz->add_option("--checkpoint", vckpt, "checkpoint base path")->required();
  viz->add_option("--sequence", sequence, "sequence id (default: first test sequence)");
  add_common(viz, viz_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2
  }

  using KV = std::pair<std::string, std::string>;
  if (gen->parsed()) {
    std::vector<KV> extra = {{"kind", kind}, {"n", std::to_string(n)}};
    return tvrl::cli::run(to_spec("generate-data", gen_args, std::move(extra)));
  }
  if (pre->parsed()) {
    std::vector<KV> extra = {{"data", data}};
    if (!strategy.empty()) extra.emplace_back("pretrain.strategy", strategy);
    if (epochs >= 0) extra.emplace_back("pretrain.epochs", std::to_string(epochs));
    if (batch >= 0) extra.emplace_back("pretrain.batch_size", std::to_string(batch));
    return tvrl::cli::run(to_spec("pretrain", pre_args, std::move(extra)));
  }
  if (probe->parsed()) {
    std::vector<KV> extra = {{"data", pdata}, {"checkpoint", ckpt}, {"probe.task", task}};
    if (!fraction.empty()) extra.emplace_back("probe.fraction", fraction);
    if (seed_count > 0) extra.emplace_back("seed_count", std::to_string(seed_count));
    return tvrl::cli::run(to_spec("probe", probe_args, std::move(extra)));
  }
  if (ev->parsed()) {
    std::vector<KV> extra = {{"data", edata}};
    nlohmann::json jc = ckpts, jt = tasks, jf = fractions;
    extra.emplace_back("checkpoints", jc.dump());
    if (!tasks.empty()) extra.emplace_back("tasks", jt.dump());
    if (!fractions.empty()) extra.emplace_back("fractions", jf.dump());
    if (eval_seeds > 0) extra.emplace_back("seed_count", std::to_string(eval_seeds));
    return tvrl::cli::run(to_spec("evaluate", eval_args, std::move(extra)));
  }
  if (viz->parsed()) {
    std::vector<KV> extra = {{"data", vdata}, {"checkpoint", vckpt}};
    if (!sequence.empty()) extra.emplace_back("sequence", sequence);
    return tvrl::cli::run(to_spec("viz-trajectory", viz_args, std::move(extra)));
  }
  return 2;
}
