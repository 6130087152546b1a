// mpt: find, eval, pack, verify-theory and sweep from the command line.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpt/commands.hpp"
#include "mpt/errors.hpp"

namespace {

struct SourceFlags {
  std::string preset;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_source_flags(CLI::App* app, SourceFlags& f) {
  app->add_option("--preset", f.preset, "Named preset (see `mpt presets`)");
  app->add_option("--config", f.config, "JSON config file, merged over the preset")->check(CLI::ExistingFile);
  app->add_option("--override", f.overrides, "key.path=value, applied last (repeatable)");
  app->add_option("--seed", f.seed, "Seed for weights, shuffling and targets");
  app->add_option("--out", f.out, "Output directory");
}

mpt::RunConfig resolve(const SourceFlags& f) {
  mpt::ConfigSources src;
  src.preset = f.preset;
  src.config_path = f.config;
  src.overrides = f.overrides;
  src.seed = f.seed;
  src.out_dir = f.out;
  auto cfg = mpt::resolve_config(src);
  // --seed also drives the theory study.
  if (f.seed) cfg.theory.seed = *f.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-prize ticket search, evaluation and packing"};
  app.require_subcommand(1);

  SourceFlags find_flags, theory_flags, sweep_flags, eval_flags;
  auto* find = app.add_subcommand("find", "Search scores for a binary subnetwork and save the ticket");
  add_source_flags(find, find_flags);

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on its test split");
  std::string eval_ckpt;
  std::size_t eval_limit = 0;
  eval->add_option("--checkpoint,checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--limit", eval_limit, "Evaluate only the first N test items");
  eval->add_option("--preset", eval_flags.preset, "Take the data section from this preset");
  eval->add_option("--config", eval_flags.config, "Take the data section from this config");
  eval->add_option("--override", eval_flags.overrides, "key.path=value for the data section");

  auto* pack = app.add_subcommand("pack", "Convert a checkpoint to the bit-packed form");
  std::string pack_in, pack_out;
  pack->add_option("--checkpoint,checkpoint", pack_in, "Checkpoint file")->required();
  pack->add_option("--out,output", pack_out, "Packed checkpoint path (default: <checkpoint>.packed.mptk)");

  auto* verify = app.add_subcommand("verify-theory", "Failure-rate study of the existence constructions");
  add_source_flags(verify, theory_flags);

  auto* sweep = app.add_subcommand("sweep", "Run a grid of searches and aggregate over seeds");
  add_source_flags(sweep, sweep_flags);

  auto* presets = app.add_subcommand("presets", "List available presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*find) {
      const auto cfg = resolve(find_flags);
      const auto r = mpt::cmd_find(cfg, std::cout);
      std::cout << "checkpoint " << r.checkpoint.string() << "\nmetrics " << r.metrics_csv.string() << "\n";
    } else if (*eval) {
      std::optional<mpt::DataConfig> data;
      if (!eval_flags.preset.empty() || !eval_flags.config.empty() || !eval_flags.overrides.empty()) {
        data = resolve(eval_flags).data;
      }
      const auto r = mpt::cmd_eval(eval_ckpt, data, eval_limit);
      std::cout << "top1 " << r.top1 << " (" << r.samples << " samples, " << r.mode
                << (r.packed ? ", packed" : "") << ")\n";
    } else if (*pack) {
      if (pack_out.empty()) {
        std::filesystem::path p(pack_in);
        pack_out = (p.parent_path() / (p.stem().string() + ".packed.mptk")).string();
      }
      const auto r = mpt::cmd_pack(pack_in, pack_out);
      std::cout << "packed " << r.mode << " ticket: " << r.input_bytes << " -> " << r.output_bytes << " bytes, "
                << r.output.string() << "\n";
    } else if (*verify) {
      const auto cfg = resolve(theory_flags);
      const auto rows = mpt::cmd_verify_theory(cfg, std::cout);
      bool ok = true;
      for (const auto& r : rows) ok = ok && r.within_delta;
      return ok ? 0 : 3;
    } else if (*sweep) {
      const auto cfg = resolve(sweep_flags);
      mpt::cmd_sweep(cfg, std::cout);
    } else if (*presets) {
      for (const auto& name : mpt::list_presets()) std::cout << name << "\n";
    }
  } catch (const mpt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mpt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const mpt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
