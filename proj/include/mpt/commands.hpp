#pragma once
// Entry points behind the mpt subcommands. Each writes its outputs under
// cfg.out_dir and returns what it wrote so tests can drive them directly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mpt/binpack.hpp"
#include "mpt/biprop.hpp"
#include "mpt/checkpoint.hpp"
#include "mpt/config.hpp"
#include "mpt/theory.hpp"

namespace mpt {

struct FindResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path metrics_jsonl;
  std::vector<EpochReport> reports;
  NetworkState net;
  std::string config_hash;
};

// Checks the per-epoch invariants of a finished epoch; throws ContractError on a violation.
void check_epoch_invariants(const NetworkState& net, double prune_percent, std::uint64_t initial_weights_hash);

// Runs the score search, writes <out>/ticket.mptk, <out>/metrics.{csv,jsonl} and <out>/config.json.
// data, when given, is used instead of loading cfg.data.
FindResult cmd_find(const RunConfig& cfg, std::ostream& log, const data::DatasetPair* data = nullptr);

struct EvalResult {
  double top1 = 0.0;
  std::size_t samples = 0;
  bool packed = false;
  std::string mode;
};

double packed_top1(const binpack::PackedNetwork& net, const data::Dataset& d, std::size_t limit = 0,
                   std::size_t batch = 500);

// Evaluates on the test split. data_override replaces the checkpoint's recorded data section;
// limit 0 uses the recorded eval_limit.
EvalResult cmd_eval(const std::filesystem::path& checkpoint, const std::optional<DataConfig>& data_override = {},
                    std::size_t limit = 0);

struct PackResult {
  std::filesystem::path output;
  std::uint64_t input_bytes = 0;
  std::uint64_t output_bytes = 0;
  std::string mode;
};

PackResult cmd_pack(const std::filesystem::path& checkpoint, const std::filesystem::path& output);

// Failure-rate study from cfg.theory, written to <out>/theory.{csv,jsonl}.
std::vector<theory::StudyRow> cmd_verify_theory(const RunConfig& cfg, std::ostream& log);

struct SweepPoint {
  double prune_percent = 0.0;
  int depth = 0;
  double width_multiplier = 1.0;
  std::uint64_t seed = 0;
  double top1 = 0.0;  // final test top-1, or train top-1 when no test split is evaluated
  std::string config_hash;
};

struct SweepRow {
  double prune_percent = 0.0;
  int depth = 0;
  double width_multiplier = 1.0;
  std::int64_t n = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<std::uint64_t> seeds;
};

// Grid points of a sweep; an empty axis takes the base config's value. All axes empty: no points.
std::vector<SweepPoint> sweep_grid(const RunConfig& cfg);
// Config for one grid point (own seed and own output directory).
RunConfig sweep_point_config(const RunConfig& cfg, const SweepPoint& p);
// Groups by (P, depth, width) over seeds. Output is sorted, so it does not depend on input order.
std::vector<SweepRow> aggregate_sweep(std::vector<SweepPoint> points);

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<SweepRow> rows;
};

// Runs every grid point and writes <out>/sweep_points.{csv,jsonl} and <out>/sweep.{csv,jsonl}.
SweepResult cmd_sweep(const RunConfig& cfg, std::ostream& log);

}  // namespace mpt
