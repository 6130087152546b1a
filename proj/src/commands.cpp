#include "mpt/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "mpt/errors.hpp"
#include "mpt/metrics.hpp"

namespace mpt {

namespace {

OrderedJson epoch_row(const EpochReport& r, const NetworkState& net) {
  OrderedJson row;
  row["epoch"] = r.epoch;
  row["lr"] = r.lr;
  row["train_loss"] = r.train_loss;
  row["train_top1"] = r.train_top1;
  row["test_top1"] = r.test_top1 < 0.0 ? OrderedJson() : OrderedJson(r.test_top1);
  row["ticket_params"] = net.ticket_params();
  row["grad_warnings"] = r.grad_warnings;
  row["alpha"] = r.alpha;
  row["sparsity"] = r.sparsity;
  row["zeros"] = r.zeros;
  row["binarization_error"] = r.binarization_error;
  return row;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

void check_epoch_invariants(const NetworkState& net, double prune_percent, std::uint64_t initial_weights_hash) {
  if (weights_hash(net) != initial_weights_hash) throw ContractError("weights changed during the search");
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const auto& l = net.blocks[i].layer;
    const auto zeros = l.count() - l.nonzero();
    const auto expect = l.prunable ? pruned_count(l.count(), prune_percent) : 0;
    if (zeros != expect) {
      throw ContractError("layer " + std::to_string(i) + " has " + std::to_string(zeros) + " zeros, expected " +
                          std::to_string(expect));
    }
    const float alpha = recompute_gain(l.mask.data(), l.weights.data());
    if (std::abs(alpha - l.alpha) > 1e-6f * std::max(1.0f, std::abs(alpha))) {
      throw ContractError("layer " + std::to_string(i) + " gain " + std::to_string(l.alpha) + " differs from " +
                          std::to_string(alpha));
    }
  }
}

FindResult cmd_find(const RunConfig& cfg, std::ostream& log, const data::DatasetPair* data) {
  if (!cfg.buildable()) {
    throw ConfigError("config '" + cfg.name + "' describes a reference-only architecture or dataset (" + cfg.arch +
                      ", " + cfg.data.dataset + ")");
  }
  data::DatasetPair owned;
  if (!data) {
    owned = load_data(cfg.data, cfg.train.seed);
    data = &owned;
  }
  const std::filesystem::path out = cfg.out_dir;
  std::filesystem::create_directories(out);
  write_text(out / "config.json", cfg.doc.dump(2) + "\n");

  FindResult res;
  res.config_hash = hex64(cfg.hash());
  NetworkSpec spec = cfg.network;
  spec.bn_policy = cfg.train.bn_policy;
  res.net = build_network(spec, cfg.train.seed);
  res.net.spline_t = cfg.spline_t;
  const auto w0 = weights_hash(res.net);

  MetricsWriter metrics(out, "metrics");
  const data::Dataset* test = cfg.train.evaluate && data->test.size() ? &data->test : nullptr;
  log << "find " << (cfg.name.empty() ? "<unnamed>" : cfg.name) << ": " << to_string(spec.activation) << ", "
      << res.net.param_count() << " weights, P=" << cfg.train.prune_percent << "%, " << cfg.train.epochs
      << " epochs, config " << res.config_hash << "\n";
  res.reports = run_biprop(res.net, data->train, test, cfg.train, [&](const NetworkState& net, const EpochReport& r) {
    check_epoch_invariants(net, cfg.train.prune_percent, w0);
    metrics.write(res.config_hash, cfg.train.seed, epoch_row(r, net));
    log << "  epoch " << r.epoch << "/" << cfg.train.epochs << " lr " << fmt(r.lr, 5) << " loss "
        << fmt(r.train_loss, 4) << " train " << fmt(r.train_top1) << "%";
    if (r.test_top1 >= 0.0) log << " test " << fmt(r.test_top1) << "%";
    log << " (" << fmt(r.seconds, 1) << " s)\n";
    log.flush();
  });

  Json final_metrics = Json::object();
  if (!res.reports.empty()) {
    const auto& r = res.reports.back();
    final_metrics["train_loss"] = r.train_loss;
    final_metrics["train_top1"] = r.train_top1;
    if (r.test_top1 >= 0.0) final_metrics["test_top1"] = r.test_top1;
  }
  const int epoch = res.reports.empty() ? 0 : res.reports.back().epoch;
  res.checkpoint = out / "ticket.mptk";
  save_checkpoint(res.checkpoint, res.net, checkpoint_meta(cfg, res.net, epoch, final_metrics));
  res.metrics_csv = metrics.csv_path();
  res.metrics_jsonl = metrics.jsonl_path();
  return res;
}

double packed_top1(const binpack::PackedNetwork& net, const data::Dataset& d, std::size_t limit, std::size_t batch) {
  const std::size_t n = limit ? std::min(limit, d.size()) : d.size();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  Tensor x;
  std::vector<int> y;
  std::vector<std::int64_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = static_cast<std::int64_t>(i);
    d.gather(idx, x, y);
    const Tensor logits = packed_forward(net, x);
    const auto c = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.ptr() + static_cast<std::int64_t>(i) * c;
      if (std::max_element(row, row + c) - row == y[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

EvalResult cmd_eval(const std::filesystem::path& checkpoint, const std::optional<DataConfig>& data_override,
                    std::size_t limit) {
  const auto ck = load_checkpoint(checkpoint);
  const RunConfig recorded = make_run_config(ck.meta.at("config"));
  const DataConfig dc = data_override.value_or(recorded.data);
  const auto data = load_data(dc, recorded.train.seed);
  EvalResult r;
  r.mode = ck.meta.value("mode", "");
  r.packed = ck.kind == CheckpointKind::Packed;
  const std::size_t lim = limit ? limit : recorded.train.eval_limit;
  r.samples = lim ? std::min(lim, data.test.size()) : data.test.size();
  r.top1 = r.packed ? packed_top1(*ck.packed, data.test, lim) : top1(ck.net, data.test, lim);
  return r;
}

PackResult cmd_pack(const std::filesystem::path& checkpoint, const std::filesystem::path& output) {
  const auto ck = load_checkpoint(checkpoint);
  if (ck.kind == CheckpointKind::Packed) throw ContractError(checkpoint.string() + " is already packed");
  save_packed_checkpoint(output, ck.net, ck.meta);
  PackResult r;
  r.output = output;
  r.input_bytes = std::filesystem::file_size(checkpoint);
  r.output_bytes = std::filesystem::file_size(output);
  r.mode = to_string(ck.net.spec.activation);
  return r;
}

std::vector<theory::StudyRow> cmd_verify_theory(const RunConfig& cfg, std::ostream& log) {
  const auto& p = cfg.theory;
  log << "verify-theory " << theory::to_string(p.family) << ": eps " << p.eps << ", delta " << p.delta << ", s "
      << p.s << ", " << p.trials << " trials per multiplier\n";
  auto rows = theory::failure_rate_study(p);
  MetricsWriter out(cfg.out_dir, "theory");
  const auto hash = hex64(cfg.hash());
  for (const auto& r : rows) {
    OrderedJson row;
    row["family"] = theory::to_string(p.family);
    row["eps"] = p.eps;
    row["delta"] = r.delta;
    row["s"] = p.s;
    row["multiplier"] = r.multiplier;
    row["k"] = r.k;
    row["trials"] = r.trials;
    row["failures"] = r.failures;
    row["rate"] = r.rate;
    row["ci_low"] = r.ci_low;
    row["ci_high"] = r.ci_high;
    row["within_delta"] = r.within_delta;
    row["max_error"] = r.max_error;
    row["mean_sparsity"] = r.mean_sparsity;
    out.write(hash, p.seed, row);
    log << "  m=" << r.multiplier << " k=" << r.k << " failures " << r.failures << "/" << r.trials << " rate "
        << fmt(r.rate, 4) << " CI [" << fmt(r.ci_low, 4) << ", " << fmt(r.ci_high, 4) << "]"
        << (r.multiplier >= 1.0 ? (r.within_delta ? " <= delta" : " > delta") : "") << "\n";
  }
  return rows;
}

std::vector<SweepPoint> sweep_grid(const RunConfig& cfg) {
  const auto& s = cfg.sweep;
  std::vector<SweepPoint> pts;
  if (s.prune_percent.empty() && s.depth.empty() && s.width_multiplier.empty() && s.seeds.empty()) return pts;
  const auto& nd = cfg.doc.at("network");
  int base_depth = static_cast<int>(cfg.network.hidden.size());
  if (!nd.at("depth").is_null()) base_depth = nd.at("depth").get<int>();
  const auto ps = s.prune_percent.empty() ? std::vector<double>{cfg.train.prune_percent} : s.prune_percent;
  const auto ds = s.depth.empty() ? std::vector<int>{base_depth} : s.depth;
  const auto ws = s.width_multiplier.empty() ? std::vector<double>{cfg.network.width_multiplier} : s.width_multiplier;
  const auto ss = s.seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed} : s.seeds;
  for (double p : ps)
    for (int d : ds)
      for (double w : ws)
        for (auto seed : ss) pts.push_back(SweepPoint{p, d, w, seed, 0.0, ""});
  return pts;
}

RunConfig sweep_point_config(const RunConfig& cfg, const SweepPoint& p) {
  Json doc = cfg.doc;
  doc["train"]["prune_percent"] = p.prune_percent;
  doc["train"]["seed"] = p.seed;
  doc["network"]["depth"] = p.depth;
  doc["network"]["width_multiplier"] = p.width_multiplier;
  for (const char* axis : {"prune_percent", "depth", "width_multiplier", "seeds"}) doc["sweep"][axis] = Json::array();
  std::ostringstream dir;
  dir << "p" << p.prune_percent << "_d" << p.depth << "_w" << p.width_multiplier << "_s" << p.seed;
  doc["out_dir"] = (std::filesystem::path(cfg.out_dir) / "points" / dir.str()).string();
  return make_run_config(doc);
}

std::vector<SweepRow> aggregate_sweep(std::vector<SweepPoint> points) {
  std::sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return std::tie(a.prune_percent, a.depth, a.width_multiplier, a.seed) <
           std::tie(b.prune_percent, b.depth, b.width_multiplier, b.seed);
  });
  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    if (rows.empty() || rows.back().prune_percent != p.prune_percent || rows.back().depth != p.depth ||
        rows.back().width_multiplier != p.width_multiplier) {
      rows.push_back(SweepRow{p.prune_percent, p.depth, p.width_multiplier, 0, 0.0, p.top1, p.top1, {}});
    }
    auto& r = rows.back();
    ++r.n;
    r.mean += p.top1;
    r.min = std::min(r.min, p.top1);
    r.max = std::max(r.max, p.top1);
    r.seeds.push_back(p.seed);
  }
  for (auto& r : rows) r.mean /= static_cast<double>(r.n);
  return rows;
}

SweepResult cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  SweepResult res;
  res.points = sweep_grid(cfg);
  log << "sweep: " << res.points.size() << " grid points\n";
  MetricsWriter point_out(cfg.out_dir, "sweep_points");
  std::optional<data::DatasetPair> shared;
  if (!res.points.empty() && cfg.data.dataset != "two-moons") shared = load_data(cfg.data, cfg.train.seed);
  for (auto& p : res.points) {
    const RunConfig pc = sweep_point_config(cfg, p);
    const auto fr = cmd_find(pc, log, shared ? &*shared : nullptr);
    const auto& last = fr.reports.back();
    p.top1 = last.test_top1 >= 0.0 ? last.test_top1 : last.train_top1;
    p.config_hash = fr.config_hash;
    OrderedJson row;
    row["prune_percent"] = p.prune_percent;
    row["depth"] = p.depth;
    row["width_multiplier"] = p.width_multiplier;
    row["top1"] = p.top1;
    row["out_dir"] = pc.out_dir;
    point_out.write(p.config_hash, p.seed, row);
  }
  res.rows = aggregate_sweep(res.points);
  MetricsWriter agg(cfg.out_dir, "sweep");
  const auto hash = hex64(cfg.hash());
  for (const auto& r : res.rows) {
    OrderedJson row;
    row["prune_percent"] = r.prune_percent;
    row["depth"] = r.depth;
    row["width_multiplier"] = r.width_multiplier;
    row["n"] = r.n;
    row["mean_top1"] = r.mean;
    row["min_top1"] = r.min;
    row["max_top1"] = r.max;
    std::string seeds;
    for (auto s : r.seeds) seeds += (seeds.empty() ? "" : " ") + std::to_string(s);
    row["seeds"] = seeds;
    agg.write(hash, cfg.train.seed, row);
    log << "  P=" << r.prune_percent << " depth " << r.depth << " width x" << r.width_multiplier << ": mean "
        << fmt(r.mean) << " min " << fmt(r.min) << " max " << fmt(r.max) << " (n=" << r.n << ")\n";
  }
  return res;
}

}  // namespace mpt
