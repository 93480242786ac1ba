// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "nve/canonical_json.hpp"
#include "nve/digest.hpp"
#include "nve/dispatch.hpp"
#include "nve/error.hpp"
#include "nve/model.hpp"
#include "nve/pager.hpp"
#include "nve/profile_io.hpp"
#include "nve/profiler.hpp"
#include "nve/recovery.hpp"
#include "nve/spec_json.hpp"
#include "nve/weights.hpp"

namespace nve::cli {

namespace {

constexpr int kReportFormatVersion = 1;

struct ModelArgs {
  std::size_t layers = 8;
  std::size_t hidden = 32;
  std::size_t ffn = 64;
  std::size_t heads = 4;
  std::size_t vocab = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> outlier_layers;
  std::string outlier_slot = "down";
  float outlier_factor = 5.0F;
  std::string weights;
};

struct CalibArgs {
  std::string path;
  std::size_t count = 12;
  std::uint64_t seed = 1;
};

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--layers", m.layers, "number of layers")->capture_default_str();
  app->add_option("--hidden", m.hidden, "hidden width")->capture_default_str();
  app->add_option("--ffn", m.ffn, "FFN width")->capture_default_str();
  app->add_option("--heads", m.heads, "attention heads")->capture_default_str();
  app->add_option("--vocab", m.vocab, "vocabulary size")->capture_default_str();
  app->add_option("--seed", m.seed, "weight seed")->capture_default_str();
  app->add_option("--outlier-layer", m.outlier_layers, "layer(s) to scale")->delimiter(',');
  app->add_option("--outlier-slot", m.outlier_slot, "slot to scale (q k v o gate up down|ffn)")
      ->capture_default_str();
  app->add_option("--outlier-factor", m.outlier_factor, "scale factor")->capture_default_str();
  app->add_option("--weights", m.weights, "NVEW1 weight file (overrides the toy model flags)");
}

void add_calib_options(CLI::App* app, CalibArgs& c) {
  app->add_option("--calib", c.path, "calibration JSON; synthetic prompts when absent");
  app->add_option("--calib-count", c.count, "synthetic prompt count")->capture_default_str();
  app->add_option("--calib-seed", c.seed, "synthetic prompt seed")->capture_default_str();
}

ToyModel make_model(const ModelArgs& m) {
  ToyModel model = [&] {
    if (!m.weights.empty()) {
      WeightFile wf = read_weight_file(m.weights);
      return model_from_container(wf.container, wf.spec);
    }
    return build_toy_model(ModelSpec{m.layers, m.hidden, m.ffn, m.heads, m.vocab, m.seed});
  }();
  if (!m.outlier_layers.empty()) {
    const auto slot = parse_slot(m.outlier_slot);
    if (!slot) throw Error(ErrorCode::kInvalidArgument, "unknown slot '" + m.outlier_slot + "'");
    for (std::size_t l : m.outlier_layers) model = inject_outlier(model, l, *slot, m.outlier_factor);
  }
  return model;
}

CalibrationSet make_calib(const CalibArgs& c, const ModelSpec& spec) {
  CalibrationSet calib = c.path.empty() ? synthetic_calibration(spec.vocab_size, c.count, c.seed)
                                        : load_calibration(c.path);
  calib.validate(spec.vocab_size);
  return calib;
}

ScorerId scorer_from(const std::string& name) {
  const auto s = parse_scorer(name);
  if (!s) throw Error(ErrorCode::kInvalidArgument, "unknown scorer '" + name + "'");
  return *s;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// --- profile ---------------------------------------------------------------

struct ProfileArgs {
  std::string scorer = "combined";
  double tau = kDefaultTau;
  double epsilon = kDefaultEpsilon;
  std::string out;
  bool no_cache = false;
  std::string cache_dir;
};

int cmd_profile(const ModelArgs& ma, const CalibArgs& ca, const ProfileArgs& pa,
                std::ostream& out) {
  const ToyModel model = make_model(ma);
  const CalibrationSet calib = make_calib(ca, model.spec());
  const ScorerId scorer = scorer_from(pa.scorer);

  CacheResult res;
  if (pa.no_cache) {
    const auto start = std::chrono::steady_clock::now();
    res.profile = profile_streaming(model, calib, {scorer, pa.tau, pa.epsilon}).profile;
    res.on_device_ms = elapsed_ms(start);
  } else {
    const auto dir = pa.cache_dir.empty() ? default_cache_dir() : std::filesystem::path(pa.cache_dir);
    res = cache_get_or_profile(dir, model, calib, scorer, pa.tau, pa.epsilon);
  }
  const std::string bytes = serialize_profile(res.profile);
  write_file_atomic(pa.out, bytes);

  Json j;
  j["architecture_key"] = res.profile.architecture_key;
  j["cache_hit"] = res.cache_hit;
  j["digest"] = profile_digest(bytes);
  j["on_device_ms"] = res.on_device_ms;
  j["out"] = pa.out;
  j["scorer"] = scorer_name(scorer);
  j["warnings"] = res.warnings;
  out << canonical_dump(j) << '\n';
  return kExitOk;
}

// --- run -------------------------------------------------------------------

struct RunArgs {
  std::string profile_from;
  std::optional<std::uint64_t> budget;
  std::string mode = "auto";
  double floor_ratio = kDefaultFloorRatio;
  bool awq_viable = false;
  std::optional<double> tau;
  std::vector<std::uint32_t> tokens;
  std::string execution = "quantized";
  int code_bits = 4;
  double pmi_threshold = 0.1;
};

int cmd_run(const ModelArgs& ma, const CalibArgs& ca, const RunArgs& ra,
            const std::vector<std::string>& argv, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const ToyModel model = make_model(ma);
  const std::string model_key = architecture_key(model);

  ImportanceProfile prof;
  std::string profile_bytes;
  if (!ra.profile_from.empty()) {
    profile_bytes = read_text(ra.profile_from);
    prof = load_profile(profile_bytes);
    if (prof.architecture_key != model_key) {
      throw Error(ErrorCode::kKeyMismatch, "architecture_key mismatch: profile " +
                                               prof.architecture_key + " vs model " + model_key);
    }
  } else {
    prof = profile(model, make_calib(ca, model.spec()));
    profile_bytes = serialize_profile(prof);
  }
  if (prof.num_layers() != model.num_layers()) {
    throw Error(ErrorCode::kShapeMismatch, "profile layer count differs from the model");
  }

  const auto layer_bytes = layer_storage_bytes(model);
  std::uint64_t total = 0;
  for (auto b : layer_bytes) total += b;
  const std::uint64_t budget = ra.budget.value_or(total);

  ModePlan plan;
  if (ra.mode == "auto") {
    plan = select_mode(prof, budget, layer_bytes, ra.awq_viable, ra.floor_ratio, ra.tau);
  } else {
    const auto m = parse_mode(ra.mode);
    if (!m) throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + ra.mode + "'");
    plan = make_plan(prof, *m, budget, layer_bytes, ra.awq_viable, ra.floor_ratio, ra.tau);
  }

  RunOptions opts;
  if (ra.execution == "quantized") {
    opts.execution = Execution::kQuantized;
  } else if (ra.execution != "reference") {
    throw Error(ErrorCode::kInvalidArgument, "unknown execution '" + ra.execution + "'");
  }
  opts.code_bits = ra.code_bits;

  // Mode A pages every layer through a hot tier sized by the budget.
  std::optional<Pager> pager;
  std::vector<std::size_t> unit_of;
  if (plan.mode == Mode::kPaged) {
    const auto sb = subblock_storage_bytes(model.spec());
    std::vector<std::uint64_t> sb_bytes;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      sb_bytes.push_back(sb[0]);
      sb_bytes.push_back(sb[1]);
    }
    auto units = pmi_clusters(cyclic_trace(model.num_layers(), 1), ra.pmi_threshold, sb_bytes);
    unit_of = unit_index(units, sb_bytes.size());
    pager = init_placement(prof, std::move(units), TierConfig{budget, total});
    opts.pager = &*pager;
    opts.unit_of_subblock = unit_of;
  }

  CalibrationSet eval;
  if (!ra.tokens.empty()) {
    eval.prompts.push_back({ra.tokens, "cli"});
  } else {
    eval = make_calib(ca, model.spec());
  }
  const double divergence = plan_divergence(model, plan, eval, opts);

  std::vector<Precision> active_routes;
  std::vector<std::uint64_t> active_sizes;
  for (std::size_t l : plan.active_layers) {
    active_routes.push_back(plan.routes[l]);
    active_sizes.push_back(layer_bytes[l]);
  }
  BpwPolicy policy;
  if (opts.execution == Execution::kQuantized) {
    policy.w4a8_bits = policy.w4a16_bits = ra.code_bits + kQ4_0BitsPerWeight - 4.0;
  } else {
    policy.w4a8_bits = policy.w4a16_bits = 32.0;
  }

  Json report;
  report["format_version"] = kReportFormatVersion;
  report["command"] = argv;
  report["model"] = {{"spec", spec_to_json(model.spec())},
                     {"spec_digest", spec_digest(model.spec())},
                     {"architecture_key", model_key}};
  report["profile"] = {{"digest", profile_digest(profile_bytes)},
                       {"source", ra.profile_from.empty() ? "computed" : ra.profile_from}};
  report["plan"] = plan.to_json();
  Json metrics;
  metrics["divergence"] = divergence;
  metrics["bpw"] = active_routes.empty() ? 0.0 : effective_bpw(active_routes, active_sizes, policy);
  metrics["execution"] = ra.execution;
  metrics["eval_sequences"] = eval.size();
  if (pager) metrics["pager"] = pager->stats().to_json();
  report["metrics"] = metrics;
  report["report_digest"] = sha256_hex(canonical_dump(report));
  report["timing"] = {{"wall_ms", elapsed_ms(start)}};
  out << canonical_dump(report) << '\n';
  return kExitOk;
}

// --- bound -----------------------------------------------------------------

struct BoundArgs {
  std::size_t layers = 32;
  std::size_t k = 1;
  double delta = 0.0;
  double sigma = 0.0;
  std::optional<std::uint64_t> prompts;
  std::optional<double> target;
};

int cmd_bound(const BoundArgs& ba, std::ostream& out) {
  if (!ba.prompts && !ba.target) {
    throw Error(ErrorCode::kInvalidArgument, "bound needs --prompts and/or --target");
  }
  Json j;
  j["layers"] = ba.layers;
  j["k"] = ba.k;
  j["delta"] = ba.delta;
  j["sigma"] = ba.sigma;
  if (ba.prompts) {
    j["prompts"] = *ba.prompts;
    j["bound"] = failure_bound({ba.layers, ba.k, ba.delta, ba.sigma, *ba.prompts});
  }
  if (ba.target) {
    j["target"] = *ba.target;
    j["min_prompts"] = min_prompts(ba.layers, ba.k, ba.delta, ba.sigma, *ba.target);
  }
  out << canonical_dump(j) << '\n';
  return kExitOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::vector<double> taus;
  std::vector<int> code_bits;
  std::vector<double> active_ratios;
  std::string profile_from;
  std::string scorer = "combined";
  double tau = kDefaultTau;
};

int cmd_sweep(const ModelArgs& ma, const CalibArgs& ca, const SweepArgs& sa, std::ostream& out) {
  const int chosen = !sa.taus.empty() + !sa.code_bits.empty() + !sa.active_ratios.empty();
  if (chosen != 1) {
    throw Error(ErrorCode::kInvalidArgument, "sweep takes exactly one of --taus, --bpw, --active-ratios");
  }
  SweepReport rep;
  if (!sa.taus.empty() && !sa.profile_from.empty()) {
    rep = threshold_sweep(read_profile_file(sa.profile_from), sa.taus);
  } else {
    const ToyModel model = make_model(ma);
    const CalibrationSet calib = make_calib(ca, model.spec());
    const ScorerId scorer = scorer_from(sa.scorer);
    if (!sa.taus.empty()) {
      rep = threshold_sweep(model, calib, sa.taus, scorer);
    } else if (!sa.code_bits.empty()) {
      rep = bpw_sweep(model, calib, sa.code_bits, sa.tau, scorer);
    } else {
      rep = layer_sweep(model, calib, sa.active_ratios, scorer);
    }
  }
  out << canonical_dump(rep.to_json()) << '\n';
  return kExitOk;
}

// --- page-sim --------------------------------------------------------------

struct PageSimArgs {
  std::size_t layers = 16;
  std::uint64_t subblock_bytes = 1 << 20;
  std::optional<std::uint64_t> hot_bytes;
  std::optional<std::uint64_t> warm_bytes;
  std::string trace = "synthetic:decode:270";
  double pmi_threshold = 0.1;
  std::string profile_from;
  double floor_ratio = kDefaultFloorRatio;
};

AccessTrace build_trace(const PageSimArgs& pa, std::span<const double> scores,
                        std::uint64_t hot_bytes) {
  const std::string decode = "synthetic:decode:";
  const std::string cyclic = "synthetic:cyclic:";
  auto passes_of = [&](const std::string& prefix) {
    const std::string n = pa.trace.substr(prefix.size());
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(n, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (n.empty() || pos != n.size() || v == 0) {
      throw Error(ErrorCode::kInvalidArgument, "bad pass count in trace '" + pa.trace + "'");
    }
    return static_cast<std::size_t>(v);
  };
  if (pa.trace.starts_with(cyclic)) return cyclic_trace(pa.layers, passes_of(cyclic));
  if (pa.trace.starts_with(decode)) {
    const std::vector<std::uint64_t> layer_bytes(pa.layers, 2 * pa.subblock_bytes);
    auto hot = hot_set(scores, hot_bytes, layer_bytes);
    const double ratio = static_cast<double>(hot.size()) / static_cast<double>(pa.layers);
    if (choose_mode(ratio, false, pa.floor_ratio) == Mode::kPaged) {
      hot.resize(pa.layers);
      for (std::size_t l = 0; l < pa.layers; ++l) hot[l] = l;
    }
    return decode_trace(pa.layers, passes_of(decode), hot);
  }
  if (pa.trace.starts_with("synthetic:")) {
    throw Error(ErrorCode::kInvalidArgument, "unknown synthetic trace '" + pa.trace + "'");
  }
  return load_trace(pa.trace);
}

int cmd_pagesim(const PageSimArgs& pa, std::ostream& out) {
  if (pa.layers == 0) throw Error(ErrorCode::kInvalidArgument, "page-sim needs --layers >= 1");
  const std::uint64_t total = 2 * pa.subblock_bytes * pa.layers;
  const std::uint64_t hot_bytes = pa.hot_bytes.value_or(total * 3 / 4);
  const std::uint64_t warm_bytes = pa.warm_bytes.value_or(total);

  std::vector<double> scores(pa.layers, 0.0);
  if (!pa.profile_from.empty()) {
    const ImportanceProfile prof = read_profile_file(pa.profile_from);
    if (prof.num_layers() != pa.layers) {
      throw Error(ErrorCode::kShapeMismatch, "profile has " + std::to_string(prof.num_layers()) +
                                                 " layers, --layers is " +
                                                 std::to_string(pa.layers));
    }
    scores = prof.normalized_scores;
  }

  const AccessTrace trace = build_trace(pa, scores, hot_bytes);
  const std::vector<std::uint64_t> sb_bytes(2 * pa.layers, pa.subblock_bytes);
  auto units = pmi_clusters(trace, pa.pmi_threshold, sb_bytes);
  const auto unit_of = unit_index(units, sb_bytes.size());
  const std::size_t num_units = units.size();
  Pager pager = init_placement(scores, std::move(units), TierConfig{hot_bytes, warm_bytes});
  replay(pager, trace, unit_of);

  const PagerStats st = pager.stats();
  Json j = st.to_json();
  j["layers"] = pa.layers;
  j["units"] = num_units;
  j["steps"] = trace.size();
  j["trace"] = pa.trace;
  j["hot_bytes"] = hot_bytes;
  j["warm_bytes"] = warm_bytes;
  j["pmi_threshold"] = pa.pmi_threshold;
  j["faults_le_units"] = st.faults() <= num_units;
  j["cold_faults_le_units"] = st.cold_faults <= num_units;
  j["warnings"] = pager.warnings();
  const std::string violation = pager.check_invariants();
  if (!violation.empty()) j["invariant_violation"] = violation;
  out << canonical_dump(j) << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nve: importance-profiled quantization and paging at desk scale", "nve"};
  app.require_subcommand(1);

  ModelArgs model_args;
  CalibArgs calib_args;

  auto* profile_cmd = app.add_subcommand("profile", "compute (or reuse) an importance profile");
  ProfileArgs pa;
  add_model_options(profile_cmd, model_args);
  add_calib_options(profile_cmd, calib_args);
  profile_cmd->add_option("--scorer", pa.scorer, "combined|ffn_only|attn_only|input_l2")
      ->capture_default_str();
  profile_cmd->add_option("--tau", pa.tau, "W4A16 threshold")->capture_default_str();
  profile_cmd->add_option("--epsilon", pa.epsilon, "degenerate-range epsilon")->capture_default_str();
  profile_cmd->add_option("--out", pa.out, "profile JSON path")->required();
  profile_cmd->add_flag("--no-cache", pa.no_cache, "always profile");
  profile_cmd->add_option("--cache-dir", pa.cache_dir, "cache directory (default $NVE_CACHE_DIR)");

  auto* run_cmd = app.add_subcommand("run", "plan and execute against the float baseline");
  RunArgs ra;
  add_model_options(run_cmd, model_args);
  add_calib_options(run_cmd, calib_args);
  run_cmd->add_option("--profile-from", ra.profile_from, "profile JSON to load");
  run_cmd->add_option("--budget", ra.budget, "hot budget in bytes (default: whole model)");
  run_cmd->add_option("--mode", ra.mode, "auto|A|B|C")->capture_default_str();
  run_cmd->add_option("--floor-ratio", ra.floor_ratio, "hot-only viability floor")
      ->capture_default_str();
  run_cmd->add_flag("--awq-viable", ra.awq_viable, "allow mode C");
  run_cmd->add_option("--tau", ra.tau, "route threshold (default: the profile's)");
  run_cmd->add_option("--tokens", ra.tokens, "evaluation token ids")->delimiter(',');
  run_cmd->add_option("--execution", ra.execution, "quantized|reference")->capture_default_str();
  run_cmd->add_option("--code-bits", ra.code_bits, "Q4_0 code bits kept (1-4)")
      ->capture_default_str();
  run_cmd->add_option("--pmi-threshold", ra.pmi_threshold, "mode A paging unit threshold")
      ->capture_default_str();

  auto* bound_cmd = app.add_subcommand("bound", "top-k recovery failure bound");
  BoundArgs ba;
  bound_cmd->add_option("--layers", ba.layers, "L")->capture_default_str();
  bound_cmd->add_option("--k", ba.k, "k")->capture_default_str();
  bound_cmd->add_option("--delta", ba.delta, "top-k gap")->required();
  bound_cmd->add_option("--sigma", ba.sigma, "sub-Gaussian parameter")->required();
  bound_cmd->add_option("--prompts", ba.prompts, "calibration prompts N");
  bound_cmd->add_option("--target", ba.target, "failure probability target");

  auto* sweep_cmd = app.add_subcommand("sweep", "threshold, bpw or active-layer sweep");
  SweepArgs sa;
  add_model_options(sweep_cmd, model_args);
  add_calib_options(sweep_cmd, calib_args);
  sweep_cmd->add_option("--taus", sa.taus, "comma-separated tau values")->delimiter(',');
  sweep_cmd->add_option("--bpw", sa.code_bits, "comma-separated code bits (1-4)")->delimiter(',');
  sweep_cmd->add_option("--active-ratios", sa.active_ratios, "comma-separated ratios")
      ->delimiter(',');
  sweep_cmd->add_option("--profile-from", sa.profile_from, "profile for a route-count tau sweep");
  sweep_cmd->add_option("--scorer", sa.scorer, "scorer")->capture_default_str();
  sweep_cmd->add_option("--tau", sa.tau, "route threshold for --bpw")->capture_default_str();

  auto* page_cmd = app.add_subcommand("page-sim", "three-tier paging simulation");
  PageSimArgs ps;
  page_cmd->add_option("--layers", ps.layers, "layers")->capture_default_str();
  page_cmd->add_option("--subblock-bytes", ps.subblock_bytes, "bytes per sub-block")
      ->capture_default_str();
  page_cmd->add_option("--hot-bytes", ps.hot_bytes, "hot capacity (default 3/4 of the model)");
  page_cmd->add_option("--warm-bytes", ps.warm_bytes, "warm capacity (default whole model)");
  page_cmd->add_option("--trace", ps.trace, "file | synthetic:decode:N | synthetic:cyclic:N")
      ->capture_default_str();
  page_cmd->add_option("--pmi-threshold", ps.pmi_threshold, "unit clustering threshold")
      ->capture_default_str();
  page_cmd->add_option("--profile-from", ps.profile_from, "profile seeding placement");
  page_cmd->add_option("--floor-ratio", ps.floor_ratio, "decode working-set floor")
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (profile_cmd->parsed()) return cmd_profile(model_args, calib_args, pa, out);
    if (run_cmd->parsed()) return cmd_run(model_args, calib_args, ra, args, out);
    if (bound_cmd->parsed()) return cmd_bound(ba, out);
    if (sweep_cmd->parsed()) return cmd_sweep(model_args, calib_args, sa, out);
    if (page_cmd->parsed()) return cmd_pagesim(ps, out);
  } catch (const Error& e) {
    err << "nve: " << to_string(e.code()) << ": " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "nve: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace nve::cli
