// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nve/canonical_json.hpp"
#include "nve/error.hpp"
#include "nve/spec_json.hpp"

namespace nve {

std::string_view scorer_name(ScorerId id) {
  switch (id) {
    case ScorerId::kCombined: return "combined";
    case ScorerId::kFfnOnly: return "ffn_only";
    case ScorerId::kAttnOnly: return "attn_only";
    case ScorerId::kInputL2: return "input_l2";
  }
  return "?";
}

std::optional<ScorerId> parse_scorer(std::string_view name) {
  for (ScorerId id : {ScorerId::kCombined, ScorerId::kFfnOnly, ScorerId::kAttnOnly,
                      ScorerId::kInputL2}) {
    if (scorer_name(id) == name) return id;
  }
  return std::nullopt;
}

std::string_view precision_name(Precision p) {
  return p == Precision::kW4A16 ? "W4A16" : "W4A8";
}

std::optional<Precision> parse_precision(std::string_view name) {
  if (name == "W4A16") return Precision::kW4A16;
  if (name == "W4A8") return Precision::kW4A8;
  return std::nullopt;
}

void CalibrationSet::validate(std::size_t vocab_size) const {
  if (prompts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "calibration set is empty");
  }
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    if (prompts[j].tokens.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "calibration prompt " + std::to_string(j) +
                                                   " is empty");
    }
    for (std::uint32_t t : prompts[j].tokens) {
      if (t >= vocab_size) {
        throw Error(ErrorCode::kOutOfRange, "calibration prompt " + std::to_string(j) +
                                                " has token id " + std::to_string(t) +
                                                " >= vocab_size " + std::to_string(vocab_size));
      }
    }
  }
}

CalibrationSet load_calibration(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot open calibration file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const Json j = parse_json(ss.str());
  CalibrationSet out;
  try {
    for (const auto& p : j.at("prompts")) {
      CalibrationPrompt prompt;
      prompt.tokens = p.at("tokens").get<std::vector<std::uint32_t>>();
      prompt.domain = p.value("domain", "");
      out.prompts.push_back(std::move(prompt));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kFormat, "bad calibration file '" + path.string() + "': " + e.what());
  }
  return out;
}

void save_calibration(const std::filesystem::path& path, const CalibrationSet& calib) {
  Json prompts = Json::array();
  for (const auto& p : calib.prompts) {
    prompts.push_back({{"domain", p.domain}, {"tokens", p.tokens}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  os << canonical_dump(Json{{"prompts", prompts}}) << '\n';
}

CalibrationSet synthetic_calibration(std::size_t vocab_size, std::size_t count,
                                     std::uint64_t seed, std::size_t min_len,
                                     std::size_t max_len) {
  static constexpr const char* kDomains[] = {"science", "code", "history", "math"};
  if (vocab_size == 0 || min_len == 0 || max_len < min_len) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic_calibration: bad sizes");
  }
  CalibrationSet out;
  const std::size_t span = max_len - min_len + 1;
  for (std::size_t j = 0; j < count; ++j) {
    CalibrationPrompt p;
    p.domain = kDomains[j % 4];
    const std::size_t len = min_len + (j * 5) % span;
    for (std::size_t t = 0; t < len; ++t) {
      // reuse the weight generator as a hash; layer id 0xCA1 keeps streams apart
      const float u = counter_uniform(seed, 0xCA1, j, t, 1.0F);
      const auto id = static_cast<std::size_t>((u + 1.0F) * 0.5F * static_cast<float>(vocab_size));
      p.tokens.push_back(static_cast<std::uint32_t>(std::min(id, vocab_size - 1)));
    }
    out.prompts.push_back(std::move(p));
  }
  return out;
}

double attn_proxy(std::span<const float> q, std::span<const float> v) {
  double ss = 0.0;
  for (float x : q) ss += static_cast<double>(x) * x;
  for (float x : v) ss += static_cast<double>(x) * x;
  return std::sqrt(ss);
}

double ffn_magnitude(std::span<const float> ffn_out) {
  double ss = 0.0;
  for (float x : ffn_out) ss += static_cast<double>(x) * x;
  return std::sqrt(ss);
}

std::vector<double> minmax_normalize(std::span<const double> scores, double epsilon) {
  if (scores.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "minmax_normalize: empty score vector");
  }
  const auto [lo_it, hi_it] = std::ranges::minmax_element(scores);
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(scores.size(), 0.0);
  if (hi - lo < epsilon) return out;  // degenerate: no outlier
  const double range = hi - lo;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / range;
  return out;
}

std::vector<Precision> assign_precision(std::span<const double> normalized, double tau) {
  std::vector<Precision> out;
  out.reserve(normalized.size());
  for (double s : normalized) out.push_back(s >= tau ? Precision::kW4A16 : Precision::kW4A8);
  return out;
}

ImportanceProfile profile_from_scores(std::vector<double> raw_scores, double tau, double epsilon,
                                      ScorerId scorer, std::size_t prompt_count,
                                      std::string architecture_key) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::kInvalidArgument, "tau must be finite and >= 0");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be finite and > 0");
  }
  for (double s : raw_scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kNonFinite, "non-finite raw score");
  }
  ImportanceProfile p;
  p.architecture_key = std::move(architecture_key);
  p.scorer_id = scorer;
  p.prompt_count = prompt_count;
  p.epsilon = epsilon;
  p.tau = tau;
  p.normalized_scores = minmax_normalize(raw_scores, epsilon);
  p.assignments = assign_precision(p.normalized_scores, tau);
  p.raw_scores = std::move(raw_scores);
  return p;
}

void ResidencyMeter::acquire() {
  ++current_;
  ++loads_;
  peak_ = std::max(peak_, current_);
}

void ResidencyMeter::release() { --current_; }

ResidentLayer::ResidentLayer(const LayerWeights& source, ResidencyMeter& meter)
    : weights_(source), meter_(meter) {
  meter_.acquire();
}

ResidentLayer::~ResidentLayer() { meter_.release(); }

namespace {

double token_statistic(ScorerId scorer, const LayerTaps& taps, std::size_t t) {
  switch (scorer) {
    case ScorerId::kCombined:
      return attn_proxy(taps.q.row(t), taps.v.row(t)) + ffn_magnitude(taps.ffn_out.row(t));
    case ScorerId::kFfnOnly: return ffn_magnitude(taps.ffn_out.row(t));
    case ScorerId::kAttnOnly: return attn_proxy(taps.q.row(t), taps.v.row(t));
    case ScorerId::kInputL2: return ffn_magnitude(taps.input.row(t));
  }
  return 0.0;
}

}  // namespace

ProfileRun profile_streaming(const ToyModel& model, const CalibrationSet& calib,
                             const ProfileOptions& options, ResidencyMeter* meter) {
  calib.validate(model.spec().vocab_size);
  if (!(options.tau >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be >= 0");
  if (!(options.epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be > 0");

  ResidencyMeter local_meter;
  ResidencyMeter& m = meter != nullptr ? *meter : local_meter;

  const std::size_t num_layers = model.num_layers();
  const std::size_t k = calib.size();

  // Inter-layer hidden states for every prompt; weights stream through.
  std::vector<Matrix> states;
  states.reserve(k);
  for (const auto& p : calib.prompts) states.push_back(embed(model, p.tokens));

  ProfileRun run;
  run.per_prompt.assign(num_layers, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < num_layers; ++i) {
    const ResidentLayer resident(model.layer(i), m);
    const LinearFn linear = float_linear(resident.weights());
    for (std::size_t j = 0; j < k; ++j) {
      LayerTaps taps;
      run_layer(model.spec(), linear, states[j], &taps);
      double sum = 0.0;
      for (std::size_t t = 0; t < states[j].rows; ++t) {
        sum += token_statistic(options.scorer, taps, t);
      }
      const double mean = sum / static_cast<double>(states[j].rows);
      if (!std::isfinite(mean)) {
        throw Error(ErrorCode::kNonFinite, "non-finite activation statistic at layer " +
                                               std::to_string(i) + ", prompt " +
                                               std::to_string(j));
      }
      run.per_prompt[i][j] = mean;
    }
  }

  // Prompt mean over sorted values: bit-stable and independent of prompt order.
  std::vector<double> raw(num_layers);
  for (std::size_t i = 0; i < num_layers; ++i) {
    std::vector<double> v = run.per_prompt[i];
    std::ranges::sort(v);
    double sum = 0.0;
    for (double x : v) sum += x;
    raw[i] = sum / static_cast<double>(k);
  }

  run.profile = profile_from_scores(std::move(raw), options.tau, options.epsilon,
                                    options.scorer, k, architecture_key(model));
  run.peak_resident_layers = m.peak();
  run.layer_loads = m.loads();
  return run;
}

ImportanceProfile profile(const ToyModel& model, const CalibrationSet& calib, ScorerId scorer,
                          double tau, double epsilon) {
  return profile_streaming(model, calib, {scorer, tau, epsilon}).profile;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw Error(ErrorCode::kInvalidArgument, "top-k size " + std::to_string(k) +
                                                 " outside [0, " +
                                                 std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

double topk_overlap(std::span<const double> a, std::span<const double> b, std::size_t k) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, "topk_overlap: score vectors differ in length");
  }
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "topk_overlap needs k >= 1");
  auto ta = top_k(a, k);
  auto tb = top_k(b, k);
  std::ranges::sort(ta);
  std::ranges::sort(tb);
  std::vector<std::size_t> common;
  std::ranges::set_intersection(ta, tb, std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

double topk_overlap(const ImportanceProfile& a, const ImportanceProfile& b, std::size_t k) {
  return topk_overlap(a.raw_scores, b.raw_scores, k);
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, "spearman: score vectors differ in length");
  }
  if (a.empty()) throw Error(ErrorCode::kInvalidArgument, "spearman: empty score vectors");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;  // average ranks always sum to n(n+1)/2
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return ra == rb ? 1.0 : 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double spearman(const ImportanceProfile& a, const ImportanceProfile& b) {
  return spearman(a.raw_scores, b.raw_scores);
}

double split_half_overlap(const ToyModel& model, const CalibrationSet& calib, ScorerId scorer,
                          std::size_t k) {
  if (calib.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "split-half overlap needs at least 2 prompts");
  }
  if (k == 0 || k > model.num_layers()) {
    throw Error(ErrorCode::kInvalidArgument, "split-half overlap: k=" + std::to_string(k) +
                                                 " outside [1, num_layers]");
  }
  CalibrationSet even, odd;
  for (std::size_t j = 0; j < calib.size(); ++j) {
    (j % 2 == 0 ? even : odd).prompts.push_back(calib.prompts[j]);
  }
  const auto a = profile(model, even, scorer);
  const auto b = profile(model, odd, scorer);
  return topk_overlap(a, b, k);
}

}  // namespace nve
