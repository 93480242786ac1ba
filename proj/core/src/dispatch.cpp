// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nve/error.hpp"

namespace nve {

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kPaged: return "A_paged";
    case Mode::kHotOnly: return "B_hot_only";
    case Mode::kHotAwq: return "C_hot_awq";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view name) {
  if (name == "A" || name == "A_paged") return Mode::kPaged;
  if (name == "B" || name == "B_hot_only") return Mode::kHotOnly;
  if (name == "C" || name == "C_hot_awq") return Mode::kHotAwq;
  return std::nullopt;
}

Json ModePlan::to_json() const {
  Json j;
  j["mode"] = mode_name(mode);
  j["active_layers"] = active_layers;
  Json r = Json::array();
  std::size_t w4a16 = 0;
  for (Precision p : routes) {
    r.push_back(precision_name(p));
    w4a16 += p == Precision::kW4A16;
  }
  j["routes"] = r;
  j["w4a16_layers"] = w4a16;
  j["w4a8_layers"] = routes.size() - w4a16;
  j["budget_bytes"] = budget_bytes;
  j["active_ratio"] = active_ratio;
  j["floor_ratio"] = floor_ratio;
  j["awq_viable"] = awq_viable;
  return j;
}

std::vector<Precision> route_layers(const ImportanceProfile& profile, double tau) {
  return assign_precision(profile.normalized_scores, tau);
}

std::vector<std::size_t> hot_set(std::span<const double> scores, std::uint64_t budget_bytes,
                                 std::span<const std::uint64_t> per_layer_bytes) {
  if (scores.size() != per_layer_bytes.size()) {
    throw Error(ErrorCode::kLengthMismatch, "hot_set: " + std::to_string(scores.size()) +
                                                " scores for " +
                                                std::to_string(per_layer_bytes.size()) +
                                                " layer sizes");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> out;
  std::uint64_t used = 0;
  for (std::size_t i : order) {
    if (per_layer_bytes[i] > budget_bytes - used) break;
    used += per_layer_bytes[i];
    out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> hot_set(const ImportanceProfile& profile, std::uint64_t budget_bytes,
                                 std::span<const std::uint64_t> per_layer_bytes) {
  return hot_set(profile.normalized_scores, budget_bytes, per_layer_bytes);
}

Mode choose_mode(double active_ratio, bool awq_viable, double floor_ratio) {
  if (active_ratio >= floor_ratio) return awq_viable ? Mode::kHotAwq : Mode::kHotOnly;
  return Mode::kPaged;
}

ModePlan make_plan(const ImportanceProfile& profile, Mode mode, std::uint64_t budget_bytes,
                   std::span<const std::uint64_t> per_layer_bytes, bool awq_viable,
                   double floor_ratio, std::optional<double> tau) {
  if (!std::isfinite(floor_ratio) || floor_ratio < 0.0 || floor_ratio > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "floor ratio must lie in [0, 1]");
  }
  if (mode == Mode::kHotAwq && !awq_viable) {
    throw Error(ErrorCode::kInvalidArgument, "mode C needs awq_viable");
  }
  const std::size_t num_layers = profile.num_layers();
  if (num_layers == 0) throw Error(ErrorCode::kInvalidArgument, "profile has no layers");

  ModePlan plan;
  plan.mode = mode;
  plan.budget_bytes = budget_bytes;
  plan.floor_ratio = floor_ratio;
  plan.awq_viable = awq_viable;
  plan.routes = route_layers(profile, tau.value_or(profile.tau));

  auto hot = hot_set(profile, budget_bytes, per_layer_bytes);
  plan.active_ratio = static_cast<double>(hot.size()) / static_cast<double>(num_layers);
  if (mode == Mode::kPaged) {
    plan.active_layers.resize(num_layers);
    std::iota(plan.active_layers.begin(), plan.active_layers.end(), 0);
  } else {
    std::ranges::sort(hot);
    plan.active_layers = std::move(hot);
  }
  return plan;
}

ModePlan select_mode(const ImportanceProfile& profile, std::uint64_t budget_bytes,
                     std::span<const std::uint64_t> per_layer_bytes, bool awq_viable,
                     double floor_ratio, std::optional<double> tau) {
  const auto hot = hot_set(profile, budget_bytes, per_layer_bytes);
  const double ratio = profile.num_layers() == 0
                           ? 0.0
                           : static_cast<double>(hot.size()) /
                                 static_cast<double>(profile.num_layers());
  return make_plan(profile, choose_mode(ratio, awq_viable, floor_ratio), budget_bytes,
                   per_layer_bytes, awq_viable, floor_ratio, tau);
}

namespace {

std::uint64_t slot_bytes(const ModelSpec& spec, Slot s) {
  const auto [rows, cols] = slot_shape(spec, s);
  const std::uint64_t n = rows * cols;
  return (n + kQkBlock - 1) / kQkBlock * kQ4BlockBytes;
}

}  // namespace

std::vector<std::uint64_t> layer_storage_bytes(const ToyModel& model) {
  std::vector<std::uint64_t> out;
  for (const auto& layer : model.layers()) {
    std::uint64_t b = 0;
    for (Slot s : kAllSlots) {
      b += slot_bytes(model.spec(), s);
      if (const auto& bias = layer.bias_of(s)) b += bias->size() * sizeof(float);
    }
    out.push_back(b);
  }
  return out;
}

std::array<std::uint64_t, 2> subblock_storage_bytes(const ModelSpec& spec) {
  std::array<std::uint64_t, 2> out{0, 0};
  for (Slot s : {Slot::kQ, Slot::kK, Slot::kV, Slot::kO}) out[0] += slot_bytes(spec, s);
  for (Slot s : {Slot::kGate, Slot::kUp, Slot::kDown}) out[1] += slot_bytes(spec, s);
  return out;
}

QuantizedModel quantize_model(const ToyModel& model, int code_bits) {
  QuantizedModel q;
  q.layers.reserve(model.num_layers());
  for (const auto& layer : model.layers()) {
    QuantizedLayer ql;
    for (std::size_t s = 0; s < kNumSlots; ++s) {
      ql.w[s] = quantize_matrix(layer.w[s]);
      if (code_bits != 4) ql.w[s] = truncate_codes(ql.w[s], code_bits);
      ql.bias[s] = layer.bias[s];
    }
    q.layers.push_back(std::move(ql));
  }
  return q;
}

LinearFn quantized_linear(const QuantizedLayer& layer, Precision route) {
  return [&layer, route](Slot s, std::span<const float> in, std::span<float> out) {
    const auto idx = static_cast<std::size_t>(s);
    const QuantMatrix& w = layer.w[idx];
    std::vector<float> y;
    if (route == Precision::kW4A16) {
      y = matvec_w4a16(w, in);
    } else {
      const auto groups = quantize_activations_q8(in);
      y = matvec_w4a8(w, groups);
    }
    if (y.size() != out.size()) {
      throw Error(ErrorCode::kShapeMismatch, "quantized linear output size mismatch");
    }
    std::ranges::copy(y, out.begin());
    if (const auto& b = layer.bias[idx]) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*b)[i];
    }
  };
}

double cosine_divergence(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw Error(ErrorCode::kShapeMismatch, "cosine_divergence: shapes differ");
  }
  if (a.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < a.rows; ++t) {
    const auto x = a.row(t);
    const auto y = b.row(t);
    if (std::ranges::equal(x, y)) continue;
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      dot += static_cast<double>(x[j]) * y[j];
      nx += static_cast<double>(x[j]) * x[j];
      ny += static_cast<double>(y[j]) * y[j];
    }
    if (nx == 0.0 && ny == 0.0) continue;
    if (nx == 0.0 || ny == 0.0) {
      total += 1.0;
      continue;
    }
    total += std::max(0.0, 1.0 - dot / (std::sqrt(nx) * std::sqrt(ny)));
  }
  return total / static_cast<double>(a.rows);
}

namespace {

void check_plan(const ToyModel& model, const ModePlan& plan) {
  if (plan.routes.size() != model.num_layers()) {
    throw Error(ErrorCode::kShapeMismatch, "plan has " + std::to_string(plan.routes.size()) +
                                               " routes for a " +
                                               std::to_string(model.num_layers()) +
                                               "-layer model");
  }
  for (std::size_t i = 0; i < plan.active_layers.size(); ++i) {
    if (plan.active_layers[i] >= model.num_layers()) {
      throw Error(ErrorCode::kOutOfRange, "plan activates layer " +
                                              std::to_string(plan.active_layers[i]) +
                                              " of a " + std::to_string(model.num_layers()) +
                                              "-layer model");
    }
    if (i > 0 && plan.active_layers[i] <= plan.active_layers[i - 1]) {
      throw Error(ErrorCode::kInvalidArgument, "plan active layers must be strictly ascending");
    }
  }
}

}  // namespace

Matrix plan_forward(const ToyModel& model, const ModePlan& plan,
                    std::span<const std::uint32_t> tokens, const RunOptions& options,
                    const QuantizedModel* quantized) {
  check_plan(model, plan);
  if (options.execution == Execution::kQuantized && quantized == nullptr) {
    throw Error(ErrorCode::kInvalidArgument, "quantized execution needs a quantized model");
  }
  Matrix hidden = embed(model, tokens);

  if (options.pager != nullptr && plan.mode == Mode::kPaged) {
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t l : plan.active_layers) {
        for (SubBlockGroup g : {SubBlockGroup::kAttn, SubBlockGroup::kFfn}) {
          const SubBlockId s = subblock_id(l, g);
          if (s >= options.unit_of_subblock.size()) {
            throw Error(ErrorCode::kOutOfRange, "no paging unit for sub-block " + std::to_string(s));
          }
          options.pager->access(options.unit_of_subblock[s]);
        }
      }
    }
  }

  for (std::size_t l : plan.active_layers) {
    if (options.execution == Execution::kQuantized) {
      run_layer(model.spec(), quantized_linear(quantized->layers[l], plan.routes[l]), hidden);
    } else {
      run_layer(model.spec(), float_linear(model.layer(l)), hidden);
    }
  }
  return final_norm(hidden);
}

PlanRun run_plan(const ToyModel& model, const ModePlan& plan,
                 std::span<const std::uint32_t> tokens, const RunOptions& options) {
  std::optional<QuantizedModel> q;
  if (options.execution == Execution::kQuantized) q = quantize_model(model, options.code_bits);
  PlanRun run;
  run.hidden = plan_forward(model, plan, tokens, options, q ? &*q : nullptr);
  run.baseline = forward(model, tokens, std::nullopt, false).hidden;
  run.divergence = cosine_divergence(run.hidden, run.baseline);
  return run;
}

double plan_divergence(const ToyModel& model, const ModePlan& plan, const CalibrationSet& prompts,
                       const RunOptions& options) {
  if (prompts.size() == 0) throw Error(ErrorCode::kInvalidArgument, "no evaluation prompts");
  std::optional<QuantizedModel> q;
  if (options.execution == Execution::kQuantized) q = quantize_model(model, options.code_bits);
  double total = 0.0;
  for (const auto& p : prompts.prompts) {
    const Matrix out = plan_forward(model, plan, p.tokens, options, q ? &*q : nullptr);
    const Matrix base = forward(model, p.tokens, std::nullopt, false).hidden;
    total += cosine_divergence(out, base);
  }
  return total / static_cast<double>(prompts.size());
}

Json SweepRow::to_json() const {
  Json j;
  j["setting"] = setting;
  j["w4a16_layers"] = w4a16_layers;
  j["w4a8_layers"] = w4a8_layers;
  j["active_layers"] = active_layers;
  if (bpw) j["bpw"] = *bpw;
  if (divergence) j["divergence"] = *divergence;
  return j;
}

Json SweepReport::to_json() const {
  Json j;
  j["setting_name"] = setting_name;
  j["rows"] = Json::array();
  for (const auto& r : rows) j["rows"].push_back(r.to_json());
  return j;
}

namespace {

template <typename T>
void check_monotone(std::span<const T> settings) {
  if (settings.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one setting");
  bool up = true, down = true;
  for (std::size_t i = 1; i < settings.size(); ++i) {
    up = up && settings[i] > settings[i - 1];
    down = down && settings[i] < settings[i - 1];
  }
  if (!up && !down) {
    throw Error(ErrorCode::kInvalidArgument, "sweep settings must be strictly monotone");
  }
}

ModePlan all_layer_plan(std::size_t num_layers, std::vector<Precision> routes) {
  ModePlan plan;
  plan.mode = Mode::kHotOnly;
  plan.active_layers.resize(num_layers);
  std::iota(plan.active_layers.begin(), plan.active_layers.end(), 0);
  plan.routes = std::move(routes);
  plan.active_ratio = 1.0;
  return plan;
}

SweepRow split_row(double setting, const std::vector<Precision>& routes, std::size_t active) {
  SweepRow row;
  row.setting = setting;
  row.w4a16_layers = static_cast<std::size_t>(std::ranges::count(routes, Precision::kW4A16));
  row.w4a8_layers = routes.size() - row.w4a16_layers;
  row.active_layers = active;
  return row;
}

}  // namespace

SweepReport threshold_sweep(const ImportanceProfile& profile, std::span<const double> taus) {
  check_monotone(taus);
  SweepReport rep{"tau", {}};
  for (double tau : taus) {
    rep.rows.push_back(split_row(tau, route_layers(profile, tau), profile.num_layers()));
  }
  return rep;
}

SweepReport threshold_sweep(const ToyModel& model, const CalibrationSet& calib,
                            std::span<const double> taus, ScorerId scorer) {
  check_monotone(taus);
  const ImportanceProfile prof = profile(model, calib, scorer);
  const QuantizedModel q = quantize_model(model);
  SweepReport rep{"tau", {}};
  for (double tau : taus) {
    const auto routes = route_layers(prof, tau);
    const ModePlan plan = all_layer_plan(model.num_layers(), routes);
    RunOptions opts;
    opts.execution = Execution::kQuantized;
    double total = 0.0;
    for (const auto& p : calib.prompts) {
      const Matrix out = plan_forward(model, plan, p.tokens, opts, &q);
      total += cosine_divergence(out, forward(model, p.tokens, std::nullopt, false).hidden);
    }
    SweepRow row = split_row(tau, routes, model.num_layers());
    row.divergence = total / static_cast<double>(calib.size());
    rep.rows.push_back(row);
  }
  return rep;
}

SweepReport bpw_sweep(const ToyModel& model, const CalibrationSet& calib,
                      std::span<const int> code_bits, double tau, ScorerId scorer) {
  check_monotone(code_bits);
  const ImportanceProfile prof = profile(model, calib, scorer);
  const auto routes = route_layers(prof, tau);
  const ModePlan plan = all_layer_plan(model.num_layers(), routes);
  SweepReport rep{"code_bits", {}};
  for (int bits : code_bits) {
    RunOptions opts;
    opts.execution = Execution::kQuantized;
    opts.code_bits = bits;
    SweepRow row = split_row(bits, routes, model.num_layers());
    row.bpw = bits + kQ4_0BitsPerWeight - 4.0;
    row.divergence = plan_divergence(model, plan, calib, opts);
    rep.rows.push_back(row);
  }
  return rep;
}

SweepReport layer_sweep(const ToyModel& model, const CalibrationSet& calib,
                        std::span<const double> active_ratios, ScorerId scorer) {
  check_monotone(active_ratios);
  const ImportanceProfile prof = profile(model, calib, scorer);
  const std::size_t num_layers = model.num_layers();
  SweepReport rep{"active_ratio", {}};
  for (double ratio : active_ratios) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "active ratio must lie in [0, 1]");
    }
    const auto n = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(num_layers)));
    ModePlan plan = all_layer_plan(num_layers, prof.assignments);
    plan.active_layers = top_k(prof.normalized_scores, n);
    std::ranges::sort(plan.active_layers);
    plan.active_ratio = static_cast<double>(n) / static_cast<double>(num_layers);
    SweepRow row = split_row(ratio, prof.assignments, n);
    row.divergence = plan_divergence(model, plan, calib);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace nve
