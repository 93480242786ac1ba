// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#include "nve/pager.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nve/error.hpp"

namespace nve {

std::string_view tier_name(Tier t) {
  switch (t) {
    case Tier::kHot: return "hot";
    case Tier::kWarm: return "warm";
    case Tier::kCold: return "cold";
  }
  return "?";
}

std::optional<double> pmi(const PairCounts& c) {
  if (c.ab == 0 || c.a == 0 || c.b == 0 || c.steps == 0) return std::nullopt;
  const std::uint64_t num = c.ab * c.steps;
  const std::uint64_t den = c.a * c.b;
  if (num == den) return 0.0;
  return std::log(static_cast<double>(num) / static_cast<double>(den));
}

namespace {

std::vector<std::vector<SubBlockId>> dedup_steps(const AccessTrace& trace) {
  std::vector<std::vector<SubBlockId>> out;
  out.reserve(trace.size());
  for (const auto& step : trace) {
    auto s = step;
    std::ranges::sort(s);
    s.erase(std::unique(s.begin(), s.end()), s.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

PairCounts pair_counts(const AccessTrace& trace, SubBlockId a, SubBlockId b) {
  PairCounts c;
  c.steps = trace.size();
  for (const auto& step : trace) {
    const bool has_a = std::ranges::find(step, a) != step.end();
    const bool has_b = std::ranges::find(step, b) != step.end();
    c.a += has_a;
    c.b += has_b;
    c.ab += has_a && has_b;
  }
  return c;
}

std::vector<PagingUnit> pmi_clusters(const AccessTrace& trace, double threshold,
                                     std::span<const std::uint64_t> subblock_bytes) {
  if (trace.empty()) throw Error(ErrorCode::kInvalidArgument, "pmi_clusters: empty trace");
  if (!std::isfinite(threshold)) {
    throw Error(ErrorCode::kInvalidArgument, "pmi_clusters: threshold must be finite");
  }
  const std::size_t n = subblock_bytes.size();
  const auto steps = dedup_steps(trace);
  std::vector<std::uint64_t> single(n, 0);
  std::vector<std::uint64_t> joint(n * n, 0);
  for (const auto& step : steps) {
    for (std::size_t i = 0; i < step.size(); ++i) {
      if (step[i] >= n) {
        throw Error(ErrorCode::kOutOfRange, "trace names sub-block " + std::to_string(step[i]) +
                                                " but only " + std::to_string(n) + " exist");
      }
      ++single[step[i]];
      for (std::size_t j = i + 1; j < step.size(); ++j) ++joint[step[i] * n + step[j]];
    }
  }

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto v = pmi({steps.size(), single[a], single[b], joint[a * n + b]});
      if (v && *v >= threshold) {
        const std::size_t ra = find_root(parent, a);
        const std::size_t rb = find_root(parent, b);
        parent[std::max(ra, rb)] = std::min(ra, rb);
      }
    }
  }

  // Roots are the smallest members, so visiting sub-blocks in order yields
  // components ordered by smallest member.
  std::vector<PagingUnit> units;
  std::vector<std::size_t> unit_of_root(n, n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t r = find_root(parent, s);
    if (unit_of_root[r] == n) {
      unit_of_root[r] = units.size();
      units.push_back({units.size(), {}, 0});
    }
    PagingUnit& u = units[unit_of_root[r]];
    u.members.push_back(s);
    u.bytes += subblock_bytes[s];
  }
  return units;
}

std::vector<PagingUnit> pmi_clusters(const AccessTrace& trace, double threshold) {
  std::size_t n = 0;
  for (const auto& step : trace) {
    for (SubBlockId s : step) n = std::max(n, s + 1);
  }
  const std::vector<std::uint64_t> bytes(n, 1);
  return pmi_clusters(trace, threshold, bytes);
}

std::vector<std::size_t> unit_index(std::span<const PagingUnit> units, std::size_t num_subblocks) {
  std::vector<std::size_t> out(num_subblocks, units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    for (SubBlockId s : units[u].members) {
      if (s >= num_subblocks) {
        throw Error(ErrorCode::kOutOfRange, "unit " + std::to_string(u) + " names sub-block " +
                                                std::to_string(s));
      }
      if (out[s] != units.size()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "sub-block " + std::to_string(s) + " belongs to two units");
      }
      out[s] = u;
    }
  }
  for (std::size_t s = 0; s < num_subblocks; ++s) {
    if (out[s] == units.size()) {
      throw Error(ErrorCode::kInvalidArgument, "sub-block " + std::to_string(s) + " has no unit");
    }
  }
  return out;
}

double hit_rate(std::uint64_t hits, std::uint64_t faults) {
  if (hits + faults == 0) return 1.0;
  return static_cast<double>(hits) / static_cast<double>(hits + faults);
}

Json PagerStats::to_json() const {
  Json j;
  j["hits"] = hits;
  j["faults"] = faults();
  j["warm_faults"] = warm_faults;
  j["cold_faults"] = cold_faults;
  j["accesses"] = accesses();
  j["hit_rate"] = hit_rate;
  j["no_accesses"] = no_accesses;
  j["promotions"] = promotions;
  j["evictions"] = evictions;
  j["prefetches"] = prefetches;
  j["latency_units"] = latency_units;
  return j;
}

Pager::Pager(std::vector<PagingUnit> units, TierConfig config,
             std::vector<std::vector<std::size_t>> groups)
    : units_(std::move(units)), config_(config) {
  const std::size_t n = units_.size();
  for (std::size_t u = 0; u < n; ++u) {
    if (units_[u].id != u) {
      throw Error(ErrorCode::kInvalidArgument, "unit at position " + std::to_string(u) +
                                                   " has id " + std::to_string(units_[u].id));
    }
  }
  group_of_.assign(n, n);
  for (auto& g : groups) {
    if (g.empty()) continue;
    for (std::size_t u : g) {
      if (u >= n) throw Error(ErrorCode::kOutOfRange, "group names unknown unit " + std::to_string(u));
      if (group_of_[u] != n) {
        throw Error(ErrorCode::kInvalidArgument, "unit " + std::to_string(u) + " in two groups");
      }
      group_of_[u] = groups_.size();
    }
    groups_.push_back(std::move(g));
  }
  for (std::size_t u = 0; u < n; ++u) {
    if (group_of_[u] == n) {
      group_of_[u] = groups_.size();
      groups_.push_back({u});
    }
  }
  slots_.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    slots_[u].tier = Tier::kCold;
    slots_[u].pos = lru_[2].insert(lru_[2].end(), u);
    used_[2] += units_[u].bytes;
  }
}

std::uint64_t Pager::capacity(Tier t) const {
  switch (t) {
    case Tier::kHot: return config_.hot_capacity_bytes;
    case Tier::kWarm: return config_.warm_capacity_bytes;
    case Tier::kCold: return UINT64_MAX;
  }
  return 0;
}

void Pager::detach(std::size_t unit) {
  Slot& s = slots_[unit];
  const int t = static_cast<int>(s.tier);
  lru_[t].erase(s.pos);
  used_[t] -= units_[unit].bytes;
}

void Pager::attach_front(std::size_t unit, Tier t) {
  Slot& s = slots_[unit];
  s.tier = t;
  s.pos = lru_[static_cast<int>(t)].insert(lru_[static_cast<int>(t)].begin(), unit);
  used_[static_cast<int>(t)] += units_[unit].bytes;
}

bool Pager::place(std::size_t unit, Tier tier) {
  const std::uint64_t b = units_.at(unit).bytes;
  const bool same = slots_[unit].tier == tier;
  const std::uint64_t used = used_[static_cast<int>(tier)] - (same ? b : 0);
  if (tier != Tier::kCold && used + b > capacity(tier)) return false;
  detach(unit);
  Slot& s = slots_[unit];
  s.tier = tier;
  s.pos = lru_[static_cast<int>(tier)].insert(lru_[static_cast<int>(tier)].end(), unit);
  used_[static_cast<int>(tier)] += b;
  return true;
}

void Pager::demote_to_warm(std::size_t unit) {
  detach(unit);
  const std::uint64_t b = units_[unit].bytes;
  if (b > config_.warm_capacity_bytes) {
    attach_front(unit, Tier::kCold);
    return;
  }
  while (used_[1] + b > config_.warm_capacity_bytes) {
    const std::size_t victim = lru_[1].back();
    detach(victim);
    attach_front(victim, Tier::kCold);
    ++counters_.evictions;
  }
  attach_front(unit, Tier::kWarm);
}

void Pager::make_room_hot(std::uint64_t bytes, const std::vector<std::size_t>& pinned) {
  while (used_[0] + bytes > config_.hot_capacity_bytes) {
    auto it = lru_[0].rbegin();
    while (it != lru_[0].rend() && std::ranges::find(pinned, *it) != pinned.end()) ++it;
    if (it == lru_[0].rend()) return;
    demote_to_warm(*it);
    ++counters_.evictions;
  }
}

bool Pager::promote(std::size_t unit, const std::vector<std::size_t>& pinned) {
  const Tier from = slots_[unit].tier;
  const std::uint64_t b = units_[unit].bytes;
  if (from == Tier::kHot) {
    detach(unit);
    attach_front(unit, Tier::kHot);
    return true;
  }
  if (b > config_.hot_capacity_bytes) {
    // Never fits hot; serve from warm where possible.
    if (from == Tier::kCold && b <= config_.warm_capacity_bytes) {
      detach(unit);
      while (used_[1] + b > config_.warm_capacity_bytes) {
        const std::size_t victim = lru_[1].back();
        detach(victim);
        attach_front(victim, Tier::kCold);
        ++counters_.evictions;
      }
      attach_front(unit, Tier::kWarm);
      ++counters_.promotions;
    } else if (from == Tier::kWarm) {
      detach(unit);
      attach_front(unit, Tier::kWarm);
    }
    return false;
  }
  detach(unit);
  make_room_hot(b, pinned);
  attach_front(unit, Tier::kHot);
  ++counters_.promotions;
  return true;
}

AccessResult Pager::access(std::size_t unit) {
  if (unit >= units_.size()) {
    throw Error(ErrorCode::kOutOfRange, "access to unknown unit " + std::to_string(unit));
  }
  AccessResult r;
  r.served = slots_[unit].tier;
  switch (r.served) {
    case Tier::kHot:
      ++counters_.hits;
      detach(unit);
      attach_front(unit, Tier::kHot);
      r.latency = config_.hot_latency;
      break;
    case Tier::kWarm:
      ++counters_.warm_faults;
      promote(unit, {unit});
      r.latency = config_.warm_latency;
      break;
    case Tier::kCold: {
      ++counters_.cold_faults;
      const auto& group = groups_[group_of_[unit]];
      std::uint64_t total = 0;
      for (std::size_t g : group) total += units_[g].bytes;
      if (group.size() > 1 && total <= config_.hot_capacity_bytes) {
        // Neighbours first so the faulting unit ends up most recent.
        for (std::size_t g : group) {
          if (g != unit) promote(g, group);
        }
      }
      promote(unit, group.size() > 1 && total <= config_.hot_capacity_bytes
                        ? group
                        : std::vector<std::size_t>{unit});
      r.latency = config_.cold_latency;
      break;
    }
  }
  counters_.latency_units += r.latency;
  return r;
}

void Pager::prefetch(std::size_t unit) {
  if (unit >= units_.size()) {
    throw Error(ErrorCode::kOutOfRange, "prefetch of unknown unit " + std::to_string(unit));
  }
  if (slots_[unit].tier != Tier::kHot) ++counters_.prefetches;
  promote(unit, {unit});
}

std::vector<std::size_t> Pager::lru_order(Tier t) const {
  const auto& l = lru_[static_cast<int>(t)];
  return {l.begin(), l.end()};
}

PagerStats Pager::stats() const {
  PagerStats s = counters_;
  s.no_accesses = s.accesses() == 0;
  s.hit_rate = hit_rate(s.hits, s.faults());
  return s;
}

std::string Pager::check_invariants() const {
  std::size_t seen = 0;
  for (int t = 0; t < 3; ++t) {
    std::uint64_t bytes = 0;
    for (std::size_t u : lru_[t]) {
      if (static_cast<int>(slots_[u].tier) != t) {
        return "unit " + std::to_string(u) + " listed in the wrong tier";
      }
      bytes += units_[u].bytes;
      ++seen;
    }
    if (bytes != used_[t]) return "byte accounting drift in tier " + std::to_string(t);
    if (bytes > capacity(static_cast<Tier>(t))) {
      return std::string(tier_name(static_cast<Tier>(t))) + " over capacity: " +
             std::to_string(bytes) + " > " + std::to_string(capacity(static_cast<Tier>(t)));
    }
  }
  if (seen != units_.size()) return "a unit is missing from or repeated across tiers";
  return {};
}

Pager init_placement(std::span<const double> layer_scores, std::vector<PagingUnit> units,
                     const TierConfig& config, std::vector<std::vector<std::size_t>> groups) {
  std::vector<double> score(units.size(), 0.0);
  for (std::size_t u = 0; u < units.size(); ++u) {
    double best = -INFINITY;
    for (SubBlockId s : units[u].members) {
      const std::size_t layer = subblock_layer(s);
      if (layer >= layer_scores.size()) {
        throw Error(ErrorCode::kOutOfRange, "unit " + std::to_string(u) + " covers layer " +
                                                std::to_string(layer) + " but only " +
                                                std::to_string(layer_scores.size()) +
                                                " layers are scored");
      }
      best = std::max(best, layer_scores[layer]);
    }
    score[u] = best;
  }
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  Pager pager(std::move(units), config, std::move(groups));
  const std::uint64_t hot_warm = config.hot_capacity_bytes + config.warm_capacity_bytes;
  for (std::size_t u : order) {
    const std::uint64_t b = pager.units()[u].bytes;
    if (b > hot_warm) {
      pager.add_warning("unit " + std::to_string(u) + " (" + std::to_string(b) +
                        " bytes) exceeds hot+warm capacity; placed cold");
      pager.place(u, Tier::kCold);
      continue;
    }
    if (!pager.place(u, Tier::kHot) && !pager.place(u, Tier::kWarm)) pager.place(u, Tier::kCold);
  }
  return pager;
}

Pager init_placement(const ImportanceProfile& profile, std::vector<PagingUnit> units,
                     const TierConfig& config, std::vector<std::vector<std::size_t>> groups) {
  return init_placement(profile.normalized_scores, std::move(units), config, std::move(groups));
}

void replay(Pager& pager, const AccessTrace& trace, std::span<const std::size_t> unit_of) {
  for (const auto& step : trace) {
    for (SubBlockId s : step) {
      if (s >= unit_of.size()) {
        throw Error(ErrorCode::kOutOfRange, "trace names unknown sub-block " + std::to_string(s));
      }
      pager.access(unit_of[s]);
    }
  }
}

AccessTrace cyclic_trace(std::size_t num_layers, std::size_t passes) {
  AccessTrace t;
  t.reserve(num_layers * passes);
  for (std::size_t p = 0; p < passes; ++p) {
    for (std::size_t l = 0; l < num_layers; ++l) {
      t.push_back({subblock_id(l, SubBlockGroup::kAttn), subblock_id(l, SubBlockGroup::kFfn)});
    }
  }
  return t;
}

AccessTrace decode_trace(std::size_t num_layers, std::size_t passes,
                         std::span<const std::size_t> decode_layers) {
  std::vector<std::size_t> layers(decode_layers.begin(), decode_layers.end());
  std::ranges::sort(layers);
  for (std::size_t l : layers) {
    if (l >= num_layers) {
      throw Error(ErrorCode::kOutOfRange, "decode layer " + std::to_string(l) + " >= " +
                                              std::to_string(num_layers));
    }
  }
  AccessTrace t = cyclic_trace(num_layers, passes == 0 ? 0 : 1);
  for (std::size_t p = 1; p < passes; ++p) {
    for (std::size_t l : layers) {
      t.push_back({subblock_id(l, SubBlockGroup::kAttn), subblock_id(l, SubBlockGroup::kFfn)});
    }
  }
  return t;
}

AccessTrace load_trace(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot open trace '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const Json j = parse_json(ss.str());
  if (!j.is_object() || !j.contains("steps") || !j["steps"].is_array()) {
    throw Error(ErrorCode::kFormat, "trace must be an object with a \"steps\" array");
  }
  AccessTrace t;
  for (const auto& step : j["steps"]) {
    if (!step.is_array()) throw Error(ErrorCode::kFormat, "trace step must be an array");
    std::vector<SubBlockId> s;
    for (const auto& id : step) {
      if (!id.is_number_unsigned()) {
        throw Error(ErrorCode::kFormat, "sub-block ids must be non-negative integers");
      }
      s.push_back(id.get<SubBlockId>());
    }
    t.push_back(std::move(s));
  }
  return t;
}

void save_trace(const std::filesystem::path& path, const AccessTrace& trace) {
  Json j;
  j["steps"] = trace;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write trace '" + path.string() + "'");
  os << canonical_dump(j) << '\n';
}

}  // namespace nve
