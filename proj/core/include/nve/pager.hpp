// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-tier residency simulator. Sub-blocks are (layer, {attn, ffn}) pairs,
// id = 2 * layer + group. Sub-blocks are grouped into paging units by PMI
// co-activation; units move between hot, warm and cold tiers as a whole.
// Latencies are accounting units, nothing sleeps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nve/canonical_json.hpp"
#include "nve/profiler.hpp"

namespace nve {

enum class Tier : std::uint8_t { kHot = 0, kWarm = 1, kCold = 2 };
std::string_view tier_name(Tier t);

enum class SubBlockGroup : std::uint8_t { kAttn = 0, kFfn = 1 };
using SubBlockId = std::size_t;

constexpr SubBlockId subblock_id(std::size_t layer, SubBlockGroup g) {
  return 2 * layer + static_cast<std::size_t>(g);
}
constexpr std::size_t subblock_layer(SubBlockId id) { return id / 2; }

/// One step of an access trace: the sub-blocks touched together.
using AccessTrace = std::vector<std::vector<SubBlockId>>;

struct TierConfig {
  std::uint64_t hot_capacity_bytes = 0;
  std::uint64_t warm_capacity_bytes = 0;
  std::uint32_t hot_latency = 0;
  std::uint32_t warm_latency = 1;
  std::uint32_t cold_latency = 10;
};

struct PagingUnit {
  std::size_t id = 0;
  std::vector<SubBlockId> members;  ///< sorted
  std::uint64_t bytes = 0;

  friend bool operator==(const PagingUnit&, const PagingUnit&) = default;
};

/// Step counts behind one PMI value.
struct PairCounts {
  std::uint64_t steps = 0;  ///< S
  std::uint64_t a = 0;      ///< steps containing a
  std::uint64_t b = 0;      ///< steps containing b
  std::uint64_t ab = 0;     ///< steps containing both
};

/// ln(P(a,b) / (P(a) P(b))) with frequencies over steps, i.e.
/// ln(ab * S / (a * b)). Exactly 0 when ab * S == a * b. nullopt when the pair
/// never co-occurs (or a marginal is zero): such pairs are never linked.
std::optional<double> pmi(const PairCounts& c);

PairCounts pair_counts(const AccessTrace& trace, SubBlockId a, SubBlockId b);

/// Links every pair with PMI >= threshold and returns the connected components
/// over sub-blocks [0, subblock_bytes.size()), ordered by smallest member.
/// Throws kInvalidArgument on an empty trace or non-finite threshold, and
/// kOutOfRange for a sub-block id outside the universe.
std::vector<PagingUnit> pmi_clusters(const AccessTrace& trace, double threshold,
                                     std::span<const std::uint64_t> subblock_bytes);
/// Universe inferred from the trace (max id + 1), one byte per sub-block.
std::vector<PagingUnit> pmi_clusters(const AccessTrace& trace, double threshold);

/// Unit index per sub-block.
std::vector<std::size_t> unit_index(std::span<const PagingUnit> units, std::size_t num_subblocks);

struct AccessResult {
  Tier served = Tier::kHot;
  std::uint32_t latency = 0;
};

struct PagerStats {
  std::uint64_t hits = 0;
  std::uint64_t warm_faults = 0;
  std::uint64_t cold_faults = 0;
  std::uint64_t promotions = 0;
  std::uint64_t evictions = 0;
  std::uint64_t prefetches = 0;
  std::uint64_t latency_units = 0;
  double hit_rate = 1.0;
  bool no_accesses = true;

  std::uint64_t faults() const { return warm_faults + cold_faults; }
  std::uint64_t accesses() const { return hits + faults(); }
  Json to_json() const;
};

/// hits / (hits + faults); 1.0 when nothing was accessed.
double hit_rate(std::uint64_t hits, std::uint64_t faults);

/// Single-mutator residency state. Each unit lives in exactly one tier; each
/// tier keeps an LRU list, most recent first.
class Pager {
 public:
  /// Units must have ids 0..n-1 in order. `groups` lists prefetch groups of
  /// unit ids promoted together on a cold fault; units not named form their
  /// own group. Every unit starts cold.
  Pager(std::vector<PagingUnit> units, TierConfig config,
        std::vector<std::vector<std::size_t>> groups = {});

  /// Throws kOutOfRange for an unknown unit.
  AccessResult access(std::size_t unit);
  /// Moves a unit toward hot without counting a fault or a hit.
  void prefetch(std::size_t unit);
  /// Places a unit at the LRU tail of `tier` if it fits; returns false if not.
  bool place(std::size_t unit, Tier tier);

  Tier tier_of(std::size_t unit) const { return slots_.at(unit).tier; }
  std::vector<std::size_t> lru_order(Tier t) const;
  std::uint64_t used_bytes(Tier t) const { return used_[static_cast<int>(t)]; }
  std::uint64_t capacity(Tier t) const;
  const std::vector<PagingUnit>& units() const { return units_; }
  const TierConfig& config() const { return config_; }
  std::size_t group_of(std::size_t unit) const { return group_of_.at(unit); }
  const std::vector<std::vector<std::size_t>>& groups() const { return groups_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  PagerStats stats() const;
  /// Capacity and membership invariants; returns a description of the first
  /// violation, or empty.
  std::string check_invariants() const;

 private:
  struct Slot {
    Tier tier = Tier::kCold;
    std::list<std::size_t>::iterator pos;
  };

  void detach(std::size_t unit);
  void attach_front(std::size_t unit, Tier t);
  void demote_to_warm(std::size_t unit);
  void make_room_hot(std::uint64_t bytes, const std::vector<std::size_t>& pinned);
  bool promote(std::size_t unit, const std::vector<std::size_t>& pinned);

  std::vector<PagingUnit> units_;
  TierConfig config_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::size_t> group_of_;
  std::vector<Slot> slots_;
  std::list<std::size_t> lru_[3];
  std::uint64_t used_[3] = {0, 0, 0};
  PagerStats counters_;
  std::vector<std::string> warnings_;
};

/// Orders units by the max normalised score of their member layers
/// (descending, ties to the lower unit id) and fills hot, then warm, then
/// cold, first fit. The first unit placed is the most recently used. A unit
/// larger than hot + warm goes cold with a warning.
Pager init_placement(std::span<const double> layer_scores, std::vector<PagingUnit> units,
                     const TierConfig& config,
                     std::vector<std::vector<std::size_t>> groups = {});
Pager init_placement(const ImportanceProfile& profile, std::vector<PagingUnit> units,
                     const TierConfig& config,
                     std::vector<std::vector<std::size_t>> groups = {});

/// Replays each sub-block of each step as one access of its unit.
void replay(Pager& pager, const AccessTrace& trace, std::span<const std::size_t> unit_of);

/// Step per layer visit {attn, ffn}; every pass visits all layers in order.
AccessTrace cyclic_trace(std::size_t num_layers, std::size_t passes);
/// Pass 0 visits all layers (warm-up); later passes visit only
/// `decode_layers`, in ascending order.
AccessTrace decode_trace(std::size_t num_layers, std::size_t passes,
                         std::span<const std::size_t> decode_layers);

/// {"steps":[[0,1],[2,3],...]}
AccessTrace load_trace(const std::filesystem::path& path);
void save_trace(const std::filesystem::path& path, const AccessTrace& trace);

}  // namespace nve
