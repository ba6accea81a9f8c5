#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "snapshot.hpp"
#include "version.hpp"

namespace pinfresh {

enum class PinKind { direct, indirect };

inline const char* to_string(PinKind k) {
    return k == PinKind::direct ? "direct" : "indirect";
}

/// A consumer pinned to an outdated dependency version while a newer
/// same-major version was already published. upgrade_target is the highest
/// such version published before the consumer.
struct StalePin {
    LibraryRef consumer;
    LibraryRef pinned;
    LibraryRef upgrade_target;
    PinKind kind;

    friend auto operator<=>(const StalePin&, const StalePin&) = default;
};

/// A dependency that was the latest same-major version available when the
/// consumer was published.
struct FreshPin {
    LibraryRef consumer;
    LibraryRef dep;
    PinKind kind;

    friend auto operator<=>(const FreshPin&, const FreshPin&) = default;
};

/// Semver-compatible version bump of one dependency name.
struct Upgrade {
    std::string dep_name;
    Version from;
    Version to;

    friend auto operator<=>(const Upgrade&, const Upgrade&) = default;
};

inline std::string to_string(const Upgrade& u) {
    return u.dep_name + ':' + render(u.from) + ':' + render(u.to);
}

struct PinAge {
    std::int64_t staleness_days = 0; // publish gap pinned -> upgrade target
    std::int64_t versions_behind = 0;
};

struct PinClassification {
    enum class Kind { stale, fresh, not_pin_relevant };
    Kind kind;
    std::optional<StalePin> stale;
    std::optional<FreshPin> fresh;
};

class NotADependency : public std::runtime_error {
public:
    NotADependency(const LibraryRef& consumer, const LibraryRef& dep)
        : std::runtime_error(to_string(dep) + " is not a dependency of " +
                             to_string(consumer)) {}
};

class EmptySnapshot : public std::runtime_error {
public:
    EmptySnapshot() : std::runtime_error("snapshot has no libraries") {}
};

namespace detail {

inline PinKind kind_of(const Snapshot& s, const LibraryRef& consumer,
                       const LibraryRef& dep) {
    auto direct = s.direct_deps(consumer);
    return std::binary_search(direct.begin(), direct.end(), dep) ? PinKind::direct
                                                                 : PinKind::indirect;
}

} // namespace detail

/// Classify one (consumer, dependency) pair as a stale pin, a fresh pin, or
/// neither. The upgrade target of a stale pin is the highest same-major
/// version of the dependency published strictly between the pinned version
/// and the consumer. Versions that fail to parse never create pins.
inline PinClassification classify_pin(const Snapshot& s, const LibraryRef& consumer,
                                      const LibraryRef& dep) {
    auto deps = s.all_deps(consumer);
    if (!std::binary_search(deps.begin(), deps.end(), dep))
        throw NotADependency(consumer, dep);

    const auto& consumer_lib = s.library(consumer);
    const auto& dep_lib = s.library(dep);
    if (!dep_lib.parsed || dep_lib.published >= consumer_lib.published)
        return {PinClassification::Kind::not_pin_relevant, {}, {}};

    const Version& pinned = *dep_lib.parsed;
    std::optional<LibraryRef> best;
    std::optional<Version> best_version;
    for (const auto& candidate : s.versions_of(dep.name)) {
        const auto& lib = s.library(candidate);
        if (!lib.parsed) continue;
        if (lib.parsed->major != pinned.major || !(*lib.parsed > pinned)) continue;
        if (!(dep_lib.published < lib.published &&
              lib.published < consumer_lib.published))
            continue;
        if (!best_version || *lib.parsed > *best_version) {
            best = candidate;
            best_version = lib.parsed;
        }
    }

    PinKind kind = detail::kind_of(s, consumer, dep);
    if (best)
        return {PinClassification::Kind::stale,
                StalePin{consumer, dep, *best, kind}, {}};
    return {PinClassification::Kind::fresh, {}, FreshPin{consumer, dep, kind}};
}

/// All stale pins of a consumer across its transitive dependencies, sorted
/// by (dependency name, version).
inline std::vector<StalePin> find_stale_pins(const Snapshot& s,
                                             const LibraryRef& consumer) {
    std::vector<StalePin> out;
    for (const auto& dep : s.all_deps(consumer)) {
        auto cls = classify_pin(s, consumer, dep);
        if (cls.kind == PinClassification::Kind::stale) out.push_back(*cls.stale);
    }
    std::sort(out.begin(), out.end(), [](const StalePin& a, const StalePin& b) {
        return a.pinned < b.pinned;
    });
    return out;
}

/// Days and versions by which the pinned dependency lags its upgrade target.
inline PinAge pin_age(const Snapshot& s, const StalePin& pin) {
    const auto& pinned_lib = s.library(pin.pinned);
    const auto& target_lib = s.library(pin.upgrade_target);
    const auto& consumer_lib = s.library(pin.consumer);

    PinAge age;
    age.staleness_days = (target_lib.published - pinned_lib.published) / 86400;

    const Version& from = *pinned_lib.parsed;
    const Version& to = *target_lib.parsed;
    std::set<Version> qualifying;
    for (const auto& candidate : s.versions_of(pin.pinned.name)) {
        const auto& lib = s.library(candidate);
        if (!lib.parsed) continue;
        const Version& v = *lib.parsed;
        if (v.major == from.major && v > from && !(v > to) &&
            lib.published < consumer_lib.published)
            qualifying.insert(v);
    }
    age.versions_behind = static_cast<std::int64_t>(qualifying.size());
    return age;
}

/// Anchor-seeded stale-pin dataset: consumers of the most popular library
/// names and their stale pins to those names.
struct PinDataset {
    std::vector<std::string> anchors;
    std::vector<LibraryRef> consumers; // highest version per consumer name
    std::vector<StalePin> pins;
    std::vector<Upgrade> upgrades; // deduplicated
};

/// Three-step construction:
///  1. rank names by the number of distinct transitive consumers across all
///     versions, keep the top anchor_count as anchors;
///  2. union those consumer sets, keep the highest parseable version per
///     consumer name;
///  3. emit each kept consumer's stale pins whose pinned name is an anchor.
inline PinDataset build_pin_dataset(const Snapshot& s, std::size_t anchor_count) {
    if (s.empty()) throw EmptySnapshot();

    // step 1: popularity = |union of allConsumers over the name's versions|
    std::map<std::string, std::set<LibraryRef>> consumers_by_name;
    for (const auto& lib : s.libraries()) {
        auto& set = consumers_by_name[lib.ref.name];
        for (auto& c : s.all_consumers(lib.ref)) set.insert(std::move(c));
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    ranked.reserve(consumers_by_name.size());
    for (const auto& [name, set] : consumers_by_name)
        ranked.emplace_back(name, set.size());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    PinDataset dataset;
    std::set<std::string> anchor_set;
    for (std::size_t i = 0; i < anchor_count && i < ranked.size(); ++i) {
        dataset.anchors.push_back(ranked[i].first);
        anchor_set.insert(ranked[i].first);
    }
    std::sort(dataset.anchors.begin(), dataset.anchors.end());

    // step 2: highest version per consumer name in the anchor-consumer union
    std::map<std::string, LibraryRef> best_consumer;
    for (const auto& name : dataset.anchors) {
        for (const auto& c : consumers_by_name[name]) {
            const auto& parsed = s.library(c).parsed;
            if (!parsed) continue;
            auto [it, inserted] = best_consumer.emplace(c.name, c);
            if (!inserted && *parsed > *s.library(it->second).parsed) it->second = c;
        }
    }
    for (const auto& [name, ref] : best_consumer) dataset.consumers.push_back(ref);

    // step 3: stale pins from the kept consumers to anchor names
    std::set<Upgrade> upgrades;
    for (const auto& consumer : dataset.consumers) {
        for (auto& pin : find_stale_pins(s, consumer)) {
            if (!anchor_set.count(pin.pinned.name)) continue;
            upgrades.insert(Upgrade{pin.pinned.name,
                                    *s.library(pin.pinned).parsed,
                                    *s.library(pin.upgrade_target).parsed});
            dataset.pins.push_back(std::move(pin));
        }
    }
    std::sort(dataset.pins.begin(), dataset.pins.end());
    dataset.upgrades.assign(upgrades.begin(), upgrades.end());
    return dataset;
}

struct DatasetStats {
    std::size_t consumers = 0;
    std::size_t consumers_with_direct_stale = 0;
    std::size_t consumers_with_indirect_stale = 0;
    std::size_t direct_pins = 0;
    std::size_t indirect_pins = 0;
    std::size_t direct_upgrades = 0;
    std::size_t indirect_upgrades = 0;
    double pct_with_direct_stale = 0.0;
    double pct_with_indirect_stale = 0.0;
};

inline DatasetStats dataset_stats(const PinDataset& d) {
    DatasetStats stats;
    stats.consumers = d.consumers.size();
    std::set<LibraryRef> with_direct, with_indirect;
    std::set<Upgrade> direct_up, indirect_up;
    for (const auto& pin : d.pins) {
        Upgrade u{pin.pinned.name, parse_version(pin.pinned.version),
                  parse_version(pin.upgrade_target.version)};
        if (pin.kind == PinKind::direct) {
            ++stats.direct_pins;
            with_direct.insert(pin.consumer);
            direct_up.insert(u);
        } else {
            ++stats.indirect_pins;
            with_indirect.insert(pin.consumer);
            indirect_up.insert(u);
        }
    }
    stats.consumers_with_direct_stale = with_direct.size();
    stats.consumers_with_indirect_stale = with_indirect.size();
    stats.direct_upgrades = direct_up.size();
    stats.indirect_upgrades = indirect_up.size();
    if (stats.consumers > 0) {
        stats.pct_with_direct_stale =
            100.0 * static_cast<double>(with_direct.size()) / stats.consumers;
        stats.pct_with_indirect_stale =
            100.0 * static_cast<double>(with_indirect.size()) / stats.consumers;
    }
    return stats;
}

inline void export_pin_dataset(const PinDataset& d, std::ostream& out) {
    for (const auto& pin : d.pins) {
        nlohmann::json rec{
            {"consumer", {{"name", pin.consumer.name}, {"version", pin.consumer.version}}},
            {"pinned", {{"name", pin.pinned.name}, {"version", pin.pinned.version}}},
            {"target",
             {{"name", pin.upgrade_target.name}, {"version", pin.upgrade_target.version}}},
            {"kind", to_string(pin.kind)}};
        out << rec.dump() << '\n';
    }
    auto stats = dataset_stats(d);
    nlohmann::json summary{{"summary",
                            {{"consumers", stats.consumers},
                             {"consumers_with_direct_stale", stats.consumers_with_direct_stale},
                             {"consumers_with_indirect_stale", stats.consumers_with_indirect_stale},
                             {"direct_pins", stats.direct_pins},
                             {"indirect_pins", stats.indirect_pins},
                             {"direct_upgrades", stats.direct_upgrades},
                             {"indirect_upgrades", stats.indirect_upgrades}}}};
    out << summary.dump() << '\n';
}

inline void export_pin_dataset_csv(const PinDataset& d, std::ostream& out) {
    out << "consumer,pinned,target,kind\n";
    for (const auto& pin : d.pins)
        out << to_string(pin.consumer) << ',' << to_string(pin.pinned) << ','
            << to_string(pin.upgrade_target) << ',' << to_string(pin.kind) << '\n';
}

} // namespace pinfresh
