#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndjson.hpp"
#include "pins.hpp"
#include "snapshot.hpp"
#include "version.hpp"

namespace pinfresh {

enum class Severity { low, medium, high, critical, unknown };

inline const char* to_string(Severity s) {
    switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::critical: return "critical";
    default: return "unknown";
    }
}

inline Severity severity_from(const std::string& text) {
    if (text == "low") return Severity::low;
    if (text == "medium") return Severity::medium;
    if (text == "high") return Severity::high;
    if (text == "critical") return Severity::critical;
    return Severity::unknown;
}

/// Vulnerability record with an explicit affected (name, version) set.
struct Advisory {
    std::string id;
    Severity severity = Severity::unknown;
    std::vector<std::pair<std::string, std::vector<Version>>> affected;
};

class DuplicateAdvisoryId : public std::runtime_error {
public:
    explicit DuplicateAdvisoryId(const std::string& id)
        : std::runtime_error("duplicate advisory id: " + id) {}
};

/// Advisories indexed by affected (name, version) for constant-time lookup.
class AdvisoryDb {
public:
    void add(Advisory advisory) {
        if (by_id_.count(advisory.id)) throw DuplicateAdvisoryId(advisory.id);
        for (const auto& [name, versions] : advisory.affected)
            for (const auto& v : versions)
                index_[{name, render(v)}].insert(advisory.id);
        by_id_.emplace(advisory.id, std::move(advisory));
    }

    std::size_t size() const { return by_id_.size(); }

    const Advisory* find(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &it->second;
    }

    std::set<std::string> vulns_of(const std::string& name, const Version& v) const {
        auto it = index_.find({name, render(v)});
        return it == index_.end() ? std::set<std::string>{} : it->second;
    }

    std::set<std::string> vulns_of(const Snapshot& s, const LibraryRef& lib) const {
        const auto& parsed = s.library(lib).parsed;
        return parsed ? vulns_of(lib.name, *parsed) : std::set<std::string>{};
    }

private:
    std::map<std::string, Advisory> by_id_;
    std::map<std::pair<std::string, std::string>, std::set<std::string>> index_;
};

/// Read advisories from newline-delimited records:
///   {"id":..,"severity":..,"affected":[{"name":..,"versions":[..]}
///                                      | {"name":..,"introduced":..,"fixed":..}]}
/// Range entries are expanded against the snapshot's known versions of the
/// name: introduced <= v < fixed.
inline AdvisoryDb ingest_advisories(std::istream& in, const Snapshot* snap = nullptr) {
    AdvisoryDb db;
    ndjson::for_each(in, [&](std::size_t line, const nlohmann::json& obj) {
        Advisory adv;
        adv.id = ndjson::require_string(line, obj, "id");
        adv.severity = severity_from(ndjson::require_string(line, obj, "severity"));
        auto affected = obj.find("affected");
        if (affected == obj.end() || !affected->is_array() || affected->empty())
            throw MalformedRecord(line, "advisory needs a non-empty \"affected\" array");
        for (const auto& entry : *affected) {
            if (!entry.is_object())
                throw MalformedRecord(line, "affected entry must be an object");
            std::string name = ndjson::require_string(line, entry, "name");
            std::vector<Version> versions;
            if (entry.contains("versions")) {
                if (!entry["versions"].is_array() || entry["versions"].empty())
                    throw MalformedRecord(line, "\"versions\" must be a non-empty array");
                for (const auto& v : entry["versions"]) {
                    if (!v.is_string())
                        throw MalformedRecord(line, "version entries must be strings");
                    auto parsed = try_parse_version(v.get<std::string>());
                    if (!parsed)
                        throw MalformedRecord(line, "unparseable advisory version \"" +
                                                        v.get<std::string>() + '"');
                    versions.push_back(*parsed);
                }
            } else if (entry.contains("introduced") && entry.contains("fixed")) {
                if (!snap)
                    throw MalformedRecord(
                        line, "range-form affected entry requires a snapshot to expand");
                Version lo = parse_version(ndjson::require_string(line, entry, "introduced"));
                Version hi = parse_version(ndjson::require_string(line, entry, "fixed"));
                for (const auto& ref : snap->versions_of(name)) {
                    const auto& parsed = snap->library(ref).parsed;
                    if (parsed && !(*parsed < lo) && *parsed < hi)
                        versions.push_back(*parsed);
                }
                if (versions.empty()) continue; // range matches nothing in snapshot
            } else {
                throw MalformedRecord(
                    line, "affected entry needs \"versions\" or \"introduced\"/\"fixed\"");
            }
            adv.affected.emplace_back(std::move(name), std::move(versions));
        }
        if (adv.affected.empty())
            throw MalformedRecord(line, "advisory affects no known versions");
        db.add(std::move(adv));
    });
    return db;
}

/// Change in advisory exposure when moving between two versions of a name.
/// Advisories affecting both versions cancel out (set semantics).
struct SecurityDelta {
    Upgrade upgrade;
    std::set<std::string> before;
    std::set<std::string> after;
    int delta = 0;
};

inline SecurityDelta security_delta(const AdvisoryDb& db, const Upgrade& u) {
    SecurityDelta d;
    d.upgrade = u;
    d.before = db.vulns_of(u.dep_name, u.from);
    d.after = db.vulns_of(u.dep_name, u.to);
    d.delta = static_cast<int>(d.after.size()) - static_cast<int>(d.before.size());
    return d;
}

struct ImpactReport {
    std::size_t reduced_count = 0;
    std::size_t increased_count = 0;
    std::size_t unchanged_count = 0;
    std::optional<double> reduce_to_increase_ratio; // absent when nothing increases
    long long total_delta = 0;
};

inline ImpactReport impact_report(const AdvisoryDb& db,
                                  const std::vector<Upgrade>& upgrades) {
    ImpactReport report;
    for (const auto& u : upgrades) {
        int delta = security_delta(db, u).delta;
        report.total_delta += delta;
        if (delta < 0)
            ++report.reduced_count;
        else if (delta > 0)
            ++report.increased_count;
        else
            ++report.unchanged_count;
    }
    if (report.increased_count > 0)
        report.reduce_to_increase_ratio =
            static_cast<double>(report.reduced_count) / report.increased_count;
    return report;
}

} // namespace pinfresh
