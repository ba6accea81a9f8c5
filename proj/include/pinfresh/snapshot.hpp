#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndjson.hpp"
#include "version.hpp"

namespace pinfresh {

/// Identity of one published library version. The version is kept as the
/// original text; the parsed form lives in the snapshot so that libraries
/// with non-semver versions can still participate in the graph.
struct LibraryRef {
    std::string name;
    std::string version;

    friend auto operator<=>(const LibraryRef&, const LibraryRef&) = default;
};

inline std::string to_string(const LibraryRef& ref) {
    return ref.name + '@' + ref.version;
}

class UnknownLibrary : public std::runtime_error {
public:
    explicit UnknownLibrary(const LibraryRef& ref)
        : std::runtime_error("unknown library: " + to_string(ref)) {}
};

class DanglingEdge : public std::runtime_error {
public:
    DanglingEdge(const LibraryRef& from, const LibraryRef& to)
        : std::runtime_error("edge references unknown library: " + to_string(from) +
                             " -> " + to_string(to)) {}
};

class DuplicateLibrary : public std::runtime_error {
public:
    explicit DuplicateLibrary(const LibraryRef& ref)
        : std::runtime_error("duplicate library record: " + to_string(ref)) {}
};

class SelfEdge : public std::runtime_error {
public:
    explicit SelfEdge(const LibraryRef& ref)
        : std::runtime_error("self edge on " + to_string(ref)) {}
};

namespace detail {

// RFC 3339 timestamp -> unix seconds (second precision; fraction ignored).
inline std::optional<std::int64_t> try_parse_rfc3339(const std::string& text) {
    int year, month, day, hour, minute, second;
    int consumed = 0;
    if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &year, &month, &day,
                    &hour, &minute, &second, &consumed) != 6)
        return std::nullopt;
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
        second > 60)
        return std::nullopt;

    const char* rest = text.c_str() + consumed;
    if (*rest == '.') { // fractional seconds
        ++rest;
        if (*rest < '0' || *rest > '9') return std::nullopt;
        while (*rest >= '0' && *rest <= '9') ++rest;
    }
    std::int64_t offset = 0;
    if (*rest == 'Z' || *rest == 'z') {
        ++rest;
    } else if (*rest == '+' || *rest == '-') {
        int oh, om;
        int sign = (*rest == '+') ? 1 : -1;
        if (std::sscanf(rest + 1, "%2d:%2d", &oh, &om) != 2) return std::nullopt;
        offset = sign * (oh * 3600 + om * 60);
        rest += 6;
    } else {
        return std::nullopt;
    }
    if (*rest != '\0') return std::nullopt;

    // days since epoch (civil-to-days, Hinnant)
    std::int64_t y = year;
    y -= month <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned mp = static_cast<unsigned>(month + (month > 2 ? -3 : 9));
    const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(day) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    const std::int64_t days = era * 146097 + static_cast<std::int64_t>(doe) - 719468;

    return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

inline std::string render_rfc3339(std::int64_t ts) {
    std::int64_t days = ts / 86400;
    std::int64_t rem = ts % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    // days-to-civil (Hinnant)
    days += 719468;
    const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(days - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;

    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), m, d,
                  static_cast<long long>(rem / 3600),
                  static_cast<long long>((rem % 3600) / 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

} // namespace detail

/// Immutable ecosystem snapshot: library versions with publish times plus
/// resolved direct-dependency edges. All queries are read-only and safe for
/// concurrent callers; transitive closures are memoized internally.
class Snapshot {
public:
    struct Library {
        LibraryRef ref;
        std::int64_t published = 0; // unix seconds, UTC
        std::optional<Version> parsed;
    };

    std::size_t size() const { return libs_.size(); }
    bool empty() const { return libs_.empty(); }

    bool contains(const LibraryRef& ref) const { return index_.count(ref) != 0; }

    const Library& library(const LibraryRef& ref) const { return libs_[id_of(ref)]; }

    const std::vector<Library>& libraries() const { return libs_; }

    /// All versions of a name present in the snapshot (sorted by ref).
    std::vector<LibraryRef> versions_of(const std::string& name) const {
        std::vector<LibraryRef> out;
        for (auto it = index_.lower_bound(LibraryRef{name, ""});
             it != index_.end() && it->first.name == name; ++it)
            out.push_back(it->first);
        return out;
    }

    /// Libraries whose version text did not parse; excluded from semver
    /// analyses by callers.
    std::vector<LibraryRef> unparseable_versions() const {
        std::vector<LibraryRef> out;
        for (const auto& lib : libs_)
            if (!lib.parsed) out.push_back(lib.ref);
        return out;
    }

    /// Look up a library by name and parsed version (text-insensitive,
    /// so "1.2" and "1.2.0" resolve to the same record).
    std::optional<LibraryRef> find(const std::string& name, const Version& v) const {
        for (auto it = index_.lower_bound(LibraryRef{name, ""});
             it != index_.end() && it->first.name == name; ++it) {
            const auto& parsed = libs_[it->second].parsed;
            if (parsed && *parsed == v) return it->first;
        }
        return std::nullopt;
    }

    std::vector<LibraryRef> direct_deps(const LibraryRef& ref) const {
        return to_refs(fwd_[id_of(ref)]);
    }

    std::vector<LibraryRef> direct_consumers(const LibraryRef& ref) const {
        return to_refs(rev_[id_of(ref)]);
    }

    /// Transitive closure of direct_deps, excluding the library itself.
    /// Terminates on cycles.
    std::vector<LibraryRef> all_deps(const LibraryRef& ref) const {
        return to_refs(closure(id_of(ref), fwd_, deps_cache_));
    }

    std::vector<LibraryRef> all_consumers(const LibraryRef& ref) const {
        return to_refs(closure(id_of(ref), rev_, consumers_cache_));
    }

    std::vector<LibraryRef> indirect_deps(const LibraryRef& ref) const {
        return minus(all_deps(ref), direct_deps(ref));
    }

    std::vector<LibraryRef> indirect_consumers(const LibraryRef& ref) const {
        return minus(all_consumers(ref), direct_consumers(ref));
    }

    std::vector<std::pair<LibraryRef, LibraryRef>> edges() const {
        std::vector<std::pair<LibraryRef, LibraryRef>> out;
        for (std::size_t from = 0; from < fwd_.size(); ++from)
            for (int to : fwd_[from])
                out.emplace_back(libs_[from].ref, libs_[to].ref);
        return out;
    }

private:
    friend class SnapshotBuilder;

    int id_of(const LibraryRef& ref) const {
        auto it = index_.find(ref);
        if (it == index_.end()) throw UnknownLibrary(ref);
        return it->second;
    }

    std::vector<LibraryRef> to_refs(const std::vector<int>& ids) const {
        std::vector<LibraryRef> out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(libs_[id].ref);
        std::sort(out.begin(), out.end());
        return out;
    }

    static std::vector<LibraryRef> minus(std::vector<LibraryRef> all,
                                         const std::vector<LibraryRef>& direct) {
        std::vector<LibraryRef> out;
        std::set_difference(all.begin(), all.end(), direct.begin(), direct.end(),
                            std::back_inserter(out));
        return out;
    }

    // BFS over adj from start; visited-set keeps cyclic graphs terminating.
    std::vector<int> closure(int start, const std::vector<std::vector<int>>& adj,
                             std::vector<std::optional<std::vector<int>>>& cache) const {
        {
            std::lock_guard lock(*cache_mutex_);
            if (cache[start]) return *cache[start];
        }
        std::vector<char> seen(libs_.size(), 0);
        std::deque<int> queue{start};
        seen[start] = 1;
        std::vector<int> reached;
        while (!queue.empty()) {
            int cur = queue.front();
            queue.pop_front();
            for (int next : adj[cur]) {
                if (seen[next]) continue;
                seen[next] = 1;
                reached.push_back(next);
                queue.push_back(next);
            }
        }
        std::sort(reached.begin(), reached.end());
        std::lock_guard lock(*cache_mutex_);
        cache[start] = reached;
        return reached;
    }

    std::vector<Library> libs_;
    std::map<LibraryRef, int> index_;
    std::vector<std::vector<int>> fwd_;
    std::vector<std::vector<int>> rev_;

    mutable std::unique_ptr<std::mutex> cache_mutex_ = std::make_unique<std::mutex>();
    mutable std::vector<std::optional<std::vector<int>>> deps_cache_;
    mutable std::vector<std::optional<std::vector<int>>> consumers_cache_;
};

/// Accumulates records in any order; validation happens in build().
class SnapshotBuilder {
public:
    SnapshotBuilder& add_library(std::string name, std::string version,
                                 std::int64_t published) {
        LibraryRef ref{std::move(name), std::move(version)};
        if (!pending_.emplace(ref, published).second) throw DuplicateLibrary(ref);
        return *this;
    }

    SnapshotBuilder& add_edge(LibraryRef from, LibraryRef to) {
        edges_.emplace_back(std::move(from), std::move(to));
        return *this;
    }

    Snapshot build() && {
        Snapshot snap;
        for (auto& [ref, published] : pending_) {
            int id = static_cast<int>(snap.libs_.size());
            snap.index_.emplace(ref, id);
            snap.libs_.push_back({ref, published, try_parse_version(ref.version)});
        }
        snap.fwd_.resize(snap.libs_.size());
        snap.rev_.resize(snap.libs_.size());
        for (auto& [from, to] : edges_) {
            auto fi = snap.index_.find(from);
            auto ti = snap.index_.find(to);
            if (fi == snap.index_.end()) throw DanglingEdge(from, to);
            if (ti == snap.index_.end()) throw DanglingEdge(from, to);
            if (fi->second == ti->second) throw SelfEdge(from);
            snap.fwd_[fi->second].push_back(ti->second);
            snap.rev_[ti->second].push_back(fi->second);
        }
        for (auto& adj : snap.fwd_) {
            std::sort(adj.begin(), adj.end());
            adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
        }
        for (auto& adj : snap.rev_) {
            std::sort(adj.begin(), adj.end());
            adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
        }
        snap.deps_cache_.resize(snap.libs_.size());
        snap.consumers_cache_.resize(snap.libs_.size());
        return snap;
    }

private:
    std::map<LibraryRef, std::int64_t> pending_;
    std::vector<std::pair<LibraryRef, LibraryRef>> edges_;
};

namespace detail {

inline LibraryRef ref_from_json(std::size_t line, const nlohmann::json& obj) {
    return {ndjson::require_string(line, obj, "name"),
            ndjson::require_string(line, obj, "version")};
}

} // namespace detail

/// Read a snapshot from newline-delimited records:
///   {"type":"library","name":..,"version":..,"published":<RFC 3339>}
///   {"type":"edge","from":{"name":..,"version":..},"to":{..}}
/// Order is irrelevant; edge endpoints are checked once the file ends.
inline Snapshot ingest_snapshot(std::istream& in) {
    SnapshotBuilder builder;
    ndjson::for_each(in, [&](std::size_t line, const nlohmann::json& obj) {
        const std::string type = ndjson::require_string(line, obj, "type");
        if (type == "library") {
            auto ts = detail::try_parse_rfc3339(
                ndjson::require_string(line, obj, "published"));
            if (!ts) throw MalformedRecord(line, "bad RFC 3339 timestamp");
            builder.add_library(ndjson::require_string(line, obj, "name"),
                                ndjson::require_string(line, obj, "version"), *ts);
        } else if (type == "edge") {
            auto from = obj.find("from");
            auto to = obj.find("to");
            if (from == obj.end() || to == obj.end() || !from->is_object() ||
                !to->is_object())
                throw MalformedRecord(line, "edge needs \"from\" and \"to\" objects");
            builder.add_edge(detail::ref_from_json(line, *from),
                             detail::ref_from_json(line, *to));
        } else {
            throw MalformedRecord(line, "unknown record type \"" + type + '"');
        }
    });
    return std::move(builder).build();
}

inline void export_snapshot(const Snapshot& snap, std::ostream& out) {
    for (const auto& lib : snap.libraries()) {
        nlohmann::json rec{{"type", "library"},
                           {"name", lib.ref.name},
                           {"version", lib.ref.version},
                           {"published", detail::render_rfc3339(lib.published)}};
        out << rec.dump() << '\n';
    }
    for (const auto& [from, to] : snap.edges()) {
        nlohmann::json rec{
            {"type", "edge"},
            {"from", {{"name", from.name}, {"version", from.version}}},
            {"to", {{"name", to.name}, {"version", to.version}}}};
        out << rec.dump() << '\n';
    }
}

} // namespace pinfresh
