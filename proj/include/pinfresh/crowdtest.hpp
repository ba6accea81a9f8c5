#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "advisories.hpp"
#include "ndjson.hpp"
#include "pins.hpp"
#include "snapshot.hpp"

namespace pinfresh {

/// One test method of a consumer's suite.
struct TestId {
    std::string suite;
    std::string method;

    friend auto operator<=>(const TestId&, const TestId&) = default;
};

inline std::string to_string(const TestId& t) { return t.suite + "::" + t.method; }

enum class TestResult { pass, fail };

/// Outcomes of one test against one dependency version, r repetitions.
struct ExecutionRecord {
    LibraryRef consumer;
    TestId test;
    LibraryRef dep;
    std::vector<TestResult> repetitions;
};

enum class OutcomeClass { pass, fail, flaky };

inline const char* to_string(OutcomeClass o) {
    switch (o) {
    case OutcomeClass::pass: return "pass";
    case OutcomeClass::fail: return "fail";
    default: return "flaky";
    }
}

enum class Vote { safe, unsafe, ignore };

inline const char* to_string(Vote v) {
    switch (v) {
    case Vote::safe: return "safe";
    case Vote::unsafe: return "unsafe";
    default: return "ignore";
    }
}

class WrongRepetitionCount : public std::runtime_error {
public:
    WrongRepetitionCount(std::size_t got, std::size_t expected)
        : std::runtime_error("expected " + std::to_string(expected) +
                             " repetitions, got " + std::to_string(got)) {}
};

class InvalidUpgrade : public std::runtime_error {
public:
    explicit InvalidUpgrade(const Upgrade& u)
        : std::runtime_error("upgrade endpoints not in snapshot: " + to_string(u)) {}
};

/// pass iff every repetition passed, fail iff every repetition failed,
/// flaky otherwise.
inline OutcomeClass classify_outcome(const ExecutionRecord& rec, std::size_t r) {
    if (rec.repetitions.size() != r || r == 0)
        throw WrongRepetitionCount(rec.repetitions.size(), r);
    bool any_pass = false, any_fail = false;
    for (TestResult res : rec.repetitions)
        (res == TestResult::pass ? any_pass : any_fail) = true;
    if (!any_fail) return OutcomeClass::pass;
    if (!any_pass) return OutcomeClass::fail;
    return OutcomeClass::flaky;
}

/// Consumer vote from per-test outcome classes at the old and new dependency
/// versions. Tests present in only one map are dropped (and reported via
/// `warnings` when given).
///   unsafe: some test passes at old and fails at new
///   safe:   no such test, at least one test passes at old, and every
///           old-passing test also passes at new
///   ignore: everything else (including no consistently passing old tests)
inline Vote vote(const std::map<TestId, OutcomeClass>& outcomes_at_old,
                 const std::map<TestId, OutcomeClass>& outcomes_at_new,
                 std::vector<std::string>* warnings = nullptr) {
    bool any_pass_old = false;
    bool all_old_passes_hold = true;
    for (const auto& [test, old_outcome] : outcomes_at_old) {
        auto it = outcomes_at_new.find(test);
        if (it == outcomes_at_new.end()) {
            if (warnings)
                warnings->push_back("test " + to_string(test) +
                                    " missing at new version; dropped");
            continue;
        }
        if (old_outcome != OutcomeClass::pass) continue;
        any_pass_old = true;
        if (it->second == OutcomeClass::fail) return Vote::unsafe;
        if (it->second != OutcomeClass::pass) {
            all_old_passes_hold = false;
            if (warnings)
                warnings->push_back("test " + to_string(test) +
                                    " went pass -> flaky; possible masked breakage");
        }
    }
    if (warnings)
        for (const auto& [test, outcome] : outcomes_at_new)
            if (!outcomes_at_old.count(test))
                warnings->push_back("test " + to_string(test) +
                                    " missing at old version; dropped");
    if (any_pass_old && all_old_passes_hold) return Vote::safe;
    return Vote::ignore;
}

/// 0 if anyone voted unsafe, otherwise the number of safe votes.
inline std::size_t confidence(const std::map<LibraryRef, Vote>& votes) {
    std::size_t safe = 0;
    for (const auto& [consumer, v] : votes) {
        if (v == Vote::unsafe) return 0;
        if (v == Vote::safe) ++safe;
    }
    return safe;
}

struct Assessment {
    Upgrade upgrade;
    std::map<LibraryRef, Vote> votes;
    std::size_t confidence = 0;
    std::map<LibraryRef, std::string> untested_consumers; // consumer -> reason
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Executors

enum class Availability { available, unavailable };

/// Supplies consumer test suites and runs single repetitions. Implementations
/// must be safe for concurrent run() calls.
class TestExecutor {
public:
    virtual ~TestExecutor() = default;
    virtual Availability availability(const LibraryRef& consumer) = 0;
    virtual std::vector<TestId> discover(const LibraryRef& consumer) = 0;
    virtual TestResult run(const LibraryRef& consumer, const TestId& test,
                           const LibraryRef& dep) = 0;
};

class ExecutorFailure : public std::runtime_error {
public:
    ExecutorFailure(const LibraryRef& consumer, const std::string& reason)
        : std::runtime_error("executor failed for " + to_string(consumer) + ": " +
                             reason) {}
};

/// Fixture-driven executor. Script lines:
///   {"consumer":{"name":..,"version":..},"test":{"suite":..,"method":..},
///    "dep_version":..,"outcomes":["pass","fail",...],"flaky_rate":0.0}
/// The outcomes list is cycled when shorter than the repetition count.
/// A nonzero flaky_rate flips outcomes pseudo-randomly, deterministically
/// derived from the seed and the call coordinates.
class ScriptedExecutor : public TestExecutor {
public:
    explicit ScriptedExecutor(std::istream& script, std::uint64_t seed = 0)
        : seed_(seed) {
        ndjson::for_each(script, [&](std::size_t line, const nlohmann::json& obj) {
            auto consumer_it = obj.find("consumer");
            auto test_it = obj.find("test");
            if (consumer_it == obj.end() || !consumer_it->is_object() ||
                test_it == obj.end() || !test_it->is_object())
                throw MalformedRecord(line, "script line needs \"consumer\" and \"test\"");
            LibraryRef consumer = detail::ref_from_json(line, *consumer_it);
            TestId test{ndjson::require_string(line, *test_it, "suite"),
                        ndjson::require_string(line, *test_it, "method")};
            std::string dep_version = ndjson::require_string(line, obj, "dep_version");
            auto outcomes_it = obj.find("outcomes");
            if (outcomes_it == obj.end() || !outcomes_it->is_array() ||
                outcomes_it->empty())
                throw MalformedRecord(line, "script line needs non-empty \"outcomes\"");
            Entry entry;
            for (const auto& o : *outcomes_it) {
                if (!o.is_string() ||
                    (o.get<std::string>() != "pass" && o.get<std::string>() != "fail"))
                    throw MalformedRecord(line, "outcomes must be \"pass\" or \"fail\"");
                entry.outcomes.push_back(o.get<std::string>() == "pass"
                                             ? TestResult::pass
                                             : TestResult::fail);
            }
            if (auto fr = obj.find("flaky_rate"); fr != obj.end())
                entry.flaky_rate = fr->get<double>();
            tests_[consumer].insert(test);
            entries_[Key{consumer, test, dep_version}] = std::move(entry);
        });
    }

    Availability availability(const LibraryRef& consumer) override {
        return tests_.count(consumer) ? Availability::available
                                      : Availability::unavailable;
    }

    std::vector<TestId> discover(const LibraryRef& consumer) override {
        auto it = tests_.find(consumer);
        if (it == tests_.end()) return {};
        return {it->second.begin(), it->second.end()};
    }

    TestResult run(const LibraryRef& consumer, const TestId& test,
                   const LibraryRef& dep) override {
        Key key{consumer, test, dep.version};
        std::size_t rep;
        const Entry* entry;
        {
            std::lock_guard lock(mutex_);
            auto it = entries_.find(key);
            if (it == entries_.end()) return TestResult::fail; // no fixture: error case
            entry = &it->second;
            rep = counters_[key]++;
        }
        TestResult result = entry->outcomes[rep % entry->outcomes.size()];
        if (entry->flaky_rate > 0.0 && flip(key, rep) < entry->flaky_rate)
            result = result == TestResult::pass ? TestResult::fail : TestResult::pass;
        return result;
    }

private:
    struct Key {
        LibraryRef consumer;
        TestId test;
        std::string dep_version;
        friend auto operator<=>(const Key&, const Key&) = default;
    };
    struct Entry {
        std::vector<TestResult> outcomes;
        double flaky_rate = 0.0;
    };

    double flip(const Key& key, std::size_t rep) const {
        std::uint64_t h = seed_ ^ 0x9e3779b97f4a7c15ULL;
        auto mix = [&h](const std::string& s) {
            for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
        };
        mix(key.consumer.name);
        mix(key.consumer.version);
        mix(key.test.suite);
        mix(key.test.method);
        mix(key.dep_version);
        h ^= rep + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
        return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
    }

    std::uint64_t seed_;
    std::map<LibraryRef, std::set<TestId>> tests_;
    std::map<Key, Entry> entries_;
    std::map<Key, std::size_t> counters_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Result store

/// Append-only newline-delimited store of execution records plus one terminal
/// assessment object per upgrade. Appends are serialized.
class ResultStore {
public:
    explicit ResultStore(const std::string& path)
        : out_(path, std::ios::app), path_(path) {
        if (!out_) throw std::runtime_error("cannot open result store: " + path);
    }

    void append_execution(const Upgrade& upgrade, const ExecutionRecord& rec,
                          std::size_t rep_base = 0) {
        nlohmann::json obj{
            {"type", "execution"},
            {"upgrade", to_string(upgrade)},
            {"consumer", {{"name", rec.consumer.name}, {"version", rec.consumer.version}}},
            {"test", {{"suite", rec.test.suite}, {"method", rec.test.method}}},
            {"dep", {{"name", rec.dep.name}, {"version", rec.dep.version}}},
            {"rep_base", rep_base}};
        nlohmann::json outcomes = nlohmann::json::array();
        for (TestResult r : rec.repetitions)
            outcomes.push_back(r == TestResult::pass ? "pass" : "fail");
        obj["outcomes"] = std::move(outcomes);
        std::lock_guard lock(mutex_);
        out_ << obj.dump() << '\n';
    }

    void append_assessment(const Assessment& a) {
        nlohmann::json votes = nlohmann::json::object();
        for (const auto& [consumer, v] : a.votes)
            votes[to_string(consumer)] = to_string(v);
        nlohmann::json untested = nlohmann::json::array();
        for (const auto& [consumer, reason] : a.untested_consumers)
            untested.push_back({{"consumer", to_string(consumer)}, {"reason", reason}});
        nlohmann::json obj{{"type", "assessment"},
                           {"upgrade", to_string(a.upgrade)},
                           {"votes", votes},
                           {"confidence", a.confidence},
                           {"untested", untested}};
        std::lock_guard lock(mutex_);
        out_ << obj.dump() << '\n';
        out_.flush();
    }

    const std::string& path() const { return path_; }

private:
    std::ofstream out_;
    std::string path_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Assessment pipeline

struct AssessOptions {
    std::size_t repetitions = 5;
    std::size_t jobs = 4;
    ResultStore* store = nullptr;
};

namespace detail {

/// One consumer per name; highest parseable version wins, falling back to
/// the lexicographically greatest version text.
inline std::vector<LibraryRef> dedupe_by_name(const Snapshot& s,
                                              const std::vector<LibraryRef>& refs) {
    std::map<std::string, LibraryRef> best;
    for (const auto& ref : refs) {
        auto [it, inserted] = best.emplace(ref.name, ref);
        if (inserted) continue;
        const auto& cur = s.library(it->second).parsed;
        const auto& cand = s.library(ref).parsed;
        bool better = false;
        if (cand && cur)
            better = *cand > *cur;
        else if (cand && !cur)
            better = true;
        else if (!cand && !cur)
            better = ref.version > it->second.version;
        if (better) it->second = ref;
    }
    std::vector<LibraryRef> out;
    for (auto& [name, ref] : best) out.push_back(std::move(ref));
    return out;
}

struct ConsumerResult {
    LibraryRef consumer;
    std::optional<Vote> vote;
    std::optional<std::string> untested_reason;
    std::vector<ExecutionRecord> records;
    std::vector<std::string> warnings;
};

inline ConsumerResult assess_consumer(const LibraryRef& consumer,
                                      const LibraryRef& old_dep,
                                      const LibraryRef& new_dep, TestExecutor& exec,
                                      std::size_t r) {
    ConsumerResult result;
    result.consumer = consumer;
    try {
        if (exec.availability(consumer) == Availability::unavailable) {
            result.untested_reason = "no test artifact available";
            return result;
        }
        auto tests = exec.discover(consumer);
        if (tests.empty()) {
            result.untested_reason = "test artifact contains no tests";
            return result;
        }
        std::sort(tests.begin(), tests.end());
        std::map<TestId, OutcomeClass> at_old, at_new;
        for (const auto& [dep, outcomes] :
             {std::pair{old_dep, &at_old}, std::pair{new_dep, &at_new}}) {
            for (const auto& test : tests) {
                ExecutionRecord rec{consumer, test, dep, {}};
                rec.repetitions.reserve(r);
                for (std::size_t i = 0; i < r; ++i)
                    rec.repetitions.push_back(exec.run(consumer, test, dep));
                (*outcomes)[test] = classify_outcome(rec, r);
                result.records.push_back(std::move(rec));
            }
        }
        result.vote = vote(at_old, at_new, &result.warnings);
    } catch (const std::exception& e) {
        result.vote.reset();
        result.records.clear();
        result.untested_reason = std::string("executor failure: ") + e.what();
    }
    return result;
}

} // namespace detail

/// Run the four-step assessment for one upgrade: enumerate direct consumers
/// of the pinned version, execute each testable consumer's suite r times per
/// dependency version, persist execution records, and reduce to votes and a
/// confidence score. Deterministic given a deterministic executor, regardless
/// of worker count.
inline Assessment assess_upgrade(const Snapshot& s, const Upgrade& u,
                                 TestExecutor& exec, const AssessOptions& opts = {}) {
    auto old_ref = s.find(u.dep_name, u.from);
    auto new_ref = s.find(u.dep_name, u.to);
    if (!old_ref || !new_ref) throw InvalidUpgrade(u);

    auto consumers = detail::dedupe_by_name(s, s.direct_consumers(*old_ref));

    std::vector<detail::ConsumerResult> results(consumers.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= consumers.size()) break;
            results[i] = detail::assess_consumer(consumers[i], *old_ref, *new_ref,
                                                 exec, opts.repetitions);
        }
    };
    std::size_t width = std::max<std::size_t>(1, opts.jobs);
    if (width == 1 || consumers.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < std::min(width, consumers.size()); ++i)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    Assessment assessment;
    assessment.upgrade = u;
    for (auto& res : results) {
        if (res.vote)
            assessment.votes.emplace(res.consumer, *res.vote);
        else
            assessment.untested_consumers.emplace(
                res.consumer, res.untested_reason.value_or("unknown"));
        for (auto& w : res.warnings)
            assessment.warnings.push_back(to_string(res.consumer) + ": " + w);
        if (opts.store)
            for (const auto& rec : res.records) opts.store->append_execution(u, rec);
    }
    std::sort(assessment.warnings.begin(), assessment.warnings.end());
    assessment.confidence = confidence(assessment.votes);
    if (opts.store) opts.store->append_assessment(assessment);
    return assessment;
}

// ---------------------------------------------------------------------------
// Batch assessment

enum class BatchCategory { positive, zero, untested };

inline const char* to_string(BatchCategory c) {
    switch (c) {
    case BatchCategory::positive: return "positive";
    case BatchCategory::zero: return "zero";
    default: return "untested";
    }
}

struct BatchRow {
    Upgrade upgrade;
    int delta = 0;
    std::optional<std::size_t> confidence; // absent when untested
    std::size_t consumer_count = 0;        // dataset consumers sharing the pin
    BatchCategory category = BatchCategory::untested;
    std::optional<std::string> error;
};

struct BatchReport {
    std::vector<BatchRow> rows;
    std::size_t positive = 0;
    std::size_t zero = 0;
    std::size_t untested = 0;
    // threshold -> dataset consumers whose upgrade scored >= threshold
    std::map<std::size_t, std::size_t> consumers_at_min_confidence;
};

/// Assess every vulnerability-reducing upgrade of the dataset and aggregate
/// the positive / zero / untested partition plus the cumulative consumer
/// counts per minimum confidence threshold (thresholds start at 2).
inline BatchReport batch_assess(const Snapshot& s, const PinDataset& dataset,
                                const AdvisoryDb& db, TestExecutor& exec,
                                const AssessOptions& opts = {}) {
    std::map<Upgrade, std::set<LibraryRef>> consumers_by_upgrade;
    for (const auto& pin : dataset.pins) {
        Upgrade u{pin.pinned.name, parse_version(pin.pinned.version),
                  parse_version(pin.upgrade_target.version)};
        consumers_by_upgrade[u].insert(pin.consumer);
    }

    BatchReport report;
    for (const auto& u : dataset.upgrades) {
        int delta = security_delta(db, u).delta;
        if (delta >= 0) continue;

        BatchRow row;
        row.upgrade = u;
        row.delta = delta;
        row.consumer_count = consumers_by_upgrade[u].size();
        try {
            Assessment a = assess_upgrade(s, u, exec, opts);
            if (a.votes.empty()) {
                row.category = BatchCategory::untested;
            } else {
                row.confidence = a.confidence;
                row.category = a.confidence > 0 ? BatchCategory::positive
                                                : BatchCategory::zero;
            }
        } catch (const std::exception& e) {
            row.category = BatchCategory::untested;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    std::sort(report.rows.begin(), report.rows.end(),
              [](const BatchRow& a, const BatchRow& b) { return a.upgrade < b.upgrade; });

    std::size_t max_confidence = 0;
    for (const auto& row : report.rows) {
        switch (row.category) {
        case BatchCategory::positive: ++report.positive; break;
        case BatchCategory::zero: ++report.zero; break;
        case BatchCategory::untested: ++report.untested; break;
        }
        if (row.confidence) max_confidence = std::max(max_confidence, *row.confidence);
    }
    for (std::size_t threshold = 2; threshold <= max_confidence; ++threshold) {
        std::size_t consumers = 0;
        for (const auto& row : report.rows)
            if (row.confidence && *row.confidence >= threshold)
                consumers += row.consumer_count;
        report.consumers_at_min_confidence[threshold] = consumers;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Result-store replay

/// Recompute assessments from persisted execution records. Returns upgrade ->
/// recomputed confidence; `stored` receives the confidences of the terminal
/// assessment objects for comparison.
inline std::map<std::string, std::size_t>
replay_confidences(std::istream& store, std::size_t r,
                   std::map<std::string, std::size_t>* stored = nullptr) {
    // upgrade -> consumer -> (test, dep version) -> repetitions
    std::map<std::string,
             std::map<LibraryRef, std::map<std::pair<TestId, std::string>,
                                           std::vector<TestResult>>>>
        runs;

    ndjson::for_each(store, [&](std::size_t line, const nlohmann::json& obj) {
        const std::string type = ndjson::require_string(line, obj, "type");
        if (type == "execution") {
            std::string upgrade = ndjson::require_string(line, obj, "upgrade");
            LibraryRef consumer = detail::ref_from_json(line, obj.at("consumer"));
            TestId test{ndjson::require_string(line, obj.at("test"), "suite"),
                        ndjson::require_string(line, obj.at("test"), "method")};
            std::string dep_version =
                ndjson::require_string(line, obj.at("dep"), "version");
            auto& reps = runs[upgrade][consumer][{test, dep_version}];
            for (const auto& o : obj.at("outcomes"))
                reps.push_back(o.get<std::string>() == "pass" ? TestResult::pass
                                                              : TestResult::fail);
        } else if (type == "assessment" && stored) {
            (*stored)[ndjson::require_string(line, obj, "upgrade")] =
                obj.at("confidence").get<std::size_t>();
        }
    });

    std::map<std::string, std::size_t> out;
    for (auto& [upgrade, per_consumer] : runs) {
        // upgrade key is "name:from:to"
        auto first = upgrade.find(':');
        auto second = upgrade.find(':', first + 1);
        std::string old_version = upgrade.substr(first + 1, second - first - 1);

        std::map<LibraryRef, Vote> votes;
        for (auto& [consumer, tests] : per_consumer) {
            std::map<TestId, OutcomeClass> at_old, at_new;
            for (auto& [key, reps] : tests) {
                ExecutionRecord rec{consumer, key.first, {}, reps};
                auto& target = key.second == old_version ? at_old : at_new;
                target[key.first] = classify_outcome(rec, r);
            }
            votes[consumer] = vote(at_old, at_new);
        }
        out[upgrade] = confidence(votes);
    }
    return out;
}

} // namespace pinfresh
