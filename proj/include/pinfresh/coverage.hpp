#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "ndjson.hpp"
#include "snapshot.hpp"

namespace pinfresh {

/// Lines of one dependency covered by one consumer's test suite.
struct CoverageReport {
    LibraryRef consumer;
    LibraryRef dep;
    std::set<std::pair<std::string, int>> covered_lines;
};

class MixedDependency : public std::runtime_error {
public:
    MixedDependency() : std::runtime_error("reports cover different dependencies") {}
};

class EmptyInput : public std::runtime_error {
public:
    EmptyInput() : std::runtime_error("no coverage reports given") {}
};

class InvalidSubsetSize : public std::runtime_error {
public:
    InvalidSubsetSize(std::size_t n, std::size_t total)
        : std::runtime_error("subset size " + std::to_string(n) +
                             " out of range for " + std::to_string(total) +
                             " reports") {}
};

/// Read coverage reports from newline-delimited records:
///   {"consumer":{"name":..,"version":..},"dep":{..},
///    "lines":[{"path":..,"line":..},...]}
/// Duplicate line entries collapse; output is sorted by (dep, consumer).
inline std::vector<CoverageReport> ingest_coverage(std::istream& in) {
    std::vector<CoverageReport> reports;
    ndjson::for_each(in, [&](std::size_t line_no, const nlohmann::json& obj) {
        auto consumer = obj.find("consumer");
        auto dep = obj.find("dep");
        auto lines = obj.find("lines");
        if (consumer == obj.end() || !consumer->is_object() || dep == obj.end() ||
            !dep->is_object() || lines == obj.end() || !lines->is_array())
            throw MalformedRecord(line_no,
                                  "coverage record needs consumer, dep and lines");
        CoverageReport report;
        report.consumer = detail::ref_from_json(line_no, *consumer);
        report.dep = detail::ref_from_json(line_no, *dep);
        for (const auto& entry : *lines) {
            if (!entry.is_object() || !entry.contains("path") ||
                !entry.contains("line") || !entry["line"].is_number_integer())
                throw MalformedRecord(line_no, "line entry needs path and line");
            int line = entry["line"].get<int>();
            if (line <= 0) throw MalformedRecord(line_no, "line numbers are positive");
            report.covered_lines.emplace(entry["path"].get<std::string>(), line);
        }
        reports.push_back(std::move(report));
    });
    std::sort(reports.begin(), reports.end(),
              [](const CoverageReport& a, const CoverageReport& b) {
                  return std::tie(a.dep, a.consumer) < std::tie(b.dep, b.consumer);
              });
    return reports;
}

inline std::map<LibraryRef, std::vector<CoverageReport>>
group_by_dep(std::vector<CoverageReport> reports) {
    std::map<LibraryRef, std::vector<CoverageReport>> grouped;
    for (auto& r : reports) grouped[r.dep].push_back(std::move(r));
    return grouped;
}

/// Size of the union of covered lines; all reports must share one dependency.
inline std::size_t union_coverage(const std::vector<CoverageReport>& reports) {
    if (reports.empty()) throw EmptyInput();
    std::set<std::pair<std::string, int>> merged;
    for (const auto& r : reports) {
        if (r.dep != reports.front().dep) throw MixedDependency();
        merged.insert(r.covered_lines.begin(), r.covered_lines.end());
    }
    return merged.size();
}

namespace detail {

// Binomial coefficient saturating at `cap` (we only care whether it exceeds
// the sample budget).
inline std::uint64_t choose_capped(std::size_t k, std::size_t n, std::uint64_t cap) {
    if (n > k) return 0;
    n = std::min(n, k - n);
    std::uint64_t result = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (result > cap) return cap + 1;
        result = result * (k - n + i) / i;
    }
    return std::min<std::uint64_t>(result, cap + 1);
}

inline std::size_t union_size_of(const std::vector<CoverageReport>& reports,
                                 const std::vector<std::size_t>& indices) {
    std::set<std::pair<std::string, int>> merged;
    for (std::size_t i : indices)
        merged.insert(reports[i].covered_lines.begin(),
                      reports[i].covered_lines.end());
    return merged.size();
}

inline void enumerate_subsets(std::size_t total, std::size_t n,
                              const std::function<void(const std::vector<std::size_t>&)>& fn) {
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    for (;;) {
        fn(indices);
        // next combination in lexicographic order
        std::size_t i = n;
        while (i > 0 && indices[i - 1] == total - n + i - 1) --i;
        if (i == 0) break;
        ++indices[i - 1];
        for (std::size_t j = i; j < n; ++j) indices[j] = indices[j - 1] + 1;
    }
}

} // namespace detail

/// Mean union size over n-report subsets. When the number of distinct
/// subsets fits within `samples`, every subset is enumerated and the result
/// is exact; otherwise `samples` distinct subsets are drawn uniformly without
/// replacement from the seeded generator.
inline double sampled_union_mean(const std::vector<CoverageReport>& reports,
                                 std::size_t n, std::size_t samples = 50,
                                 std::uint64_t seed = 0) {
    if (reports.empty()) throw EmptyInput();
    if (n < 1 || n > reports.size()) throw InvalidSubsetSize(n, reports.size());
    for (const auto& r : reports)
        if (r.dep != reports.front().dep) throw MixedDependency();

    double total = 0;
    std::size_t count = 0;
    if (detail::choose_capped(reports.size(), n, samples) <= samples) {
        detail::enumerate_subsets(reports.size(), n,
                                  [&](const std::vector<std::size_t>& subset) {
                                      total += static_cast<double>(
                                          detail::union_size_of(reports, subset));
                                      ++count;
                                  });
    } else {
        std::mt19937_64 rng(seed);
        std::set<std::vector<std::size_t>> seen;
        std::vector<std::size_t> all(reports.size());
        std::iota(all.begin(), all.end(), 0);
        while (seen.size() < samples) {
            std::vector<std::size_t> subset;
            std::sample(all.begin(), all.end(), std::back_inserter(subset), n, rng);
            std::sort(subset.begin(), subset.end());
            if (!seen.insert(subset).second) continue;
            total += static_cast<double>(detail::union_size_of(reports, subset));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

/// Per-n coverage improvement over a single suite, aggregated across
/// dependencies: improvement(n) = geomean over deps of
/// sampled_union_mean(n) / sampled_union_mean(1), minus 1. A dependency
/// contributes to every n up to its report count.
inline std::map<std::size_t, double>
improvement_curve(const std::map<LibraryRef, std::vector<CoverageReport>>& by_dep,
                  std::size_t samples = 50, std::uint64_t seed = 0) {
    std::size_t max_n = 0;
    for (const auto& [dep, reports] : by_dep) {
        if (reports.empty()) throw EmptyInput();
        max_n = std::max(max_n, reports.size());
    }
    std::map<std::size_t, double> curve;
    for (std::size_t n = 1; n <= max_n; ++n) {
        double log_sum = 0;
        std::size_t deps = 0;
        for (const auto& [dep, reports] : by_dep) {
            if (reports.size() < n) continue;
            double base = sampled_union_mean(reports, 1, samples, seed);
            double at_n = sampled_union_mean(reports, n, samples, seed);
            log_sum += std::log(at_n / base);
            ++deps;
        }
        if (deps > 0) curve[n] = std::exp(log_sum / static_cast<double>(deps)) - 1.0;
    }
    return curve;
}

} // namespace pinfresh
