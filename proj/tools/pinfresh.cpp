// pinfresh: dependency-freshness toolkit CLI.
//
// Subcommands:
//   pins      detect stale pins over an ecosystem snapshot
//   security  advisory impact of freshening the detected pins
//   assess    crowdsourced-test confidence for one upgrade
//   batch     assess every vulnerability-reducing upgrade of the dataset
//   coverage  coverage improvement from pooling consumer test suites

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <pinfresh/advisories.hpp>
#include <pinfresh/command_executor.hpp>
#include <pinfresh/coverage.hpp>
#include <pinfresh/crowdtest.hpp>
#include <pinfresh/pins.hpp>
#include <pinfresh/snapshot.hpp>

namespace {

using nlohmann::json;
using namespace pinfresh;

struct RunConfig {
    std::string snapshot_path;
    std::string advisories_path;
    std::string coverage_path;
    std::string executor_kind = "scripted";
    std::string executor_config;
    std::string store_path;
    std::size_t repetitions = 5;
    std::size_t anchor_count = 500;
    std::size_t jobs = 4;
    std::uint64_t seed = 0;
    std::size_t samples = 50;
    std::string format = "human"; // human | json | csv
    std::string out_path;
};

Snapshot load_snapshot(const RunConfig& config) {
    std::ifstream in(config.snapshot_path);
    if (!in) throw std::runtime_error("cannot open snapshot: " + config.snapshot_path);
    return ingest_snapshot(in);
}

AdvisoryDb load_advisories(const RunConfig& config, const Snapshot& snap) {
    std::ifstream in(config.advisories_path);
    if (!in)
        throw std::runtime_error("cannot open advisories: " + config.advisories_path);
    return ingest_advisories(in, &snap);
}

// key=value lines; '#' starts a comment
std::map<std::string, std::string> read_kv_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::unique_ptr<TestExecutor> make_executor(const RunConfig& config) {
    if (config.executor_kind == "scripted") {
        std::ifstream script(config.executor_config);
        if (!script)
            throw std::runtime_error("cannot open executor script: " +
                                     config.executor_config);
        return std::make_unique<ScriptedExecutor>(script, config.seed);
    }
    if (config.executor_kind == "command") {
        auto kv = read_kv_config(config.executor_config);
        CommandExecutor::Config cmd;
        if (!kv.count("run_cmd"))
            throw std::runtime_error("command executor config needs run_cmd=");
        cmd.run_cmd = kv["run_cmd"];
        if (kv.count("list_cmd")) cmd.list_cmd = kv["list_cmd"];
        if (kv.count("timeout_sec")) cmd.test_timeout_sec = std::stoi(kv["timeout_sec"]);
        if (kv.count("budget_sec")) cmd.consumer_budget_sec = std::stoi(kv["budget_sec"]);
        return std::make_unique<CommandExecutor>(cmd);
    }
    throw std::runtime_error("unknown executor kind: " + config.executor_kind);
}

void write_output(const RunConfig& config, const std::string& text) {
    if (config.out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(config.out_path);
    if (!out) throw std::runtime_error("cannot open output: " + config.out_path);
    out << text;
}

json ref_json(const LibraryRef& ref) {
    return {{"name", ref.name}, {"version", ref.version}};
}

// name:from:to, splitting at the last two colons so the name may itself
// contain ':' (Maven group:artifact coordinates)
Upgrade parse_upgrade_spec(const std::string& spec) {
    auto last = spec.rfind(':');
    auto second = last == std::string::npos ? std::string::npos
                                            : spec.rfind(':', last - 1);
    if (second == std::string::npos || second == 0)
        throw std::runtime_error("upgrade spec must be name:from:to");
    return {spec.substr(0, second),
            parse_version(spec.substr(second + 1, last - second - 1)),
            parse_version(spec.substr(last + 1))};
}

// --- subcommands -----------------------------------------------------------

int cmd_pins(const RunConfig& config) {
    Snapshot snap = load_snapshot(config);
    DatasetStats stats;
    PinDataset dataset;
    if (!snap.empty()) {
        dataset = build_pin_dataset(snap, std::min(config.anchor_count, snap.size()));
        stats = dataset_stats(dataset);
    }

    if (config.format == "csv") {
        std::ostringstream out;
        export_pin_dataset_csv(dataset, out);
        write_output(config, out.str());
    } else if (config.format == "json") {
        std::ostringstream out;
        export_pin_dataset(dataset, out);
        write_output(config, out.str());
    } else {
        std::ostringstream out;
        out << "anchors: " << dataset.anchors.size() << '\n'
            << "consumers: " << stats.consumers << '\n'
            << "consumers with >=1 direct stale pin: "
            << stats.consumers_with_direct_stale << " (" << stats.pct_with_direct_stale
            << "%)\n"
            << "consumers with >=1 indirect stale pin: "
            << stats.consumers_with_indirect_stale << " ("
            << stats.pct_with_indirect_stale << "%)\n"
            << "stale pins: " << stats.direct_pins << " direct, " << stats.indirect_pins
            << " indirect\n"
            << "distinct upgrades: " << stats.direct_upgrades << " direct, "
            << stats.indirect_upgrades << " indirect\n";
        write_output(config, out.str());
    }
    return 0;
}

int cmd_security(const RunConfig& config) {
    Snapshot snap = load_snapshot(config);
    AdvisoryDb db = load_advisories(config, snap);
    PinDataset dataset =
        build_pin_dataset(snap, std::min(config.anchor_count, snap.size()));
    ImpactReport report = impact_report(db, dataset.upgrades);

    json doc{{"upgrades", dataset.upgrades.size()},
             {"reduced_count", report.reduced_count},
             {"increased_count", report.increased_count},
             {"unchanged_count", report.unchanged_count},
             {"total_delta", report.total_delta}};
    if (report.reduce_to_increase_ratio)
        doc["reduce_to_increase_ratio"] = *report.reduce_to_increase_ratio;

    if (config.format == "json") {
        write_output(config, doc.dump(2) + '\n');
    } else {
        std::ostringstream out;
        out << "upgrades: " << dataset.upgrades.size() << '\n'
            << "reduce vulnerabilities: " << report.reduced_count << '\n'
            << "increase vulnerabilities: " << report.increased_count << '\n'
            << "no change: " << report.unchanged_count << '\n'
            << "total delta: " << report.total_delta << '\n';
        if (report.reduce_to_increase_ratio)
            out << "reduce:increase ratio: " << *report.reduce_to_increase_ratio
                << "x\n";
        else
            out << "reduce:increase ratio: n/a (nothing increases)\n";
        write_output(config, out.str());
    }
    return 0;
}

int cmd_assess(const RunConfig& config, const std::string& upgrade_spec) {
    Snapshot snap = load_snapshot(config);
    Upgrade upgrade = parse_upgrade_spec(upgrade_spec);
    auto executor = make_executor(config);

    AssessOptions opts;
    opts.repetitions = config.repetitions;
    opts.jobs = config.jobs;
    std::optional<ResultStore> store;
    if (!config.store_path.empty()) {
        store.emplace(config.store_path);
        opts.store = &*store;
    }
    Assessment a = assess_upgrade(snap, upgrade, *executor, opts);

    std::size_t safe = 0, unsafe_votes = 0, ignored = 0;
    for (const auto& [consumer, v] : a.votes) {
        safe += v == Vote::safe;
        unsafe_votes += v == Vote::unsafe;
        ignored += v == Vote::ignore;
    }

    if (config.format == "json") {
        json votes = json::object();
        for (const auto& [consumer, v] : a.votes)
            votes[to_string(consumer)] = to_string(v);
        json untested = json::array();
        for (const auto& [consumer, reason] : a.untested_consumers)
            untested.push_back({{"consumer", to_string(consumer)}, {"reason", reason}});
        json doc{{"upgrade", to_string(upgrade)}, {"confidence", a.confidence},
                 {"votes", votes},               {"untested", untested},
                 {"warnings", a.warnings}};
        write_output(config, doc.dump(2) + '\n');
    } else {
        std::ostringstream out;
        out << "upgrade: " << to_string(upgrade) << '\n'
            << "confidence: " << a.confidence << " (" << safe << " safe / "
            << unsafe_votes << " unsafe / " << ignored << " ignored)\n";
        if (!a.untested_consumers.empty())
            out << "untested consumers: " << a.untested_consumers.size() << '\n';
        for (const auto& w : a.warnings) out << "warning: " << w << '\n';
        write_output(config, out.str());
    }

    if (a.votes.empty()) return 3;  // untested
    return a.confidence > 0 ? 0 : 2;
}

int cmd_batch(const RunConfig& config) {
    Snapshot snap = load_snapshot(config);
    AdvisoryDb db = load_advisories(config, snap);
    PinDataset dataset =
        build_pin_dataset(snap, std::min(config.anchor_count, snap.size()));
    auto executor = make_executor(config);

    AssessOptions opts;
    opts.repetitions = config.repetitions;
    opts.jobs = config.jobs;
    std::optional<ResultStore> store;
    if (!config.store_path.empty()) {
        store.emplace(config.store_path);
        opts.store = &*store;
    }
    BatchReport report = batch_assess(snap, dataset, db, *executor, opts);

    if (config.format == "json") {
        json rows = json::array();
        for (const auto& row : report.rows) {
            json r{{"upgrade", to_string(row.upgrade)},
                   {"delta", row.delta},
                   {"category", to_string(row.category)},
                   {"consumer_count", row.consumer_count}};
            if (row.confidence) r["confidence"] = *row.confidence;
            if (row.error) r["error"] = *row.error;
            rows.push_back(std::move(r));
        }
        json thresholds = json::object();
        for (const auto& [threshold, consumers] : report.consumers_at_min_confidence)
            thresholds[std::to_string(threshold)] = consumers;
        json doc{{"rows", rows},
                 {"positive", report.positive},
                 {"zero", report.zero},
                 {"untested", report.untested},
                 {"consumers_at_min_confidence", thresholds}};
        write_output(config, doc.dump(2) + '\n');
    } else if (config.format == "csv") {
        std::ostringstream out;
        out << "upgrade,delta,category,confidence,consumer_count\n";
        for (const auto& row : report.rows) {
            out << to_string(row.upgrade) << ',' << row.delta << ','
                << to_string(row.category) << ',';
            if (row.confidence) out << *row.confidence;
            out << ',' << row.consumer_count << '\n';
        }
        write_output(config, out.str());
    } else {
        std::ostringstream out;
        out << "vulnerability-reducing upgrades: " << report.rows.size() << '\n'
            << "  positive confidence: " << report.positive << '\n'
            << "  zero confidence:     " << report.zero << '\n'
            << "  untested:            " << report.untested << '\n';
        for (const auto& [threshold, consumers] : report.consumers_at_min_confidence)
            out << "consumers with upgrade confidence >= " << threshold << ": "
                << consumers << '\n';
        write_output(config, out.str());
    }
    return 0;
}

int cmd_coverage(const RunConfig& config) {
    std::ifstream in(config.coverage_path);
    if (!in) throw std::runtime_error("cannot open coverage: " + config.coverage_path);
    auto grouped = group_by_dep(ingest_coverage(in));
    auto curve = improvement_curve(grouped, config.samples, config.seed);

    if (config.format == "json") {
        json doc = json::object();
        for (const auto& [n, improvement] : curve)
            doc[std::to_string(n)] = improvement;
        write_output(config, json{{"improvement_by_suites", doc}}.dump(2) + '\n');
    } else if (config.format == "csv") {
        std::ostringstream out;
        out << "suites,improvement_pct\n";
        for (const auto& [n, improvement] : curve)
            out << n << ',' << improvement * 100.0 << '\n';
        write_output(config, out.str());
    } else {
        std::ostringstream out;
        out << "suites  coverage improvement over single suite\n";
        for (const auto& [n, improvement] : curve)
            out << "  " << n << "     " << improvement * 100.0 << "%\n";
        write_output(config, out.str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dependency-freshness toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig config;
    app.set_config("--config")->description("key=value config file");
    app.add_option("--snapshot", config.snapshot_path, "snapshot file (NDJSON)");
    app.add_option("--advisories", config.advisories_path, "advisory file (NDJSON)");
    app.add_option("--coverage", config.coverage_path, "coverage file (NDJSON)");
    app.add_option("--executor", config.executor_kind, "scripted | command");
    app.add_option("--executor-config", config.executor_config,
                   "script file (scripted) or key=value file (command)");
    app.add_option("--store", config.store_path, "append-only result store path");
    app.add_option("--reps", config.repetitions, "repetitions per test")
        ->check(CLI::PositiveNumber);
    app.add_option("--anchors", config.anchor_count, "anchor count")
        ->check(CLI::PositiveNumber);
    app.add_option("--jobs", config.jobs, "worker pool width")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", config.seed, "seed for all randomness");
    app.add_option("--samples", config.samples, "max coverage subsets sampled per n");
    app.add_option("--format", config.format, "human | json | csv")
        ->check(CLI::IsMember({"human", "json", "csv"}));
    app.add_option("--out", config.out_path, "write report here instead of stdout");

    auto* pins = app.add_subcommand("pins", "detect stale pins");
    auto* security = app.add_subcommand("security", "advisory impact of upgrades");
    std::string upgrade_spec;
    auto* assess = app.add_subcommand("assess", "confidence score for one upgrade");
    assess->add_option("upgrade", upgrade_spec, "name:from:to")->required();
    auto* batch = app.add_subcommand("batch", "assess vulnerability-reducing upgrades");
    auto* coverage = app.add_subcommand("coverage", "coverage improvement curve");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pins->parsed()) return cmd_pins(config);
        if (security->parsed()) return cmd_security(config);
        if (assess->parsed()) return cmd_assess(config, upgrade_spec);
        if (batch->parsed()) return cmd_batch(config);
        if (coverage->parsed()) return cmd_coverage(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
