#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <pinfresh/command_executor.hpp>
#include <pinfresh/crowdtest.hpp>

using namespace pinfresh;

namespace {

constexpr std::int64_t kDay = 86400;

ExecutionRecord record(std::initializer_list<TestResult> reps) {
    return {{"c", "1.0.0"}, {"S", "m"}, {"d", "1.0.0"}, reps};
}

// jackson-databind 2.10.0 -> 2.11.0 with seven direct consumers.
Snapshot walkthrough_snapshot() {
    SnapshotBuilder b;
    b.add_library("jackson-databind", "2.10.0", 0)
        .add_library("jackson-databind", "2.11.0", 100 * kDay);
    for (int i = 1; i <= 7; ++i) {
        std::string name = "consumer" + std::to_string(i);
        b.add_library(name, "1.0.0", 400 * kDay);
        b.add_edge({name, "1.0.0"}, {"jackson-databind", "2.10.0"});
    }
    return std::move(b).build();
}

std::string walkthrough_script(bool flip_one = false) {
    std::string out;
    for (int i = 1; i <= 7; ++i) {
        for (const char* dep_version : {"2.10.0", "2.11.0"}) {
            bool fail = flip_one && i == 4 && std::string(dep_version) == "2.11.0";
            out += R"({"consumer":{"name":"consumer)" + std::to_string(i) +
                   R"(","version":"1.0.0"},"test":{"suite":"AppTest","method":"roundTrip"},"dep_version":")" +
                   dep_version + R"(","outcomes":[")" + (fail ? "fail" : "pass") +
                   R"("]})" "\n";
        }
    }
    return out;
}

Upgrade jackson_upgrade() {
    return {"jackson-databind", parse_version("2.10.0"), parse_version("2.11.0")};
}

} // namespace

TEST(ClassifyOutcome, ThreeCases) {
    EXPECT_EQ(classify_outcome(record({TestResult::pass, TestResult::pass,
                                       TestResult::pass, TestResult::pass,
                                       TestResult::pass}),
                               5),
              OutcomeClass::pass);
    EXPECT_EQ(classify_outcome(record({TestResult::fail, TestResult::fail,
                                       TestResult::fail, TestResult::fail,
                                       TestResult::fail}),
                               5),
              OutcomeClass::fail);
    EXPECT_EQ(classify_outcome(record({TestResult::pass, TestResult::pass,
                                       TestResult::fail, TestResult::pass,
                                       TestResult::pass}),
                               5),
              OutcomeClass::flaky);
}

TEST(ClassifyOutcome, ExhaustiveAtRFive) {
    for (unsigned mask = 0; mask < 32; ++mask) {
        ExecutionRecord rec = record({});
        int passes = 0;
        for (int bit = 0; bit < 5; ++bit) {
            bool pass = mask & (1u << bit);
            passes += pass;
            rec.repetitions.push_back(pass ? TestResult::pass : TestResult::fail);
        }
        OutcomeClass expected = passes == 5   ? OutcomeClass::pass
                                : passes == 0 ? OutcomeClass::fail
                                              : OutcomeClass::flaky;
        EXPECT_EQ(classify_outcome(rec, 5), expected) << "mask=" << mask;
    }
}

TEST(ClassifyOutcome, WrongRepetitionCountThrows) {
    EXPECT_THROW(classify_outcome(record({TestResult::pass}), 5), WrongRepetitionCount);
    EXPECT_THROW(classify_outcome(record({}), 0), WrongRepetitionCount);
}

TEST(VoteRules, SingleTestTruthTable) {
    const OutcomeClass classes[] = {OutcomeClass::pass, OutcomeClass::fail,
                                    OutcomeClass::flaky};
    TestId t{"S", "m"};
    for (OutcomeClass at_old : classes) {
        for (OutcomeClass at_new : classes) {
            Vote v = vote({{t, at_old}}, {{t, at_new}});
            Vote expected;
            if (at_old == OutcomeClass::pass && at_new == OutcomeClass::pass)
                expected = Vote::safe;
            else if (at_old == OutcomeClass::pass && at_new == OutcomeClass::fail)
                expected = Vote::unsafe;
            else
                expected = Vote::ignore; // no consistently passing old test
            EXPECT_EQ(v, expected) << to_string(at_old) << " -> " << to_string(at_new);
        }
    }
}

TEST(VoteRules, AllPassIsSafe) {
    std::map<TestId, OutcomeClass> all_pass{{{"S", "a"}, OutcomeClass::pass},
                                            {{"S", "b"}, OutcomeClass::pass}};
    EXPECT_EQ(vote(all_pass, all_pass), Vote::safe);
}

TEST(VoteRules, OneRegressionIsUnsafe) {
    std::map<TestId, OutcomeClass> at_old{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "b"}, OutcomeClass::pass}};
    std::map<TestId, OutcomeClass> at_new{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "b"}, OutcomeClass::fail}};
    EXPECT_EQ(vote(at_old, at_new), Vote::unsafe);
}

TEST(VoteRules, AllFlakyAtOldIsIgnore) {
    std::map<TestId, OutcomeClass> at_old{{{"S", "a"}, OutcomeClass::flaky},
                                          {{"S", "b"}, OutcomeClass::flaky}};
    std::map<TestId, OutcomeClass> at_new{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "b"}, OutcomeClass::pass}};
    EXPECT_EQ(vote(at_old, at_new), Vote::ignore);
}

TEST(VoteRules, PassToFlakyIsIgnoreAndWarned) {
    std::map<TestId, OutcomeClass> at_old{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "b"}, OutcomeClass::pass}};
    std::map<TestId, OutcomeClass> at_new{{{"S", "a"}, OutcomeClass::flaky},
                                          {{"S", "b"}, OutcomeClass::pass}};
    std::vector<std::string> warnings;
    EXPECT_EQ(vote(at_old, at_new, &warnings), Vote::ignore);
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(VoteRules, MismatchedTestSetsAreDropped) {
    std::map<TestId, OutcomeClass> at_old{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "only-old"}, OutcomeClass::pass}};
    std::map<TestId, OutcomeClass> at_new{{{"S", "a"}, OutcomeClass::pass},
                                          {{"S", "only-new"}, OutcomeClass::fail}};
    std::vector<std::string> warnings;
    EXPECT_EQ(vote(at_old, at_new, &warnings), Vote::safe);
    EXPECT_EQ(warnings.size(), 2u);
}

// Adding a pass->fail test can only push the vote toward unsafe.
TEST(VoteRules, MonotoneInFailures) {
    std::mt19937_64 rng(88);
    const OutcomeClass classes[] = {OutcomeClass::pass, OutcomeClass::fail,
                                    OutcomeClass::flaky};
    std::uniform_int_distribution<int> pick(0, 2), size(0, 4);
    for (int iter = 0; iter < 500; ++iter) {
        std::map<TestId, OutcomeClass> at_old, at_new;
        int n = size(rng);
        for (int i = 0; i < n; ++i) {
            TestId t{"S", "m" + std::to_string(i)};
            at_old[t] = classes[pick(rng)];
            at_new[t] = classes[pick(rng)];
        }
        Vote before = vote(at_old, at_new);
        TestId extra{"S", "regression"};
        at_old[extra] = OutcomeClass::pass;
        at_new[extra] = OutcomeClass::fail;
        EXPECT_EQ(vote(at_old, at_new), Vote::unsafe);
        (void)before;
    }
}

TEST(Confidence, CountsSafeUnlessAnyUnsafe) {
    std::map<LibraryRef, Vote> votes;
    for (int i = 0; i < 7; ++i)
        votes[{"c" + std::to_string(i), "1.0.0"}] = Vote::safe;
    EXPECT_EQ(confidence(votes), 7u);
    votes[{"c7", "1.0.0"}] = Vote::ignore;
    EXPECT_EQ(confidence(votes), 7u); // ignore never counts
    votes[{"c8", "1.0.0"}] = Vote::unsafe;
    EXPECT_EQ(confidence(votes), 0u);
    EXPECT_EQ(confidence({}), 0u);
}

TEST(ScriptedExecutorTest, CyclesShortOutcomeLists) {
    std::istringstream script(
        R"({"consumer":{"name":"c","version":"1.0.0"},"test":{"suite":"S","method":"m"},"dep_version":"1.0.0","outcomes":["pass","fail"]})"
        "\n");
    ScriptedExecutor exec(script);
    LibraryRef c{"c", "1.0.0"}, dep{"d", "1.0.0"};
    TestId t{"S", "m"};
    EXPECT_EQ(exec.availability(c), Availability::available);
    EXPECT_EQ(exec.availability({"other", "1.0.0"}), Availability::unavailable);
    EXPECT_EQ(exec.discover(c), std::vector<TestId>{t});
    EXPECT_EQ(exec.run(c, t, dep), TestResult::pass);
    EXPECT_EQ(exec.run(c, t, dep), TestResult::fail);
    EXPECT_EQ(exec.run(c, t, dep), TestResult::pass); // cycled
}

TEST(ScriptedExecutorTest, SeededFlakinessIsDeterministic) {
    std::string text =
        R"({"consumer":{"name":"c","version":"1.0.0"},"test":{"suite":"S","method":"m"},"dep_version":"1.0.0","outcomes":["pass"],"flaky_rate":0.5})"
        "\n";
    auto run_sequence = [&](std::uint64_t seed) {
        std::istringstream script(text);
        ScriptedExecutor exec(script, seed);
        std::vector<TestResult> out;
        for (int i = 0; i < 20; ++i)
            out.push_back(exec.run({"c", "1.0.0"}, {"S", "m"}, {"d", "1.0.0"}));
        return out;
    };
    EXPECT_EQ(run_sequence(1), run_sequence(1));
    EXPECT_NE(run_sequence(1), run_sequence(2)); // different seed, different flips
}

TEST(AssessUpgrade, WalkthroughConfidenceSeven) {
    Snapshot s = walkthrough_snapshot();
    std::istringstream script(walkthrough_script());
    ScriptedExecutor exec(script);
    Assessment a = assess_upgrade(s, jackson_upgrade(), exec);
    EXPECT_EQ(a.confidence, 7u);
    EXPECT_EQ(a.votes.size(), 7u);
    EXPECT_TRUE(a.untested_consumers.empty());
}

TEST(AssessUpgrade, OneRegressionDropsConfidenceToZero) {
    Snapshot s = walkthrough_snapshot();
    std::istringstream script(walkthrough_script(/*flip_one=*/true));
    ScriptedExecutor exec(script);
    Assessment a = assess_upgrade(s, jackson_upgrade(), exec);
    EXPECT_EQ(a.confidence, 0u);
    EXPECT_EQ(a.votes.at({"consumer4", "1.0.0"}), Vote::unsafe);
}

TEST(AssessUpgrade, NoTestableConsumers) {
    Snapshot s = walkthrough_snapshot();
    std::istringstream script("");
    ScriptedExecutor exec(script);
    Assessment a = assess_upgrade(s, jackson_upgrade(), exec);
    EXPECT_EQ(a.confidence, 0u);
    EXPECT_TRUE(a.votes.empty());
    EXPECT_EQ(a.untested_consumers.size(), 7u);
}

TEST(AssessUpgrade, MixedVotesFromScript) {
    // 4 safe, 2 ignore (flaky at old), 1 unsafe -> confidence 0
    Snapshot s = walkthrough_snapshot();
    std::string text;
    auto line = [](int i, const char* dep, const char* outcomes) {
        return R"({"consumer":{"name":"consumer)" + std::to_string(i) +
               R"(","version":"1.0.0"},"test":{"suite":"S","method":"m"},"dep_version":")" +
               dep + R"(","outcomes":)" + outcomes + "}\n";
    };
    for (int i = 1; i <= 4; ++i)
        text += line(i, "2.10.0", R"(["pass"])") + line(i, "2.11.0", R"(["pass"])");
    for (int i = 5; i <= 6; ++i)
        text += line(i, "2.10.0", R"(["pass","fail"])") + line(i, "2.11.0", R"(["pass"])");
    text += line(7, "2.10.0", R"(["pass"])") + line(7, "2.11.0", R"(["fail"])");

    std::istringstream script(text);
    ScriptedExecutor exec(script);
    Assessment a = assess_upgrade(s, jackson_upgrade(), exec);
    EXPECT_EQ(a.confidence, 0u);
    int safe = 0, ignore = 0, unsafe_votes = 0;
    for (const auto& [consumer, v] : a.votes) {
        safe += v == Vote::safe;
        ignore += v == Vote::ignore;
        unsafe_votes += v == Vote::unsafe;
    }
    EXPECT_EQ(safe, 4);
    EXPECT_EQ(ignore, 2);
    EXPECT_EQ(unsafe_votes, 1);
}

TEST(AssessUpgrade, HighestConsumerVersionWins) {
    SnapshotBuilder b;
    b.add_library("dep", "1.0.0", 0).add_library("dep", "1.1.0", 10 * kDay);
    b.add_library("app", "1.0.0", 100 * kDay).add_library("app", "2.0.0", 200 * kDay);
    b.add_edge({"app", "1.0.0"}, {"dep", "1.0.0"})
        .add_edge({"app", "2.0.0"}, {"dep", "1.0.0"});
    Snapshot s = std::move(b).build();
    std::istringstream script(
        R"({"consumer":{"name":"app","version":"2.0.0"},"test":{"suite":"S","method":"m"},"dep_version":"1.0.0","outcomes":["pass"]})"
        "\n"
        R"({"consumer":{"name":"app","version":"2.0.0"},"test":{"suite":"S","method":"m"},"dep_version":"1.1.0","outcomes":["pass"]})"
        "\n");
    ScriptedExecutor exec(script);
    Assessment a =
        assess_upgrade(s, {"dep", parse_version("1.0.0"), parse_version("1.1.0")}, exec);
    ASSERT_EQ(a.votes.size(), 1u);
    EXPECT_EQ(a.votes.begin()->first, (LibraryRef{"app", "2.0.0"}));
    EXPECT_EQ(a.confidence, 1u);
}

TEST(AssessUpgrade, InvalidUpgradeThrows) {
    Snapshot s = walkthrough_snapshot();
    std::istringstream script("");
    ScriptedExecutor exec(script);
    EXPECT_THROW(assess_upgrade(
                     s, {"jackson-databind", parse_version("9.9.9"), parse_version("9.9.10")},
                     exec),
                 InvalidUpgrade);
}

TEST(AssessUpgrade, IndependentOfWorkerCount) {
    Snapshot s = walkthrough_snapshot();
    auto run_with_jobs = [&](std::size_t jobs) {
        std::istringstream script(walkthrough_script(true));
        ScriptedExecutor exec(script);
        AssessOptions opts;
        opts.jobs = jobs;
        return assess_upgrade(s, jackson_upgrade(), exec, opts);
    };
    Assessment serial = run_with_jobs(1);
    Assessment parallel = run_with_jobs(4);
    EXPECT_EQ(serial.confidence, parallel.confidence);
    EXPECT_EQ(serial.votes, parallel.votes);
    EXPECT_EQ(serial.untested_consumers, parallel.untested_consumers);
}

TEST(ResultStoreTest, ReplayReproducesConfidence) {
    namespace fs = std::filesystem;
    fs::path store_path = fs::temp_directory_path() / "pinfresh_store_test.ndjson";
    fs::remove(store_path);

    Snapshot s = walkthrough_snapshot();
    std::istringstream script(walkthrough_script(true));
    ScriptedExecutor exec(script);
    AssessOptions opts;
    ResultStore store(store_path.string());
    opts.store = &store;
    Assessment original = assess_upgrade(s, jackson_upgrade(), exec, opts);

    std::ifstream in(store_path);
    std::map<std::string, std::size_t> stored;
    auto replayed = replay_confidences(in, opts.repetitions, &stored);
    std::string key = to_string(jackson_upgrade());
    ASSERT_TRUE(replayed.count(key));
    EXPECT_EQ(replayed.at(key), original.confidence);
    EXPECT_EQ(stored.at(key), original.confidence);
    fs::remove(store_path);
}

TEST(BatchAssess, PartitionAndThresholds) {
    // three upgrades: tested-positive, tested-zero, untested
    SnapshotBuilder b;
    b.add_library("libA", "1.0.0", 0).add_library("libA", "1.2.0", 50 * kDay);
    b.add_library("libB", "2.0.0", 0).add_library("libB", "2.1.0", 50 * kDay);
    b.add_library("libC", "3.0.0", 0).add_library("libC", "3.1.0", 50 * kDay);
    for (int i = 1; i <= 2; ++i) {
        std::string name = "userA" + std::to_string(i);
        b.add_library(name, "1.0.0", 100 * kDay);
        b.add_edge({name, "1.0.0"}, {"libA", "1.0.0"});
    }
    b.add_library("userB", "1.0.0", 100 * kDay)
        .add_edge({"userB", "1.0.0"}, {"libB", "2.0.0"});
    b.add_library("userC", "1.0.0", 100 * kDay)
        .add_edge({"userC", "1.0.0"}, {"libC", "3.0.0"});
    Snapshot s = std::move(b).build();

    PinDataset dataset = build_pin_dataset(s, 3);
    ASSERT_EQ(dataset.upgrades.size(), 3u);

    std::istringstream advisories(
        R"({"id":"VA","severity":"high","affected":[{"name":"libA","versions":["1.0.0"]}]})"
        "\n"
        R"({"id":"VB","severity":"high","affected":[{"name":"libB","versions":["2.0.0"]}]})"
        "\n"
        R"({"id":"VC","severity":"high","affected":[{"name":"libC","versions":["3.0.0"]}]})"
        "\n");
    AdvisoryDb db = ingest_advisories(advisories);

    std::string text;
    auto line = [](const char* consumer, const char* dep, const char* outcome) {
        return std::string(R"({"consumer":{"name":")") + consumer +
               R"(","version":"1.0.0"},"test":{"suite":"S","method":"m"},"dep_version":")" +
               dep + R"(","outcomes":[")" + outcome + R"("]})" "\n";
    };
    text += line("userA1", "1.0.0", "pass") + line("userA1", "1.2.0", "pass");
    text += line("userA2", "1.0.0", "pass") + line("userA2", "1.2.0", "pass");
    text += line("userB", "2.0.0", "pass") + line("userB", "2.1.0", "fail");
    // userC absent -> untested
    std::istringstream script(text);
    ScriptedExecutor exec(script);

    BatchReport report = batch_assess(s, dataset, db, exec);
    EXPECT_EQ(report.positive, 1u);
    EXPECT_EQ(report.zero, 1u);
    EXPECT_EQ(report.untested, 1u);
    ASSERT_EQ(report.rows.size(), 3u);
    // threshold curve: only the libA upgrade reached confidence 2
    ASSERT_TRUE(report.consumers_at_min_confidence.count(2));
    EXPECT_EQ(report.consumers_at_min_confidence.at(2), 2u);
}

TEST(BatchAssess, MatchesSequentialRerun) {
    Snapshot s = walkthrough_snapshot();
    PinDataset dataset;
    dataset.pins.push_back({{"consumer1", "1.0.0"},
                            {"jackson-databind", "2.10.0"},
                            {"jackson-databind", "2.11.0"},
                            PinKind::direct});
    dataset.upgrades.push_back(jackson_upgrade());
    std::istringstream advisories(
        R"({"id":"V1","severity":"high","affected":[{"name":"jackson-databind","versions":["2.10.0"]}]})"
        "\n");
    AdvisoryDb db = ingest_advisories(advisories);

    auto run = [&](std::size_t jobs) {
        std::istringstream script(walkthrough_script());
        ScriptedExecutor exec(script);
        AssessOptions opts;
        opts.jobs = jobs;
        return batch_assess(s, dataset, db, exec, opts);
    };
    BatchReport a = run(1);
    BatchReport b = run(4);
    ASSERT_EQ(a.rows.size(), 1u);
    ASSERT_EQ(b.rows.size(), 1u);
    EXPECT_EQ(a.rows[0].confidence, b.rows[0].confidence);
    EXPECT_EQ(a.rows[0].category, b.rows[0].category);
    EXPECT_EQ(a.positive, b.positive);
}

TEST(CommandExecutorTest, TemplateRenderingAndExitCodes) {
    EXPECT_EQ(CommandExecutor::render_template("run {consumer} {dep_name}:{dep_version} {test}",
                                               {"app", "1.0.0"}, {"S", "m"},
                                               {"dep", "2.0.0"}),
              "run app@1.0.0 dep:2.0.0 S::m");

    CommandExecutor::Config config;
    config.run_cmd = "exit 0";
    config.list_cmd = "printf 'S::m\\n'";
    CommandExecutor exec(config);
    EXPECT_EQ(exec.availability({"app", "1.0.0"}), Availability::available);
    EXPECT_EQ(exec.discover({"app", "1.0.0"}), (std::vector<TestId>{TestId{"S", "m"}}));
    EXPECT_EQ(exec.run({"app", "1.0.0"}, {"S", "m"}, {"dep", "2.0.0"}), TestResult::pass);

    config.run_cmd = "exit 3";
    CommandExecutor failing(config);
    EXPECT_EQ(failing.run({"app", "1.0.0"}, {"S", "m"}, {"dep", "2.0.0"}),
              TestResult::fail);
}

TEST(CommandExecutorTest, TimeoutCountsAsFail) {
    CommandExecutor::Config config;
    config.run_cmd = "sleep 5";
    config.test_timeout_sec = 1;
    CommandExecutor exec(config);
    EXPECT_EQ(exec.run({"app", "1.0.0"}, {"S", "m"}, {"dep", "2.0.0"}), TestResult::fail);
}

TEST(CommandExecutorTest, NoListCommandMeansUnavailable) {
    CommandExecutor::Config config;
    config.run_cmd = "exit 0";
    CommandExecutor exec(config);
    EXPECT_EQ(exec.availability({"app", "1.0.0"}), Availability::unavailable);
}
