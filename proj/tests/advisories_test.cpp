#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <pinfresh/advisories.hpp>

using namespace pinfresh;

namespace {

AdvisoryDb db_from(const std::string& text, const Snapshot* snap = nullptr) {
    std::istringstream in(text);
    return ingest_advisories(in, snap);
}

Upgrade upgrade(const std::string& name, const std::string& from, const std::string& to) {
    return {name, parse_version(from), parse_version(to)};
}

} // namespace

TEST(AdvisoryIngest, ExplicitVersionList) {
    AdvisoryDb db = db_from(
        R"({"id":"ADV-1","severity":"high","affected":[{"name":"x","versions":["1.0.0","1.0.1","1.0.2","1.0.3"]}]})"
        "\n");
    EXPECT_EQ(db.size(), 1u);
    for (const char* v : {"1.0.0", "1.0.1", "1.0.2", "1.0.3"})
        EXPECT_EQ(db.vulns_of("x", parse_version(v)), std::set<std::string>{"ADV-1"});
    EXPECT_TRUE(db.vulns_of("x", parse_version("1.0.4")).empty());
    EXPECT_TRUE(db.vulns_of("y", parse_version("1.0.0")).empty());
}

TEST(AdvisoryIngest, EmptyFile) {
    EXPECT_EQ(db_from("").size(), 0u);
}

TEST(AdvisoryIngest, DuplicateIdRejected) {
    EXPECT_THROW(
        db_from(R"({"id":"A","severity":"low","affected":[{"name":"x","versions":["1.0.0"]}]})"
                "\n"
                R"({"id":"A","severity":"low","affected":[{"name":"y","versions":["1.0.0"]}]})"
                "\n"),
        DuplicateAdvisoryId);
}

TEST(AdvisoryIngest, MalformedRecordRejected) {
    EXPECT_THROW(db_from(R"({"id":"A","severity":"low","affected":[]})" "\n"),
                 MalformedRecord);
    EXPECT_THROW(db_from(R"({"id":"A","severity":"low"})" "\n"), MalformedRecord);
    EXPECT_THROW(db_from("not json\n"), MalformedRecord);
}

TEST(AdvisoryIngest, RangeShorthandExpandsAgainstSnapshot) {
    SnapshotBuilder b;
    for (const char* v : {"1.0.0", "1.1.0", "1.2.0", "2.0.0"})
        b.add_library("x", v, 0);
    Snapshot snap = std::move(b).build();
    AdvisoryDb db = db_from(
        R"({"id":"ADV-R","severity":"critical","affected":[{"name":"x","introduced":"1.0.0","fixed":"1.2.0"}]})"
        "\n",
        &snap);
    EXPECT_EQ(db.vulns_of("x", parse_version("1.0.0")), std::set<std::string>{"ADV-R"});
    EXPECT_EQ(db.vulns_of("x", parse_version("1.1.0")), std::set<std::string>{"ADV-R"});
    EXPECT_TRUE(db.vulns_of("x", parse_version("1.2.0")).empty()); // fixed excluded
    EXPECT_TRUE(db.vulns_of("x", parse_version("2.0.0")).empty());
}

TEST(AdvisoryLookup, MatchesLinearScanOracle) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> name_pick(0, 4), comp(0, 3), count(1, 4);
    const char* names[] = {"a", "b", "c", "d", "e"};

    std::vector<Advisory> raw;
    AdvisoryDb db;
    for (int i = 0; i < 100; ++i) {
        Advisory adv;
        adv.id = "ADV-" + std::to_string(i);
        adv.severity = Severity::unknown;
        int entries = count(rng);
        for (int j = 0; j < entries; ++j) {
            std::vector<Version> versions;
            int versions_n = count(rng);
            for (int k = 0; k < versions_n; ++k)
                versions.push_back(Version{comp(rng), comp(rng), comp(rng), {}});
            adv.affected.emplace_back(names[name_pick(rng)], std::move(versions));
        }
        raw.push_back(adv);
        db.add(adv);
    }

    for (const char* name : names) {
        for (int a = 0; a <= 3; ++a)
            for (int b = 0; b <= 3; ++b) {
                Version v{a, b, 0, {}};
                std::set<std::string> expected;
                for (const auto& adv : raw)
                    for (const auto& [n, versions] : adv.affected)
                        if (n == name &&
                            std::find(versions.begin(), versions.end(), v) !=
                                versions.end())
                            expected.insert(adv.id);
                EXPECT_EQ(db.vulns_of(name, v), expected);
            }
    }
}

TEST(SecurityDelta, SharedAdvisoriesCancel) {
    AdvisoryDb db = db_from(
        R"({"id":"A1","severity":"high","affected":[{"name":"x","versions":["1.0.0"]}]})"
        "\n"
        R"({"id":"A2","severity":"low","affected":[{"name":"x","versions":["1.0.0","1.1.0"]}]})"
        "\n");
    SecurityDelta d = security_delta(db, upgrade("x", "1.0.0", "1.1.0"));
    EXPECT_EQ(d.before, (std::set<std::string>{"A1", "A2"}));
    EXPECT_EQ(d.after, (std::set<std::string>{"A2"}));
    EXPECT_EQ(d.delta, -1);
}

TEST(SecurityDelta, IdenticalSetsGiveZero) {
    AdvisoryDb db = db_from(
        R"({"id":"A1","severity":"high","affected":[{"name":"x","versions":["1.0.0","1.1.0"]}]})"
        "\n");
    EXPECT_EQ(security_delta(db, upgrade("x", "1.0.0", "1.1.0")).delta, 0);
}

TEST(SecurityDelta, LargeFixCount) {
    // an upgrade wiping out 66 advisories at once
    std::string text;
    for (int i = 0; i < 66; ++i)
        text += R"({"id":"BULK-)" + std::to_string(i) +
                R"(","severity":"high","affected":[{"name":"x","versions":["1.0.0"]}]})" "\n";
    AdvisoryDb db = db_from(text);
    EXPECT_EQ(security_delta(db, upgrade("x", "1.0.0", "1.1.0")).delta, -66);
}

TEST(SecurityDelta, Antisymmetry) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> comp(0, 2), pick(0, 2);
    const char* names[] = {"a", "b", "c"};
    AdvisoryDb db;
    for (int i = 0; i < 60; ++i) {
        Advisory adv{"R-" + std::to_string(i), Severity::medium, {}};
        adv.affected.emplace_back(
            names[pick(rng)],
            std::vector<Version>{Version{comp(rng), comp(rng), comp(rng), {}}});
        db.add(adv);
    }
    for (int i = 0; i < 1000; ++i) {
        Version from{comp(rng), comp(rng), comp(rng), {}};
        Version to{from.major, comp(rng), comp(rng), {}};
        const char* name = names[pick(rng)];
        int forward = security_delta(db, {name, from, to}).delta;
        int backward = security_delta(db, {name, to, from}).delta;
        EXPECT_EQ(forward, -backward);
    }
}

TEST(ImpactReport, CategoriesAndRatio) {
    // 9 reducing, 3 increasing, 88 unchanged -> ratio 3.0
    AdvisoryDb db;
    std::vector<Upgrade> upgrades;
    for (int i = 0; i < 9; ++i) {
        std::string name = "fix" + std::to_string(i);
        Advisory adv{"F-" + std::to_string(i), Severity::high, {}};
        adv.affected.emplace_back(name, std::vector<Version>{parse_version("1.0.0")});
        db.add(adv);
        upgrades.push_back(upgrade(name, "1.0.0", "1.1.0"));
    }
    for (int i = 0; i < 3; ++i) {
        std::string name = "regress" + std::to_string(i);
        Advisory adv{"I-" + std::to_string(i), Severity::high, {}};
        adv.affected.emplace_back(name, std::vector<Version>{parse_version("1.1.0")});
        db.add(adv);
        upgrades.push_back(upgrade(name, "1.0.0", "1.1.0"));
    }
    for (int i = 0; i < 88; ++i)
        upgrades.push_back(upgrade("quiet" + std::to_string(i), "1.0.0", "1.1.0"));

    ImpactReport report = impact_report(db, upgrades);
    EXPECT_EQ(report.reduced_count, 9u);
    EXPECT_EQ(report.increased_count, 3u);
    EXPECT_EQ(report.unchanged_count, 88u);
    ASSERT_TRUE(report.reduce_to_increase_ratio.has_value());
    EXPECT_DOUBLE_EQ(*report.reduce_to_increase_ratio, 3.0);
    EXPECT_EQ(report.total_delta, -9 + 3);
    EXPECT_EQ(report.reduced_count + report.increased_count + report.unchanged_count,
              upgrades.size());
}

TEST(ImpactReport, RatioAbsentWithoutIncreases) {
    AdvisoryDb db;
    ImpactReport report =
        impact_report(db, {upgrade("x", "1.0.0", "1.1.0"), upgrade("y", "1.0.0", "1.1.0")});
    EXPECT_FALSE(report.reduce_to_increase_ratio.has_value());
    EXPECT_EQ(report.total_delta, 0);
}

TEST(ImpactReport, SingleReducingUpgrade) {
    std::string text;
    for (int i = 0; i < 5; ++i)
        text += R"({"id":"S-)" + std::to_string(i) +
                R"(","severity":"low","affected":[{"name":"x","versions":["1.0.0"]}]})" "\n";
    AdvisoryDb db = db_from(text);
    ImpactReport report = impact_report(db, {upgrade("x", "1.0.0", "1.1.0")});
    EXPECT_EQ(report.total_delta, -5);
    EXPECT_EQ(report.reduced_count, 1u);
}
