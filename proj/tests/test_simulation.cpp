#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "test_helpers.hpp"

using namespace cdm;
using namespace cdm::testing;
using Catch::Approx;

TEST_CASE("choice set sampling") {
    SECTION("n = 2 always yields the full pair") {
        std::mt19937_64 rng(1);
        for (int i = 0; i < 20; ++i) REQUIRE(sample_choice_set(2, rng) == ChoiceSet{0, 1});
    }
    SECTION("covers all 57 sets at n = 6 roughly uniformly") {
        std::mt19937_64 rng(2);
        const int draws = 57 * 400;
        std::map<ChoiceSet, int> counts;
        for (int i = 0; i < draws; ++i) ++counts[sample_choice_set(6, rng)];
        REQUIRE(counts.size() == 57);  // 2^6 - 6 - 1
        // Pearson chi-squared goodness of fit against uniform
        double expected = static_cast<double>(draws) / 57;
        double stat = 0.0;
        for (const auto& [s, c] : counts) stat += (c - expected) * (c - expected) / expected;
        REQUIRE(chi_square_survival(stat, 56) > 1e-4);
    }
    SECTION("sets are sorted, distinct, within range") {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 100; ++i) {
            int n = 2 + static_cast<int>(rng() % 9);
            ChoiceSet s = sample_choice_set(n, rng);
            REQUIRE_NOTHROW(validate_choice_set(s, n));
        }
    }
    SECTION("bounds on n") {
        std::mt19937_64 rng(4);
        REQUIRE_THROWS_AS(sample_choice_set(1, rng), InvalidInput);
        REQUIRE_THROWS_AS(sample_choice_set(63, rng), InvalidInput);
    }
}

TEST_CASE("ground truths") {
    std::mt19937_64 rng(5);
    SECTION("MNL utilities are [1..n] over the triangular sum") {
        GroundTruth t = make_ground_truth(TruthKind::MNL, 6, rng);
        for (int i = 0; i < 6; ++i) REQUIRE(t.mnl.v[i] == Approx((i + 1) / 21.0));
    }
    SECTION("CDM truth is a dense n x n product") {
        GroundTruth t = make_ground_truth(TruthKind::CDM, 5, rng);
        REQUIRE(t.cdm.n == 5);
        REQUIRE(t.cdm.u.size() == 20);
        REQUIRE(t.cdm.u.cwiseAbs().maxCoeff() > 0.0);
    }
    SECTION("general truth normalizes every subset") {
        GroundTruth t = make_ground_truth(TruthKind::GeneralChoiceSystem, 4, rng);
        REQUIRE(t.general.table.size() == 11);  // 2^4 - 4 - 1
        for (const auto& [s, p] : t.general.table) {
            REQUIRE(p.sum() == Approx(1.0).margin(1e-12));
            REQUIRE(p.minCoeff() >= 0.0);
        }
        REQUIRE_THROWS_AS(make_ground_truth(TruthKind::GeneralChoiceSystem, 17, rng), InvalidInput);
    }
}

TEST_CASE("dataset sampling follows the truth probabilities") {
    std::mt19937_64 rng(6);
    GroundTruth t = make_ground_truth(TruthKind::MNL, 3, rng);
    const int m = 60000;
    ChoiceDataset data = sample_dataset(t, m, rng);
    REQUIRE(data.m() == m);
    REQUIRE_NOTHROW(data.validate());

    // empirical conditional frequencies within 4 standard errors
    for (const auto& tally : tally_dataset(data)) {
        Eigen::VectorXd p = truth_probabilities(t, tally.set);
        for (int i = 0; i < p.size(); ++i) {
            double se = std::sqrt(p[i] * (1.0 - p[i]) / tally.total);
            REQUIRE(tally.counts[i] / tally.total == Approx(p[i]).margin(4.0 * se + 1e-9));
        }
    }
}

TEST_CASE("replicate RNG streams") {
    SECTION("reproducible and distinct") {
        auto a = replicate_rng(99, 0);
        auto b = replicate_rng(99, 0);
        auto c = replicate_rng(99, 1);
        REQUIRE(a() == b());
        auto a2 = replicate_rng(99, 0);
        REQUIRE(a2() != c());
    }
    SECTION("datasets are reproducible end to end") {
        auto r1 = replicate_rng(7, 3);
        auto r2 = replicate_rng(7, 3);
        GroundTruth t1 = make_ground_truth(TruthKind::CDM, 4, r1);
        GroundTruth t2 = make_ground_truth(TruthKind::CDM, 4, r2);
        ChoiceDataset d1 = sample_dataset(t1, 100, r1);
        ChoiceDataset d2 = sample_dataset(t2, 100, r2);
        REQUIRE((t1.cdm.u.array() == t2.cdm.u.array()).all());
        for (int i = 0; i < 100; ++i) {
            REQUIRE(d1.observations[i].choice_set == d2.observations[i].choice_set);
            REQUIRE(d1.observations[i].chosen == d2.observations[i].chosen);
        }
    }
}

TEST_CASE("convergence experiment", "[slow]") {
    FitConfig cfg;
    cfg.max_epochs = 2000;
    cfg.tolerance = 1e-8;
    ExperimentResult res = convergence_experiment(4, {200, 2000}, 4, cfg, 1234);
    REQUIRE(res.metric.size() == 2);
    REQUIRE(res.metric[0] > 0.0);
    // error shrinks by roughly 1/m; allow a loose factor
    REQUIRE(res.metric[1] < res.metric[0]);
    REQUIRE(res.stderr_[0] >= 0.0);

    // order independence: a second run is identical
    ExperimentResult again = convergence_experiment(4, {200, 2000}, 4, cfg, 1234);
    REQUIRE(res.metric == again.metric);
    REQUIRE(res.stderr_ == again.stderr_);
}

TEST_CASE("rejection experiment", "[slow]") {
    FitConfig cfg;
    cfg.max_epochs = 2000;
    cfg.tolerance = 1e-8;
    SECTION("CDM truths are rejected often at moderate m") {
        ExperimentResult res =
            rejection_experiment(TruthKind::CDM, 4, {1500}, 10, 0.05, TestKind::CDM, cfg, 77);
        REQUIRE(res.metric[0] >= 0.8);
        REQUIRE(res.failed == 0);
    }
    SECTION("MNL truths are rejected rarely") {
        ExperimentResult res =
            rejection_experiment(TruthKind::MNL, 4, {1500}, 10, 0.05, TestKind::CDM, cfg, 78);
        REQUIRE(res.metric[0] <= 0.3);
    }
}
