#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"

using namespace cdm;
using namespace cdm::testing;
using Catch::Approx;

namespace {

// Worked example: preference reversal parameters on {a,b,c}.
FullRankCdmParams reversal_params() {
    FullRankCdmParams p = FullRankCdmParams::zeros(3);
    p.at(0, 1) = 0.693;
    p.at(0, 2) = 0.693;
    p.at(1, 0) = 2.784;
    p.at(1, 2) = -3.477;
    p.at(2, 0) = 2.784;
    p.at(2, 1) = -3.477;
    return p;
}

// Central finite differences of the sum log-likelihood, the independent
// oracle for analytic gradients.
template <typename EvalFn>
Eigen::VectorXd finite_diff(EvalFn&& ll_of, Eigen::VectorXd theta, double h = 1e-5) {
    Eigen::VectorXd g(theta.size());
    for (int i = 0; i < theta.size(); ++i) {
        double orig = theta[i];
        theta[i] = orig + h;
        double up = ll_of(theta);
        theta[i] = orig - h;
        double down = ll_of(theta);
        theta[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("pair_index is a bijection on ordered pairs") {
    for (int n : {2, 3, 6}) {
        std::set<int> seen;
        for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z) {
                if (x == z) continue;
                int idx = pair_index(x, z, n);
                REQUIRE(idx >= 0);
                REQUIRE(idx < n * (n - 1));
                REQUIRE(seen.insert(idx).second);
                REQUIRE(pair_from_index(idx, n) == std::make_pair(x, z));
            }
    }
    REQUIRE_THROWS_AS(pair_index(1, 1, 3), InvalidInput);
}

TEST_CASE("luce probabilities") {
    SECTION("worked three-item example") {
        LuceParams p{Eigen::Vector3d{1.386, -0.693, -0.693}};
        Eigen::VectorXd probs = luce_probabilities(p, {0, 1, 2});
        REQUIRE(probs[0] == Approx(0.8).margin(1e-2));
        REQUIRE(probs[1] == Approx(0.1).margin(1e-2));
        REQUIRE(probs[2] == Approx(0.1).margin(1e-2));
    }
    SECTION("equal utilities give the uniform distribution") {
        for (int k : {2, 3, 5}) {
            LuceParams p{Eigen::VectorXd::Constant(5, 1.7)};
            ChoiceSet s;
            for (int i = 0; i < k; ++i) s.push_back(i);
            Eigen::VectorXd probs = luce_probabilities(p, s);
            for (int i = 0; i < k; ++i) REQUIRE(probs[i] == Approx(1.0 / k).margin(1e-12));
        }
    }
    SECTION("v = [1..6]/21 on the top pair") {
        Eigen::VectorXd v(6);
        for (int i = 0; i < 6; ++i) v[i] = (i + 1) / 21.0;
        // scalar oracle: sigmoid of the utility gap
        double expected = 1.0 / (1.0 + std::exp(-1.0 / 21.0));
        Eigen::VectorXd probs = luce_probabilities(LuceParams{v}, {4, 5});
        REQUIRE(probs[1] == Approx(expected).epsilon(1e-12));
        REQUIRE(probs[1] == Approx(0.5119).margin(1e-4));
    }
    SECTION("invalid sets rejected") {
        LuceParams p = LuceParams::zeros(3);
        REQUIRE_THROWS_AS(luce_probabilities(p, {1}), InvalidInput);
        REQUIRE_THROWS_AS(luce_probabilities(p, {0, 3}), InvalidInput);
    }
}

TEST_CASE("full-rank CDM probabilities") {
    FullRankCdmParams p = reversal_params();
    SECTION("pairwise preference reversal") {
        REQUIRE(cdm_probabilities(p, {0, 1})[0] == Approx(0.11).margin(1e-2));
        REQUIRE(cdm_probabilities(p, {1, 2})[0] == Approx(0.50).margin(1e-2));
        REQUIRE(cdm_probabilities(p, {0, 2})[1] == Approx(0.89).margin(1e-2));
    }
    SECTION("triple matches the motivating example") {
        Eigen::VectorXd probs = cdm_probabilities(p, {0, 1, 2});
        REQUIRE(probs[0] == Approx(0.8).margin(1e-2));
        REQUIRE(probs[1] == Approx(0.1).margin(1e-2));
        REQUIRE(probs[2] == Approx(0.1).margin(1e-2));
    }
    SECTION("constant parameters give uniform over any set") {
        FullRankCdmParams q{4, Eigen::VectorXd::Constant(12, -2.5)};
        for (const auto& s : all_subsets(4)) {
            Eigen::VectorXd probs = cdm_probabilities(q, s);
            for (int i = 0; i < probs.size(); ++i)
                REQUIRE(probs[i] == Approx(1.0 / probs.size()).margin(1e-12));
        }
    }
}

TEST_CASE("low-rank CDM probabilities") {
    std::mt19937_64 rng(7);
    SECTION("zero factors give uniform") {
        LowRankCdmParams p{Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(4, 2)};
        for (const auto& s : all_subsets(4)) {
            Eigen::VectorXd probs = low_rank_probabilities(p, s);
            for (int i = 0; i < probs.size(); ++i)
                REQUIRE(probs[i] == Approx(1.0 / probs.size()).margin(1e-12));
        }
    }
    SECTION("rank n factorization of a full-rank model agrees on every subset") {
        const int n = 5;
        FullRankCdmParams full = random_cdm(n, rng);
        LowRankCdmParams p{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Identity(n, n)};
        for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z)
                if (x != z) p.T(x, z) = full.at(x, z);  // u_xz = c_z . t_x with C = I
        for (const auto& s : all_subsets(n)) {
            Eigen::VectorXd a = low_rank_probabilities(p, s);
            Eigen::VectorXd b = cdm_probabilities(full, s);
            REQUIRE((a - b).lpNorm<Eigen::Infinity>() < 1e-12);
        }
    }
    SECTION("invariance under (T R, C R^-T)") {
        const int n = 5, r = 3;
        LowRankCdmParams p = random_low_rank(n, r, rng);
        Eigen::MatrixXd R = Eigen::MatrixXd::Random(r, r) + 2.0 * Eigen::MatrixXd::Identity(r, r);
        LowRankCdmParams q{p.T * R, p.C * R.inverse().transpose()};
        for (const auto& s : all_subsets(n)) {
            Eigen::VectorXd a = low_rank_probabilities(p, s);
            Eigen::VectorXd b = low_rank_probabilities(q, s);
            REQUIRE((a - b).lpNorm<Eigen::Infinity>() < 1e-9);
        }
    }
    SECTION("rank 0 rejected") {
        LowRankCdmParams p{Eigen::MatrixXd::Zero(3, 0), Eigen::MatrixXd::Zero(3, 0)};
        REQUIRE_THROWS_AS(low_rank_probabilities(p, {0, 1}), InvalidInput);
    }
}

TEST_CASE("saturated model") {
    SaturatedModel model;
    model.set({0, 1, 2}, Eigen::Vector3d{0.8, 0.1, 0.1});
    REQUIRE(saturated_probabilities(model, {0, 1, 2})[0] == Approx(0.8));
    REQUIRE(saturated_probabilities(model, {0, 1, 2}).sum() == Approx(1.0).margin(1e-12));
    REQUIRE_THROWS_AS(saturated_probabilities(model, {0, 1}), InvalidInput);
    REQUIRE_THROWS_AS(model.set({0, 1}, Eigen::Vector2d{0.7, 0.7}), InvalidInput);
}

TEST_CASE("log-likelihood") {
    SECTION("uniform model on size-3 sets") {
        ChoiceDataset data;
        data.universe = ItemUniverse::of_size(3);
        data.observations.push_back({{0, 1, 2}, 1});
        REQUIRE(log_likelihood(LuceParams::zeros(3), data).value == Approx(-std::log(3.0)));

        const int m = 17;
        data.observations.assign(m, {{0, 1, 2}, 2});
        REQUIRE(log_likelihood(LuceParams::zeros(3), data).value == Approx(-m * std::log(3.0)));
    }
    SECTION("reversal parameters on a single pairwise choice") {
        ChoiceDataset data;
        data.universe = ItemUniverse::of_size(3);
        data.observations.push_back({{0, 1}, 0});
        LogLik ll = log_likelihood(reversal_params(), data);
        REQUIRE(ll.value == Approx(std::log(0.11)).margin(1e-2));
        REQUIRE_FALSE(ll.minus_infinity);
    }
    SECTION("zero probability flags minus infinity") {
        SaturatedModel model;
        model.set({0, 1}, Eigen::Vector2d{1.0, 0.0});
        ChoiceDataset data;
        data.universe = ItemUniverse::of_size(2);
        data.observations.push_back({{0, 1}, 1});
        LogLik ll = log_likelihood(model, data);
        REQUIRE(ll.minus_infinity);
        REQUIRE(std::isinf(ll.value));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 3 + static_cast<int>(rng() % 3);  // n in [3, 5]
        ChoiceDataset data = random_dataset(n, 30, rng);
        auto tallies = tally_dataset(data);

        SECTION("trial " + std::to_string(trial)) {}

        {
            LuceParams p = random_luce(n, rng);
            Eigen::VectorXd analytic = log_likelihood_gradient(p, tallies);
            Eigen::VectorXd fd = finite_diff(
                [&](const Eigen::VectorXd& th) {
                    return log_likelihood(LuceParams{th}, tallies).value;
                },
                p.v);
            REQUIRE((analytic - fd).norm() <= 1e-6 * (fd.norm() + 1e-8));
        }
        {
            FullRankCdmParams p = random_cdm(n, rng);
            Eigen::VectorXd analytic = log_likelihood_gradient(p, tallies);
            Eigen::VectorXd fd = finite_diff(
                [&](const Eigen::VectorXd& th) {
                    return log_likelihood(FullRankCdmParams{n, th}, tallies).value;
                },
                p.u);
            REQUIRE((analytic - fd).norm() <= 1e-6 * (fd.norm() + 1e-8));
            // shift invariance: gradient entries sum to zero
            REQUIRE(analytic.sum() == Approx(0.0).margin(1e-9));
        }
        {
            int r = 1 + static_cast<int>(rng() % n);
            LowRankCdmParams p = random_low_rank(n, r, rng);
            LowRankGradient analytic = log_likelihood_gradient(p, tallies);
            Eigen::VectorXd flat(2 * n * r);
            Eigen::Map<Eigen::MatrixXd>(flat.data(), n, r) = p.T;
            Eigen::Map<Eigen::MatrixXd>(flat.data() + n * r, n, r) = p.C;
            Eigen::VectorXd fd = finite_diff(
                [&](const Eigen::VectorXd& th) {
                    LowRankCdmParams q;
                    q.T = Eigen::Map<const Eigen::MatrixXd>(th.data(), n, r);
                    q.C = Eigen::Map<const Eigen::MatrixXd>(th.data() + n * r, n, r);
                    return log_likelihood(q, tallies).value;
                },
                flat);
            Eigen::VectorXd analytic_flat(2 * n * r);
            Eigen::Map<Eigen::MatrixXd>(analytic_flat.data(), n, r) = analytic.t_grad;
            Eigen::Map<Eigen::MatrixXd>(analytic_flat.data() + n * r, n, r) = analytic.c_grad;
            REQUIRE((analytic_flat - fd).norm() <= 1e-6 * (fd.norm() + 1e-8));
        }
    }
}

TEST_CASE("gradient vanishes in saturated directions at the full-rank MLE") {
    std::mt19937_64 rng(5);
    GroundTruth truth = make_ground_truth(TruthKind::CDM, 4, rng);
    ChoiceDataset data = sample_dataset(truth, 800, rng);
    FitConfig cfg;
    cfg.tolerance = 1e-12;
    cfg.max_epochs = 6000;
    auto fit = fit_cdm_full(data, cfg);
    // At the MLE the per-set fitted probabilities match empirical frequencies
    // in every direction the data constrains, so the gradient is ~0.
    Eigen::VectorXd grad = log_likelihood_gradient(fit.params, data);
    REQUIRE(grad.lpNorm<Eigen::Infinity>() / data.m() < 1e-5);
}

TEST_CASE("gauge normalization") {
    std::mt19937_64 rng(11);
    SECTION("sum-zero input is unchanged") {
        FullRankCdmParams p = random_cdm(4, rng);
        p.u.array() -= p.u.mean();
        FullRankCdmParams q = gauge_normalize(p);
        REQUIRE((p.u - q.u).lpNorm<Eigen::Infinity>() < 1e-15);
    }
    SECTION("normalized output sums to zero") {
        FullRankCdmParams p = random_cdm(5, rng);
        p.u.array() += 3.7;
        REQUIRE(gauge_normalize(p).u.sum() == Approx(0.0).margin(1e-12));
        LuceParams l = random_luce(5, rng);
        REQUIRE(gauge_normalize(l).v.sum() == Approx(0.0).margin(1e-9));
    }
    SECTION("shifting all entries leaves probabilities unchanged") {
        FullRankCdmParams p = random_cdm(4, rng);
        FullRankCdmParams q{4, p.u.array() + 5.0};
        for (const auto& s : all_subsets(4)) {
            REQUIRE((cdm_probabilities(p, s) - cdm_probabilities(q, s)).lpNorm<Eigen::Infinity>() <
                    1e-12);
        }
    }
}

TEST_CASE("shift invariance across model classes (property)") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> shift_dist(-10.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 3 + static_cast<int>(rng() % 4);
        ChoiceSet s = random_set(n, rng);
        double shift = shift_dist(rng);

        LuceParams l = random_luce(n, rng);
        LuceParams l2{l.v.array() + shift};
        REQUIRE((luce_probabilities(l, s) - luce_probabilities(l2, s)).lpNorm<Eigen::Infinity>() <
                1e-12);

        FullRankCdmParams c = random_cdm(n, rng);
        FullRankCdmParams c2{n, c.u.array() + shift};
        REQUIRE((cdm_probabilities(c, s) - cdm_probabilities(c2, s)).lpNorm<Eigen::Infinity>() <
                1e-12);
    }
}

TEST_CASE("probability vectors are normalized and nonnegative (property)") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 3 + static_cast<int>(rng() % 4);
        ChoiceSet s = random_set(n, rng);
        for (const Eigen::VectorXd& p :
             {luce_probabilities(random_luce(n, rng, 4.0), s),
              cdm_probabilities(random_cdm(n, rng, 4.0), s),
              low_rank_probabilities(random_low_rank(n, 2, rng, 2.0), s)}) {
            REQUIRE(p.minCoeff() >= 0.0);
            REQUIRE(p.sum() == Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("luce models embed exactly into the full-rank CDM") {
    std::mt19937_64 rng(13);
    const int n = 4;
    LuceParams v = random_luce(n, rng);
    FullRankCdmParams u = luce_embedding(v);
    for (const auto& s : all_subsets(n)) {
        REQUIRE((luce_probabilities(v, s) - cdm_probabilities(u, s)).lpNorm<Eigen::Infinity>() <
                1e-12);
    }
}

TEST_CASE("second-order model reparameterization preserves probabilities") {
    // Draw (v(x), v(x|{z})) satisfying the constrained second-order form and
    // map to pairwise parameters u_xz = v(x|{z}) - v(z); probabilities on
    // every set must be identical.
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 1.0);
    const int n = 4;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = g(rng);
        v.array() -= v.mean();  // sum_x v(x) = 0
        Eigen::MatrixXd vc(n, n);  // vc(x, z) = v(x | {z})
        for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z) vc(x, z) = g(rng);
        for (int z = 0; z < n; ++z) {  // sum_{x != z} v(x|{z}) = 0
            double mean = 0.0;
            for (int x = 0; x < n; ++x)
                if (x != z) mean += vc(x, z);
            mean /= (n - 1);
            for (int x = 0; x < n; ++x)
                if (x != z) vc(x, z) -= mean;
        }

        FullRankCdmParams u = FullRankCdmParams::zeros(n);
        for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z)
                if (x != z) u.at(x, z) = vc(x, z) - v[z];

        for (const auto& s : all_subsets(n)) {
            // direct second-order utilities
            Eigen::VectorXd util(static_cast<int>(s.size()));
            for (size_t i = 0; i < s.size(); ++i) {
                util[static_cast<int>(i)] = v[s[i]];
                for (size_t j = 0; j < s.size(); ++j)
                    if (i != j) util[static_cast<int>(i)] += vc(s[i], s[j]);
            }
            Eigen::VectorXd direct = softmax(util);
            REQUIRE((direct - cdm_probabilities(u, s)).lpNorm<Eigen::Infinity>() < 1e-10);
        }
    }
}
