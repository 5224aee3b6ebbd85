#pragma once

#include <atomic>
#include <bit>
#include <cstdlib>
#include <thread>

#include "cdm/inference.hpp"

namespace cdm {

// ---------------------------------------------------------------------------
// Deterministic parallel replicate runner
// ---------------------------------------------------------------------------

inline unsigned worker_count(int jobs) {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CDM_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) hw = std::min(hw, static_cast<unsigned>(cap));
    }
    return std::min(hw, static_cast<unsigned>(std::max(1, jobs)));
}

/// Runs f(i) for i in [0, jobs). Results must be written to pre-sized storage
/// indexed by i so that parallel and serial execution agree exactly.
template <typename F>
void parallel_for(int jobs, F&& f) {
    unsigned workers = worker_count(jobs);
    if (workers <= 1) {
        for (int i = 0; i < jobs; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) f(i);
        });
    for (auto& t : pool) t.join();
}

/// Independent RNG stream for one replicate, derived from (seed, replicate).
inline std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint64_t replicate) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replicate),
                      static_cast<std::uint32_t>(replicate >> 32)};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Ground truths and sampling
// ---------------------------------------------------------------------------

enum class TruthKind { MNL, CDM, GeneralChoiceSystem };

struct GroundTruth {
    TruthKind kind = TruthKind::MNL;
    LuceParams mnl;
    FullRankCdmParams cdm;
    SaturatedModel general;  // tables over every subset of size >= 2
};

/// Uniform over all 2^n - n - 1 subsets of size >= 2, by mask rejection.
inline ChoiceSet sample_choice_set(int n, std::mt19937_64& rng) {
    if (n < 2 || n > 62) throw InvalidInput("sample_choice_set: n must be in [2, 62]");
    std::uniform_int_distribution<std::uint64_t> dist(0, (std::uint64_t(1) << n) - 1);
    for (;;) {
        std::uint64_t mask = dist(rng);
        if (std::popcount(mask) < 2) continue;
        ChoiceSet s;
        for (int i = 0; i < n; ++i)
            if (mask & (std::uint64_t(1) << i)) s.push_back(i);
        return s;
    }
}

inline GroundTruth make_ground_truth(TruthKind kind, int n, std::mt19937_64& rng) {
    if (n < 2) throw InvalidInput("make_ground_truth: n must be >= 2");
    GroundTruth truth;
    truth.kind = kind;
    switch (kind) {
        case TruthKind::MNL: {
            // v = [1..n] / (n(n+1)/2); [1,2,3,4,5,6]/21 at n = 6
            Eigen::VectorXd v(n);
            double denom = n * (n + 1) / 2.0;
            for (int i = 0; i < n; ++i) v[i] = (i + 1) / denom;
            truth.mnl = {v};
            break;
        }
        case TruthKind::CDM: {
            // U = T^T C with T, C n x n i.i.d. standard normal
            std::normal_distribution<double> gauss(0.0, 1.0);
            Eigen::MatrixXd T(n, n), C(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) T(i, j) = gauss(rng);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) C(i, j) = gauss(rng);
            Eigen::MatrixXd U = T.transpose() * C;
            truth.cdm = FullRankCdmParams::zeros(n);
            for (int x = 0; x < n; ++x)
                for (int z = 0; z < n; ++z)
                    if (x != z) truth.cdm.at(x, z) = U(x, z);
            break;
        }
        case TruthKind::GeneralChoiceSystem: {
            if (n > 16) throw InvalidInput("general choice system limited to n <= 16");
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
                if (std::popcount(mask) < 2) continue;
                ChoiceSet s;
                for (int i = 0; i < n; ++i)
                    if (mask & (1u << i)) s.push_back(i);
                Eigen::VectorXd w(static_cast<int>(s.size()));
                for (int i = 0; i < w.size(); ++i) w[i] = unif(rng);
                truth.general.table[s] = w / w.sum();
            }
            break;
        }
    }
    return truth;
}

inline Eigen::VectorXd truth_probabilities(const GroundTruth& truth, const ChoiceSet& set) {
    switch (truth.kind) {
        case TruthKind::MNL:
            return luce_probabilities(truth.mnl, set);
        case TruthKind::CDM:
            return cdm_probabilities(truth.cdm, set);
        default:
            return saturated_probabilities(truth.general, set);
    }
}

inline int truth_n(const GroundTruth& truth) {
    switch (truth.kind) {
        case TruthKind::MNL:
            return truth.mnl.n();
        case TruthKind::CDM:
            return truth.cdm.n;
        default: {
            int max_item = 0;
            for (const auto& [s, p] : truth.general.table)
                max_item = std::max(max_item, s.back());
            return max_item + 1;
        }
    }
}

/// m i.i.d. observations: a uniform choice set, then a choice from the
/// truth's conditional distribution.
inline ChoiceDataset sample_dataset(const GroundTruth& truth, int m, std::mt19937_64& rng) {
    if (m < 1) throw InvalidInput("sample_dataset: m must be >= 1");
    const int n = truth_n(truth);
    ChoiceDataset data;
    data.universe = ItemUniverse::of_size(n);
    data.observations.reserve(m);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < m; ++i) {
        ChoiceSet s = sample_choice_set(n, rng);
        Eigen::VectorXd p = truth_probabilities(truth, s);
        double r = unif(rng);
        int choice = static_cast<int>(s.size()) - 1;
        double acc = 0.0;
        for (int j = 0; j < p.size(); ++j) {
            acc += p[j];
            if (r < acc) {
                choice = j;
                break;
            }
        }
        data.observations.push_back({s, s[choice]});
    }
    return data;
}

// ---------------------------------------------------------------------------
// Headline experiments
// ---------------------------------------------------------------------------

struct ExperimentResult {
    std::vector<int> m_grid;
    std::vector<double> metric;   // per m: mean squared l2 error or rejection rate
    std::vector<double> stderr_;  // per m: standard error over replicates
    int replicates = 0;
    std::uint64_t seed = 0;
    int resampled = 0;  // non-identifiable designs that were redrawn
    int failed = 0;     // optimizer-failure replicates, excluded
};

/// MLE convergence under a per-replicate random CDM truth: mean squared l2
/// error of the gauge-normalized estimate as m grows.
inline ExperimentResult convergence_experiment(int n, const std::vector<int>& m_grid,
                                               int replicates, const FitConfig& config,
                                               std::uint64_t seed) {
    if (replicates < 1) throw InvalidInput("replicates must be >= 1");
    ExperimentResult result;
    result.m_grid = m_grid;
    result.replicates = replicates;
    result.seed = seed;
    std::atomic<int> resampled{0};

    std::vector<std::vector<double>> errors(m_grid.size(), std::vector<double>(replicates, 0.0));
    parallel_for(replicates, [&](int rep) {
        auto rng = replicate_rng(seed, static_cast<std::uint64_t>(rep));
        GroundTruth truth = make_ground_truth(TruthKind::CDM, n, rng);
        Eigen::VectorXd u_star = gauge_normalize(truth.cdm).u;
        for (size_t gi = 0; gi < m_grid.size(); ++gi) {
            ChoiceDataset data;
            for (;;) {
                data = sample_dataset(truth, m_grid[gi], rng);
                DesignMatrix G = build_design_matrix(data);
                if (rank_exact(G.rows) == n * (n - 1) - 1) break;
                resampled.fetch_add(1);
            }
            auto fit = fit_cdm_full(data, config);
            errors[gi][rep] = (gauge_normalize(fit.params).u - u_star).squaredNorm();
        }
    });
    result.resampled = resampled.load();
    for (size_t gi = 0; gi < m_grid.size(); ++gi) {
        double mean = 0.0;
        for (double e : errors[gi]) mean += e;
        mean /= replicates;
        double var = 0.0;
        for (double e : errors[gi]) var += (e - mean) * (e - mean);
        var = replicates > 1 ? var / (replicates - 1) : 0.0;
        result.metric.push_back(mean);
        result.stderr_.push_back(std::sqrt(var / replicates));
    }
    return result;
}

enum class TestKind { CDM, Universal };

/// Fraction of replicates with p < alpha, per m, under the given truth kind.
inline ExperimentResult rejection_experiment(TruthKind kind, int n, const std::vector<int>& m_grid,
                                             int replicates, double alpha, TestKind test,
                                             const FitConfig& config, std::uint64_t seed) {
    if (replicates < 1) throw InvalidInput("replicates must be >= 1");
    ExperimentResult result;
    result.m_grid = m_grid;
    result.replicates = replicates;
    result.seed = seed;
    std::atomic<int> failed{0};

    // -1 marks an excluded (failed) replicate
    std::vector<std::vector<int>> reject(m_grid.size(), std::vector<int>(replicates, 0));
    parallel_for(replicates, [&](int rep) {
        auto rng = replicate_rng(seed, static_cast<std::uint64_t>(rep));
        GroundTruth truth = make_ground_truth(kind, n, rng);
        for (size_t gi = 0; gi < m_grid.size(); ++gi) {
            ChoiceDataset data = sample_dataset(truth, m_grid[gi], rng);
            try {
                LrtResult lrt = test == TestKind::CDM ? lrt_iia_cdm(data, config)
                                                      : lrt_iia_universal(data, config);
                reject[gi][rep] = lrt.p_value < alpha ? 1 : 0;
            } catch (const NumericalError&) {
                reject[gi][rep] = -1;
                failed.fetch_add(1);
            }
        }
    });
    result.failed = failed.load();
    for (size_t gi = 0; gi < m_grid.size(); ++gi) {
        int count = 0, valid = 0;
        for (int r : reject[gi])
            if (r >= 0) {
                ++valid;
                count += r;
            }
        double rate = valid > 0 ? static_cast<double>(count) / valid : 0.0;
        result.metric.push_back(rate);
        result.stderr_.push_back(valid > 0 ? std::sqrt(rate * (1.0 - rate) / valid) : 0.0);
    }
    return result;
}

}  // namespace cdm
