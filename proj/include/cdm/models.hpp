#pragma once

#include <cmath>
#include <limits>
#include <map>

#include "cdm/dataset.hpp"

namespace cdm {

// ---------------------------------------------------------------------------
// Parameter classes
// ---------------------------------------------------------------------------

/// MNL / Luce model: one utility per item.
struct LuceParams {
    Eigen::VectorXd v;

    int n() const { return static_cast<int>(v.size()); }
    static LuceParams zeros(int n) { return {Eigen::VectorXd::Zero(n)}; }
};

/// Full-rank CDM: flat vector of pairwise contextual utilities u_xz, x != z,
/// laid out by pair_index().
struct FullRankCdmParams {
    int n = 0;
    Eigen::VectorXd u;  // length n(n-1)

    static FullRankCdmParams zeros(int n) {
        return {n, Eigen::VectorXd::Zero(n * (n - 1))};
    }
    double at(int x, int z) const { return u[pair_index(x, z, n)]; }
    double& at(int x, int z) { return u[pair_index(x, z, n)]; }
};

/// Low-rank CDM: per-item target and context vectors (rows of T and C).
/// Induced pairwise utilities are u_xz = c_z . t_x.
struct LowRankCdmParams {
    Eigen::MatrixXd T;  // n x r
    Eigen::MatrixXd C;  // n x r

    int n() const { return static_cast<int>(T.rows()); }
    int rank() const { return static_cast<int>(T.cols()); }

    /// Off-diagonal entries of T C^T as a full-rank parameter vector
    /// (diagonal is unused and dropped).
    FullRankCdmParams induced_full_rank() const {
        const int nn = n();
        FullRankCdmParams p = FullRankCdmParams::zeros(nn);
        for (int x = 0; x < nn; ++x)
            for (int z = 0; z < nn; ++z)
                if (x != z) p.at(x, z) = C.row(z).dot(T.row(x));
        return p;
    }
};

/// Saturated (universal logit) model: one stored probability vector per set.
struct SaturatedModel {
    std::map<ChoiceSet, Eigen::VectorXd> table;

    void set(const ChoiceSet& s, const Eigen::VectorXd& probs) {
        if (static_cast<int>(s.size()) != probs.size())
            throw InvalidInput("probability vector size must match set size");
        if (probs.minCoeff() < 0.0 || std::abs(probs.sum() - 1.0) > 1e-12)
            throw InvalidInput("stored probabilities must be nonnegative and sum to 1");
        table[s] = probs;
    }
};

// ---------------------------------------------------------------------------
// Choice-probability kernels (log-domain, max-subtracted)
// ---------------------------------------------------------------------------

inline Eigen::VectorXd softmax(const Eigen::VectorXd& utilities) {
    Eigen::VectorXd p = (utilities.array() - utilities.maxCoeff()).exp();
    return p / p.sum();
}

inline Eigen::VectorXd luce_utilities(const LuceParams& params, const ChoiceSet& set) {
    Eigen::VectorXd util(static_cast<int>(set.size()));
    for (size_t i = 0; i < set.size(); ++i) util[static_cast<int>(i)] = params.v[set[i]];
    return util;
}

inline Eigen::VectorXd cdm_utilities(const FullRankCdmParams& params, const ChoiceSet& set) {
    Eigen::VectorXd util = Eigen::VectorXd::Zero(static_cast<int>(set.size()));
    for (size_t i = 0; i < set.size(); ++i)
        for (size_t j = 0; j < set.size(); ++j)
            if (i != j) util[static_cast<int>(i)] += params.at(set[i], set[j]);
    return util;
}

inline Eigen::VectorXd low_rank_utilities(const LowRankCdmParams& params, const ChoiceSet& set) {
    const int k = static_cast<int>(set.size());
    Eigen::RowVectorXd context_sum = Eigen::RowVectorXd::Zero(params.rank());
    for (int i = 0; i < k; ++i) context_sum += params.C.row(set[i]);
    Eigen::VectorXd util(k);
    for (int i = 0; i < k; ++i)
        util[i] = (context_sum - params.C.row(set[i])).dot(params.T.row(set[i]));
    return util;
}

inline Eigen::VectorXd luce_probabilities(const LuceParams& params, const ChoiceSet& set) {
    validate_choice_set(set, params.n());
    return softmax(luce_utilities(params, set));
}

inline Eigen::VectorXd cdm_probabilities(const FullRankCdmParams& params, const ChoiceSet& set) {
    validate_choice_set(set, params.n);
    return softmax(cdm_utilities(params, set));
}

inline Eigen::VectorXd low_rank_probabilities(const LowRankCdmParams& params, const ChoiceSet& set) {
    if (params.rank() < 1) throw InvalidInput("low-rank CDM requires rank >= 1");
    validate_choice_set(set, params.n());
    return softmax(low_rank_utilities(params, set));
}

inline Eigen::VectorXd saturated_probabilities(const SaturatedModel& model, const ChoiceSet& set) {
    auto it = model.table.find(set);
    if (it == model.table.end()) throw InvalidInput("set not present in saturated model");
    return it->second;
}

// ---------------------------------------------------------------------------
// Log-likelihood (Eq.-style sum over observations)
// ---------------------------------------------------------------------------

/// Sum log-likelihood. minus_infinity flags a probability-zero observation,
/// in which case value is -inf.
struct LogLik {
    double value = 0.0;
    bool minus_infinity = false;
};

namespace detail {

template <typename ProbFn>
LogLik log_likelihood_from_tallies(const std::vector<SetTally>& tallies, ProbFn&& probs_of) {
    LogLik ll;
    for (const auto& t : tallies) {
        Eigen::VectorXd p = probs_of(t.set);
        for (int i = 0; i < p.size(); ++i) {
            if (t.counts[i] == 0.0) continue;
            if (p[i] <= 0.0) {
                ll.minus_infinity = true;
                ll.value = -std::numeric_limits<double>::infinity();
                return ll;
            }
            ll.value += t.counts[i] * std::log(p[i]);
        }
    }
    return ll;
}

}  // namespace detail

inline LogLik log_likelihood(const LuceParams& params, const std::vector<SetTally>& tallies) {
    return detail::log_likelihood_from_tallies(
        tallies, [&](const ChoiceSet& s) { return luce_probabilities(params, s); });
}

inline LogLik log_likelihood(const FullRankCdmParams& params, const std::vector<SetTally>& tallies) {
    return detail::log_likelihood_from_tallies(
        tallies, [&](const ChoiceSet& s) { return cdm_probabilities(params, s); });
}

inline LogLik log_likelihood(const LowRankCdmParams& params, const std::vector<SetTally>& tallies) {
    return detail::log_likelihood_from_tallies(
        tallies, [&](const ChoiceSet& s) { return low_rank_probabilities(params, s); });
}

inline LogLik log_likelihood(const SaturatedModel& model, const std::vector<SetTally>& tallies) {
    return detail::log_likelihood_from_tallies(
        tallies, [&](const ChoiceSet& s) { return saturated_probabilities(model, s); });
}

template <typename Model>
LogLik log_likelihood(const Model& model, const ChoiceDataset& data) {
    return log_likelihood(model, tally_dataset(data));
}

// ---------------------------------------------------------------------------
// Analytic gradients of the sum log-likelihood w.r.t. raw parameters
// ---------------------------------------------------------------------------

inline Eigen::VectorXd log_likelihood_gradient(const LuceParams& params,
                                               const std::vector<SetTally>& tallies) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.n());
    for (const auto& t : tallies) {
        Eigen::VectorXd p = luce_probabilities(params, t.set);
        for (size_t i = 0; i < t.set.size(); ++i)
            grad[t.set[i]] += t.counts[static_cast<int>(i)] - t.total * p[static_cast<int>(i)];
    }
    return grad;
}

inline Eigen::VectorXd log_likelihood_gradient(const FullRankCdmParams& params,
                                               const std::vector<SetTally>& tallies) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.u.size());
    for (const auto& t : tallies) {
        Eigen::VectorXd p = cdm_probabilities(params, t.set);
        for (size_t i = 0; i < t.set.size(); ++i) {
            double r = t.counts[static_cast<int>(i)] - t.total * p[static_cast<int>(i)];
            for (size_t j = 0; j < t.set.size(); ++j)
                if (i != j) grad[pair_index(t.set[i], t.set[j], params.n)] += r;
        }
    }
    return grad;
}

struct LowRankGradient {
    Eigen::MatrixXd t_grad;
    Eigen::MatrixXd c_grad;
};

inline LowRankGradient log_likelihood_gradient(const LowRankCdmParams& params,
                                               const std::vector<SetTally>& tallies) {
    const int r = params.rank();
    LowRankGradient g{Eigen::MatrixXd::Zero(params.n(), r), Eigen::MatrixXd::Zero(params.n(), r)};
    for (const auto& t : tallies) {
        const int k = static_cast<int>(t.set.size());
        Eigen::VectorXd p = low_rank_probabilities(params, t.set);
        Eigen::RowVectorXd context_sum = Eigen::RowVectorXd::Zero(r);
        for (int i = 0; i < k; ++i) context_sum += params.C.row(t.set[i]);
        for (int i = 0; i < k; ++i) {
            double res = t.counts[i] - t.total * p[i];
            g.t_grad.row(t.set[i]) += res * (context_sum - params.C.row(t.set[i]));
            for (int j = 0; j < k; ++j)
                if (i != j) g.c_grad.row(t.set[j]) += res * params.T.row(t.set[i]);
        }
    }
    return g;
}

template <typename Model>
auto log_likelihood_gradient(const Model& model, const ChoiceDataset& data) {
    return log_likelihood_gradient(model, tally_dataset(data));
}

// ---------------------------------------------------------------------------
// Gauge normalization (shift to mean-zero; probabilities unchanged)
// ---------------------------------------------------------------------------

inline LuceParams gauge_normalize(const LuceParams& params) {
    return {params.v.array() - params.v.mean()};
}

inline FullRankCdmParams gauge_normalize(const FullRankCdmParams& params) {
    return {params.n, params.u.array() - params.u.mean()};
}

/// Full-rank CDM reproducing the probabilities of a Luce model on every set:
/// with u_xz = -v(z), the set utility of x is v(x) minus a set-common sum.
inline FullRankCdmParams luce_embedding(const LuceParams& params) {
    const int n = params.n();
    FullRankCdmParams p = FullRankCdmParams::zeros(n);
    for (int x = 0; x < n; ++x)
        for (int z = 0; z < n; ++z)
            if (x != z) p.at(x, z) = -params.v[z];
    return p;
}

}  // namespace cdm
