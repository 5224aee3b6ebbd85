#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>

#include "cdm/identifiability.hpp"
#include "cdm/models.hpp"

namespace cdm {

struct FitConfig {
    int max_epochs = 2000;
    double learning_rate = 0.05;
    int batch_size = 0;  // 0 = full batch
    double tolerance = 1e-7;  // relative NLL improvement per epoch
    double l2_penalty = 0.0;  // lambda, applied to the sum log-likelihood
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;

    void validate() const {
        if (max_epochs < 1) throw InvalidInput("max_epochs must be >= 1");
        if (learning_rate <= 0.0) throw InvalidInput("learning_rate must be positive");
        if (tolerance <= 0.0) throw InvalidInput("tolerance must be positive");
        if (l2_penalty < 0.0) throw InvalidInput("l2_penalty must be nonnegative");
    }
};

template <typename Params>
struct FitReport {
    double final_nll = 0.0;  // mean NLL per observation at the returned params
    int epochs_run = 0;
    bool converged = false;
    Params params;           // gauge-normalized where applicable
    std::vector<double> nll_trace;
    std::vector<std::string> warnings;
    FitConfig config;        // hyperparameters surfaced for reproducibility
};

struct EvalResult {
    double mean_nll = 0.0;
    bool minus_infinity = false;
    double accuracy = 0.0;
};

/// Mean NLL and top-1 accuracy on a dataset. Ties in the argmax go to the
/// lowest index; the chosen item counts as correct only if it is that winner.
template <typename Model>
EvalResult evaluate_held_out(const Model& model, const ChoiceDataset& data) {
    data.validate();
    auto tallies = tally_dataset(data);
    EvalResult res;
    double correct = 0.0;
    for (const auto& t : tallies) {
        Eigen::VectorXd p = [&] {
            if constexpr (std::is_same_v<Model, LuceParams>)
                return luce_probabilities(model, t.set);
            else if constexpr (std::is_same_v<Model, FullRankCdmParams>)
                return cdm_probabilities(model, t.set);
            else if constexpr (std::is_same_v<Model, LowRankCdmParams>)
                return low_rank_probabilities(model, t.set);
            else
                return saturated_probabilities(model, t.set);
        }();
        int winner = 0;
        for (int i = 1; i < p.size(); ++i)
            if (p[i] > p[winner]) winner = i;
        correct += t.counts[winner];
        for (int i = 0; i < p.size(); ++i) {
            if (t.counts[i] == 0.0) continue;
            if (p[i] <= 0.0)
                res.minus_infinity = true;
            else
                res.mean_nll -= t.counts[i] * std::log(p[i]);
        }
    }
    const double m = static_cast<double>(data.m());
    res.mean_nll = res.minus_infinity ? std::numeric_limits<double>::infinity() : res.mean_nll / m;
    res.accuracy = correct / m;
    return res;
}

namespace detail {

struct ObjectiveEval {
    double data_nll = 0.0;   // mean data NLL
    double objective = 0.0;  // mean data NLL + (lambda/m) * ||theta||^2
    Eigen::VectorXd grad;    // gradient of the objective
};

struct AdamState {
    Eigen::VectorXd m1, m2;
    int t = 0;

    explicit AdamState(Eigen::Index dim)
        : m1(Eigen::VectorXd::Zero(dim)), m2(Eigen::VectorXd::Zero(dim)) {}

    void update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const FitConfig& cfg) {
        ++t;
        m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
        m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        double c1 = 1.0 - std::pow(cfg.beta1, t);
        double c2 = 1.0 - std::pow(cfg.beta2, t);
        theta -= cfg.learning_rate *
                 (m1 / c1).cwiseQuotient(((m2 / c2).cwiseSqrt().array() + 1e-8).matrix());
    }
};

// Full-data evaluation: FullEval(theta) -> ObjectiveEval.
// BatchGrad(theta, obs_indices) -> stochastic gradient estimate (may be null
// for full-batch runs). Tracks the best objective seen; reports its params.
template <typename FullEval, typename BatchGrad>
std::pair<Eigen::VectorXd, FitReport<int>> adam_minimize(Eigen::VectorXd theta,
                                                         const FitConfig& cfg, int m_total,
                                                         FullEval&& full_eval,
                                                         BatchGrad&& batch_grad) {
    FitReport<int> rep;
    rep.config = cfg;
    AdamState state(theta.size());
    ObjectiveEval eval = full_eval(theta);
    rep.nll_trace.push_back(eval.data_nll);
    Eigen::VectorXd best_theta = theta;
    double best_objective = eval.objective;
    double best_nll = eval.data_nll;
    double prev_objective = eval.objective;

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int> order(m_total);
    std::iota(order.begin(), order.end(), 0);

    const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < m_total;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (minibatch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (int start = 0; start < m_total; start += cfg.batch_size) {
                int end = std::min(start + cfg.batch_size, m_total);
                std::vector<int> batch(order.begin() + start, order.begin() + end);
                state.update(theta, batch_grad(theta, batch), cfg);
            }
            eval = full_eval(theta);  // full NLL every epoch
        } else {
            state.update(theta, eval.grad, cfg);
            eval = full_eval(theta);
        }
        rep.nll_trace.push_back(eval.data_nll);
        rep.epochs_run = epoch;
        if (eval.objective < best_objective) {
            best_objective = eval.objective;
            best_nll = eval.data_nll;
            best_theta = theta;
        }
        double rel = std::abs(prev_objective - eval.objective) /
                     (std::abs(prev_objective) + 1e-12);
        prev_objective = eval.objective;
        if (rel < cfg.tolerance) {
            rep.converged = true;
            break;
        }
    }
    rep.final_nll = best_nll;
    return {std::move(best_theta), std::move(rep)};
}

template <typename Params>
void copy_report(const FitReport<int>& from, FitReport<Params>& to) {
    to.final_nll = from.final_nll;
    to.epochs_run = from.epochs_run;
    to.converged = from.converged;
    to.nll_trace = from.nll_trace;
    to.config = from.config;
}

inline std::vector<SetTally> tally_subset(const ChoiceDataset& data, const std::vector<int>& idx) {
    ChoiceDataset sub;
    sub.universe = data.universe;
    sub.observations.reserve(idx.size());
    for (int i : idx) sub.observations.push_back(data.observations[i]);
    return tally_dataset(sub);
}

/// Cheap identifiability screen for fit-time warnings: a single set size is
/// never identifiable; otherwise fall back to the exact rank test at desk
/// scale.
inline void maybe_warn_non_identifiable(const ChoiceDataset& data, std::vector<std::string>& warnings) {
    auto sets = data.unique_sets();
    size_t first_size = sets.front().size();
    bool single = std::all_of(sets.begin(), sets.end(),
                              [&](const ChoiceSet& s) { return s.size() == first_size; });
    if (single) {
        warnings.push_back(
            "non-identifiable: all observed choice sets have a single size and l2_penalty is 0");
        return;
    }
    if (data.n() > 30) {
        warnings.push_back("identifiability not checked (n > 30); consider the identify command");
        return;
    }
    DesignMatrix G = build_design_matrix(data);
    if (rank_exact(G.rows) < data.n() * (data.n() - 1) - 1)
        warnings.push_back("non-identifiable: design matrix rank deficient and l2_penalty is 0");
}

}  // namespace detail

inline FitReport<LuceParams> fit_luce(const ChoiceDataset& data, const FitConfig& config) {
    config.validate();
    data.validate();
    const int n = data.n();
    const double m = static_cast<double>(data.m());
    const double lam = config.l2_penalty;
    auto tallies = tally_dataset(data);

    auto full_eval = [&](const Eigen::VectorXd& theta) {
        LuceParams p{theta};
        detail::ObjectiveEval e;
        e.data_nll = -log_likelihood(p, tallies).value / m;
        e.objective = e.data_nll + lam / m * theta.squaredNorm();
        e.grad = -log_likelihood_gradient(p, tallies) / m + (2.0 * lam / m) * theta;
        return e;
    };
    auto batch_grad = [&](const Eigen::VectorXd& theta, const std::vector<int>& idx) {
        LuceParams p{theta};
        auto bt = detail::tally_subset(data, idx);
        return Eigen::VectorXd(-log_likelihood_gradient(p, bt) / static_cast<double>(idx.size()) +
                               (2.0 * lam / m) * theta);
    };
    auto [theta, base] =
        detail::adam_minimize(Eigen::VectorXd::Zero(n), config, data.m(), full_eval, batch_grad);

    FitReport<LuceParams> rep;
    detail::copy_report(base, rep);
    rep.params = gauge_normalize(LuceParams{theta});

    std::vector<bool> seen(n, false);
    for (const auto& t : tallies)
        for (int x : t.set) seen[x] = true;
    for (int x = 0; x < n; ++x)
        if (!seen[x])
            rep.warnings.push_back("item '" + data.universe.labels[x] +
                                   "' never appears in a choice set; its utility is unconstrained");
    return rep;
}

/// Full-rank CDM fit, warm-started from the Luce MLE via the exact embedding
/// u_xz = -v(z), so epoch 0 reproduces the Luce probabilities.
inline FitReport<FullRankCdmParams> fit_cdm_full(const ChoiceDataset& data, const FitConfig& config) {
    config.validate();
    data.validate();
    const int n = data.n();
    const double m = static_cast<double>(data.m());
    const double lam = config.l2_penalty;
    auto tallies = tally_dataset(data);

    auto luce = fit_luce(data, config);
    Eigen::VectorXd init = luce_embedding(luce.params).u;

    auto full_eval = [&](const Eigen::VectorXd& theta) {
        FullRankCdmParams p{n, theta};
        detail::ObjectiveEval e;
        e.data_nll = -log_likelihood(p, tallies).value / m;
        e.objective = e.data_nll + lam / m * theta.squaredNorm();
        e.grad = -log_likelihood_gradient(p, tallies) / m + (2.0 * lam / m) * theta;
        return e;
    };
    auto batch_grad = [&](const Eigen::VectorXd& theta, const std::vector<int>& idx) {
        FullRankCdmParams p{n, theta};
        auto bt = detail::tally_subset(data, idx);
        return Eigen::VectorXd(-log_likelihood_gradient(p, bt) / static_cast<double>(idx.size()) +
                               (2.0 * lam / m) * theta);
    };
    auto [theta, base] = detail::adam_minimize(init, config, data.m(), full_eval, batch_grad);

    // With a ridge, components in the design-matrix null space see no data
    // gradient and decay too slowly to vanish within any practical epoch
    // budget. The exact penalized minimizer has no such component (the data
    // term is blind to it and the penalty is minimized at zero), so remove it
    // directly: observed-set probabilities are untouched and the norm drops.
    if (lam > 0.0 && n <= 60) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(build_design_matrix(data).rows.cast<double>());
        if (lu.dimensionOfKernel() > 0) {
            Eigen::MatrixXd K = lu.kernel();
            theta -= K * (K.transpose() * K).ldlt().solve(K.transpose() * theta);
        }
    }

    FitReport<FullRankCdmParams> rep;
    detail::copy_report(base, rep);
    rep.params = gauge_normalize(FullRankCdmParams{n, theta});
    rep.warnings = luce.warnings;
    if (lam == 0.0) detail::maybe_warn_non_identifiable(data, rep.warnings);
    return rep;
}

inline FitReport<LowRankCdmParams> fit_cdm_low_rank(const ChoiceDataset& data, int rank,
                                                    const FitConfig& config) {
    config.validate();
    data.validate();
    const int n = data.n();
    if (rank < 1 || rank > n) throw InvalidInput("rank must be in [1, n]");
    const double m = static_cast<double>(data.m());
    const double lam = config.l2_penalty;
    auto tallies = tally_dataset(data);

    auto luce = fit_luce(data, config);

    // Init: first target column = Luce utilities, first context column = 1,
    // remaining entries small i.i.d. normal scaled by 1/sqrt(rank). Epoch 0
    // then approximately reproduces the Luce probabilities.
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd T0(n, rank), C0(n, rank);
    const double scale = 0.1 / std::sqrt(static_cast<double>(rank));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < rank; ++j) {
            T0(i, j) = scale * gauss(rng);
            C0(i, j) = scale * gauss(rng);
        }
    T0.col(0) = luce.params.v;
    C0.col(0).setOnes();

    const int dim = 2 * n * rank;
    auto unflatten = [&](const Eigen::VectorXd& theta) {
        LowRankCdmParams p;
        p.T = Eigen::Map<const Eigen::MatrixXd>(theta.data(), n, rank);
        p.C = Eigen::Map<const Eigen::MatrixXd>(theta.data() + n * rank, n, rank);
        return p;
    };
    auto flatten_grad = [&](const LowRankGradient& g) {
        Eigen::VectorXd out(dim);
        Eigen::Map<Eigen::MatrixXd>(out.data(), n, rank) = g.t_grad;
        Eigen::Map<Eigen::MatrixXd>(out.data() + n * rank, n, rank) = g.c_grad;
        return out;
    };

    Eigen::VectorXd init(dim);
    Eigen::Map<Eigen::MatrixXd>(init.data(), n, rank) = T0;
    Eigen::Map<Eigen::MatrixXd>(init.data() + n * rank, n, rank) = C0;

    auto full_eval = [&](const Eigen::VectorXd& theta) {
        LowRankCdmParams p = unflatten(theta);
        detail::ObjectiveEval e;
        e.data_nll = -log_likelihood(p, tallies).value / m;
        e.objective = e.data_nll + lam / m * theta.squaredNorm();
        e.grad = -flatten_grad(log_likelihood_gradient(p, tallies)) / m + (2.0 * lam / m) * theta;
        return e;
    };
    auto batch_grad = [&](const Eigen::VectorXd& theta, const std::vector<int>& idx) {
        LowRankCdmParams p = unflatten(theta);
        auto bt = detail::tally_subset(data, idx);
        return Eigen::VectorXd(-flatten_grad(log_likelihood_gradient(p, bt)) /
                                   static_cast<double>(idx.size()) +
                               (2.0 * lam / m) * theta);
    };
    auto [theta, base] = detail::adam_minimize(init, config, data.m(), full_eval, batch_grad);

    FitReport<LowRankCdmParams> rep;
    detail::copy_report(base, rep);
    rep.params = unflatten(theta);  // reported raw: no canonical low-rank gauge
    rep.warnings = luce.warnings;
    if (lam == 0.0) detail::maybe_warn_non_identifiable(data, rep.warnings);
    return rep;
}

struct CrossValidationResult {
    double chosen_lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> mean_validation_nll;  // aligned with grid
    std::vector<std::string> warnings;
};

/// K-fold cross-validation of the l2 penalty. rank = 0 selects the full-rank
/// CDM; rank >= 1 the low-rank CDM. Fold assignment is a deterministic
/// shuffle from config.seed; ties break toward the larger lambda.
inline CrossValidationResult cross_validate_l2(const ChoiceDataset& data, int rank,
                                               const std::vector<double>& grid, int folds,
                                               const FitConfig& config) {
    config.validate();
    data.validate();
    if (folds < 2) throw InvalidInput("folds must be >= 2");
    if (grid.empty()) throw InvalidInput("lambda grid must be nonempty");
    const int m = data.m();
    if (folds > m) throw InvalidInput("more folds than observations");

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<int>> fold_of(folds);
    for (int i = 0; i < m; ++i) fold_of[i % folds].push_back(order[i]);

    CrossValidationResult res;
    res.grid = grid;
    res.mean_validation_nll.assign(grid.size(), 0.0);

    for (size_t gi = 0; gi < grid.size(); ++gi) {
        double total_nll = 0.0;
        int total_count = 0;
        for (int f = 0; f < folds; ++f) {
            ChoiceDataset train, valid;
            train.universe = valid.universe = data.universe;
            for (int g = 0; g < folds; ++g)
                for (int i : fold_of[g])
                    (g == f ? valid : train).observations.push_back(data.observations[i]);
            if (train.observations.empty() || valid.observations.empty())
                throw InvalidInput("cross-validation produced an empty fold");

            FitConfig cfg = config;
            cfg.l2_penalty = grid[gi];
            EvalResult ev;
            if (rank == 0) {
                auto fit = fit_cdm_full(train, cfg);
                ev = evaluate_held_out(fit.params, valid);
            } else {
                auto fit = fit_cdm_low_rank(train, rank, cfg);
                ev = evaluate_held_out(fit.params, valid);
            }

            std::vector<bool> seen(data.n(), false);
            for (const auto& obs : train.observations)
                for (int x : obs.choice_set) seen[x] = true;
            for (const auto& obs : valid.observations)
                for (int x : obs.choice_set)
                    if (!seen[x]) {
                        std::ostringstream os;
                        os << "fold " << f << ": validation item '" << data.universe.labels[x]
                           << "' unseen in training; scored with the fitted model anyway";
                        res.warnings.push_back(os.str());
                        seen[x] = true;
                    }
            total_nll += ev.mean_nll * static_cast<double>(valid.m());
            total_count += valid.m();
        }
        res.mean_validation_nll[gi] = total_nll / static_cast<double>(total_count);
    }

    size_t best = 0;
    for (size_t gi = 1; gi < grid.size(); ++gi) {
        if (res.mean_validation_nll[gi] < res.mean_validation_nll[best] ||
            (res.mean_validation_nll[gi] == res.mean_validation_nll[best] && grid[gi] > grid[best]))
            best = gi;
    }
    res.chosen_lambda = grid[best];
    return res;
}

}  // namespace cdm
