#pragma once

#include "cdm/estimation.hpp"

namespace cdm {

// ---------------------------------------------------------------------------
// Chi-squared survival function via the regularized incomplete gamma function
// ---------------------------------------------------------------------------

namespace detail {

// Regularized lower incomplete gamma P(a, x) by series expansion.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double term = sum;
    for (int i = 0; i < 1000; ++i) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by modified Lentz continued
// fraction.
inline double gamma_q_cont_frac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw InvalidInput("gamma_q: invalid arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cont_frac(a, x);
}

}  // namespace detail

/// P(X > x) for X ~ chi-squared with df degrees of freedom.
inline double chi_square_survival(double x, int df) {
    if (x < 0.0) throw InvalidInput("chi_square_survival: x must be nonnegative");
    if (df < 1) throw InvalidInput("chi_square_survival: df must be positive");
    return detail::gamma_q(0.5 * df, 0.5 * x);
}

// ---------------------------------------------------------------------------
// Saturated (universal logit) maximum likelihood
// ---------------------------------------------------------------------------

/// Per-set empirical choice frequencies: the MLE over all choice systems on
/// the observed sets. Items never chosen from a set get probability 0.
inline SaturatedModel saturated_mle(const ChoiceDataset& data) {
    data.validate();
    SaturatedModel model;
    for (const auto& t : tally_dataset(data)) model.table[t.set] = t.counts / t.total;
    return model;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio tests of IIA
// ---------------------------------------------------------------------------

enum class Alternative { CDM, UniversalLogit };

struct LrtResult {
    double statistic = 0.0;  // D = -2 log Lambda, clamped at 0
    int df = 0;              // Delta
    double p_value = 1.0;
    Alternative alternative = Alternative::CDM;
    double nll_null = 0.0;   // mean NLL, fitted Luce
    double nll_alt = 0.0;    // mean NLL, fitted alternative
    std::vector<std::string> warnings;
};

namespace detail {

inline double lrt_statistic(double nll_null, double nll_alt, int m) {
    double d = 2.0 * static_cast<double>(m) * (nll_null - nll_alt);
    if (d < -1e-6)
        throw NumericalError("LRT: alternative fit worse than null beyond tolerance (D = " +
                             std::to_string(d) + ")");
    return std::max(d, 0.0);
}

}  // namespace detail

/// Nested LRT of Luce (null) against the full-rank CDM. Degrees of freedom
/// Delta = n(n-2). Uses lambda = 0 when the design is identifiable, else a
/// minimal 1e-6 with a warning.
inline LrtResult lrt_iia_cdm(const ChoiceDataset& data, const FitConfig& config) {
    data.validate();
    const int n = data.n();
    if (n < 3) throw InvalidInput("CDM-based LRT needs n >= 3 (zero degrees of freedom otherwise)");

    FitConfig null_cfg = config;
    null_cfg.l2_penalty = 0.0;
    auto luce = fit_luce(data, null_cfg);

    FitConfig alt_cfg = config;
    alt_cfg.l2_penalty = 0.0;
    std::vector<std::string> id_warnings;
    detail::maybe_warn_non_identifiable(data, id_warnings);
    if (!id_warnings.empty()) alt_cfg.l2_penalty = 1e-6;
    auto cdm = fit_cdm_full(data, alt_cfg);

    LrtResult res;
    res.alternative = Alternative::CDM;
    res.nll_null = luce.final_nll;
    res.nll_alt = cdm.final_nll;
    res.statistic = detail::lrt_statistic(res.nll_null, res.nll_alt, data.m());
    res.df = n * (n - 2);
    res.p_value = chi_square_survival(res.statistic, res.df);
    res.warnings = id_warnings;
    return res;
}

/// Nested LRT of Luce (null) against the saturated model, with
/// Delta = sum over unique sets of (|C| - 1), minus (n - 1).
inline LrtResult lrt_iia_universal(const ChoiceDataset& data, const FitConfig& config) {
    data.validate();
    const int n = data.n();

    int df = -(n - 1);
    for (const auto& s : data.unique_sets()) df += static_cast<int>(s.size()) - 1;
    if (df <= 0) throw InvalidInput("universal-logit LRT degenerate: nonpositive degrees of freedom");

    FitConfig null_cfg = config;
    null_cfg.l2_penalty = 0.0;
    auto luce = fit_luce(data, null_cfg);
    auto sat = saturated_mle(data);
    auto tallies = tally_dataset(data);

    LrtResult res;
    res.alternative = Alternative::UniversalLogit;
    res.nll_null = luce.final_nll;
    res.nll_alt = -log_likelihood(sat, tallies).value / static_cast<double>(data.m());
    res.statistic = detail::lrt_statistic(res.nll_null, res.nll_alt, data.m());
    res.df = df;
    res.p_value = chi_square_survival(res.statistic, res.df);
    return res;
}

}  // namespace cdm
