#pragma once

#include <cstdint>
#include <optional>

#include <boost/multiprecision/cpp_int.hpp>

#include "cdm/models.hpp"

namespace cdm {

// ---------------------------------------------------------------------------
// Indicator vectors and the log-ratio transform
// ---------------------------------------------------------------------------

/// Integer indicator vector g_{x,C} of length n(n-1): coefficient |C|-1 on
/// u_xz for z in C\x, coefficient -1 on u_yz for y in C\x, z in C\y.
/// Satisfies g_{x,C}^T u = |C| * beta_{x,C} for every u.
inline Eigen::VectorXi indicator_vector(int x, const ChoiceSet& set, int n) {
    validate_choice_set(set, n);
    if (!std::binary_search(set.begin(), set.end(), x))
        throw InvalidInput("indicator_vector: item not in set");
    const int k = static_cast<int>(set.size());
    Eigen::VectorXi g = Eigen::VectorXi::Zero(n * (n - 1));
    for (int y : set) {
        if (y == x) {
            for (int z : set)
                if (z != x) g[pair_index(x, z, n)] += k - 1;
        } else {
            for (int z : set)
                if (z != y) g[pair_index(y, z, n)] -= 1;
        }
    }
    return g;
}

/// beta_x = log(P_x / geometric mean of P over the set). Sums to zero and is
/// inverted by softmax.
inline Eigen::VectorXd log_ratio_beta(const Eigen::VectorXd& probs) {
    if (probs.size() < 2) throw InvalidInput("log_ratio_beta: need at least 2 probabilities");
    if (probs.minCoeff() <= 0.0) throw InvalidInput("log_ratio_beta: probabilities must be positive");
    Eigen::VectorXd logp = probs.array().log();
    return logp.array() - logp.mean();
}

// ---------------------------------------------------------------------------
// Design matrix G(D)
// ---------------------------------------------------------------------------

struct DesignMatrix {
    Eigen::MatrixXi rows;                          // Omega x n(n-1)
    std::vector<std::pair<ChoiceSet, int>> row_index;  // (set, item) per row
};

/// Stacks indicator rows over the unique sets of the dataset (repeated sets
/// do not change the rank).
inline DesignMatrix build_design_matrix(const ChoiceDataset& data) {
    data.validate();
    const int n = data.n();
    auto sets = data.unique_sets();
    int omega = 0;
    for (const auto& s : sets) omega += static_cast<int>(s.size());
    DesignMatrix G;
    G.rows.resize(omega, n * (n - 1));
    G.row_index.reserve(omega);
    int r = 0;
    for (const auto& s : sets) {
        for (int x : s) {
            G.rows.row(r) = indicator_vector(x, s, n).transpose();
            G.row_index.emplace_back(s, x);
            ++r;
        }
    }
    return G;
}

// ---------------------------------------------------------------------------
// Exact integer rank (fraction-free Bareiss elimination)
// ---------------------------------------------------------------------------

namespace detail {

struct Int64Overflow {};

// int64 wrapper whose arithmetic throws on overflow so the caller can retry
// with arbitrary precision.
struct CheckedInt64 {
    std::int64_t v = 0;
    CheckedInt64() = default;
    CheckedInt64(std::int64_t x) : v(x) {}
    friend CheckedInt64 operator*(CheckedInt64 a, CheckedInt64 b) {
        std::int64_t r;
        if (__builtin_mul_overflow(a.v, b.v, &r)) throw Int64Overflow{};
        return r;
    }
    friend CheckedInt64 operator-(CheckedInt64 a, CheckedInt64 b) {
        std::int64_t r;
        if (__builtin_sub_overflow(a.v, b.v, &r)) throw Int64Overflow{};
        return r;
    }
    friend CheckedInt64 operator/(CheckedInt64 a, CheckedInt64 b) { return a.v / b.v; }
    friend bool operator==(CheckedInt64 a, CheckedInt64 b) { return a.v == b.v; }
};

template <typename Int>
Int abs_of(const Int& x) {
    return x < Int(0) ? Int(Int(0) - x) : x;
}
inline CheckedInt64 abs_of(CheckedInt64 x) { return x.v < 0 ? CheckedInt64(-x.v) : x; }
inline bool less_mag(CheckedInt64 a, CheckedInt64 b) { return a.v < b.v; }
template <typename Int>
bool less_mag(const Int& a, const Int& b) {
    return a < b;
}

template <typename Int>
int bareiss_rank(std::vector<std::vector<Int>> M) {
    if (M.empty()) return 0;
    const int rows = static_cast<int>(M.size());
    const int cols = static_cast<int>(M[0].size());
    Int prev(1);
    int rank = 0;
    for (int col = 0; col < cols && rank < rows; ++col) {
        // partial pivoting on magnitude
        int pivot = -1;
        for (int i = rank; i < rows; ++i) {
            if (M[i][col] == Int(0)) continue;
            if (pivot < 0 || less_mag(abs_of(M[pivot][col]), abs_of(M[i][col]))) pivot = i;
        }
        if (pivot < 0) continue;
        std::swap(M[rank], M[pivot]);
        for (int i = rank + 1; i < rows; ++i) {
            for (int j = col + 1; j < cols; ++j)
                M[i][j] = (M[rank][col] * M[i][j] - M[i][col] * M[rank][j]) / prev;
            M[i][col] = Int(0);
        }
        prev = M[rank][col];
        ++rank;
    }
    return rank;
}

}  // namespace detail

/// Exact rank of an integer matrix over the rationals. Runs fraction-free
/// elimination in int64 and retries in arbitrary precision when intermediate
/// determinants overflow.
inline int rank_exact(const Eigen::MatrixXi& matrix) {
    if (matrix.rows() == 0 || matrix.cols() == 0) return 0;
    const int rows = static_cast<int>(matrix.rows());
    const int cols = static_cast<int>(matrix.cols());
    try {
        std::vector<std::vector<detail::CheckedInt64>> M(rows,
                                                         std::vector<detail::CheckedInt64>(cols));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) M[i][j] = matrix(i, j);
        return detail::bareiss_rank(std::move(M));
    } catch (const detail::Int64Overflow&) {
        using boost::multiprecision::cpp_int;
        std::vector<std::vector<cpp_int>> M(rows, std::vector<cpp_int>(cols));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) M[i][j] = matrix(i, j);
        return detail::bareiss_rank(std::move(M));
    }
}

/// Floating-point rank via SVD with tolerance 1e-8 * sigma_max; diagnostic
/// cross-check only, never the decision procedure.
inline int rank_svd(const Eigen::MatrixXi& matrix) {
    if (matrix.rows() == 0 || matrix.cols() == 0) return 0;
    Eigen::MatrixXd A = matrix.cast<double>();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    double tol = 1e-8 * sv[0];
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++r;
    return r;
}

// ---------------------------------------------------------------------------
// Identifiability report (rank test, structural conditions, spectral diagnostic)
// ---------------------------------------------------------------------------

struct IdentifiabilityReport {
    bool identifiable = false;
    int rank = 0;
    int deficiency = 0;        // n(n-1) - 1 - rank
    bool condition_thm1 = false;
    bool single_size_flag = false;
    std::optional<double> lambda2_L;  // omitted beyond desk scale (n > 60)
    int rank_svd_diag = 0;
};

namespace detail {

inline long long binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    long long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace detail

/// L = (1/m) X(D)^T X(D) over all observations with multiplicity, where X(D)
/// stacks rows g_{x,C}/|C| for every x in C of each observation.
inline Eigen::MatrixXd information_matrix(const ChoiceDataset& data) {
    const int n = data.n();
    const int d = n * (n - 1);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
    std::map<ChoiceSet, int> multiplicity;
    for (const auto& obs : data.observations) multiplicity[obs.choice_set] += 1;
    for (const auto& [s, w] : multiplicity) {
        const double k = static_cast<double>(s.size());
        for (int x : s) {
            Eigen::VectorXd g = indicator_vector(x, s, n).cast<double>();
            L.noalias() += (static_cast<double>(w) / (k * k)) * g * g.transpose();
        }
    }
    return L / static_cast<double>(data.m());
}

inline IdentifiabilityReport identifiability_report(const ChoiceDataset& data) {
    data.validate();
    const int n = data.n();
    const int full = n * (n - 1) - 1;
    IdentifiabilityReport rep;

    auto sets = data.unique_sets();
    std::map<int, std::set<ChoiceSet>> by_size;
    for (const auto& s : sets) by_size[static_cast<int>(s.size())].insert(s);
    rep.single_size_flag = by_size.size() == 1;

    // Sufficient condition: all sets of two sizes k, k' are observed, with at
    // least one size outside {2, n}.
    std::vector<int> complete_sizes;
    for (const auto& [k, ss] : by_size)
        if (static_cast<long long>(ss.size()) == detail::binomial(n, k)) complete_sizes.push_back(k);
    for (size_t a = 0; a < complete_sizes.size() && !rep.condition_thm1; ++a)
        for (size_t b = a + 1; b < complete_sizes.size() && !rep.condition_thm1; ++b) {
            int k = complete_sizes[a], kp = complete_sizes[b];
            if ((k != 2 && k != n) || (kp != 2 && kp != n)) rep.condition_thm1 = true;
        }

    DesignMatrix G = build_design_matrix(data);
    rep.rank = rank_exact(G.rows);
    rep.rank_svd_diag = rank_svd(G.rows);
    rep.deficiency = full - rep.rank;
    rep.identifiable = rep.rank == full;

    if (n <= 60) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(information_matrix(data),
                                                          Eigen::EigenvaluesOnly);
        rep.lambda2_L = es.eigenvalues()[1];
    }
    return rep;
}

}  // namespace cdm
