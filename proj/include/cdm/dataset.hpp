#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cdm {

/// Error raised for malformed inputs (bad sets, indices, probabilities).
class InvalidInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error raised for malformed data files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error raised when an optimization or test breaks down numerically.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A choice set: sorted list of distinct item indices, size >= 2.
using ChoiceSet = std::vector<int>;

struct ItemUniverse {
    int n = 0;
    std::vector<std::string> labels;  // unique, index = order of first appearance

    static ItemUniverse from_labels(std::vector<std::string> ls) {
        if (ls.size() < 2) throw InvalidInput("universe needs at least 2 items");
        std::set<std::string> seen;
        for (const auto& l : ls)
            if (!seen.insert(l).second) throw InvalidInput("duplicate label: " + l);
        ItemUniverse u;
        u.n = static_cast<int>(ls.size());
        u.labels = std::move(ls);
        return u;
    }

    /// Convenience universe with labels x0..x{n-1}.
    static ItemUniverse of_size(int n) {
        if (n < 2) throw InvalidInput("universe needs at least 2 items");
        ItemUniverse u;
        u.n = n;
        u.labels.reserve(n);
        for (int i = 0; i < n; ++i) u.labels.push_back("x" + std::to_string(i));
        return u;
    }
};

struct ChoiceObservation {
    ChoiceSet choice_set;
    int chosen = -1;
};

inline void validate_choice_set(const ChoiceSet& set, int n) {
    if (set.size() < 2) throw InvalidInput("choice set must have size >= 2");
    if (static_cast<int>(set.size()) > n) throw InvalidInput("choice set larger than universe");
    for (size_t i = 0; i < set.size(); ++i) {
        if (set[i] < 0 || set[i] >= n) throw InvalidInput("item index out of range");
        if (i > 0 && set[i] <= set[i - 1]) throw InvalidInput("choice set must be sorted and distinct");
    }
}

inline void validate_observation(const ChoiceObservation& obs, int n) {
    validate_choice_set(obs.choice_set, n);
    if (!std::binary_search(obs.choice_set.begin(), obs.choice_set.end(), obs.chosen))
        throw InvalidInput("chosen item not in choice set");
}

struct ChoiceDataset {
    ItemUniverse universe;
    std::vector<ChoiceObservation> observations;

    int n() const { return universe.n; }
    int m() const { return static_cast<int>(observations.size()); }

    void validate() const {
        if (observations.empty()) throw InvalidInput("dataset must contain at least one observation");
        for (const auto& obs : observations) validate_observation(obs, universe.n);
    }

    /// Distinct choice sets appearing in the observations (the collection C_D).
    std::vector<ChoiceSet> unique_sets() const {
        std::set<ChoiceSet> s;
        for (const auto& obs : observations) s.insert(obs.choice_set);
        return {s.begin(), s.end()};
    }
};

// The single source of truth for the flat layout of pairwise parameters
// u_xz, x != z: lexicographic in (x, z) with the diagonal skipped.
// Row x occupies positions [x*(n-1), (x+1)*(n-1)).
inline int pair_index(int x, int z, int n) {
    if (x == z || x < 0 || z < 0 || x >= n || z >= n)
        throw InvalidInput("pair_index requires distinct indices in [0, n)");
    return x * (n - 1) + (z < x ? z : z - 1);
}

inline std::pair<int, int> pair_from_index(int idx, int n) {
    int x = idx / (n - 1);
    int r = idx % (n - 1);
    int z = (r < x) ? r : r + 1;
    return {x, z};
}

/// Per-unique-set aggregation of a dataset: choice counts per set member.
/// Likelihoods and gradients over the full dataset reduce to sums over
/// tallies, so their cost is independent of m.
struct SetTally {
    ChoiceSet set;
    Eigen::VectorXd counts;  // per member, aligned with set order
    double total = 0.0;
};

inline std::vector<SetTally> tally_dataset(const ChoiceDataset& data) {
    std::map<ChoiceSet, size_t> index;
    std::vector<SetTally> tallies;
    for (const auto& obs : data.observations) {
        auto [it, fresh] = index.try_emplace(obs.choice_set, tallies.size());
        if (fresh) {
            SetTally t;
            t.set = obs.choice_set;
            t.counts = Eigen::VectorXd::Zero(static_cast<int>(obs.choice_set.size()));
            tallies.push_back(std::move(t));
        }
        SetTally& t = tallies[it->second];
        auto pos = std::lower_bound(t.set.begin(), t.set.end(), obs.chosen) - t.set.begin();
        t.counts[static_cast<int>(pos)] += 1.0;
        t.total += 1.0;
    }
    return tallies;
}

}  // namespace cdm
