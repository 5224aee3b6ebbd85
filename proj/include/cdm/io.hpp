#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cdm/inference.hpp"
#include "cdm/simulation.hpp"

namespace cdm {

inline constexpr const char* kReportVersion = "1.0";

// ---------------------------------------------------------------------------
// Dataset text format: one observation per line,
//   <chosen_label>;<label1>,<label2>,...
// '#' starts a comment line; the universe is the union of all labels in
// first-appearance order.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] inline void parse_fail(int line, const std::string& what) {
    throw DataError("line " + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline ChoiceDataset parse_dataset(std::istream& in) {
    std::vector<std::string> labels;
    std::map<std::string, int> index;
    auto intern = [&](const std::string& label) {
        auto [it, fresh] = index.try_emplace(label, static_cast<int>(labels.size()));
        if (fresh) labels.push_back(label);
        return it->second;
    };

    ChoiceDataset data;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::strip(line);
        if (s.empty() || s[0] == '#') continue;
        auto parts = detail::split_on(s, ';');
        if (parts.size() != 2) detail::parse_fail(lineno, "expected '<chosen>;<l1>,<l2>,...'");
        std::string chosen_label = detail::strip(parts[0]);
        if (chosen_label.empty()) detail::parse_fail(lineno, "empty chosen label");

        ChoiceSet set;
        bool chosen_in_set = false;
        std::set<int> seen;
        for (const auto& raw : detail::split_on(parts[1], ',')) {
            std::string label = detail::strip(raw);
            if (label.empty()) detail::parse_fail(lineno, "empty label in choice set");
            int idx = intern(label);
            if (!seen.insert(idx).second)
                detail::parse_fail(lineno, "duplicate label '" + label + "' in choice set");
            set.push_back(idx);
            if (label == chosen_label) chosen_in_set = true;
        }
        if (!chosen_in_set) detail::parse_fail(lineno, "chosen label not in set");
        if (set.size() < 2) detail::parse_fail(lineno, "choice set must have at least 2 items");
        int chosen = index.at(chosen_label);
        std::sort(set.begin(), set.end());
        data.observations.push_back({std::move(set), chosen});
    }
    if (data.observations.empty()) throw DataError("no observations found");
    data.universe = ItemUniverse::from_labels(std::move(labels));
    data.validate();
    return data;
}

inline ChoiceDataset parse_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    return parse_dataset(in);
}

inline void serialize_dataset(const ChoiceDataset& data, std::ostream& out) {
    for (const auto& obs : data.observations) {
        out << data.universe.labels[obs.chosen] << ';';
        for (size_t i = 0; i < obs.choice_set.size(); ++i) {
            if (i > 0) out << ',';
            out << data.universe.labels[obs.choice_set[i]];
        }
        out << '\n';
    }
}

inline void write_dataset_file(const ChoiceDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    serialize_dataset(data, out);
}

/// Converter for long-format CSV with header obs_id,label,chosen and one row
/// per alternative; chosen is 0/1 with exactly one 1 per observation.
inline ChoiceDataset parse_long_csv(std::istream& in) {
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) throw DataError("empty file");
    ++lineno;
    auto header = detail::split_on(detail::strip(line), ',');
    if (header.size() != 3 || detail::strip(header[0]) != "obs_id" ||
        detail::strip(header[1]) != "label" || detail::strip(header[2]) != "chosen")
        throw DataError("expected header 'obs_id,label,chosen'");

    struct Group {
        std::vector<std::string> labels;
        std::string chosen;
    };
    std::vector<std::string> order;
    std::map<std::string, Group> groups;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::strip(line);
        if (s.empty() || s[0] == '#') continue;
        auto parts = detail::split_on(s, ',');
        if (parts.size() != 3) detail::parse_fail(lineno, "expected 3 comma-separated fields");
        std::string id = detail::strip(parts[0]);
        std::string label = detail::strip(parts[1]);
        std::string flag = detail::strip(parts[2]);
        auto [it, fresh] = groups.try_emplace(id);
        if (fresh) order.push_back(id);
        it->second.labels.push_back(label);
        if (flag == "1") {
            if (!it->second.chosen.empty())
                detail::parse_fail(lineno, "observation '" + id + "' has multiple chosen rows");
            it->second.chosen = label;
        } else if (flag != "0") {
            detail::parse_fail(lineno, "chosen must be 0 or 1");
        }
    }

    std::ostringstream native;
    for (const auto& id : order) {
        const Group& g = groups.at(id);
        if (g.chosen.empty()) throw DataError("observation '" + id + "' has no chosen row");
        native << g.chosen << ';';
        for (size_t i = 0; i < g.labels.size(); ++i) {
            if (i > 0) native << ',';
            native << g.labels[i];
        }
        native << '\n';
    }
    std::istringstream is(native.str());
    return parse_dataset(is);
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

/// Observation-level uniform split; test side gets floor(m * test_fraction)
/// observations. Both parts share the full universe indexing.
inline std::pair<ChoiceDataset, ChoiceDataset> split_dataset(const ChoiceDataset& data,
                                                             double test_fraction,
                                                             std::uint64_t seed) {
    data.validate();
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw InvalidInput("test_fraction must be in (0, 1)");
    const int m = data.m();
    int test_m = static_cast<int>(std::floor(test_fraction * m));
    if (test_m == 0 || test_m == m) throw InvalidInput("split produces an empty side");

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    ChoiceDataset train, test;
    train.universe = test.universe = data.universe;
    for (int i = 0; i < m; ++i)
        (i < test_m ? test : train).observations.push_back(data.observations[order[i]]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Structured reports and model files (JSON)
// ---------------------------------------------------------------------------

using Json = nlohmann::json;

inline Json dataset_summary_json(const ChoiceDataset& data) {
    std::map<int, int> histogram;
    for (const auto& obs : data.observations) histogram[static_cast<int>(obs.choice_set.size())] += 1;
    Json h = Json::object();
    for (const auto& [k, c] : histogram) h[std::to_string(k)] = c;
    return Json{{"n", data.n()},
                {"m", data.m()},
                {"unique_sets", data.unique_sets().size()},
                {"set_size_histogram", h}};
}

inline Json identifiability_json(const IdentifiabilityReport& rep) {
    Json j{{"identifiable", rep.identifiable},
           {"rank", rep.rank},
           {"deficiency", rep.deficiency},
           {"condition_thm1", rep.condition_thm1},
           {"single_size_flag", rep.single_size_flag},
           {"rank_svd_diagnostic", rep.rank_svd_diag}};
    if (rep.lambda2_L) j["lambda2_L"] = *rep.lambda2_L;
    return j;
}

inline Json fit_config_json(const FitConfig& cfg) {
    return Json{{"max_epochs", cfg.max_epochs},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size == 0 ? Json("full") : Json(cfg.batch_size)},
                {"tolerance", cfg.tolerance},
                {"l2_penalty", cfg.l2_penalty},
                {"seed", cfg.seed}};
}

template <typename Params>
Json fit_report_json(const FitReport<Params>& rep) {
    return Json{{"final_nll", rep.final_nll},
                {"epochs_run", rep.epochs_run},
                {"converged", rep.converged},
                {"warnings", rep.warnings},
                {"config", fit_config_json(rep.config)}};
}

inline Json lrt_json(const LrtResult& res) {
    return Json{{"statistic", res.statistic},
                {"df", res.df},
                {"p_value", res.p_value},
                {"alternative", res.alternative == Alternative::CDM ? "cdm" : "universal"},
                {"nll_null", res.nll_null},
                {"nll_alt", res.nll_alt},
                {"verdict", res.p_value < 0.05 ? "reject IIA at p < .05" : "fail to reject IIA"},
                {"warnings", res.warnings}};
}

inline Json report_document(Json body) {
    body["version"] = kReportVersion;
    return body;
}

inline void write_json_file(const Json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << j.dump(2) << '\n';
}

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw DataError("invalid JSON in " + path + ": " + e.what());
    }
}

// Model files: gauge-normalized parameters plus the label-index map.

inline Json model_json(const LuceParams& params, const std::vector<std::string>& labels) {
    auto g = gauge_normalize(params);
    return Json{{"version", kReportVersion},
                {"model", "luce"},
                {"labels", labels},
                {"v", std::vector<double>(g.v.data(), g.v.data() + g.v.size())}};
}

inline Json model_json(const FullRankCdmParams& params, const std::vector<std::string>& labels) {
    auto g = gauge_normalize(params);
    return Json{{"version", kReportVersion},
                {"model", "cdm"},
                {"labels", labels},
                {"u", std::vector<double>(g.u.data(), g.u.data() + g.u.size())}};
}

inline Json model_json(const LowRankCdmParams& params, const std::vector<std::string>& labels) {
    auto mat = [](const Eigen::MatrixXd& M) {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            rows.emplace_back(M.row(i).begin(), M.row(i).end());
        return rows;
    };
    return Json{{"version", kReportVersion},
                {"model", "lowrank"},
                {"labels", labels},
                {"rank", params.rank()},
                {"T", mat(params.T)},
                {"C", mat(params.C)}};
}

struct LoadedModel {
    std::string kind;  // "luce" | "cdm" | "lowrank"
    std::vector<std::string> labels;
    LuceParams luce;
    FullRankCdmParams cdm;
    LowRankCdmParams lowrank;
};

inline LoadedModel load_model(const Json& j) {
    LoadedModel model;
    try {
        model.kind = j.at("model").get<std::string>();
        model.labels = j.at("labels").get<std::vector<std::string>>();
        const int n = static_cast<int>(model.labels.size());
        if (model.kind == "luce") {
            auto v = j.at("v").get<std::vector<double>>();
            model.luce.v = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
            if (model.luce.n() != n) throw DataError("luce model has wrong dimension");
        } else if (model.kind == "cdm") {
            auto u = j.at("u").get<std::vector<double>>();
            model.cdm.n = n;
            model.cdm.u = Eigen::Map<const Eigen::VectorXd>(u.data(), u.size());
            if (model.cdm.u.size() != n * (n - 1)) throw DataError("cdm model has wrong dimension");
        } else if (model.kind == "lowrank") {
            auto rows_t = j.at("T").get<std::vector<std::vector<double>>>();
            auto rows_c = j.at("C").get<std::vector<std::vector<double>>>();
            int r = j.at("rank").get<int>();
            if (static_cast<int>(rows_t.size()) != n || static_cast<int>(rows_c.size()) != n)
                throw DataError("lowrank model has wrong dimension");
            model.lowrank.T.resize(n, r);
            model.lowrank.C.resize(n, r);
            for (int i = 0; i < n; ++i) {
                if (static_cast<int>(rows_t[i].size()) != r || static_cast<int>(rows_c[i].size()) != r)
                    throw DataError("lowrank model has ragged rows");
                for (int k = 0; k < r; ++k) {
                    model.lowrank.T(i, k) = rows_t[i][k];
                    model.lowrank.C(i, k) = rows_c[i][k];
                }
            }
        } else {
            throw DataError("unknown model kind: " + model.kind);
        }
    } catch (const Json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    }
    return model;
}

/// Remaps a dataset's item indices onto a model's label order. Every dataset
/// label must exist in the model.
inline ChoiceDataset align_to_labels(const ChoiceDataset& data,
                                     const std::vector<std::string>& labels) {
    std::map<std::string, int> index;
    for (size_t i = 0; i < labels.size(); ++i) index[labels[i]] = static_cast<int>(i);
    std::vector<int> remap(data.n());
    for (int i = 0; i < data.n(); ++i) {
        auto it = index.find(data.universe.labels[i]);
        if (it == index.end())
            throw DataError("dataset label '" + data.universe.labels[i] + "' unknown to model");
        remap[i] = it->second;
    }
    ChoiceDataset out;
    out.universe = ItemUniverse::from_labels(labels);
    for (const auto& obs : data.observations) {
        ChoiceSet s;
        for (int x : obs.choice_set) s.push_back(remap[x]);
        std::sort(s.begin(), s.end());
        out.observations.push_back({std::move(s), remap[obs.chosen]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment TSV output
// ---------------------------------------------------------------------------

inline void write_experiment_tsv(const ExperimentResult& result, std::ostream& out) {
    out << "m\tmetric\tstderr\n";
    out << std::setprecision(12);
    for (size_t i = 0; i < result.m_grid.size(); ++i)
        out << result.m_grid[i] << '\t' << result.metric[i] << '\t' << result.stderr_[i] << '\n';
}

}  // namespace cdm
