// Command-line driver: fit, test-iia, identify, simulate, evaluate, cv, and a
// long-CSV converter. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numerical failure.

#include <iostream>

#include <CLI11.hpp>

#include "cdm/cdm.hpp"

namespace {

cdm::EvalResult evaluate_loaded(const cdm::LoadedModel& model, const cdm::ChoiceDataset& data) {
    if (model.kind == "luce") return cdm::evaluate_held_out(model.luce, data);
    if (model.kind == "cdm") return cdm::evaluate_held_out(model.cdm, data);
    return cdm::evaluate_held_out(model.lowrank, data);
}

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            grid.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--grid", "not a number: " + tok);
        }
    }
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete-choice modeling: Luce/MNL, context-dependent (CDM), low-rank CDM and "
                 "saturated models; identifiability audit; IIA likelihood-ratio tests"};
    app.require_subcommand(1);

    cdm::FitConfig config;
    std::string data_path, out_path, report_path, model_path;

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a model by maximum likelihood");
    std::string fit_model = "luce";
    int fit_rank = 1;
    bool seed_given = false;
    fit->add_option("data", data_path, "dataset file")->required();
    fit->add_option("--model", fit_model, "luce | cdm | lowrank")
        ->check(CLI::IsMember({"luce", "cdm", "lowrank"}));
    fit->add_option("--rank", fit_rank, "rank for --model lowrank");
    fit->add_option("--l2", config.l2_penalty, "l2 penalty lambda");
    fit->add_option("--seed", config.seed, "RNG seed (required for lowrank)")
        ->each([&](const std::string&) { seed_given = true; });
    fit->add_option("--epochs", config.max_epochs, "maximum epochs");
    fit->add_option("--lr", config.learning_rate, "learning rate");
    fit->add_option("--tol", config.tolerance, "relative NLL convergence tolerance");
    fit->add_option("--batch", config.batch_size, "mini-batch size (0 = full batch)");
    fit->add_option("--out", out_path, "model output file")->required();
    fit->add_option("--report", report_path, "report output file");

    // test-iia
    auto* test = app.add_subcommand("test-iia", "Likelihood-ratio test of IIA");
    std::string alternative = "cdm";
    test->add_option("data", data_path, "dataset file")->required();
    test->add_option("--alternative", alternative, "cdm | universal")
        ->check(CLI::IsMember({"cdm", "universal"}));
    test->add_option("--epochs", config.max_epochs, "maximum epochs");
    test->add_option("--tol", config.tolerance, "relative NLL convergence tolerance");
    test->add_option("--out", report_path, "result output file");

    // identify
    auto* identify = app.add_subcommand("identify", "Design-matrix identifiability audit");
    identify->add_option("data", data_path, "dataset file")->required();
    identify->add_option("--out", report_path, "report output file");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Generate synthetic choice data");
    std::string truth_kind = "mnl";
    int sim_n = 6, sim_m = 1000;
    simulate->add_option("--truth", truth_kind, "mnl | cdm | general")
        ->check(CLI::IsMember({"mnl", "cdm", "general"}));
    simulate->add_option("--n", sim_n, "number of items");
    simulate->add_option("--m", sim_m, "number of observations");
    simulate->add_option("--seed", config.seed, "RNG seed")->required();
    simulate->add_option("--out", out_path, "dataset output file")->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Held-out NLL and accuracy of a saved model");
    evaluate->add_option("model", model_path, "model file")->required();
    evaluate->add_option("data", data_path, "dataset file")->required();
    evaluate->add_option("--out", report_path, "report output file");

    // cv
    auto* cv = app.add_subcommand("cv", "Cross-validate the l2 penalty");
    std::string cv_grid = "0,1e-4,1e-3,1e-2,1e-1";
    std::string cv_model = "cdm";
    int cv_rank = 1, cv_folds = 5;
    cv->add_option("data", data_path, "dataset file")->required();
    cv->add_option("--model", cv_model, "cdm | lowrank")->check(CLI::IsMember({"cdm", "lowrank"}));
    cv->add_option("--rank", cv_rank, "rank for --model lowrank");
    cv->add_option("--grid", cv_grid, "comma-separated lambda grid");
    cv->add_option("--folds", cv_folds, "number of folds");
    cv->add_option("--seed", config.seed, "RNG seed");
    cv->add_option("--epochs", config.max_epochs, "maximum epochs");
    cv->add_option("--out", report_path, "report output file");

    // convert
    auto* convert = app.add_subcommand("convert", "Convert long CSV (obs_id,label,chosen) to the "
                                                  "native dataset format");
    convert->add_option("data", data_path, "long CSV file")->required();
    convert->add_option("--out", out_path, "dataset output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    auto emit = [&](const cdm::Json& j, const std::string& path) {
        if (path.empty())
            std::cout << j.dump(2) << '\n';
        else
            cdm::write_json_file(j, path);
    };

    try {
        if (fit->parsed()) {
            if (fit_model == "lowrank" && fit_rank < 1)
                throw CLI::ValidationError("--rank", "rank must be >= 1");
            if (fit_model == "lowrank" && !seed_given)
                throw CLI::ValidationError("--seed", "required for the nonconvex lowrank fit");
            auto data = cdm::parse_dataset_file(data_path);
            cdm::Json report{{"dataset", cdm::dataset_summary_json(data)}};
            if (fit_model == "luce") {
                auto res = cdm::fit_luce(data, config);
                cdm::write_json_file(cdm::model_json(res.params, data.universe.labels), out_path);
                report["fit"] = cdm::fit_report_json(res);
            } else if (fit_model == "cdm") {
                auto res = cdm::fit_cdm_full(data, config);
                cdm::write_json_file(cdm::model_json(res.params, data.universe.labels), out_path);
                report["fit"] = cdm::fit_report_json(res);
            } else {
                auto res = cdm::fit_cdm_low_rank(data, fit_rank, config);
                cdm::write_json_file(cdm::model_json(res.params, data.universe.labels), out_path);
                report["fit"] = cdm::fit_report_json(res);
            }
            emit(cdm::report_document(std::move(report)), report_path);
        } else if (test->parsed()) {
            auto data = cdm::parse_dataset_file(data_path);
            cdm::LrtResult res = alternative == "cdm" ? cdm::lrt_iia_cdm(data, config)
                                                      : cdm::lrt_iia_universal(data, config);
            emit(cdm::report_document({{"dataset", cdm::dataset_summary_json(data)},
                                       {"lrt", cdm::lrt_json(res)}}),
                 report_path);
        } else if (identify->parsed()) {
            auto data = cdm::parse_dataset_file(data_path);
            auto rep = cdm::identifiability_report(data);
            emit(cdm::report_document({{"dataset", cdm::dataset_summary_json(data)},
                                       {"identifiability", cdm::identifiability_json(rep)}}),
                 report_path);
        } else if (simulate->parsed()) {
            cdm::TruthKind kind = truth_kind == "mnl"   ? cdm::TruthKind::MNL
                                  : truth_kind == "cdm" ? cdm::TruthKind::CDM
                                                        : cdm::TruthKind::GeneralChoiceSystem;
            auto rng = cdm::replicate_rng(config.seed, 0);
            auto truth = cdm::make_ground_truth(kind, sim_n, rng);
            auto data = cdm::sample_dataset(truth, sim_m, rng);
            cdm::write_dataset_file(data, out_path);
        } else if (evaluate->parsed()) {
            auto model = cdm::load_model(cdm::read_json_file(model_path));
            auto data = cdm::align_to_labels(cdm::parse_dataset_file(data_path), model.labels);
            auto ev = evaluate_loaded(model, data);
            emit(cdm::report_document(
                     {{"dataset", cdm::dataset_summary_json(data)},
                      {"evaluation",
                       {{"mean_nll", ev.minus_infinity ? cdm::Json("-inf") : cdm::Json(ev.mean_nll)},
                        {"minus_infinity", ev.minus_infinity},
                        {"accuracy", ev.accuracy}}}}),
                 report_path);
        } else if (cv->parsed()) {
            auto data = cdm::parse_dataset_file(data_path);
            auto grid = parse_grid(cv_grid);
            int rank = cv_model == "cdm" ? 0 : cv_rank;
            auto res = cdm::cross_validate_l2(data, rank, grid, cv_folds, config);
            emit(cdm::report_document({{"dataset", cdm::dataset_summary_json(data)},
                                       {"cv",
                                        {{"chosen_lambda", res.chosen_lambda},
                                         {"grid", res.grid},
                                         {"mean_validation_nll", res.mean_validation_nll},
                                         {"warnings", res.warnings}}}}),
                 report_path);
        } else if (convert->parsed()) {
            std::ifstream in(data_path);
            if (!in) throw cdm::DataError("cannot open file: " + data_path);
            auto data = cdm::parse_long_csv(in);
            cdm::write_dataset_file(data, out_path);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const cdm::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const cdm::InvalidInput& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const cdm::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
