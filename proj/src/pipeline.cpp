#include "batchfx/pipeline.hpp"

#include <algorithm>
#include <set>

namespace batchfx {

std::string to_string(Step step) {
    switch (step) {
        case Step::Intra: return "intra";
        case Step::RatioA: return "ratio_a";
        case Step::Coco: return "coco";
    }
    return "?";
}

Step parse_step(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
        return c == '-' ? '_' : static_cast<char>(std::tolower(c));
    });
    if (s == "intra") return Step::Intra;
    if (s == "ratio_a" || s == "ratioa") return Step::RatioA;
    if (s == "coco") return Step::Coco;
    throw DomainError("unknown step '" + name + "' (expected intra, ratio_a or coco)");
}

void PipelineConfig::validate() const {
    std::set<Step> seen;
    for (Step s : steps) {
        if (!seen.insert(s).second) throw DomainError("step '" + to_string(s) + "' listed twice");
    }
    if (!(alpha_sig > 0.0 && alpha_sig < 1.0)) throw DomainError("alpha_sig must be in (0, 1)");
    regressor.validate();
    CocoConfig c = coco;
    c.alpha_sig = alpha_sig;
    c.validate();
}

namespace {

nlohmann::json regressor_json(const RegressorSpec& r) {
    return {{"kind", to_string(r.kind)},         {"n_trees", r.n_trees},
            {"max_depth", r.max_depth},          {"learning_rate", r.learning_rate},
            {"subsample", r.subsample},          {"n_correlated", r.n_correlated},
            {"cv_folds", r.cv_folds},            {"grid_size", r.grid_size},
            {"seed", r.rng.master_seed()},       {"stream", r.rng.stream_id()}};
}

nlohmann::json coco_json(const CocoConfig& c) {
    return {{"n_search", c.n_search},
            {"alpha_range", {c.alpha_min, c.alpha_max}},
            {"lambda_range", {c.lambda_min, c.lambda_max}},
            {"alpha_sig", c.alpha_sig},
            {"target", c.targets.empty() ? "identity" : "custom"},
            {"gelnet_tol", c.gelnet_tol},
            {"gelnet_max_iter", c.gelnet_max_iter},
            {"seed", c.rng.master_seed()},
            {"stream", c.rng.stream_id()}};
}

}  // namespace

PipelineResult run_pipeline(const BatchedDataset& dataset, const PipelineConfig& config,
                            const nlohmann::json& dataset_info) {
    config.validate();
    RegressorSpec regressor = config.regressor;
    regressor.rng = RngStream(config.seed, 1);
    CocoConfig coco = config.coco;
    coco.rng = RngStream(config.seed, 2);
    coco.alpha_sig = config.alpha_sig;
    coco.threads = config.threads;

    PipelineResult result{dataset,
                          qc_st(dataset, config.alpha_sig, config.method, config.threads),
                          {},
                          metric_table(dataset),
                          {},
                          std::nullopt,
                          {},
                          kExitClean};

    nlohmann::json steps = nlohmann::json::array();
    nlohmann::json coco_report = nullptr;
    BatchedDataset current = dataset;
    bool coco_failed = false;

    for (Step step : config.steps) {
        nlohmann::json entry{{"step", to_string(step)}};
        switch (step) {
            case Step::Intra: {
                const CorrectionModel model = fit_intra(current, regressor, config.threads);
                IntraResult applied = apply_intra(current, model);
                current = std::move(applied.data);
                entry["status"] = "applied";
                entry["config"] = regressor_json(regressor);
                entry["floored_predictions"] = applied.floored;
                entry["predictions"] = applied.predictions;
                entry["warnings"] = applied.warnings;
                entry["model"] = to_json(model);
                break;
            }
            case Step::RatioA: {
                const Matrix g = ratio_a_factors(current);
                current = ratio_a_correct(current);
                entry["status"] = "applied";
                entry["config"] = {{"reference", "mean of batch QC medians"}};
                entry["factors"] = to_json(g);
                break;
            }
            case Step::Coco: {
                entry["config"] = coco_json(coco);
                const PairwiseReport pre = qc_st(current, config.alpha_sig, config.method, config.threads);
                entry["qc_st_before_coco"] = to_json(pre);
                if (!pre.any_significant()) {
                    entry["status"] = "skipped";
                    entry["reason"] = "no significant QC difference before CoCo";
                    break;
                }
                try {
                    CocoPlan plan = coco_search(current, coco);
                    current = apply_coco(current, plan);
                    entry["status"] = "applied";
                    coco_report = to_json(plan);
                    coco_report["status"] = "applied";
                    result.coco_plan = std::move(plan);
                } catch (const NoFeasibleCandidateError& e) {
                    coco_failed = true;
                    entry["status"] = "infeasible";
                    coco_report = {{"status", "infeasible"},
                                   {"message", e.what()},
                                   {"remedy",
                                    "try a different prepositive correction, a larger n_search, "
                                    "or more QC samples per batch"}};
                    if (e.best()) coco_report["best_candidate"] = to_json(*e.best());
                }
                break;
            }
        }
        steps.push_back(std::move(entry));
    }

    result.corrected = current;
    result.qc_st_after = qc_st(current, config.alpha_sig, config.method, config.threads);
    result.metrics_after = metric_table(current);
    if (coco_failed) {
        result.exit_status = kExitCocoInfeasible;
    } else if (!config.steps.empty() && result.qc_st_after.any_significant()) {
        result.exit_status = kExitSignificant;
    }

    nlohmann::json info = dataset_info.is_null() ? nlohmann::json::object() : dataset_info;
    info["summary"] = dataset_summary(dataset);
    result.report = {{"dataset", info},
                     {"steps", steps},
                     {"qc_st_before", to_json(result.qc_st_before)},
                     {"qc_st_after", to_json(result.qc_st_after)},
                     {"metrics_before", to_json(result.metrics_before)},
                     {"metrics_after", to_json(result.metrics_after)},
                     {"coco", coco_report},
                     {"seeds",
                      {{"master", config.seed},
                       {"intra", {{"seed", config.seed}, {"stream", 1}}},
                       {"coco", {{"seed", config.seed}, {"stream", 2}}}}},
                     {"version", kVersion},
                     {"exit_status", result.exit_status}};
    return result;
}

}  // namespace batchfx
