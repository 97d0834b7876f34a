#pragma once

// Correction workflow: prepositive steps (intra, ratio_a), QC-ST, and CoCo
// only when batch differences remain.

#include "batchfx/bec.hpp"
#include "batchfx/coco.hpp"
#include "batchfx/hdtest.hpp"
#include "batchfx/io.hpp"
#include "batchfx/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace batchfx {

enum class Step { Intra, RatioA, Coco };

std::string to_string(Step step);
Step parse_step(const std::string& name);

/// Exit statuses of a pipeline run.
enum ExitStatus : int {
    kExitClean = 0,          ///< no significant QC difference remains (or nothing was corrected)
    kExitSignificant = 1,    ///< some pair is still significant after the last step
    kExitCocoInfeasible = 2  ///< CoCo found no feasible candidate
};

struct PipelineConfig {
    std::vector<Step> steps;
    SimultaneousMethod method = SimultaneousMethod::Auto;
    double alpha_sig = 0.05;
    std::uint64_t seed = 0;
    RegressorSpec regressor{};  ///< rng replaced by (seed, 1)
    CocoConfig coco{};          ///< rng replaced by (seed, 2); alpha_sig by the above
    unsigned threads = 0;

    void validate() const;
};

struct PipelineResult {
    BatchedDataset corrected;
    PairwiseReport qc_st_before;
    PairwiseReport qc_st_after;
    MetricTable metrics_before;
    MetricTable metrics_after;
    std::optional<CocoPlan> coco_plan;
    nlohmann::json report;
    int exit_status = kExitClean;
};

PipelineResult run_pipeline(const BatchedDataset& dataset, const PipelineConfig& config,
                            const nlohmann::json& dataset_info = {});

}  // namespace batchfx
