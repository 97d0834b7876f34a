// batchfx command-line front end.

#include "batchfx/gpca.hpp"
#include "batchfx/io.hpp"
#include "batchfx/pipeline.hpp"
#include "batchfx/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace batchfx;
using nlohmann::json;

namespace {

constexpr int kExitError = 3;

struct Common {
    std::string input;
    ColumnNames columns;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

void add_input(CLI::App* cmd, Common& c) {
    cmd->add_option("-i,--input", c.input, "Input CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--col-sample-id", c.columns.sample_id, "Sample id column")
        ->capture_default_str();
    cmd->add_option("--col-batch", c.columns.batch, "Batch column")->capture_default_str();
    cmd->add_option("--col-role", c.columns.role, "Role column (QC/subject)")->capture_default_str();
    cmd->add_option("--col-order", c.columns.injection_order, "Injection order column")
        ->capture_default_str();
}

void add_runtime(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Master seed")->envname("BATCHFX_SEED")->capture_default_str();
    cmd->add_option("--threads", c.threads, "Worker threads (0 = automatic)")
        ->envname("BATCHFX_THREADS");
}

void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
    } else {
        write_file_atomic(path, content);
    }
}

json input_info(const Common& c) { return {{"input", std::filesystem::path(c.input).filename().string()}}; }

std::string qmatrix_text(const json& report) {
    std::ostringstream out;
    const auto& batches = report.at("batches");
    const auto& q = report.at("q_matrix");
    out << "      ";
    for (const auto& b : batches) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%10s", b.get<std::string>().c_str());
        out << buf;
    }
    out << '\n';
    for (std::size_t i = 0; i < batches.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%6s", batches[i].get<std::string>().c_str());
        out << buf;
        for (std::size_t j = 0; j < batches.size(); ++j) {
            if (q[i][j].is_null()) {
                out << "         -";
            } else {
                std::snprintf(buf, sizeof buf, "%10.4g", q[i][j].get<double>());
                out << buf;
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string cf_text(const json& metrics) {
    std::ostringstream out;
    out << "median RSD " << metrics.at("median_rsd").get<double>() * 100.0 << "%; CF RSD";
    const auto& th = metrics.at("rsd_thresholds");
    const auto& cf = metrics.at("rsd_cf");
    for (std::size_t k = 0; k < th.size(); ++k) {
        out << " <" << th[k].get<double>() * 100.0 << "%: " << cf[k].get<double>();
    }
    if (metrics.contains("d_ratio_cf")) {
        out << "; CF D-ratio <" << metrics["d_ratio_thresholds"][0].get<double>() * 100.0
            << "%: " << metrics["d_ratio_cf"][0].get<double>();
    }
    return out.str();
}

std::string render_report(const json& r) {
    std::ostringstream out;
    if (r.contains("dataset") && r["dataset"].contains("summary")) {
        const auto& s = r["dataset"]["summary"];
        out << "dataset: " << s["samples"] << " samples, " << s["features"] << " features, "
            << s["batches"].size() << " batches (" << s["qc"] << " QC, " << s["subject"]
            << " subject)\n";
    }
    if (r.contains("steps")) {
        for (const auto& st : r["steps"]) {
            out << "step " << st["step"].get<std::string>() << ": " << st["status"].get<std::string>()
                << '\n';
        }
    }
    if (r.contains("qc_st_before")) out << "\nQC-ST q-values before:\n" << qmatrix_text(r["qc_st_before"]);
    if (r.contains("qc_st_after")) out << "\nQC-ST q-values after:\n" << qmatrix_text(r["qc_st_after"]);
    if (r.contains("qc_st")) out << "\nQC-ST q-values:\n" << qmatrix_text(r["qc_st"]);
    if (r.contains("metrics_before")) out << "\nbefore: " << cf_text(r["metrics_before"]) << '\n';
    if (r.contains("metrics_after")) out << "after:  " << cf_text(r["metrics_after"]) << '\n';
    if (r.contains("metrics")) out << "\n" << cf_text(r["metrics"]) << '\n';
    if (r.contains("coco") && !r["coco"].is_null()) {
        const auto& c = r["coco"];
        out << "\nCoCo: " << c["status"].get<std::string>();
        if (c.contains("mean_V")) {
            out << ", mean(V) = " << c["mean_V"].get<double>() << ", passing candidates "
                << c["candidates_passing"] << " of " << c["n_search"];
        }
        out << '\n';
    }
    if (r.contains("exit_status")) out << "\nexit status " << r["exit_status"] << '\n';
    return out.str();
}

std::vector<std::string> split_list(const std::vector<std::string>& in) {
    std::vector<std::string> out;
    for (const auto& item : in) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (!part.empty()) out.push_back(part);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Batch-effect detection and correction for QC-anchored tabular data"};
    app.set_config("--config", "", "INI config file; sections are subcommand names; flags win");
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    // ingest-check -------------------------------------------------------
    Common ic;
    std::string ic_out;
    auto* ingest = app.add_subcommand("ingest-check", "Validate an input CSV and summarize it");
    add_input(ingest, ic);
    ingest->add_option("-o,--output", ic_out, "Summary JSON (default stdout)");

    // test ---------------------------------------------------------------
    Common tc;
    std::string t_method = "auto", t_report, t_qmatrix;
    double t_alpha = 0.05;
    int t_gpca = 0;
    auto* test = app.add_subcommand("test", "Pairwise QC simultaneous tests (QC-ST)");
    add_input(test, tc);
    add_runtime(test, tc);
    test->add_option("--method", t_method, "auto, hn, yu-fisher or yu-cauchy")->capture_default_str();
    test->add_option("--alpha", t_alpha, "Significance level for q-values")->capture_default_str();
    test->add_option("--report", t_report, "JSON report (default stdout)");
    test->add_option("--qmatrix", t_qmatrix, "q-matrix CSV");
    test->add_option("--gpca-permutations", t_gpca, "Also run gPCA on the QC rows (0 = off)");

    // correct ------------------------------------------------------------
    Common cc;
    std::vector<std::string> c_steps;
    std::string c_method = "auto", c_output, c_report, c_qmatrix;
    PipelineConfig pc;
    auto* correct = app.add_subcommand("correct", "Run the correction workflow");
    add_input(correct, cc);
    add_runtime(correct, cc);
    correct->add_option("--steps", c_steps, "Comma-separated subset of intra,ratio_a,coco")
        ->required()
        ->delimiter(',');
    correct->add_option("--method", c_method, "QC-ST method")->capture_default_str();
    correct->add_option("--alpha", pc.alpha_sig, "Significance level")->capture_default_str();
    correct->add_option("-o,--output", c_output, "Corrected data CSV");
    correct->add_option("--report", c_report, "JSON report (default stdout)");
    correct->add_option("--qmatrix", c_qmatrix, "q-matrix CSV after correction");
    correct->add_option("--n-trees", pc.regressor.n_trees)->capture_default_str();
    correct->add_option("--max-depth", pc.regressor.max_depth)->capture_default_str();
    correct->add_option("--learning-rate", pc.regressor.learning_rate)->capture_default_str();
    correct->add_option("--subsample", pc.regressor.subsample)->capture_default_str();
    correct->add_option("--n-correlated", pc.regressor.n_correlated)->capture_default_str();
    correct->add_option("--cv-folds", pc.regressor.cv_folds)->capture_default_str();
    correct->add_option("--grid-size", pc.regressor.grid_size)->capture_default_str();
    correct->add_option("--n-search", pc.coco.n_search, "CoCo random-search candidates")
        ->capture_default_str();
    correct->add_option("--lambda-min", pc.coco.lambda_min)->capture_default_str();
    correct->add_option("--lambda-max", pc.coco.lambda_max)->capture_default_str();
    correct->add_option("--gelnet-tol", pc.coco.gelnet_tol)->capture_default_str();
    correct->add_option("--gelnet-max-iter", pc.coco.gelnet_max_iter)->capture_default_str();

    // evaluate -----------------------------------------------------------
    Common ec;
    std::string e_report;
    auto* evaluate = app.add_subcommand("evaluate", "RSD / D-ratio metrics without modifying data");
    add_input(evaluate, ec);
    evaluate->add_option("--report", e_report, "JSON report (default stdout)");

    // simulate -----------------------------------------------------------
    Common sc;
    std::string s_scenario = "H0", s_output, s_null = "standard", s_format = "csv";
    std::vector<std::string> s_methods{"yu-fisher"};
    std::vector<int> s_n{10}, s_n2, s_p{100};
    int s_reps = 1000, s_perm = 1000;
    double s_alpha = 0.05;
    bool s_timing = false;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo empirical size / power");
    add_runtime(simulate, sc);
    simulate->add_option("--scenario", s_scenario, "H0, Hm, Hc or HmHc")->capture_default_str();
    simulate->add_option("--method", s_methods, "Methods (comma-separated)")->delimiter(',');
    simulate->add_option("--n", s_n, "Group sizes n1 (= n2 unless --n2)")->delimiter(',');
    simulate->add_option("--n2", s_n2, "Second group sizes")->delimiter(',');
    simulate->add_option("--p", s_p, "Dimensions")->delimiter(',');
    simulate->add_option("--reps", s_reps, "Replicates per cell")->capture_default_str();
    simulate->add_option("--alpha", s_alpha, "Nominal level")->capture_default_str();
    simulate->add_option("--gpca-permutations", s_perm)->capture_default_str();
    simulate->add_option("--null-model", s_null, "standard (N(0,I)) or generator")
        ->capture_default_str();
    simulate->add_option("--format", s_format, "csv or table")->capture_default_str();
    simulate->add_option("-o,--output", s_output, "Output file (default stdout)");
    simulate->add_flag("--timing", s_timing, "Add median per-replicate time (not reproducible)");

    // report -------------------------------------------------------------
    std::string r_in, r_out;
    auto* report = app.add_subcommand("report", "Render a JSON report as text");
    report->add_option("report", r_in, "JSON report")->required()->check(CLI::ExistingFile);
    report->add_option("-o,--output", r_out, "Text output (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            const BatchedDataset ds = read_dataset_csv(ic.input, ic.columns);
            json j{{"dataset", input_info(ic)}, {"summary", dataset_summary(ds)}, {"version", kVersion}};
            emit(ic_out, j.dump(2) + "\n");
            return 0;
        }
        if (*test) {
            if (tc.threads) set_default_threads(tc.threads);
            const BatchedDataset ds = read_dataset_csv(tc.input, tc.columns);
            const PairwiseReport rep = qc_st(ds, t_alpha, parse_simultaneous_method(t_method), tc.threads);
            json info = input_info(tc);
            info["summary"] = dataset_summary(ds);
            json j{{"dataset", info}, {"qc_st", to_json(rep)}, {"version", kVersion},
                   {"seeds", {{"master", tc.seed}}}};
            if (t_gpca > 0) {
                const auto rows = ds.rows(Role::QC);
                std::vector<std::string> labels;
                for (auto r : rows) labels.push_back(ds.batch()[static_cast<std::size_t>(r)]);
                const GpcaOutcome g =
                    gpca_test(ds.select(rows), labels, t_gpca, RngStream(tc.seed, 4), tc.threads);
                j["gpca"] = to_json(g);
                j["seeds"]["gpca"] = {{"seed", tc.seed}, {"stream", 4}};
            }
            if (!t_qmatrix.empty()) write_file_atomic(t_qmatrix, qmatrix_csv(rep));
            emit(t_report, j.dump(2) + "\n");
            return 0;
        }
        if (*correct) {
            if (cc.threads) set_default_threads(cc.threads);
            const BatchedDataset ds = read_dataset_csv(cc.input, cc.columns);
            for (const auto& s : split_list(c_steps)) pc.steps.push_back(parse_step(s));
            if (pc.steps.empty()) throw DomainError("correct: --steps must name at least one step");
            pc.method = parse_simultaneous_method(c_method);
            pc.seed = cc.seed;
            pc.threads = cc.threads;
            const PipelineResult res = run_pipeline(ds, pc, input_info(cc));
            if (!c_output.empty()) write_file_atomic(c_output, dataset_csv(res.corrected, cc.columns));
            if (!c_qmatrix.empty()) write_file_atomic(c_qmatrix, qmatrix_csv(res.qc_st_after));
            emit(c_report, res.report.dump(2) + "\n");
            if (!c_report.empty()) std::cerr << render_report(res.report);
            return res.exit_status;
        }
        if (*evaluate) {
            const BatchedDataset ds = read_dataset_csv(ec.input, ec.columns);
            json info = input_info(ec);
            info["summary"] = dataset_summary(ds);
            json j{{"dataset", info}, {"metrics", to_json(metric_table(ds))}, {"version", kVersion}};
            emit(e_report, j.dump(2) + "\n");
            return 0;
        }
        if (*simulate) {
            if (sc.threads) set_default_threads(sc.threads);
            if (s_reps < 1) throw DomainError("simulate: --reps must be >= 1");
            if (!s_n2.empty() && s_n2.size() != s_n.size()) {
                throw DomainError("simulate: --n2 needs one entry per --n entry");
            }
            const Scenario scenario = parse_scenario(s_scenario);
            std::vector<TestMethod> methods;
            for (const auto& m : split_list(s_methods)) methods.push_back(parse_test_method(m));
            if (methods.empty()) throw DomainError("simulate: no methods given");
            NullModel null_model;
            if (s_null == "standard") {
                null_model = NullModel::StandardNormal;
            } else if (s_null == "generator") {
                null_model = NullModel::Generator;
            } else {
                throw DomainError("simulate: --null-model must be standard or generator");
            }
            if (s_format != "csv" && s_format != "table") {
                throw DomainError("simulate: --format must be csv or table");
            }

            std::ostringstream out;
            if (s_format == "csv") {
                out << "scenario,method,n1,n2,p,reps,rejections,rate,retries";
                if (s_timing) out << ",median_time_ms";
                out << '\n';
            } else {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%-8s %-11s %5s %5s %5s %7s %9s\n", "scenario",
                              "method", "n1", "n2", "p", "reps", "rate");
                out << buf;
            }
            for (std::size_t a = 0; a < s_n.size(); ++a) {
                const int n1 = s_n[a];
                const int n2 = s_n2.empty() ? n1 : s_n2[a];
                for (int p : s_p) {
                    // The cell's stream depends only on its coordinates, so a
                    // cell reproduces whatever grid it is run in.
                    const std::uint64_t cell =
                        splitmix64(static_cast<std::uint64_t>(n1) * 1000003ULL +
                                   static_cast<std::uint64_t>(n2) * 1009ULL +
                                   static_cast<std::uint64_t>(p) * 7919ULL +
                                   static_cast<std::uint64_t>(scenario));
                    ScenarioSpec spec =
                        ScenarioSpec::preset(scenario, n1, n2, p, s_reps, RngStream(sc.seed, cell));
                    spec.alpha_sig = s_alpha;
                    spec.null_model = null_model;
                    spec.gpca_permutations = s_perm;
                    const MonteCarloResult mc = empirical_rates(spec, methods, sc.threads);
                    for (const auto& r : mc.per_method) {
                        if (s_format == "csv") {
                            out << to_string(scenario) << ',' << to_string(r.method) << ',' << n1 << ','
                                << n2 << ',' << p << ',' << mc.reps << ',' << r.rejections << ','
                                << format_double(r.rejection_rate) << ',' << mc.retries;
                            if (s_timing) out << ',' << format_double(r.median_time_ms);
                            out << '\n';
                        } else {
                            char buf[160];
                            std::snprintf(buf, sizeof buf, "%-8s %-11s %5d %5d %5d %7d %8.2f%%\n",
                                          to_string(scenario).c_str(), to_string(r.method).c_str(),
                                          n1, n2, p, mc.reps, 100.0 * r.rejection_rate);
                            out << buf;
                        }
                    }
                }
            }
            emit(s_output, out.str());
            return 0;
        }
        if (*report) {
            std::ifstream in(r_in);
            const json j = json::parse(in);
            emit(r_out, render_report(j));
            return 0;
        }
    } catch (const IngestError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return 0;
}
