#include "batchfx/coco.hpp"

#include "batchfx/hdtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace batchfx {

void CocoConfig::validate() const {
    if (n_search < 1) throw DomainError("coco: n_search must be >= 1");
    if (!(alpha_min >= 0.0 && alpha_max <= 1.0 && alpha_min <= alpha_max)) {
        throw DomainError("coco: alpha range must lie in [0, 1]");
    }
    if (!(lambda_min > 0.0 && lambda_min < lambda_max && std::isfinite(lambda_max))) {
        throw DomainError("coco: lambda range must be a positive interval");
    }
    if (!(alpha_sig > 0.0 && alpha_sig < 1.0)) throw DomainError("coco: alpha_sig must be in (0, 1)");
}

double CocoPlan::min_q() const {
    double m = 1.0;
    for (Eigen::Index i = 0; i < q_after.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < q_after.cols(); ++j) m = std::min(m, q_after(i, j));
    }
    return m;
}

SpdMatrix pooled_covariance(const std::vector<SpdMatrix>& sigmas, const std::vector<double>& n) {
    if (sigmas.empty() || sigmas.size() != n.size()) {
        throw DimensionError("pooled_covariance: one sample size per matrix required");
    }
    const Eigen::Index p = sigmas.front().size();
    Matrix acc = Matrix::Zero(p, p);
    double total = 0.0;
    for (std::size_t j = 0; j < sigmas.size(); ++j) {
        if (sigmas[j].size() != p) throw DimensionError("pooled_covariance: size mismatch");
        if (!(n[j] >= 1.0)) throw DomainError("pooled_covariance: sample sizes must be >= 1");
        acc += n[j] * sigmas[j].entries();
        total += n[j];
    }
    acc /= total;
    return SpdMatrix(0.5 * (acc + acc.transpose()));
}

Matrix transformation_matrix(const SpdMatrix& theta, const SpdMatrix& sigma_pooled) {
    if (theta.size() != sigma_pooled.size()) {
        throw DimensionError("transformation_matrix: size mismatch");
    }
    return spd_sqrt(theta).entries() * spd_sqrt(sigma_pooled).entries();
}

Matrix transformation_matrix(const PrecisionEstimate& theta, const SpdMatrix& sigma_pooled) {
    return transformation_matrix(theta.theta, sigma_pooled);
}

BatchedDataset apply_coco(const BatchedDataset& dataset, const CocoPlan& plan) {
    const Eigen::Index p = dataset.n_features();
    if (plan.A.size() != plan.batches.size()) throw DimensionError("apply_coco: malformed plan");
    if (plan.scale.size() != 0 && plan.scale.size() != p) {
        throw DimensionError("apply_coco: plan scale does not match the data");
    }
    Matrix out = dataset.values();
    for (const auto& label : dataset.batches()) {
        const auto it = std::find(plan.batches.begin(), plan.batches.end(), label);
        if (it == plan.batches.end()) {
            throw DatasetError("apply_coco: batch '" + label + "' missing from plan");
        }
        Matrix m = plan.A[static_cast<std::size_t>(it - plan.batches.begin())];
        if (m.rows() != p || m.cols() != p) throw DimensionError("apply_coco: A has wrong size");
        if (plan.scale.size() != 0) {
            m = plan.scale.cwiseInverse().asDiagonal() * m * plan.scale.asDiagonal();
        }
        for (Role role : {Role::QC, Role::Subject}) {
            const auto rows = dataset.rows(label, role);
            if (rows.empty()) continue;
            const Centered c = mean_center(select_rows(dataset.values(), rows));
            const Matrix mapped = (c.values * m).rowwise() + c.means.transpose();
            for (std::size_t r = 0; r < rows.size(); ++r) {
                out.row(rows[r]) = mapped.row(static_cast<Eigen::Index>(r));
            }
        }
    }
    return dataset.with_values(std::move(out));
}

namespace {

Vector column_variance(const Matrix& x) {
    const Centered c = mean_center(x);
    return c.values.colwise().squaredNorm().transpose() / static_cast<double>(x.rows() - 1);
}

}  // namespace

FoldChange variance_fold_change(const BatchedDataset& before, const BatchedDataset& after) {
    if (before.n_samples() != after.n_samples() || before.n_features() != after.n_features() ||
        before.batch() != after.batch() || before.role() != after.role()) {
        throw DimensionError("variance_fold_change: datasets differ in shape or metadata");
    }
    const auto& batches = before.batches();
    const Eigen::Index p = before.n_features();
    FoldChange fc;
    fc.V.resize(static_cast<Eigen::Index>(batches.size()), p);
    for (std::size_t j = 0; j < batches.size(); ++j) {
        const auto rows = before.rows(batches[j], Role::Subject);
        if (rows.size() < 2) {
            throw DatasetError("variance_fold_change: batch '" + batches[j] +
                               "' needs at least two subject rows");
        }
        const Vector vb = column_variance(before.select(rows));
        const Vector va = column_variance(after.select(rows));
        for (Eigen::Index i = 0; i < p; ++i) {
            if (!(vb(i) > 0.0)) {
                throw DegenerateError("variance_fold_change: variable " + std::to_string(i) +
                                          " has zero variance in batch '" + batches[j] + "'",
                                      i);
            }
            fc.V(static_cast<Eigen::Index>(j), i) = va(i) / vb(i);
        }
    }
    fc.mean_V = fc.V.mean();
    return fc;
}

namespace {

// Everything about the data a candidate needs, computed once.
struct Prepared {
    std::vector<std::string> batches;
    Vector scale;
    std::vector<Matrix> s;  // per-batch MLE covariance of centered, scaled QC rows
    std::vector<double> n;
    std::vector<Matrix> targets;
};

Prepared prepare(const BatchedDataset& dataset, const CocoConfig& config) {
    config.validate();
    Prepared prep;
    prep.batches = dataset.batches();
    if (prep.batches.size() < 2) throw DatasetError("coco: need at least two batches");
    const Eigen::Index p = dataset.n_features();
    for (const auto& b : prep.batches) {
        if (dataset.rows(b, Role::QC).size() < 3) {
            throw DatasetError("coco: batch '" + b + "' needs at least three QC rows");
        }
    }
    const auto qc_rows = dataset.rows(Role::QC);
    const ColumnScale cs = column_scale(dataset.select(qc_rows));
    prep.scale = cs.sd;
    for (const auto& b : prep.batches) {
        const Matrix x = dataset.select(dataset.rows(b, Role::QC));
        const Matrix z = (x.rowwise() - cs.mean.transpose()) * cs.sd.cwiseInverse().asDiagonal();
        prep.s.push_back(empirical_cov(mean_center(z).values, Denominator::N));
        prep.n.push_back(static_cast<double>(x.rows()));
    }
    if (config.targets.empty()) {
        prep.targets.assign(prep.batches.size(), Matrix::Identity(p, p));
    } else {
        if (config.targets.size() != prep.batches.size()) {
            throw DimensionError("coco: one target per batch required");
        }
        prep.targets = config.targets;
    }
    return prep;
}

CocoPlan evaluate(const BatchedDataset& dataset, const Prepared& prep, const Vector& alphas,
                  const Vector& lambdas, const CocoConfig& config) {
    const std::size_t b = prep.batches.size();
    if (static_cast<std::size_t>(alphas.size()) != b ||
        static_cast<std::size_t>(lambdas.size()) != b) {
        throw DimensionError("coco: one (alpha, lambda) per batch required");
    }
    std::vector<SpdMatrix> thetas;
    std::vector<SpdMatrix> sigmas;
    for (std::size_t j = 0; j < b; ++j) {
        GelnetConfig g;
        g.alpha = alphas(static_cast<Eigen::Index>(j));
        g.lambda = lambdas(static_cast<Eigen::Index>(j));
        g.target = prep.targets[j];
        g.tol = config.gelnet_tol;
        g.max_iter = config.gelnet_max_iter;
        thetas.push_back(gelnet_estimate(prep.s[j], g).theta);
        sigmas.emplace_back(thetas.back().inverse());
    }
    const SpdMatrix pooled = pooled_covariance(sigmas, prep.n);

    CocoPlan plan;
    plan.batches = prep.batches;
    plan.scale = prep.scale;
    plan.alphas = alphas;
    plan.lambdas = lambdas;
    for (std::size_t j = 0; j < b; ++j) plan.A.push_back(transformation_matrix(thetas[j], pooled));

    const BatchedDataset after = apply_coco(dataset, plan);
    plan.q_after = qc_covariance_q(after);
    const FoldChange fc = variance_fold_change(dataset, after);
    plan.V = fc.V;
    plan.mean_V = fc.mean_V;
    return plan;
}

}  // namespace

CocoPlan coco_plan(const BatchedDataset& dataset, const Vector& alphas, const Vector& lambdas,
                   const CocoConfig& config) {
    const Prepared prep = prepare(dataset, config);
    return evaluate(dataset, prep, alphas, lambdas, config);
}

CocoPlan coco_search(const BatchedDataset& dataset, const CocoConfig& config) {
    const Prepared prep = prepare(dataset, config);
    const auto b = static_cast<Eigen::Index>(prep.batches.size());
    const auto n_search = static_cast<std::size_t>(config.n_search);

    struct Summary {
        bool solved = false;
        Vector alphas, lambdas;
        double mean_V = 0.0;
        double min_q = 0.0;
    };
    std::vector<Summary> results(n_search);
    parallel_for(
        n_search,
        [&](std::size_t c) {
            auto eng = config.rng.substream(c).engine();
            std::uniform_real_distribution<double> ua(config.alpha_min, config.alpha_max);
            std::uniform_real_distribution<double> ul(config.lambda_min, config.lambda_max);
            Summary& r = results[c];
            r.alphas.resize(b);
            r.lambdas.resize(b);
            for (Eigen::Index j = 0; j < b; ++j) {
                r.alphas(j) = ua(eng);
                r.lambdas(j) = ul(eng);
            }
            try {
                const CocoPlan plan = evaluate(dataset, prep, r.alphas, r.lambdas, config);
                r.solved = true;
                r.mean_V = plan.mean_V;
                r.min_q = plan.min_q();
            } catch (const NonConvergenceError&) {
                r.solved = false;
            }
        },
        config.threads);

    int passing = 0;
    int failures = 0;
    std::optional<std::size_t> chosen;
    std::optional<std::size_t> closest;
    for (std::size_t c = 0; c < n_search; ++c) {
        const Summary& r = results[c];
        if (!r.solved) {
            ++failures;
            continue;
        }
        if (!closest || r.min_q > results[*closest].min_q) closest = c;
        if (r.min_q < config.alpha_sig) continue;
        ++passing;
        // Strict comparison keeps the lowest index on ties.
        if (!chosen || r.mean_V < results[*chosen].mean_V) chosen = c;
    }

    auto rebuild = [&](std::size_t c) {
        CocoPlan plan = evaluate(dataset, prep, results[c].alphas, results[c].lambdas, config);
        plan.candidate = static_cast<int>(c);
        plan.candidates_passing = passing;
        plan.n_search = config.n_search;
        plan.gelnet_failures = failures;
        return plan;
    };

    if (!chosen) {
        std::optional<CocoPlan> best;
        if (closest) best = rebuild(*closest);
        throw NoFeasibleCandidateError(
            "coco_search: no candidate removed every pairwise QC covariance difference", best);
    }
    return rebuild(*chosen);
}

}  // namespace batchfx
