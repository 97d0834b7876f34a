#include "batchfx/bec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace batchfx {

std::string to_string(RegressorKind kind) {
    switch (kind) {
        case RegressorKind::GBTree: return "gbtree";
    }
    return "?";
}

void RegressorSpec::validate() const {
    TreeParams{n_trees, max_depth, learning_rate, subsample}.validate();
    if (n_correlated < 0) throw DomainError("regressor: n_correlated must be >= 0");
    if (cv_folds < 2) throw DomainError("regressor: cv_folds must be >= 2");
    if (grid_size < 1) throw DomainError("regressor: grid_size must be >= 1");
}

std::vector<Eigen::Index> top_correlated(const Matrix& x_qc, Eigen::Index i, int k) {
    const Eigen::Index p = x_qc.cols();
    if (i < 0 || i >= p) throw DimensionError("top_correlated: variable index out of range");
    if (k < 0 || k >= p) throw DomainError("top_correlated: need 0 <= k < p");
    if (x_qc.rows() < 3) throw DimensionError("top_correlated: need at least three rows");

    const Centered c = mean_center(x_qc);
    const Vector norms = c.values.colwise().norm().transpose();
    const double scale_i = std::max(1.0, x_qc.col(i).cwiseAbs().maxCoeff());
    if (!(norms(i) > 1e-14 * scale_i * std::sqrt(static_cast<double>(x_qc.rows())))) {
        throw DegenerateError("top_correlated: variable " + std::to_string(i) + " is constant", i);
    }
    std::vector<std::pair<double, Eigen::Index>> scored;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (j == i) continue;
        double r = 0.0;
        if (norms(j) > 0.0) {
            r = std::abs(c.values.col(i).dot(c.values.col(j)) / (norms(i) * norms(j)));
        }
        scored.emplace_back(r, j);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Eigen::Index> out;
    for (int t = 0; t < k; ++t) out.push_back(scored[static_cast<std::size_t>(t)].second);
    return out;
}

const VariableFit& CorrectionModel::fit(const std::string& batch, Eigen::Index variable) const {
    const auto it = std::find(batches.begin(), batches.end(), batch);
    if (it == batches.end()) throw DatasetError("correction model has no batch '" + batch + "'");
    const auto& row = fits[static_cast<std::size_t>(it - batches.begin())];
    if (variable < 0 || variable >= static_cast<Eigen::Index>(row.size())) {
        throw DimensionError("correction model has no variable " + std::to_string(variable));
    }
    return row[static_cast<std::size_t>(variable)];
}

namespace {

Matrix design(const Matrix& values, const std::vector<long long>& order,
              const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& features) {
    Matrix f(static_cast<Eigen::Index>(rows.size()), 1 + static_cast<Eigen::Index>(features.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto rr = static_cast<Eigen::Index>(r);
        f(rr, 0) = static_cast<double>(order[static_cast<std::size_t>(rows[r])]);
        for (std::size_t k = 0; k < features.size(); ++k) {
            f(rr, 1 + static_cast<Eigen::Index>(k)) = values(rows[r], features[k]);
        }
    }
    return f;
}

std::vector<TreeParams> grid_points(const RegressorSpec& spec, std::mt19937_64& eng) {
    TreeParams base{spec.n_trees, spec.max_depth, spec.learning_rate, spec.subsample};
    std::vector<TreeParams> others;
    for (int nt : {25, 50, 100}) {
        for (int md : {2, 3, 4}) {
            for (double lr : {0.05, 0.1, 0.3}) {
                if (nt == base.n_trees && md == base.max_depth && lr == base.learning_rate) continue;
                others.push_back(TreeParams{nt, md, lr, spec.subsample});
            }
        }
    }
    std::shuffle(others.begin(), others.end(), eng);
    std::vector<TreeParams> out{base};
    for (std::size_t k = 0; k + 1 < static_cast<std::size_t>(spec.grid_size) && k < others.size(); ++k) {
        out.push_back(others[k]);
    }
    return out;
}

VariableFit fit_variable(const Matrix& x_qc, const std::vector<long long>& order_qc,
                         Eigen::Index i, const RegressorSpec& spec, const RngStream& rng) {
    const auto n = x_qc.rows();
    VariableFit out;
    const int k = std::min<int>(spec.n_correlated, static_cast<int>(x_qc.cols()) - 1);
    try {
        out.features = top_correlated(x_qc, i, k);
    } catch (const DegenerateError&) {
        out.features.clear();  // constant target: the fit is constant anyway
    }
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    const Matrix f = design(x_qc, order_qc, all, out.features);
    const Vector y = x_qc.col(i);

    auto eng = rng.engine();
    const std::vector<TreeParams> grid = grid_points(spec, eng);
    std::vector<Eigen::Index> perm = all;
    std::shuffle(perm.begin(), perm.end(), eng);
    const int folds = std::min<int>(spec.cv_folds, static_cast<int>(n));

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double sse = 0.0;
        for (int fold = 0; fold < folds; ++fold) {
            std::vector<Eigen::Index> train, test;
            for (Eigen::Index r = 0; r < n; ++r) {
                (r % folds == fold ? test : train).push_back(perm[static_cast<std::size_t>(r)]);
            }
            const GradientBoostedTrees m = GradientBoostedTrees::fit(
                select_rows(f, train), y(train), grid[g],
                rng.substream(1 + g).substream(static_cast<std::uint64_t>(fold)));
            for (auto t : test) {
                const double e = y(t) - m.predict(f.row(t));
                sse += e * e;
            }
        }
        const double loss = sse / static_cast<double>(n);
        if (loss < best) {
            best = loss;
            best_g = g;
        }
    }
    out.chosen = grid[best_g];
    out.cv_loss = best;
    out.model = GradientBoostedTrees::fit(f, y, out.chosen, rng.substream(0));
    return out;
}

}  // namespace

CorrectionModel fit_intra(const BatchedDataset& dataset, const RegressorSpec& spec,
                          unsigned threads) {
    spec.validate();
    const Eigen::Index p = dataset.n_features();
    CorrectionModel model;
    model.batches = dataset.batches();
    for (const auto& b : model.batches) {
        if (dataset.rows(b, Role::QC).size() < 5) {
            throw DatasetError("fit_intra: batch '" + b + "' needs at least five QC rows");
        }
    }
    const Matrix all_qc = dataset.select(dataset.rows(Role::QC));
    model.reference_level.resize(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const Vector col = all_qc.col(i);
        model.reference_level(i) = median(std::vector<double>(col.data(), col.data() + col.size()));
        if (!(model.reference_level(i) > 0.0)) {
            throw DomainError("fit_intra: QC median of variable " + std::to_string(i) +
                              " is not positive; intensities must be positive");
        }
    }

    const std::size_t nb = model.batches.size();
    model.fits.assign(nb, std::vector<VariableFit>(static_cast<std::size_t>(p)));
    std::vector<Matrix> qc(nb);
    std::vector<std::vector<long long>> orders(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const auto rows = dataset.rows(model.batches[b], Role::QC);
        qc[b] = dataset.select(rows);
        for (auto r : rows) orders[b].push_back(dataset.injection_order()[static_cast<std::size_t>(r)]);
    }
    parallel_for(
        nb * static_cast<std::size_t>(p),
        [&](std::size_t task) {
            const std::size_t b = task / static_cast<std::size_t>(p);
            const auto i = static_cast<Eigen::Index>(task % static_cast<std::size_t>(p));
            const RngStream rng = spec.rng.substream(b).substream(static_cast<std::uint64_t>(i));
            model.fits[b][static_cast<std::size_t>(i)] = fit_variable(qc[b], orders[b], i, spec, rng);
        },
        threads);
    return model;
}

IntraResult apply_intra(const BatchedDataset& dataset, const CorrectionModel& model) {
    const Eigen::Index p = dataset.n_features();
    if (model.reference_level.size() != p) throw DimensionError("apply_intra: model width differs");
    Matrix out = dataset.values();
    long floored = 0;
    long total = 0;
    for (const auto& b : dataset.batches()) {
        const auto rows = dataset.rows(b);
        for (Eigen::Index i = 0; i < p; ++i) {
            const VariableFit& vf = model.fit(b, i);
            const Matrix f = design(dataset.values(), dataset.injection_order(), rows, vf.features);
            const double ref = model.reference_level(i);
            const double floor = 1e-3 * ref;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                double pred = vf.model.predict(f.row(static_cast<Eigen::Index>(r)));
                ++total;
                if (!(pred >= floor)) {
                    pred = floor;
                    ++floored;
                }
                out(rows[r], i) = dataset.values()(rows[r], i) * ref / pred;
            }
        }
    }
    IntraResult result{dataset.with_values(std::move(out)), floored, total, {}};
    if (total > 0 && static_cast<double>(floored) > 0.01 * static_cast<double>(total)) {
        result.warnings.push_back("apply_intra: " + std::to_string(floored) + " of " +
                                  std::to_string(total) +
                                  " predictions were raised to the floor (1e-3 x reference)");
    }
    return result;
}

Matrix ratio_a_factors(const BatchedDataset& dataset) {
    const auto& batches = dataset.batches();
    const Eigen::Index p = dataset.n_features();
    const auto nb = static_cast<Eigen::Index>(batches.size());
    Matrix med(nb, p);
    for (Eigen::Index b = 0; b < nb; ++b) {
        const auto rows = dataset.rows(batches[static_cast<std::size_t>(b)], Role::QC);
        if (rows.size() < 2) {
            throw DatasetError("ratio_a: batch '" + batches[static_cast<std::size_t>(b)] +
                               "' needs at least two QC rows");
        }
        const Matrix x = dataset.select(rows);
        for (Eigen::Index i = 0; i < p; ++i) {
            const Vector col = x.col(i);
            med(b, i) = median(std::vector<double>(col.data(), col.data() + col.size()));
            if (med(b, i) == 0.0) {
                throw DegenerateError("ratio_a: QC median is zero for batch '" +
                                          batches[static_cast<std::size_t>(b)] + "', variable " +
                                          std::to_string(i),
                                      i);
            }
        }
    }
    const Eigen::RowVectorXd reference = med.colwise().mean();
    Matrix g(nb, p);
    for (Eigen::Index b = 0; b < nb; ++b) g.row(b) = reference.cwiseQuotient(med.row(b));
    return g;
}

BatchedDataset ratio_a_correct(const BatchedDataset& dataset) {
    const Matrix g = ratio_a_factors(dataset);
    Matrix out = dataset.values();
    const auto& batches = dataset.batches();
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (auto r : dataset.rows(batches[b])) {
            out.row(r) = out.row(r).cwiseProduct(g.row(static_cast<Eigen::Index>(b)));
        }
    }
    return dataset.with_values(std::move(out));
}

}  // namespace batchfx
