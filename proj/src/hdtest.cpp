#include "batchfx/hdtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace batchfx {

std::string to_string(TestMethod m) {
    switch (m) {
        case TestMethod::CQ_mean: return "cq-mean";
        case TestMethod::LC_cov: return "lc-cov";
        case TestMethod::HN: return "hn";
        case TestMethod::HN_mean: return "hn-mean";
        case TestMethod::HN_cov: return "hn-cov";
        case TestMethod::Yu_Fisher: return "yu-fisher";
        case TestMethod::Yu_Cauchy: return "yu-cauchy";
        case TestMethod::gPCA: return "gpca";
    }
    return "?";
}

std::string to_string(SimultaneousMethod m) {
    switch (m) {
        case SimultaneousMethod::Auto: return "auto";
        case SimultaneousMethod::HN: return "hn";
        case SimultaneousMethod::Yu_Fisher: return "yu-fisher";
        case SimultaneousMethod::Yu_Cauchy: return "yu-cauchy";
    }
    return "?";
}

namespace {
std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
        return c == '_' ? '-' : static_cast<char>(std::tolower(c));
    });
    return s;
}
}  // namespace

TestMethod parse_test_method(const std::string& name) {
    const std::string s = lower(name);
    for (auto m : {TestMethod::CQ_mean, TestMethod::LC_cov, TestMethod::HN, TestMethod::HN_mean,
                   TestMethod::HN_cov, TestMethod::Yu_Fisher, TestMethod::Yu_Cauchy,
                   TestMethod::gPCA}) {
        if (to_string(m) == s) return m;
    }
    throw DomainError("unknown test method '" + name + "'");
}

SimultaneousMethod parse_simultaneous_method(const std::string& name) {
    const std::string s = lower(name);
    for (auto m : {SimultaneousMethod::Auto, SimultaneousMethod::HN, SimultaneousMethod::Yu_Fisher,
                   SimultaneousMethod::Yu_Cauchy}) {
        if (to_string(m) == s) return m;
    }
    throw DomainError("unknown simultaneous method '" + name + "'");
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// U-statistics on Gram matrices
// ---------------------------------------------------------------------------

namespace ustat {

double mean_norm_sq(const Matrix& gram) {
    const double n = static_cast<double>(gram.rows());
    return (gram.sum() - gram.trace()) / (n * (n - 1.0));
}

double trace_sq(const Matrix& gram) {
    const double n = static_cast<double>(gram.rows());
    Matrix k = gram;
    k.diagonal().setZero();
    const double s2 = k.squaredNorm();
    const Vector r = k.rowwise().sum();
    const double total = r.sum();
    const double s3 = r.squaredNorm() - s2;
    const double s4 = total * total - 4.0 * s3 - 2.0 * s2;
    const double n2 = n * (n - 1.0);
    const double n3 = n2 * (n - 2.0);
    const double n4 = n3 * (n - 3.0);
    return s2 / n2 - 2.0 * s3 / n3 + s4 / n4;
}

double cross_trace(const Matrix& m) {
    const double n1 = static_cast<double>(m.rows());
    const double n2 = static_cast<double>(m.cols());
    const double t1 = m.squaredNorm();
    const Vector rs = m.rowwise().sum();
    const Vector cs = m.colwise().sum().transpose();
    const double total = rs.sum();
    const double t2 = cs.squaredNorm() - t1;
    const double t3 = rs.squaredNorm() - t1;
    const double t4 = total * total - rs.squaredNorm() - cs.squaredNorm() + t1;
    return t1 / (n1 * n2) - t2 / (n1 * (n1 - 1.0) * n2) - t3 / (n1 * n2 * (n2 - 1.0)) +
           t4 / (n1 * (n1 - 1.0) * n2 * (n2 - 1.0));
}

double trace_sq_loo(const Matrix& gram) {
    const Eigen::Index n = gram.rows();
    const double nd = static_cast<double>(n);
    const Vector r = gram.rowwise().sum();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < n; ++k) {
            if (j == k) continue;
            const double a = gram(k, j) - (r(k) - gram(k, j) - gram(k, k)) / (nd - 2.0);
            const double b = gram(j, k) - (r(j) - gram(j, k) - gram(j, j)) / (nd - 2.0);
            acc += a * b;
        }
    }
    return acc / (nd * (nd - 1.0));
}

double cross_trace_loo(const Matrix& m) {
    const double n1 = static_cast<double>(m.rows());
    const double n2 = static_cast<double>(m.cols());
    const Vector rs = m.rowwise().sum();
    const Vector cs = m.colwise().sum().transpose();
    double acc = 0.0;
    for (Eigen::Index l = 0; l < m.rows(); ++l) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            const double a = m(l, k) - (rs(l) - m(l, k)) / (n2 - 1.0);
            const double b = m(l, k) - (cs(k) - m(l, k)) / (n1 - 1.0);
            acc += a * b;
        }
    }
    return acc / (n1 * n2);
}

}  // namespace ustat

// ---------------------------------------------------------------------------

namespace {

struct Grams {
    Matrix k1, k2, m;
    double n1, n2;
};

void check_pair(const Matrix& x1, const Matrix& x2, Eigen::Index min_n, const char* who) {
    if (x1.cols() != x2.cols()) {
        throw DimensionError(std::string(who) + ": samples have different dimensions");
    }
    if (x1.cols() == 0) throw DimensionError(std::string(who) + ": zero-dimensional samples");
    if (x1.rows() < min_n || x2.rows() < min_n) {
        throw DimensionError(std::string(who) + ": each sample needs at least " +
                             std::to_string(min_n) + " rows");
    }
    if (!x1.allFinite() || !x2.allFinite()) {
        throw DomainError(std::string(who) + ": non-finite entries");
    }
}

Grams grams(const Matrix& x1, const Matrix& x2) {
    Grams g;
    g.k1 = x1 * x1.transpose();
    g.k2 = x2 * x2.transpose();
    g.m = x1 * x2.transpose();
    g.n1 = static_cast<double>(x1.rows());
    g.n2 = static_cast<double>(x2.rows());
    return g;
}

// Plug-in trace estimates from the centered samples; used only when an
// unbiased estimate comes out non-positive (tiny p or degenerate rows).
struct PlugIn {
    double tr1, tr2, tr12;
};

PlugIn plug_in(const Matrix& x1, const Matrix& x2) {
    const Matrix c1 = x1.rowwise() - x1.colwise().mean();
    const Matrix c2 = x2.rowwise() - x2.colwise().mean();
    const double d1 = static_cast<double>(x1.rows() - 1);
    const double d2 = static_cast<double>(x2.rows() - 1);
    return {(c1 * c1.transpose()).squaredNorm() / (d1 * d1),
            (c2 * c2.transpose()).squaredNorm() / (d2 * d2),
            (c1 * c2.transpose()).squaredNorm() / (d1 * d2)};
}

double mean_distance(const Grams& g) {
    return ustat::mean_norm_sq(g.k1) + ustat::mean_norm_sq(g.k2) - 2.0 * g.m.sum() / (g.n1 * g.n2);
}

double mean_variance(double tr1, double tr2, double tr12, double n1, double n2) {
    return 2.0 * tr1 / (n1 * (n1 - 1.0)) + 2.0 * tr2 / (n2 * (n2 - 1.0)) + 4.0 * tr12 / (n1 * n2);
}

TestOutcome finish(double statistic, TestMethod method) {
    TestOutcome out;
    out.statistic = statistic;
    out.p_value = std::clamp(normal_upper_tail(statistic), 0.0, 1.0);
    out.method = method;
    return out;
}

TestOutcome cq_from(const Grams& g, const Matrix& x1, const Matrix& x2) {
    const double t = mean_distance(g);
    double var = mean_variance(ustat::trace_sq_loo(g.k1), ustat::trace_sq_loo(g.k2),
                               ustat::cross_trace_loo(g.m), g.n1, g.n2);
    if (!(var > 0.0)) {
        const PlugIn pi = plug_in(x1, x2);
        var = mean_variance(pi.tr1, pi.tr2, pi.tr12, g.n1, g.n2);
    }
    return finish(var > 0.0 ? t / std::sqrt(var) : 0.0, TestMethod::CQ_mean);
}

struct CovPieces {
    double a1, a2, c;
    double distance() const { return a1 + a2 - 2.0 * c; }
};

// The order-4 estimator needs four rows; with three, the leave-two-out one
// is still unbiased.
double trace_sq_any(const Matrix& gram) {
    return gram.rows() >= 4 ? ustat::trace_sq(gram) : ustat::trace_sq_loo(gram);
}

CovPieces cov_pieces(const Grams& g) {
    return {trace_sq_any(g.k1), trace_sq_any(g.k2), ustat::cross_trace(g.m)};
}

TestOutcome lc_from(const Grams& g, const Matrix& x1, const Matrix& x2) {
    const CovPieces cp = cov_pieces(g);
    double a1 = cp.a1, a2 = cp.a2;
    if (!(a1 > 0.0) || !(a2 > 0.0)) {
        const PlugIn pi = plug_in(x1, x2);
        a1 = pi.tr1;
        a2 = pi.tr2;
    }
    const double sd = 2.0 / g.n2 * a1 + 2.0 / g.n1 * a2;
    return finish(sd > 0.0 ? cp.distance() / sd : 0.0, TestMethod::LC_cov);
}

TestOutcome hn_mean_from(const Grams& g, const Matrix& x1, const Matrix& x2) {
    const double t = mean_distance(g);
    double var = mean_variance(trace_sq_any(g.k1), trace_sq_any(g.k2),
                               ustat::cross_trace(g.m), g.n1, g.n2);
    if (!(var > 0.0)) {
        const PlugIn pi = plug_in(x1, x2);
        var = mean_variance(pi.tr1, pi.tr2, pi.tr12, g.n1, g.n2);
    }
    return finish(var > 0.0 ? t / std::sqrt(var) : 0.0, TestMethod::HN_mean);
}

TestOutcome hn_cov_from(const Grams& g, const Matrix& x1, const Matrix& x2) {
    const CovPieces cp = cov_pieces(g);
    // Under the null the two samples are independent, so A1 * A2 is unbiased
    // for tr^2(Sigma^2).
    double tr_sq_sq = cp.a1 * cp.a2;
    if (!(cp.a1 > 0.0) || !(cp.a2 > 0.0)) {
        const PlugIn pi = plug_in(x1, x2);
        tr_sq_sq = pi.tr1 * pi.tr2;
    }
    const double factor = 1.0 / (g.n1 * (g.n1 - 1.0)) + 1.0 / (g.n2 * (g.n2 - 1.0)) +
                          2.0 / (g.n1 * g.n2);
    const double var = 4.0 * tr_sq_sq * factor;
    return finish(var > 0.0 ? cp.distance() / std::sqrt(var) : 0.0, TestMethod::HN_cov);
}

}  // namespace

TestOutcome cq_mean_test(const Matrix& x1, const Matrix& x2) {
    check_pair(x1, x2, 3, "cq_mean_test");
    return cq_from(grams(x1, x2), x1, x2);
}

TestOutcome lc_cov_test(const Matrix& x1, const Matrix& x2) {
    check_pair(x1, x2, 3, "lc_cov_test");
    return lc_from(grams(x1, x2), x1, x2);
}

TestOutcome hn_mean_test(const Matrix& x1, const Matrix& x2) {
    check_pair(x1, x2, 3, "hn_mean_test");
    return hn_mean_from(grams(x1, x2), x1, x2);
}

TestOutcome hn_cov_test(const Matrix& x1, const Matrix& x2) {
    check_pair(x1, x2, 3, "hn_cov_test");
    return hn_cov_from(grams(x1, x2), x1, x2);
}

TestOutcome hn_simultaneous(const Matrix& x1, const Matrix& x2) {
    check_pair(x1, x2, 3, "hn_simultaneous");
    const Grams g = grams(x1, x2);
    const TestOutcome m = hn_mean_from(g, x1, x2);
    const TestOutcome c = hn_cov_from(g, x1, x2);
    TestOutcome out = finish((m.statistic + c.statistic) / std::sqrt(2.0), TestMethod::HN);
    out.component_p = std::make_pair(m.p_value, c.p_value);
    return out;
}

CombinedP combine_fisher(double p_mean, double p_cov) {
    CombinedP out;
    auto prep = [&](double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("combine_fisher: p-value outside [0, 1]");
        if (p < 1e-300) {
            out.clamped = true;
            return 1e-300;
        }
        return p;
    };
    const double a = prep(p_mean);
    const double b = prep(p_cov);
    const double x = -2.0 * (std::log(a) + std::log(b));
    // chi^2 with 4 degrees of freedom: P(X > x) = exp(-x/2) (1 + x/2).
    out.p = std::clamp(std::exp(-0.5 * x) * (1.0 + 0.5 * x), 0.0, 1.0);
    return out;
}

CombinedP combine_cauchy(double p_mean, double p_cov) {
    CombinedP out;
    auto prep = [&](double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("combine_cauchy: p-value outside [0, 1]");
        const double c = std::clamp(p, 1e-15, 1.0 - 1e-15);
        if (c != p) out.clamped = true;
        return c;
    };
    const double a = prep(p_mean);
    const double b = prep(p_cov);
    constexpr double pi = 3.14159265358979323846;
    // For tiny p, tan((0.5 - p) pi) = 1 / tan(p pi) is the accurate form.
    auto term = [&](double p) {
        return p < 1e-8 ? 1.0 / std::tan(p * pi) : std::tan((0.5 - p) * pi);
    };
    const double c = 0.5 * term(a) + 0.5 * term(b);
    double p = c > 1e10 ? 1.0 / (c * pi) : 0.5 - std::atan(c) / pi;
    out.p = std::clamp(p, 0.0, 1.0);
    return out;
}

SimultaneousMethod resolve_method(SimultaneousMethod m, Eigen::Index n1, Eigen::Index n2) {
    if (m != SimultaneousMethod::Auto) return m;
    return (n1 + n2) >= 20 ? SimultaneousMethod::Yu_Fisher : SimultaneousMethod::HN;
}

TestOutcome simultaneous_test(const Matrix& x1, const Matrix& x2, SimultaneousMethod method) {
    const SimultaneousMethod m = resolve_method(method, x1.rows(), x2.rows());
    if (m == SimultaneousMethod::HN) return hn_simultaneous(x1, x2);
    check_pair(x1, x2, 3, "simultaneous_test");
    const Grams g = grams(x1, x2);
    const TestOutcome mean = cq_from(g, x1, x2);
    const TestOutcome cov = lc_from(g, x1, x2);
    TestOutcome out;
    if (m == SimultaneousMethod::Yu_Fisher) {
        out.method = TestMethod::Yu_Fisher;
        out.p_value = combine_fisher(mean.p_value, cov.p_value).p;
        out.statistic = -2.0 * (std::log(std::max(mean.p_value, 1e-300)) +
                                std::log(std::max(cov.p_value, 1e-300)));
    } else {
        out.method = TestMethod::Yu_Cauchy;
        out.p_value = combine_cauchy(mean.p_value, cov.p_value).p;
        constexpr double pi = 3.14159265358979323846;
        out.statistic = 0.5 * std::tan((0.5 - std::clamp(mean.p_value, 1e-15, 1 - 1e-15)) * pi) +
                        0.5 * std::tan((0.5 - std::clamp(cov.p_value, 1e-15, 1 - 1e-15)) * pi);
    }
    out.component_p = std::make_pair(mean.p_value, cov.p_value);
    return out;
}

std::vector<double> bh_fdr(std::span<const double> p_values) {
    const std::size_t m = p_values.size();
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("bh_fdr: p-value outside [0, 1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        // m / rank is >= 1 and exactly 1 at the top rank, so q >= p survives rounding.
        const double candidate =
            p_values[order[r]] * (static_cast<double>(m) / static_cast<double>(r + 1));
        running = std::min(running, candidate);
        q[order[r]] = std::min(running, 1.0);
    }
    return q;
}

bool PairwiseReport::any_significant() const {
    for (Eigen::Index i = 0; i < q_matrix.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < q_matrix.cols(); ++j) {
            if (q_matrix(i, j) < alpha_sig) return true;
        }
    }
    return false;
}

namespace {

std::vector<Matrix> pooled_autoscaled_qc_blocks(const BatchedDataset& dataset) {
    const auto& labels = dataset.batches();
    std::vector<Eigen::Index> qc_rows;
    std::vector<std::size_t> owner;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        for (auto r : dataset.rows(labels[b], Role::QC)) {
            qc_rows.push_back(r);
            owner.push_back(b);
        }
    }
    const Matrix z = autoscale(dataset.select(qc_rows));
    std::vector<std::vector<Eigen::Index>> local(labels.size());
    for (std::size_t k = 0; k < owner.size(); ++k) local[owner[k]].push_back(static_cast<Eigen::Index>(k));
    std::vector<Matrix> blocks;
    blocks.reserve(labels.size());
    for (const auto& rows : local) blocks.push_back(select_rows(z, rows));
    return blocks;
}

std::vector<std::pair<std::size_t, std::size_t>> all_pairs(std::size_t b) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) pairs.emplace_back(i, j);
    }
    return pairs;
}

}  // namespace

PairwiseReport qc_st(const BatchedDataset& dataset, double alpha_sig, SimultaneousMethod method,
                     unsigned threads) {
    if (!(alpha_sig > 0.0 && alpha_sig < 1.0)) throw DomainError("qc_st: alpha_sig must be in (0, 1)");
    const auto& labels = dataset.batches();
    if (labels.size() < 2) throw DatasetError("qc_st: need at least two batches");
    const std::vector<Matrix> blocks = pooled_autoscaled_qc_blocks(dataset);
    const auto pairs = all_pairs(labels.size());

    struct PairResult {
        TestOutcome simultaneous;
        double p_mean = 1.0, p_cov = 1.0;
    };
    std::vector<PairResult> results(pairs.size());
    parallel_for(
        pairs.size(),
        [&](std::size_t k) {
            const Matrix& a = blocks[pairs[k].first];
            const Matrix& b = blocks[pairs[k].second];
            results[k].simultaneous = simultaneous_test(a, b, method);
            results[k].p_mean = cq_mean_test(a, b).p_value;
            results[k].p_cov = lc_cov_test(a, b).p_value;
        },
        threads);

    std::vector<double> raw(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) raw[k] = results[k].simultaneous.p_value;
    const std::vector<double> q = bh_fdr(raw);

    PairwiseReport report;
    report.batches = labels;
    report.alpha_sig = alpha_sig;
    const auto b = static_cast<Eigen::Index>(labels.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.q_matrix = Matrix::Constant(b, b, nan);
    report.p_matrix = Matrix::Constant(b, b, nan);
    report.method.assign(labels.size(), std::vector<std::string>(labels.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(pairs[k].first);
        const auto j = static_cast<Eigen::Index>(pairs[k].second);
        report.q_matrix(i, j) = report.q_matrix(j, i) = q[k];
        report.p_matrix(i, j) = report.p_matrix(j, i) = raw[k];
        const std::string name = to_string(results[k].simultaneous.method);
        report.method[pairs[k].first][pairs[k].second] = name;
        report.method[pairs[k].second][pairs[k].first] = name;
        if (q[k] < alpha_sig) {
            report.followup[pairs[k]] = PairFollowup{results[k].p_mean, results[k].p_cov};
        }
    }
    return report;
}

Matrix pairwise_cov_q(const std::vector<Matrix>& blocks) {
    const auto pairs = all_pairs(blocks.size());
    std::vector<double> raw(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        raw[k] = lc_cov_test(blocks[pairs[k].first], blocks[pairs[k].second]).p_value;
    }
    const std::vector<double> q = bh_fdr(raw);
    const auto b = static_cast<Eigen::Index>(blocks.size());
    Matrix out = Matrix::Constant(b, b, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(pairs[k].first);
        const auto j = static_cast<Eigen::Index>(pairs[k].second);
        out(i, j) = out(j, i) = q[k];
    }
    return out;
}

Matrix qc_covariance_q(const BatchedDataset& dataset) {
    if (dataset.batches().size() < 2) throw DatasetError("need at least two batches");
    return pairwise_cov_q(pooled_autoscaled_qc_blocks(dataset));
}

}  // namespace batchfx
