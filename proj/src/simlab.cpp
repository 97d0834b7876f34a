#include "batchfx/simlab.hpp"

#include "batchfx/gpca.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

namespace batchfx {

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::H0: return "H0";
        case Scenario::Hm: return "Hm";
        case Scenario::Hc: return "Hc";
        case Scenario::HmHc: return "HmHc";
    }
    return "?";
}

Scenario parse_scenario(const std::string& name) {
    std::string s;
    for (char c : name) {
        if (c != '_' && c != '-' && c != ' ') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (s == "h0") return Scenario::H0;
    if (s == "hm") return Scenario::Hm;
    if (s == "hc") return Scenario::Hc;
    if (s == "hmhc" || s == "hm&hc") return Scenario::HmHc;
    throw DomainError("unknown scenario '" + name + "'");
}

ScenarioSpec ScenarioSpec::preset(Scenario s, int n1, int n2, int p, int reps, RngStream rng) {
    ScenarioSpec spec;
    spec.scenario = s;
    spec.n1 = n1;
    spec.n2 = n2;
    spec.p = p;
    spec.reps = reps;
    spec.rng = rng;
    if (s == Scenario::Hm || s == Scenario::HmHc) {
        spec.pct = 0.05;
        spec.eta = 0.3;
    }
    if (s == Scenario::Hc || s == Scenario::HmHc) {
        spec.rho1 = 0.3;
        spec.rho2 = -0.3;
    }
    return spec;
}

void ScenarioSpec::validate() const {
    if (n1 < 3 || n2 < 3) throw DomainError("scenario: n1 and n2 must be >= 3");
    if (p < 1) throw DomainError("scenario: p must be >= 1");
    if (reps < 1) throw DomainError("scenario: reps must be >= 1");
    if (!(alpha_sig > 0.0 && alpha_sig < 1.0)) throw DomainError("scenario: alpha_sig must be in (0, 1)");
    if (!(pct >= 0.0 && pct <= 1.0)) throw DomainError("scenario: pct must be in [0, 1]");
    if (!(eta >= 0.0)) throw DomainError("scenario: eta must be >= 0");
    if (!(std::abs(rho1) <= 1.0 && std::abs(rho2) <= 1.0)) throw DomainError("scenario: |rho| must be <= 1");
    if (scenario == Scenario::H0 && (pct != 0.0 || eta != 0.0 || rho1 != 0.0 || rho2 != 0.0)) {
        throw DomainError("scenario: H0 requires pct = eta = rho1 = rho2 = 0");
    }
    if (gpca_permutations < 1) throw DomainError("scenario: gpca permutations must be >= 1");
}

PopulationPair gen_population_pair(const ScenarioSpec& spec, const RngStream& rng) {
    spec.validate();
    const int p = spec.p;
    auto eng = rng.engine();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> mu(static_cast<std::size_t>(p));
    for (auto& m : mu) {
        do m = unit(eng);
        while (m == 0.0);
    }
    std::sort(mu.begin(), mu.end(), std::greater<>());

    PopulationPair out;
    out.mu1 = Eigen::Map<const Vector>(mu.data(), p);
    out.mu2 = out.mu1;
    const int shifted = std::max(1, static_cast<int>(std::floor(spec.pct * p)));
    const double delta = std::sqrt(spec.eta / std::sqrt(static_cast<double>(p)));
    for (int i = 0; i < shifted; ++i) out.mu2(i) += delta;

    out.sd.resize(p);
    for (int i = 0; i < p; ++i) {
        double s;
        do s = unit(eng) * 0.3 * mu[static_cast<std::size_t>(i)];
        while (s == 0.0);
        out.sd(i) = s;
    }
    out.corr1 = ar1_correlation(spec.rho1, p);
    out.corr2 = ar1_correlation(spec.rho2, p);
    out.sigma1 = out.sd.asDiagonal() * out.corr1 * out.sd.asDiagonal();
    out.sigma2 = out.sd.asDiagonal() * out.corr2 * out.sd.asDiagonal();
    return out;
}

std::pair<Matrix, Matrix> draw_replicate(const ScenarioSpec& spec, const RngStream& rng) {
    if (spec.scenario == Scenario::H0 && spec.null_model == NullModel::StandardNormal) {
        return {standard_normal(spec.n1, spec.p, rng.substream(1)),
                standard_normal(spec.n2, spec.p, rng.substream(2))};
    }
    const PopulationPair pop = gen_population_pair(spec, rng.substream(0));
    // Z R^{1/2} D has covariance D R D without forming the (possibly badly
    // scaled) square root of Sigma itself.
    auto factor = [&](const Matrix& corr, double rho) -> Matrix {
        if (rho == 0.0) return pop.sd.asDiagonal();
        return spd_sqrt(SpdMatrix(corr)).entries() * pop.sd.asDiagonal();
    };
    return {mvn_sample_factor(pop.mu1, factor(pop.corr1, spec.rho1), spec.n1, rng.substream(1)),
            mvn_sample_factor(pop.mu2, factor(pop.corr2, spec.rho2), spec.n2, rng.substream(2))};
}

double run_method(TestMethod method, const Matrix& x1, const Matrix& x2, const RngStream& rng,
                  int gpca_permutations) {
    switch (method) {
        case TestMethod::CQ_mean: return cq_mean_test(x1, x2).p_value;
        case TestMethod::LC_cov: return lc_cov_test(x1, x2).p_value;
        case TestMethod::HN: return hn_simultaneous(x1, x2).p_value;
        case TestMethod::HN_mean: return hn_mean_test(x1, x2).p_value;
        case TestMethod::HN_cov: return hn_cov_test(x1, x2).p_value;
        case TestMethod::Yu_Fisher: return simultaneous_test(x1, x2, SimultaneousMethod::Yu_Fisher).p_value;
        case TestMethod::Yu_Cauchy: return simultaneous_test(x1, x2, SimultaneousMethod::Yu_Cauchy).p_value;
        case TestMethod::gPCA: {
            Matrix stacked(x1.rows() + x2.rows(), x1.cols());
            stacked << x1, x2;
            std::vector<std::string> labels(static_cast<std::size_t>(x1.rows()), "1");
            labels.resize(static_cast<std::size_t>(stacked.rows()), "2");
            return gpca_test(stacked, labels, gpca_permutations, rng, 1).p_value;
        }
    }
    throw DomainError("run_method: unsupported method");
}

const MethodRate& MonteCarloResult::rate(TestMethod m) const {
    for (const auto& r : per_method) {
        if (r.method == m) return r;
    }
    throw DomainError("no result for method " + to_string(m));
}

MonteCarloResult empirical_rates(const ScenarioSpec& spec, std::span<const TestMethod> methods,
                                 unsigned threads) {
    spec.validate();
    if (methods.empty()) throw DomainError("empirical_rates: no methods");
    const std::size_t reps = static_cast<std::size_t>(spec.reps);
    const std::size_t m = methods.size();
    std::vector<double> pvals(reps * m, 1.0);
    std::vector<double> times(reps * m, 0.0);
    std::vector<int> retries(reps, 0);
    constexpr int kMaxAttempts = 100;

    parallel_for(
        reps,
        [&](std::size_t r) {
            const RngStream base = spec.rng.substream(r);
            for (int attempt = 0;; ++attempt) {
                const RngStream sub = attempt == 0 ? base : base.substream(1000 + attempt);
                auto [x1, x2] = draw_replicate(spec, sub);
                Matrix pooled(x1.rows() + x2.rows(), x1.cols());
                pooled << x1, x2;
                Matrix scaled;
                try {
                    scaled = autoscale(pooled);
                } catch (const DegenerateError&) {
                    if (attempt + 1 >= kMaxAttempts) throw;
                    ++retries[r];
                    continue;
                }
                const Matrix s1 = scaled.topRows(x1.rows());
                const Matrix s2 = scaled.bottomRows(x2.rows());
                for (std::size_t k = 0; k < m; ++k) {
                    const auto t0 = std::chrono::steady_clock::now();
                    pvals[r * m + k] = run_method(methods[k], s1, s2, sub.substream(3),
                                                  spec.gpca_permutations);
                    const auto t1 = std::chrono::steady_clock::now();
                    times[r * m + k] = std::chrono::duration<double, std::milli>(t1 - t0).count();
                }
                break;
            }
        },
        threads);

    MonteCarloResult out;
    out.spec = spec;
    out.reps = spec.reps;
    for (int r : retries) out.retries += r;
    for (std::size_t k = 0; k < m; ++k) {
        MethodRate rate;
        rate.method = methods[k];
        std::vector<double> t;
        t.reserve(reps);
        for (std::size_t r = 0; r < reps; ++r) {
            if (pvals[r * m + k] < spec.alpha_sig) ++rate.rejections;
            t.push_back(times[r * m + k]);
        }
        rate.rejection_rate = static_cast<double>(rate.rejections) / static_cast<double>(reps);
        rate.median_time_ms = median(std::move(t));
        out.per_method.push_back(rate);
    }
    return out;
}

MonteCarloResult empirical_rate(const ScenarioSpec& spec, TestMethod method, unsigned threads) {
    const TestMethod one[] = {method};
    return empirical_rates(spec, one, threads);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<bool> qc_positions(int n, int qc) {
    std::vector<bool> is_qc(static_cast<std::size_t>(n), false);
    for (int i = 0; i < qc; ++i) {
        is_qc[static_cast<std::size_t>((static_cast<long long>(i) * n) / qc)] = true;
    }
    return is_qc;
}

std::string batch_name(int b) {
    std::string s;
    int v = b;
    do {
        s.insert(s.begin(), static_cast<char>('A' + v % 26));
        v = v / 26 - 1;
    } while (v >= 0);
    return s;
}

}  // namespace

BatchedDataset make_drift_dataset(const DriftDataSpec& spec) {
    if (spec.batches < 1 || spec.qc_per_batch < 2 || spec.subjects_per_batch < 0 || spec.p < 1) {
        throw DomainError("make_drift_dataset: invalid sizes");
    }
    auto eng = spec.rng.engine();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int p = spec.p;

    Vector base(p);
    for (int i = 0; i < p; ++i) base(i) = std::pow(10.0, 2.0 + 2.0 * unit(eng));

    const int per_batch = spec.qc_per_batch + spec.subjects_per_batch;
    const int n = spec.batches * per_batch;
    Matrix values(n, p);
    std::vector<std::string> ids, batch;
    std::vector<Role> role;
    std::vector<long long> order;
    int row = 0;
    for (int b = 0; b < spec.batches; ++b) {
        const double common = 2.0 * unit(eng) - 1.0;
        Vector slope(p), curve(p), shift(p);
        for (int i = 0; i < p; ++i) {
            slope(i) = spec.max_drift * (0.7 * common + 0.3 * (2.0 * unit(eng) - 1.0));
            curve(i) = 0.3 * spec.max_drift * (2.0 * unit(eng) - 1.0);
            shift(i) = 1.0 + spec.max_shift * (2.0 * unit(eng) - 1.0);
        }
        const auto is_qc = qc_positions(per_batch, spec.qc_per_batch);
        int qc_k = 0, ss_k = 0;
        for (int t = 0; t < per_batch; ++t, ++row) {
            const bool qc = is_qc[static_cast<std::size_t>(t)];
            const double tau = per_batch > 1 ? static_cast<double>(t) / (per_batch - 1) - 0.5 : 0.0;
            for (int i = 0; i < p; ++i) {
                double truth = base(i);
                if (!qc) truth *= std::exp(spec.subject_spread * normal(eng));
                const double drift = 1.0 + slope(i) * tau + curve(i) * (tau * tau - 1.0 / 12.0);
                values(row, i) = truth * drift * shift(i) * std::exp(spec.qc_noise * normal(eng));
            }
            const std::string bn = batch_name(b);
            ids.push_back(bn + (qc ? "_QC" + std::to_string(++qc_k) : "_S" + std::to_string(++ss_k)));
            batch.push_back(bn);
            role.push_back(qc ? Role::QC : Role::Subject);
            order.push_back(t + 1);
        }
    }
    return BatchedDataset(std::move(values), std::move(ids), std::move(batch), std::move(role),
                          std::move(order));
}

BatchedDataset make_cov_shift_dataset(const CovShiftSpec& spec) {
    if (spec.batches < 1 || spec.qc_per_batch < 2 || spec.subjects_per_batch < 0 || spec.p < 1) {
        throw DomainError("make_cov_shift_dataset: invalid sizes");
    }
    ScenarioSpec pop_spec;
    pop_spec.scenario = Scenario::HmHc;
    pop_spec.p = spec.p;
    pop_spec.pct = spec.pct;
    pop_spec.eta = spec.eta;
    pop_spec.rho1 = spec.rho1;
    pop_spec.rho2 = spec.rho2;
    const PopulationPair pop = gen_population_pair(pop_spec, spec.rng.substream(0));
    const Matrix f1 = spd_sqrt(SpdMatrix(pop.corr1)).entries() * pop.sd.asDiagonal();
    const Matrix f2 = spd_sqrt(SpdMatrix(pop.corr2)).entries() * pop.sd.asDiagonal();

    const int per_batch = spec.qc_per_batch + spec.subjects_per_batch;
    Matrix values(spec.batches * per_batch, spec.p);
    std::vector<std::string> ids, batch;
    std::vector<Role> role;
    std::vector<long long> order;
    int row = 0;
    for (int b = 0; b < spec.batches; ++b) {
        const bool second = b % 2 == 1;
        const Matrix draws = mvn_sample_factor(second ? pop.mu2 : pop.mu1, second ? f2 : f1,
                                               per_batch, spec.rng.substream(1 + static_cast<std::uint64_t>(b)));
        const auto is_qc = qc_positions(per_batch, spec.qc_per_batch);
        int qc_k = 0, ss_k = 0;
        for (int t = 0; t < per_batch; ++t, ++row) {
            const bool qc = is_qc[static_cast<std::size_t>(t)];
            values.row(row) = draws.row(t);
            const std::string bn = batch_name(b);
            ids.push_back(bn + (qc ? "_QC" + std::to_string(++qc_k) : "_S" + std::to_string(++ss_k)));
            batch.push_back(bn);
            role.push_back(qc ? Role::QC : Role::Subject);
            order.push_back(t + 1);
        }
    }
    return BatchedDataset(std::move(values), std::move(ids), std::move(batch), std::move(role),
                          std::move(order));
}

}  // namespace batchfx
