#include <doctest.h>

#include "batchfx/metrics.hpp"
#include "support.hpp"

#include <cmath>

using namespace batchfx;
using testsupport::make_dataset;
using testsupport::random_matrix;

TEST_CASE("rsd hand values") {
    Matrix v(5, 2);
    v << 98, 7, 100, 7, 102, 7, 50, 1, 60, 2;
    const BatchedDataset ds = make_dataset(v, {3}, {2});
    const Vector r = rsd(ds);
    CHECK(r(0) == doctest::Approx(0.02));
    CHECK(r(1) == 0.0);
    CHECK(rsd(ds, "B1")(0) == doctest::Approx(0.02));
}

TEST_CASE("rsd pools QC rows across batches") {
    Matrix v(6, 1);
    v << 10, 12, 14, 20, 22, 24;
    const BatchedDataset ds = make_dataset(v, {3, 3}, {0, 0});
    const double mean = 17.0;
    double ss = 0;
    for (int i = 0; i < 6; ++i) ss += (v(i, 0) - mean) * (v(i, 0) - mean);
    CHECK(rsd(ds)(0) == doctest::Approx(std::sqrt(ss / 5) / mean));
    CHECK(rsd(ds, "B2")(0) == doctest::Approx(2.0 / 22.0));
}

TEST_CASE("d-ratio hand values") {
    const double a = std::sqrt(99.0);
    Matrix v(6, 3);
    // QC variance 1 in every column; subject variance 1, 0... and 99.
    v << 9, 9, 9,
         10, 10, 10,
         11, 11, 11,
         9, 10, 10 - a,
         10, 10, 10,
         11, 10, 10 + a;
    const BatchedDataset ds = make_dataset(v, {3}, {3});
    const Vector d = d_ratio(ds);
    CHECK(d(0) == doctest::Approx(std::sqrt(0.5)));
    CHECK(d(1) == doctest::Approx(1.0));
    CHECK(d(2) == doctest::Approx(0.1));

    Matrix flat_qc(5, 1);
    flat_qc << 4, 4, 1, 3, 8;
    CHECK(d_ratio(make_dataset(flat_qc, {2}, {3}))(0) == 0.0);
}

TEST_CASE("cumulative frequency") {
    const std::vector<double> vals{0.10, 0.18, 0.40};
    const auto cf = cumulative_frequency(vals, kRsdThresholds);
    CHECK(cf[0] == doctest::Approx(100.0 / 3));
    CHECK(cf[1] == doctest::Approx(200.0 / 3));
    CHECK(cf[2] == doctest::Approx(200.0 / 3));
    const std::vector<double> low{0.01, 0.02};
    for (double c : cumulative_frequency(low, kRsdThresholds)) CHECK(c == 100.0);
    const std::vector<double> inf{INFINITY};
    CHECK(cumulative_frequency(vals, inf)[0] == 100.0);
}

TEST_CASE("metric properties on random data") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Matrix v = random_matrix(24, 8, s).array().abs() + 1.0;
        const BatchedDataset ds = make_dataset(v, {4, 4}, {8, 8});
        const MetricTable t = metric_table(ds);
        for (Eigen::Index i = 0; i < 8; ++i) {
            REQUIRE(t.d_ratio(i) >= 0.0);
            REQUIRE(t.d_ratio(i) <= 1.0);
        }
        for (std::size_t k = 1; k < t.rsd_cf.size(); ++k) REQUIRE(t.rsd_cf[k] >= t.rsd_cf[k - 1]);

        Matrix scaled = v;
        const double c = 0.5 + static_cast<double>(s);
        scaled.col(3) *= c;
        const BatchedDataset ds2 = ds.with_values(scaled);
        CHECK(rsd(ds2)(3) == doctest::Approx(t.rsd(3)).epsilon(1e-12));
        CHECK(d_ratio(ds2)(3) == doctest::Approx(t.d_ratio(3)).epsilon(1e-12));
    }
}

TEST_CASE("metric table layout") {
    const Matrix v = random_matrix(16, 5, 9).array().abs() + 2.0;
    const MetricTable t = metric_table(make_dataset(v, {3, 3}, {5, 5}));
    CHECK(t.features.size() == 5);
    CHECK(t.rsd_thresholds == kRsdThresholds);
    CHECK(t.d_ratio_thresholds == kDRatioThresholds);
    CHECK(t.rsd_by_batch.rows() == 2);
    CHECK(t.batches == std::vector<std::string>{"B1", "B2"});
    CHECK(!format_cf_row(t).empty());
    std::vector<double> r(t.rsd.data(), t.rsd.data() + t.rsd.size());
    CHECK(t.median_rsd() == doctest::Approx(median(r)));

    const MetricTable qc_only = metric_table(make_dataset(v.topRows(6), {3, 3}, {0, 0}));
    CHECK(qc_only.d_ratio.size() == 0);
}
