#include <doctest.h>

#include "batchfx/io.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace batchfx;

namespace {

BatchedDataset parse(const std::string& text, const ColumnNames& cols = {}) {
    std::istringstream in(text);
    return parse_dataset_csv(in, cols);
}

const char* kToy =
    "sample_id,batch,role,injection_order,m1,m2\n"
    "a,b1,QC,1,10.5,3\n"
    "b,b1,QC,2,11,3.25\n"
    "c,b1,subject,3,9,2\n"
    "d,b1,QC,4,12,1e2\n";

}  // namespace

TEST_CASE("toy CSV") {
    const BatchedDataset ds = parse(kToy);
    CHECK(ds.n_samples() == 4);
    CHECK(ds.n_features() == 2);
    CHECK(ds.feature_names() == std::vector<std::string>{"m1", "m2"});
    CHECK(ds.role()[2] == Role::Subject);
    CHECK(ds.values()(3, 1) == 100.0);
    CHECK(ds.injection_order()[3] == 4);
}

TEST_CASE("CRLF, quoting and custom column names") {
    const std::string text =
        "id;x\r\n"
        "\"name\",grp,kind,inj,\"feature, one\"\r\n"
        "\"s,1\",g,qc,1,1\r\n"
        "s2,g,QC,2,2\r\n";
    ColumnNames cols{"name", "grp", "kind", "inj"};
    // first line is not a header
    CHECK_THROWS_AS(parse(text, cols), IngestError);
    const BatchedDataset ds = parse(text.substr(text.find('\n') + 1), cols);
    CHECK(ds.sample_ids()[0] == "s,1");
    CHECK(ds.feature_names()[0] == "feature, one");
    CHECK(ds.values()(1, 0) == 2.0);
}

TEST_CASE("ingest errors name the row and column") {
    std::string bad = kToy;
    bad.replace(bad.find("11"), 2, "NA");
    try {
        parse(bad);
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        CHECK(e.row() == 3);
        CHECK(e.column() == 5);
        CHECK(std::string(e.what()).find("NA") != std::string::npos);
    }
    CHECK_THROWS_AS(parse("sample_id,batch,role,m1\na,b,QC,1\n"), IngestError);
    CHECK_THROWS_AS(parse("sample_id,batch,role,injection_order,m1\na,b,blank,1,1\nb,b,QC,2,1\n"), IngestError);
    CHECK_THROWS_AS(parse("sample_id,batch,role,injection_order,m1\na,b,QC,1,1,7\n"), IngestError);
    CHECK_THROWS_AS(parse("sample_id,batch,role,injection_order\na,b,QC,1\n"), IngestError);
    // only one QC row: a dataset invariant, still reported as a data error
    CHECK_THROWS_AS(parse("sample_id,batch,role,injection_order,m\na,b,QC,1,1\nb,b,subject,2,1\n"), DatasetError);
}

TEST_CASE("write then read is exact") {
    const Matrix v = testsupport::random_matrix(9, 4, 3) * 1e3 + Matrix::Constant(9, 4, 1.0 / 3.0);
    const BatchedDataset ds = testsupport::make_dataset(v, {3, 2}, {2, 2});
    const BatchedDataset back = parse(dataset_csv(ds));
    CHECK(back.values() == ds.values());
    CHECK(back.sample_ids() == ds.sample_ids());
    CHECK(back.batch() == ds.batch());
    CHECK(back.role() == ds.role());
    CHECK(back.injection_order() == ds.injection_order());
    CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("atomic file write") {
    const auto dir = std::filesystem::temp_directory_path() / "batchfx_io_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "out.txt";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    std::ifstream in(path);
    std::string s;
    std::getline(in, s);
    CHECK(s == "second");
    int files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
    CHECK(files == 1);
    std::filesystem::remove_all(dir);
    CHECK_THROWS(write_file_atomic(dir / "missing" / "x.txt", "y"));
}

TEST_CASE("three QC rows per batch run through qc_st") {
    const Matrix v = testsupport::random_matrix(8, 5, 4).array().abs() + 1.0;
    const BatchedDataset ds = parse(dataset_csv(testsupport::make_dataset(v, {3, 3}, {1, 1})));
    const PairwiseReport r = qc_st(ds);
    CHECK(r.q_matrix(0, 1) >= 0.0);
    CHECK(r.q_matrix(0, 1) <= 1.0);
    const std::string q = qmatrix_csv(r);
    CHECK(q.rfind("batch,B1,B2\n", 0) == 0);
    CHECK(q.find("B1,,") != std::string::npos);
}

TEST_CASE("json serialization") {
    Matrix m(2, 2);
    m << 1, std::nan(""), 0.5, 2;
    const nlohmann::json j = to_json(m);
    CHECK(j[0][1].is_null());
    CHECK(j[1][0] == 0.5);

    const Matrix v = testsupport::random_matrix(12, 4, 5).array().abs() + 1.0;
    const BatchedDataset ds = testsupport::make_dataset(v, {4, 4}, {2, 2});
    const nlohmann::json r = to_json(qc_st(ds));
    CHECK(r.contains("q_matrix"));
    CHECK(r.contains("batches"));
    const nlohmann::json t = to_json(metric_table(ds));
    CHECK(t.contains("rsd"));
    CHECK(dataset_summary(ds)["samples"] == 12);
}
