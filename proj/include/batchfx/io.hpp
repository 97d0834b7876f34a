#pragma once

// CSV ingestion and output, atomic file writes, and JSON serialization of
// results.

#include "batchfx/bec.hpp"
#include "batchfx/coco.hpp"
#include "batchfx/core.hpp"
#include "batchfx/gpca.hpp"
#include "batchfx/hdtest.hpp"
#include "batchfx/metrics.hpp"
#include "batchfx/simlab.hpp"

#include <json.hpp>

#include <filesystem>
#include <istream>
#include <string>

namespace batchfx {

inline constexpr const char* kVersion = "0.1.0";

struct ColumnNames {
    std::string sample_id = "sample_id";
    std::string batch = "batch";
    std::string role = "role";
    std::string injection_order = "injection_order";
};

/// A malformed input file. row and column are 1-based (row 1 is the header);
/// 0 means "not applicable".
class IngestError : public DatasetError {
public:
    IngestError(const std::string& what, long row = 0, long column = 0)
        : DatasetError(what), row_(row), column_(column) {}
    long row() const noexcept { return row_; }
    long column() const noexcept { return column_; }

private:
    long row_;
    long column_;
};

BatchedDataset parse_dataset_csv(std::istream& in, const ColumnNames& columns = {});
BatchedDataset read_dataset_csv(const std::filesystem::path& path, const ColumnNames& columns = {});

/// Header `sample_id,batch,role,injection_order,<features...>`; numbers with
/// 17 significant digits so that reading the file back is exact.
std::string dataset_csv(const BatchedDataset& dataset, const ColumnNames& columns = {});

std::string format_double(double v);

/// Writes to a temporary sibling and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// B x B q-values with batch labels as header and first column; empty cells
/// on the diagonal.
std::string qmatrix_csv(const PairwiseReport& report);

nlohmann::json to_json(const Matrix& m);
nlohmann::json to_json(const Vector& v);
nlohmann::json to_json(const TestOutcome& outcome);
nlohmann::json to_json(const PairwiseReport& report);
nlohmann::json to_json(const MetricTable& table);
nlohmann::json to_json(const CocoPlan& plan);
nlohmann::json to_json(const CorrectionModel& model);
nlohmann::json to_json(const GpcaOutcome& outcome);
nlohmann::json dataset_summary(const BatchedDataset& dataset);

}  // namespace batchfx
