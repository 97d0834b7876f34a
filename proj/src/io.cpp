#include "batchfx/io.hpp"

#include <boost/tokenizer.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace batchfx {

namespace {

using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;

std::vector<std::string> split_csv_line(const std::string& line, long row) {
    try {
        Tokenizer tok(line);
        return {tok.begin(), tok.end()};
    } catch (const boost::escaped_list_error& e) {
        throw IngestError("row " + std::to_string(row) + ": " + e.what(), row, 0);
    }
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string cell_ref(long row, long col, const std::string& name) {
    return "row " + std::to_string(row) + ", column " + std::to_string(col) + " ('" + name + "')";
}

bool needs_quotes(const std::string& s) {
    return s.find_first_of(",\"\\\r\n") != std::string::npos;
}

std::string quote(const std::string& s) {
    if (!needs_quotes(s)) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

}  // namespace

BatchedDataset parse_dataset_csv(std::istream& in, const ColumnNames& columns) {
    std::string line;
    long row = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next_line()) throw IngestError("empty input: no header row", 1, 0);
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = split_csv_line(line, row);
    for (auto& h : header) h = trim(h);

    std::unordered_map<std::string, long> position;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (!position.emplace(header[c], static_cast<long>(c)).second) {
            throw IngestError("duplicate column '" + header[c] + "'", 1, static_cast<long>(c + 1));
        }
    }
    auto require = [&](const std::string& name) {
        const auto it = position.find(name);
        if (it == position.end()) throw IngestError("missing required column '" + name + "'", 1, 0);
        return it->second;
    };
    const long c_id = require(columns.sample_id);
    const long c_batch = require(columns.batch);
    const long c_role = require(columns.role);
    const long c_order = require(columns.injection_order);
    std::vector<long> feature_cols;
    std::vector<std::string> feature_names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto cl = static_cast<long>(c);
        if (cl == c_id || cl == c_batch || cl == c_role || cl == c_order) continue;
        feature_cols.push_back(cl);
        feature_names.push_back(header[c]);
    }
    if (feature_cols.empty()) throw IngestError("no feature columns", 1, 0);

    std::vector<std::string> ids, batches;
    std::vector<Role> roles;
    std::vector<long long> orders;
    std::vector<double> values;
    std::set<std::string> seen;
    while (next_line()) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_csv_line(line, row);
        if (cells.size() != header.size()) {
            throw IngestError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                  " cells, header has " + std::to_string(header.size()),
                              row, 0);
        }
        const std::string id = trim(cells[static_cast<std::size_t>(c_id)]);
        if (id.empty()) throw IngestError("empty sample id at " + cell_ref(row, c_id + 1, header[static_cast<std::size_t>(c_id)]), row, c_id + 1);
        if (!seen.insert(id).second) {
            throw IngestError("duplicate sample_id '" + id + "' at row " + std::to_string(row), row,
                              c_id + 1);
        }
        const std::string batch = trim(cells[static_cast<std::size_t>(c_batch)]);
        if (batch.empty()) {
            throw IngestError("empty batch label at " + cell_ref(row, c_batch + 1, header[static_cast<std::size_t>(c_batch)]),
                              row, c_batch + 1);
        }
        const std::string role = lower(trim(cells[static_cast<std::size_t>(c_role)]));
        Role r;
        if (role == "qc") {
            r = Role::QC;
        } else if (role == "subject") {
            r = Role::Subject;
        } else {
            throw IngestError("role must be QC or subject at " + cell_ref(row, c_role + 1, header[static_cast<std::size_t>(c_role)]),
                              row, c_role + 1);
        }
        const std::string ord = trim(cells[static_cast<std::size_t>(c_order)]);
        long long order = 0;
        const auto [optr, oec] = std::from_chars(ord.data(), ord.data() + ord.size(), order);
        if (oec != std::errc{} || optr != ord.data() + ord.size() || order <= 0) {
            throw IngestError("injection order must be a positive integer at " +
                                  cell_ref(row, c_order + 1, header[static_cast<std::size_t>(c_order)]),
                              row, c_order + 1);
        }
        for (std::size_t k = 0; k < feature_cols.size(); ++k) {
            const long c = feature_cols[k];
            const std::string cell = trim(cells[static_cast<std::size_t>(c)]);
            double v = 0.0;
            const char* first = cell.data();
            if (!cell.empty() && *first == '+') ++first;
            const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() ||
                !std::isfinite(v)) {
                throw IngestError("non-numeric value '" + cell + "' at " +
                                      cell_ref(row, c + 1, header[static_cast<std::size_t>(c)]),
                                  row, c + 1);
            }
            values.push_back(v);
        }
        ids.push_back(id);
        batches.push_back(batch);
        roles.push_back(r);
        orders.push_back(order);
    }
    if (ids.empty()) throw IngestError("no data rows", 0, 0);

    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto p = static_cast<Eigen::Index>(feature_cols.size());
    Matrix x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), n, p);
    return BatchedDataset(std::move(x), std::move(ids), std::move(batches), std::move(roles),
                          std::move(orders), std::move(feature_names));
}

BatchedDataset read_dataset_csv(const std::filesystem::path& path, const ColumnNames& columns) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    return parse_dataset_csv(in, columns);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string dataset_csv(const BatchedDataset& dataset, const ColumnNames& columns) {
    std::ostringstream out;
    out << quote(columns.sample_id) << ',' << quote(columns.batch) << ',' << quote(columns.role)
        << ',' << quote(columns.injection_order);
    for (const auto& f : dataset.feature_names()) out << ',' << quote(f);
    out << '\n';
    for (Eigen::Index r = 0; r < dataset.n_samples(); ++r) {
        const auto rr = static_cast<std::size_t>(r);
        out << quote(dataset.sample_ids()[rr]) << ',' << quote(dataset.batch()[rr]) << ','
            << (dataset.role()[rr] == Role::QC ? "QC" : "subject") << ','
            << dataset.injection_order()[rr];
        for (Eigen::Index c = 0; c < dataset.n_features(); ++c) {
            out << ',' << format_double(dataset.values()(r, c));
        }
        out << '\n';
    }
    return out.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::string qmatrix_csv(const PairwiseReport& report) {
    std::ostringstream out;
    out << "batch";
    for (const auto& b : report.batches) out << ',' << quote(b);
    out << '\n';
    for (std::size_t i = 0; i < report.batches.size(); ++i) {
        out << quote(report.batches[i]);
        for (std::size_t j = 0; j < report.batches.size(); ++j) {
            out << ',';
            if (i != j) out << format_double(report.q_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

nlohmann::json number(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

}  // namespace

nlohmann::json to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v(i)));
    return out;
}

nlohmann::json to_json(const TestOutcome& outcome) {
    nlohmann::json j{{"method", to_string(outcome.method)},
                     {"statistic", number(outcome.statistic)},
                     {"p_value", number(outcome.p_value)}};
    if (outcome.component_p) {
        j["p_mean"] = outcome.component_p->first;
        j["p_cov"] = outcome.component_p->second;
    }
    return j;
}

nlohmann::json to_json(const PairwiseReport& report) {
    nlohmann::json followup = nlohmann::json::array();
    for (const auto& [pair, f] : report.followup) {
        followup.push_back({{"batch_a", report.batches[pair.first]},
                            {"batch_b", report.batches[pair.second]},
                            {"q", report.q_matrix(static_cast<Eigen::Index>(pair.first),
                                                  static_cast<Eigen::Index>(pair.second))},
                            {"p_mean", f.p_mean},
                            {"p_cov", f.p_cov}});
    }
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& row : report.method) methods.push_back(row);
    return {{"batches", report.batches},
            {"alpha_sig", report.alpha_sig},
            {"q_matrix", to_json(report.q_matrix)},
            {"p_matrix", to_json(report.p_matrix)},
            {"method", methods},
            {"followup", followup},
            {"any_significant", report.any_significant()}};
}

nlohmann::json to_json(const MetricTable& table) {
    nlohmann::json j{{"features", table.features},
                     {"rsd", to_json(table.rsd)},
                     {"median_rsd", table.median_rsd()},
                     {"rsd_thresholds", table.rsd_thresholds},
                     {"rsd_cf", table.rsd_cf},
                     {"batches", table.batches},
                     {"rsd_by_batch", to_json(table.rsd_by_batch)}};
    if (table.d_ratio.size() > 0) {
        j["d_ratio"] = to_json(table.d_ratio);
        j["d_ratio_thresholds"] = table.d_ratio_thresholds;
        j["d_ratio_cf"] = table.d_ratio_cf;
    }
    return j;
}

nlohmann::json to_json(const CocoPlan& plan) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& m : plan.A) a.push_back(to_json(m));
    return {{"batches", plan.batches},
            {"alphas", to_json(plan.alphas)},
            {"lambdas", to_json(plan.lambdas)},
            {"mean_V", plan.mean_V},
            {"V", to_json(plan.V)},
            {"candidates_passing", plan.candidates_passing},
            {"n_search", plan.n_search},
            {"candidate", plan.candidate},
            {"gelnet_failures", plan.gelnet_failures},
            {"q_after", to_json(plan.q_after)},
            {"scale", to_json(plan.scale)},
            {"A", a}};
}

nlohmann::json to_json(const CorrectionModel& model) {
    nlohmann::json batches = nlohmann::json::array();
    for (std::size_t b = 0; b < model.batches.size(); ++b) {
        nlohmann::json vars = nlohmann::json::array();
        for (const auto& f : model.fits[b]) {
            std::vector<long long> feats(f.features.begin(), f.features.end());
            vars.push_back({{"n_trees", f.chosen.n_trees},
                            {"max_depth", f.chosen.max_depth},
                            {"learning_rate", f.chosen.learning_rate},
                            {"cv_loss", f.cv_loss},
                            {"correlated", feats}});
        }
        batches.push_back({{"batch", model.batches[b]}, {"variables", vars}});
    }
    return {{"reference_level", to_json(model.reference_level)}, {"fits", batches}};
}

nlohmann::json to_json(const GpcaOutcome& outcome) {
    return {{"delta", outcome.delta}, {"p_value", outcome.p_value}, {"n_perm", outcome.n_perm}};
}

nlohmann::json dataset_summary(const BatchedDataset& dataset) {
    nlohmann::json batches = nlohmann::json::array();
    for (const auto& b : dataset.batches()) {
        batches.push_back({{"batch", b},
                           {"qc", dataset.rows(b, Role::QC).size()},
                           {"subject", dataset.rows(b, Role::Subject).size()}});
    }
    return {{"samples", dataset.n_samples()},
            {"features", dataset.n_features()},
            {"qc", dataset.rows(Role::QC).size()},
            {"subject", dataset.rows(Role::Subject).size()},
            {"batches", batches}};
}

}  // namespace batchfx
