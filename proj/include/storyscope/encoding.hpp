#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "taxonomy.hpp"

namespace storyscope::encoding {

using taxonomy::FeatureDef;
using taxonomy::ResponseType;

/// Raw per-story feature assignment. Values are stored as JSON: option string
/// (categorical, binary), integer code (ordinal, scale), or array of option
/// strings (multi_select). Features absent from the map are missing.
struct AssignmentRecord {
    std::string story_id;
    std::map<std::string, Json> values;
};

enum class BinaryMode { onehot, single };

struct EncodingConfig {
    BinaryMode binary_mode = BinaryMode::onehot;
};

enum class ColumnKind { onehot_option, multihot_option, numeric };

inline std::string to_string(ColumnKind k) {
    switch (k) {
        case ColumnKind::onehot_option: return "onehot_option";
        case ColumnKind::multihot_option: return "multihot_option";
        case ColumnKind::numeric: return "numeric";
    }
    return "?";
}

struct Column {
    std::string feature_id;
    ColumnKind kind = ColumnKind::numeric;
    std::string option;  // empty for numeric columns

    std::string name() const { return option.empty() ? feature_id : feature_id + "=" + option; }
};

/// Per-feature contiguous slice of encoded columns.
struct FeatureSlice {
    std::string feature_id;
    ResponseType response_type = ResponseType::categorical;
    std::size_t begin = 0;
    std::size_t width = 0;
    std::vector<std::string> options;
};

struct ColumnMap {
    std::vector<Column> columns;
    std::vector<FeatureSlice> features;
    BinaryMode binary_mode = BinaryMode::onehot;

    std::size_t width() const { return columns.size(); }
    std::size_t n_features() const { return features.size(); }

    const FeatureSlice& slice(const std::string& feature_id) const {
        for (const auto& f : features)
            if (f.feature_id == feature_id) return f;
        throw ValidationError("unknown feature in column map: " + feature_id);
    }

    /// Feature index owning each encoded column.
    std::vector<std::size_t> column_to_feature() const {
        std::vector<std::size_t> out(columns.size());
        for (std::size_t fi = 0; fi < features.size(); ++fi)
            for (std::size_t c = features[fi].begin; c < features[fi].begin + features[fi].width; ++c) out[c] = fi;
        return out;
    }

    Json to_json() const {
        Json cols = Json::array();
        for (const auto& c : columns)
            cols.push_back(Json{{"feature_id", c.feature_id}, {"kind", to_string(c.kind)}, {"option", c.option}});
        Json feats = Json::array();
        for (const auto& f : features)
            feats.push_back(Json{{"feature_id", f.feature_id},
                                 {"response_type", taxonomy::to_string(f.response_type)},
                                 {"begin", f.begin},
                                 {"width", f.width},
                                 {"options", f.options}});
        return Json{{"binary_mode", binary_mode == BinaryMode::onehot ? "onehot" : "single"},
                    {"columns", cols},
                    {"features", feats}};
    }

    static ColumnMap from_json(const Json& j) {
        ColumnMap m;
        m.binary_mode = j.value("binary_mode", std::string("onehot")) == "single" ? BinaryMode::single
                                                                                  : BinaryMode::onehot;
        for (const auto& jc : j.at("columns")) {
            Column c;
            c.feature_id = jc.at("feature_id").get<std::string>();
            std::string k = jc.at("kind").get<std::string>();
            c.kind = k == "onehot_option"    ? ColumnKind::onehot_option
                     : k == "multihot_option" ? ColumnKind::multihot_option
                                              : ColumnKind::numeric;
            c.option = jc.value("option", std::string());
            m.columns.push_back(std::move(c));
        }
        for (const auto& jf : j.at("features")) {
            FeatureSlice f;
            f.feature_id = jf.at("feature_id").get<std::string>();
            f.response_type = taxonomy::parse_response_type(jf.at("response_type").get<std::string>());
            f.begin = jf.at("begin").get<std::size_t>();
            f.width = jf.at("width").get<std::size_t>();
            f.options = jf.at("options").get<std::vector<std::string>>();
            m.features.push_back(std::move(f));
        }
        return m;
    }
};

/// Deterministic column layout: feature order, then option order within each
/// feature. Categorical and multi_select expand to one column per option;
/// ordinal and scale use one numeric column; binary follows the config.
inline ColumnMap build_column_map(const std::vector<FeatureDef>& features,
                                  const EncodingConfig& config = EncodingConfig{}) {
    ColumnMap m;
    m.binary_mode = config.binary_mode;
    for (const auto& f : features) {
        FeatureSlice slice;
        slice.feature_id = f.feature_id;
        slice.response_type = f.response_type;
        slice.begin = m.columns.size();
        slice.options = f.options;
        switch (f.response_type) {
            case ResponseType::categorical:
                for (const auto& opt : f.options)
                    m.columns.push_back(Column{f.feature_id, ColumnKind::onehot_option, opt});
                break;
            case ResponseType::binary:
                if (config.binary_mode == BinaryMode::onehot) {
                    // Canonical order regardless of how the taxonomy lists them.
                    m.columns.push_back(Column{f.feature_id, ColumnKind::onehot_option, "no"});
                    m.columns.push_back(Column{f.feature_id, ColumnKind::onehot_option, "yes"});
                    slice.options = {"no", "yes"};
                } else {
                    m.columns.push_back(Column{f.feature_id, ColumnKind::numeric, ""});
                    slice.options = {"no", "yes"};
                }
                break;
            case ResponseType::multi_select:
                for (const auto& opt : f.options)
                    m.columns.push_back(Column{f.feature_id, ColumnKind::multihot_option, opt});
                break;
            case ResponseType::ordinal:
            case ResponseType::scale:
                m.columns.push_back(Column{f.feature_id, ColumnKind::numeric, ""});
                break;
        }
        slice.width = m.columns.size() - slice.begin;
        m.features.push_back(std::move(slice));
    }
    return m;
}

inline ColumnMap build_column_map(const taxonomy::Taxonomy& tax, const EncodingConfig& config = EncodingConfig{}) {
    return build_column_map(tax.features, config);
}

struct EncodedMatrix {
    std::vector<std::string> rows;  // story_ids in input order
    Matrix matrix;                  // n x D
    ColumnMap column_map;
    std::vector<std::uint8_t> missing_mask;  // n x d, row-major over features
    std::size_t n_missing = 0;
    std::size_t n_empty_multiselect = 0;

    bool missing(std::size_t row, std::size_t feature) const {
        return missing_mask[row * column_map.n_features() + feature] != 0;
    }
};

namespace detail {

inline std::optional<std::size_t> option_index(const std::vector<std::string>& options, const std::string& value) {
    for (std::size_t i = 0; i < options.size(); ++i)
        if (options[i] == value) return i;
    return std::nullopt;
}

[[noreturn]] inline void illegal(const std::string& story_id, const std::string& feature_id,
                                 const std::string& what) {
    throw ValidationError("story " + story_id + ", feature " + feature_id + ": " + what);
}

/// Numeric code for an ordinal/scale value given either as an integer code or
/// as an option string.
inline double numeric_code(const FeatureSlice& f, const Json& v, const std::string& story_id) {
    if (v.is_string()) {
        auto idx = option_index(f.options, v.get<std::string>());
        if (!idx) illegal(story_id, f.feature_id, "illegal option '" + v.get<std::string>() + "'");
        if (f.response_type == ResponseType::scale) return static_cast<double>(std::stol(f.options[*idx]));
        return static_cast<double>(*idx);
    }
    if (!v.is_number_integer()) illegal(story_id, f.feature_id, "expected integer or option string");
    long code = v.get<long>();
    if (f.response_type == ResponseType::scale) {
        for (const auto& opt : f.options)
            if (std::stol(opt) == code) return static_cast<double>(code);
        illegal(story_id, f.feature_id, "integer " + std::to_string(code) + " is not a scale option");
    }
    if (code < 0 || code >= static_cast<long>(f.options.size()))
        illegal(story_id, f.feature_id, "ordinal code " + std::to_string(code) + " out of range");
    return static_cast<double>(code);
}

}  // namespace detail

/// Expand assignments into the n x D numeric matrix plus the n x d missing
/// mask. An absent feature is missing (zero slice, mask set); an empty
/// multi_select array is an explicit all-zero row slice, not missing.
inline EncodedMatrix encode(const std::vector<AssignmentRecord>& assignments, const ColumnMap& map,
                            int threads = 1) {
    EncodedMatrix out;
    out.column_map = map;
    const std::size_t n = assignments.size();
    const std::size_t D = map.width();
    const std::size_t d = map.n_features();
    out.matrix = Matrix(n, D);
    out.missing_mask.assign(n * d, 0);
    out.rows.reserve(n);
    for (const auto& a : assignments) out.rows.push_back(a.story_id);

    std::vector<std::size_t> missing_counts(n, 0), empty_counts(n, 0);
    parallel_for(std::size_t{0}, n, threads, [&](std::size_t r) {
        const auto& a = assignments[r];
        auto row = out.matrix.row(r);
        for (std::size_t fi = 0; fi < d; ++fi) {
            const auto& f = map.features[fi];
            auto it = a.values.find(f.feature_id);
            if (it == a.values.end() || it->second.is_null()) {
                out.missing_mask[r * d + fi] = 1;
                missing_counts[r]++;
                continue;
            }
            const Json& v = it->second;
            switch (f.response_type) {
                case ResponseType::categorical: {
                    if (!v.is_string()) detail::illegal(a.story_id, f.feature_id, "expected option string");
                    auto idx = detail::option_index(f.options, v.get<std::string>());
                    if (!idx)
                        detail::illegal(a.story_id, f.feature_id, "illegal option '" + v.get<std::string>() + "'");
                    row[f.begin + *idx] = 1.0;
                    break;
                }
                case ResponseType::binary: {
                    if (!v.is_string()) detail::illegal(a.story_id, f.feature_id, "expected 'no' or 'yes'");
                    const std::string s = v.get<std::string>();
                    if (s != "no" && s != "yes")
                        detail::illegal(a.story_id, f.feature_id, "illegal option '" + s + "'");
                    if (map.binary_mode == BinaryMode::onehot)
                        row[f.begin + (s == "yes" ? 1 : 0)] = 1.0;
                    else
                        row[f.begin] = (s == "yes") ? 1.0 : 0.0;
                    break;
                }
                case ResponseType::multi_select: {
                    if (!v.is_array()) detail::illegal(a.story_id, f.feature_id, "expected array of options");
                    if (v.empty()) empty_counts[r]++;
                    for (const auto& jv : v) {
                        if (!jv.is_string()) detail::illegal(a.story_id, f.feature_id, "expected option string");
                        auto idx = detail::option_index(f.options, jv.get<std::string>());
                        if (!idx)
                            detail::illegal(a.story_id, f.feature_id,
                                            "illegal option '" + jv.get<std::string>() + "'");
                        row[f.begin + *idx] = 1.0;
                    }
                    break;
                }
                case ResponseType::ordinal:
                case ResponseType::scale:
                    row[f.begin] = detail::numeric_code(f, v, a.story_id);
                    break;
            }
        }
    });
    for (std::size_t r = 0; r < n; ++r) {
        out.n_missing += missing_counts[r];
        out.n_empty_multiselect += empty_counts[r];
    }
    return out;
}

/// Inverse lookup through the column map for one encoded row. Missing features
/// are omitted. Categorical/binary/multi_select decode to option strings;
/// ordinal decodes to its 0-based code, scale to its literal integer.
inline AssignmentRecord decode(const EncodedMatrix& m, std::size_t row) {
    AssignmentRecord rec;
    rec.story_id = m.rows[row];
    auto r = m.matrix.row(row);
    const auto& map = m.column_map;
    for (std::size_t fi = 0; fi < map.n_features(); ++fi) {
        if (m.missing(row, fi)) continue;
        const auto& f = map.features[fi];
        switch (f.response_type) {
            case ResponseType::categorical: {
                for (std::size_t i = 0; i < f.width; ++i)
                    if (r[f.begin + i] == 1.0) rec.values[f.feature_id] = f.options[i];
                break;
            }
            case ResponseType::binary: {
                if (map.binary_mode == BinaryMode::onehot)
                    rec.values[f.feature_id] = (r[f.begin + 1] == 1.0) ? "yes" : "no";
                else
                    rec.values[f.feature_id] = (r[f.begin] != 0.0) ? "yes" : "no";
                break;
            }
            case ResponseType::multi_select: {
                Json arr = Json::array();
                for (std::size_t i = 0; i < f.width; ++i)
                    if (r[f.begin + i] == 1.0) arr.push_back(f.options[i]);
                rec.values[f.feature_id] = arr;
                break;
            }
            case ResponseType::ordinal:
            case ResponseType::scale:
                rec.values[f.feature_id] = static_cast<long>(std::llround(r[f.begin]));
                break;
        }
    }
    return rec;
}

struct ZScoreParams {
    std::vector<double> mean;
    std::vector<double> std;  // population standard deviation
};

/// Fit per-column mean and population sigma on the reference rows.
inline ZScoreParams fit_zscore(const Matrix& m, const std::vector<std::size_t>& reference_rows) {
    if (reference_rows.empty()) throw ValidationError("zscore reference rows must be non-empty");
    ZScoreParams p;
    p.mean.assign(m.cols, 0.0);
    p.std.assign(m.cols, 0.0);
    const double n = static_cast<double>(reference_rows.size());
    for (std::size_t r : reference_rows) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) p.mean[c] += row[c];
    }
    for (std::size_t c = 0; c < m.cols; ++c) p.mean[c] /= n;
    for (std::size_t r : reference_rows) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) {
            double dlt = row[c] - p.mean[c];
            p.std[c] += dlt * dlt;
        }
    }
    for (std::size_t c = 0; c < m.cols; ++c) p.std[c] = std::sqrt(p.std[c] / n);
    return p;
}

/// (v - mu) / sigma per column; columns with sigma < 1e-12 become all zeros.
inline Matrix apply_zscore(const Matrix& m, const ZScoreParams& p, int threads = 1) {
    if (p.mean.size() != m.cols) throw ValidationError("zscore parameter width mismatch");
    Matrix out(m.rows, m.cols);
    parallel_for(std::size_t{0}, m.cols, threads, [&](std::size_t c) {
        if (p.std[c] < 1e-12) {
            for (std::size_t r = 0; r < m.rows; ++r) out.at(r, c) = 0.0;
        } else {
            for (std::size_t r = 0; r < m.rows; ++r) out.at(r, c) = (m.at(r, c) - p.mean[c]) / p.std[c];
        }
    });
    return out;
}

inline std::pair<Matrix, ZScoreParams> zscore(const Matrix& m, const std::vector<std::size_t>& reference_rows,
                                              int threads = 1) {
    auto p = fit_zscore(m, reference_rows);
    return {apply_zscore(m, p, threads), p};
}

// ---------------------------------------------------------------------------
// External interfaces
// ---------------------------------------------------------------------------

inline std::vector<AssignmentRecord> load_assignments(const std::filesystem::path& path) {
    std::vector<AssignmentRecord> out;
    for_each_jsonl(path, [&](std::size_t line_no, const Json& j) {
        AssignmentRecord rec;
        try {
            rec.story_id = j.at("story_id").get<std::string>();
            for (const auto& [k, v] : j.at("values").items()) rec.values[k] = v;
        } catch (const Json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(rec));
    });
    return out;
}

inline void save_assignments(const std::filesystem::path& path, const std::vector<AssignmentRecord>& recs) {
    std::string out;
    for (const auto& r : recs) {
        Json values = Json::object();
        for (const auto& [k, v] : r.values) values[k] = v;
        out += Json{{"story_id", r.story_id}, {"values", values}}.dump();
        out += '\n';
    }
    write_file(path, out);
}

/// CSV with a story_id column followed by one column per encoded dimension;
/// the sidecar JSON column map is written next to it.
inline void export_csv(const EncodedMatrix& m, const std::filesystem::path& csv_path,
                       const std::filesystem::path& sidecar_path) {
    std::string out = "story_id";
    for (const auto& c : m.column_map.columns) {
        out += ',';
        out += c.name();
    }
    out += '\n';
    char buf[64];
    for (std::size_t r = 0; r < m.matrix.rows; ++r) {
        out += m.rows[r];
        auto row = m.matrix.row(r);
        for (std::size_t c = 0; c < m.matrix.cols; ++c) {
            std::snprintf(buf, sizeof(buf), ",%.17g", row[c]);
            out += buf;
        }
        out += '\n';
    }
    write_file(csv_path, out);
    save_json(sidecar_path, m.column_map.to_json());
}

}  // namespace storyscope::encoding
