#pragma once

// CSV and JSON serialization.
//
// CSV: comma separated, one header row, numbers written with 17 significant
// digits so a write/read round trip reproduces every double exactly.
// JSON: nlohmann::json; matrices are stored row-major as nested arrays.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nglf/covariance.hpp"
#include "nglf/errors.hpp"
#include "nglf/model_synth.hpp"
#include "nglf/solver.hpp"

namespace nglf::io {

using nlohmann::json;

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line, std::size_t col) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ValidationError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                              ": not a number: '" + std::string(s) + "'");
    return v;
}

struct Table {
    std::vector<std::string> header;
    Eigen::MatrixXd values;
};

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Numeric CSV with a header row. Rejects empty files, ragged rows and non-numbers.
inline Table read_csv(std::istream& in) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) break;
    }
    if (line.empty()) throw ValidationError("CSV is empty");
    for (auto f : split_commas(line)) t.header.emplace_back(f);

    std::vector<double> flat;
    std::size_t rows = 0;
    const std::size_t cols = t.header.size();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() != cols)
            throw ValidationError("line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(cols) + " fields, got " +
                                  std::to_string(fields.size()));
        for (std::size_t c = 0; c < cols; ++c) flat.push_back(parse_double(fields[c], lineno, c));
        ++rows;
    }
    if (rows == 0) throw ValidationError("CSV has a header but no data rows");
    t.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return t;
}

inline Table read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    return read_csv(in);
}

inline std::vector<std::string> default_header(Eigen::Index cols, const std::string& prefix = "x") {
    std::vector<std::string> h;
    for (Eigen::Index c = 0; c < cols; ++c) h.push_back(prefix + std::to_string(c));
    return h;
}

inline void write_csv(std::ostream& out, const Eigen::MatrixXd& values,
                      const std::vector<std::string>& header) {
    if (header.size() != static_cast<std::size_t>(values.cols()))
        throw ValidationError("CSV header does not match column count");
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            out << (c ? "," : "") << format_double(values(r, c));
        out << '\n';
    }
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << text;
}

inline void write_csv(const std::string& path, const Eigen::MatrixXd& values,
                      const std::vector<std::string>& header) {
    std::ostringstream ss;
    write_csv(ss, values, header);
    write_text(path, ss.str());
}

inline void write_csv(const std::string& path, const Eigen::MatrixXd& values) {
    write_csv(path, values, default_header(values.cols()));
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- matrices -------------------------------------------------------------

inline json to_json(const Eigen::MatrixXd& a) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ValidationError(std::string(what) + " has ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

// ---- spec and labels ------------------------------------------------------

inline json to_json(const NglfSpec& spec) {
    return {{"p", spec.p}, {"m", spec.m}, {"snr", spec.snr}, {"partition", spec.partition}};
}

inline NglfSpec spec_from_json(const json& j) {
    try {
        NglfSpec spec{j.at("p").get<int>(), j.at("m").get<int>(), j.at("snr").get<double>(),
                      j.at("partition").get<Labels>()};
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad spec: ") + e.what());
    }
}

/// labels.json holds {"labels": [...]} or a bare array.
inline Labels labels_from_json(const json& j) {
    try {
        if (j.is_array()) return j.get<Labels>();
        return j.at("labels").get<Labels>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad labels: ") + e.what());
    }
}

// ---- solver config, model, trace ------------------------------------------

inline json to_json(const SolverConfig& c) {
    return {{"m", c.m},
            {"anneal_schedule", c.anneal_schedule},
            {"max_iters_per_stage", c.max_iters_per_stage},
            {"rel_tol", c.rel_tol},
            {"armijo_c1", c.armijo_c1},
            {"ls_shrink", c.ls_shrink},
            {"r_clip", c.r_clip},
            {"min_alpha", c.min_alpha},
            {"seed", c.seed},
            {"init_scale", c.init_scale == InitScale::stddev ? "stddev" : "variance"}};
}

inline SolverConfig solver_config_from_json(const json& j) {
    SolverConfig c;
    try {
        c.m = j.at("m").get<int>();
        c.anneal_schedule = j.value("anneal_schedule", c.anneal_schedule);
        c.max_iters_per_stage = j.value("max_iters_per_stage", c.max_iters_per_stage);
        c.rel_tol = j.value("rel_tol", c.rel_tol);
        c.armijo_c1 = j.value("armijo_c1", c.armijo_c1);
        c.ls_shrink = j.value("ls_shrink", c.ls_shrink);
        c.r_clip = j.value("r_clip", c.r_clip);
        c.min_alpha = j.value("min_alpha", c.min_alpha);
        c.seed = j.value("seed", c.seed);
        c.init_scale = j.value("init_scale", std::string("stddev")) == "variance"
                           ? InitScale::variance
                           : InitScale::stddev;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad solver config: ") + e.what());
    }
    c.validate();
    return c;
}

inline json to_json(const FactorModel& model) {
    return {{"m", model.m()},
            {"p", model.p()},
            {"W", to_json(model.w)},
            {"R", to_json(model.moments.R)},
            {"z2", to_json(model.moments.z2)},
            {"means", to_json(model.means)},
            {"scales", to_json(model.scales)},
            {"config", to_json(model.config)},
            {"objective", model.objective}};
}

/// Rebuild a model from JSON. Moments that depend only on R (B, r) and z2 are
/// restored; the data-dependent Gram products are not stored and stay empty.
inline FactorModel model_from_json(const json& j) {
    FactorModel model;
    try {
        model.w = matrix_from_json(j.at("W"), "W");
        model.moments.R = matrix_from_json(j.at("R"), "R");
        model.moments.z2 = vector_from_json(j.at("z2"), "z2");
        model.means = vector_from_json(j.at("means"), "means");
        model.scales = vector_from_json(j.at("scales"), "scales");
        model.config = solver_config_from_json(j.at("config"));
        model.objective = j.at("objective").get<double>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad model: ") + e.what());
    }
    const Eigen::Index m = model.w.rows(), p = model.w.cols();
    if (model.moments.R.rows() != m || model.moments.R.cols() != p || model.moments.z2.size() != m ||
        model.means.size() != p || model.scales.size() != p)
        throw ValidationError("model fields have inconsistent shapes");
    auto& ms = model.moments;
    ms.B = ms.R.array() / (1.0 - ms.R.array().square());
    ms.r = (ms.R.array() * ms.B.array()).colwise().sum().transpose();
    return model;
}

inline void write_trace_csv(std::ostream& out, const FitTrace& trace) {
    out << "stage,eps,iter,objective,alpha,fallback\n";
    for (const auto& e : trace.entries)
        out << e.stage << ',' << format_double(e.eps) << ',' << e.iter << ','
            << format_double(e.objective) << ',' << format_double(e.alpha) << ','
            << (e.fallback ? 1 : 0) << '\n';
}

inline json to_json(const FitTrace& trace) {
    json stages = json::array();
    for (const auto& s : trace.stages)
        stages.push_back({{"eps", s.eps},
                          {"iterations", s.iterations},
                          {"converged", s.converged},
                          {"stalled", s.stalled},
                          {"objective", s.objective}});
    return stages;
}

// ---- covariance estimates --------------------------------------------------

inline json to_json(const CovarianceEstimate& est) {
    json j = {{"kind", to_string(est.kind)},
              {"p", est.p()},
              {"means", to_json(est.means)},
              {"scales", to_json(est.scales)}};
    if (est.factored()) {
        j["V"] = to_json(est.loadings);
        j["d"] = to_json(est.diag);
        j["clamped"] = est.clamped;
    } else {
        j["lambda"] = est.lambda;
    }
    return j;
}

}  // namespace nglf::io
