#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpad/core_types.hpp"
#include "gpad/detector.hpp"
#include "gpad/gp.hpp"
#include "gpad/residual.hpp"

namespace gpad::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// Shortest decimal form of x at 9 significant digits.
inline std::string fmt9(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

/// x rounded to 9 significant digits, for structured-text output.
inline double round9(double x) {
    if (!std::isfinite(x)) return x;
    return std::stod(fmt9(x));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << content;
    if (!out) throw FormatError("write failed for " + path.string());
}

inline void check_version(const Json& j, const std::string& source) {
    if (!j.contains("format_version")) throw FormatError(source + ": missing format_version");
    const int v = j.at("format_version").get<int>();
    if (v != kFormatVersion) {
        throw FormatError(source + ": unsupported format_version " + std::to_string(v) + " (expected " +
                          std::to_string(kFormatVersion) + ")");
    }
}

// ---------------------------------------------------------------------------
// Matrices

/// {"rows": r, "cols": c, "data": [row-major values]}. With `rounded` the
/// values are cut to 9 significant digits.
inline Json matrix_to_json(const Matrix& m, bool rounded = false) {
    Json data = Json::array();
    for (long i = 0; i < m.rows(); ++i) {
        for (long j = 0; j < m.cols(); ++j) data.push_back(rounded ? round9(m(i, j)) : m(i, j));
    }
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    try {
        const long r = j.at("rows").get<long>();
        const long c = j.at("cols").get<long>();
        const auto& data = j.at("data");
        if (r < 0 || c < 0 || static_cast<long>(data.size()) != r * c) {
            throw FormatError(what + ": data length does not match the declared shape");
        }
        Matrix m(r, c);
        for (long i = 0; i < r; ++i) {
            for (long k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)].get<double>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": " + e.what());
    }
}

inline Json vector_to_json(const Vector& v) {
    Json a = Json::array();
    for (long i = 0; i < v.size(); ++i) a.push_back(round9(v(i)));
    return a;
}

/// Whitespace- or comma-separated rows of numbers.
inline Matrix read_matrix_text(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<double>> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        for (char& ch : line) {
            if (ch == ',') ch = ' ';
        }
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + tok + "'");
            }
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(path.string() + ": empty matrix file");
    Matrix m(static_cast<long>(rows.size()), static_cast<long>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<long>(rows[i].size()) != m.cols()) {
            throw FormatError(path.string() + ": ragged matrix rows");
        }
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<long>(i), static_cast<long>(k)) = rows[i][k];
    }
    return m;
}

// ---------------------------------------------------------------------------
// Noise

inline Json noise_to_json(const NoiseSpec& n) {
    return Json{{"sigma_w", matrix_to_json(n.sigma_w())}, {"sigma_v", matrix_to_json(n.sigma_v())}};
}

inline NoiseSpec noise_from_json(const Json& j, const std::string& what) {
    if (!j.contains("sigma_w") || !j.contains("sigma_v")) throw FormatError(what + ": missing sigma_w/sigma_v");
    return NoiseSpec(matrix_from_json(j.at("sigma_w"), what + ".sigma_w"),
                     matrix_from_json(j.at("sigma_v"), what + ".sigma_v"));
}

/// A noise covariance argument: either a number s meaning s·I, or a path to a
/// matrix text file.
inline Matrix parse_covariance_arg(const std::string& arg, long n_x) {
    try {
        std::size_t used = 0;
        const double s = std::stod(arg, &used);
        if (used == arg.size()) return s * Matrix::Identity(n_x, n_x);
    } catch (const std::exception&) {
    }
    Matrix m = read_matrix_text(arg);
    if (m.rows() != n_x || m.cols() != n_x) {
        throw DimensionMismatch(arg + ": covariance must be " + std::to_string(n_x) + "x" + std::to_string(n_x));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Trajectories: CSV with header t,x1,...,xn; dt and noise live in a sidecar.

inline std::string trajectory_to_csv(const Trajectory& t) {
    std::string out = "t";
    for (long c = 0; c < t.dim(); ++c) out += ",x" + std::to_string(c + 1);
    out += "\n";
    for (long k = 0; k < t.size(); ++k) {
        out += fmt9(static_cast<double>(k) * t.dt());
        for (long c = 0; c < t.dim(); ++c) out += "," + fmt9(t.states()(k, c));
        out += "\n";
    }
    return out;
}

/// Parses a trajectory CSV. Without an explicit dt the interval is taken from
/// the first two entries of the t column.
inline Trajectory trajectory_from_csv(const std::string& text, std::optional<double> dt, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    long n_x = -1;
    std::vector<Vector> rows;
    std::vector<double> times;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        const std::string where = source + ":" + std::to_string(line_no);
        if (n_x < 0) {
            if (cells.size() < 2 || cells[0] != "t") {
                throw FormatError(where + ": expected header 't,x1,...,xn'");
            }
            for (std::size_t c = 1; c < cells.size(); ++c) {
                if (cells[c] != "x" + std::to_string(c)) {
                    throw FormatError(where + ": expected column 'x" + std::to_string(c) + "', got '" + cells[c] + "'");
                }
            }
            n_x = static_cast<long>(cells.size()) - 1;
            continue;
        }
        if (static_cast<long>(cells.size()) != n_x + 1) {
            throw FormatError(where + ": expected " + std::to_string(n_x + 1) + " columns, got " +
                              std::to_string(cells.size()));
        }
        Vector x(n_x);
        for (long c = -1; c < n_x; ++c) {
            const auto& s = cells[static_cast<std::size_t>(c + 1)];
            try {
                std::size_t used = 0;
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                if (c < 0) {
                    times.push_back(v);
                } else {
                    x(c) = v;
                }
            } catch (const std::exception&) {
                throw FormatError(where + ": not a number: '" + s + "'");
            }
        }
        rows.push_back(std::move(x));
    }
    if (n_x < 0) throw FormatError(source + ": empty trajectory file");
    if (!dt && times.size() >= 2) dt = times[1] - times[0];
    try {
        return Trajectory(rows, dt.value_or(0.0));
    } catch (const InvalidDataset& e) {
        throw FormatError(source + ": " + e.what());
    }
}

inline Trajectory read_trajectory(const std::filesystem::path& path, std::optional<double> dt = std::nullopt) {
    return trajectory_from_csv(read_file(path), dt, path.string());
}

/// Sidecar describing a set of trajectory files: sampling interval and noise.
struct Sidecar {
    double dt = 0.0;
    NoiseSpec noise;
    std::vector<std::string> files;
    Json extra;
};

inline Sidecar read_sidecar(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    check_version(j, path.string());
    try {
        Sidecar s{j.at("dt").get<double>(), noise_from_json(j.at("noise"), path.string() + ".noise"), {}, j};
        if (j.contains("files")) {
            for (const auto& f : j.at("files")) s.files.push_back(f.get<std::string>());
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// GP model persistence. chol and alpha are recomputed on load; the stored
// log marginal likelihood acts as a checksum.

inline Json model_to_json(const GpModel& m, const Json& config = Json::object()) {
    const RegressionData reg{m.x_train(), m.y_train()};
    const auto& h = m.hyper();
    return Json{{"format_version", kFormatVersion},
                {"kind", "gp_model"},
                {"n_x", m.dim()},
                {"hyper", {{"sigma_f", h.sigma_f}, {"length_scale", h.length_scale}, {"sigma_n_sq", h.sigma_n_sq}}},
                {"jitter", m.jitter()},
                {"lml", log_marginal_likelihood(reg, h)},
                {"x_train", matrix_to_json(m.x_train())},
                {"y_train", matrix_to_json(m.y_train())},
                {"config", config}};
}

inline GpModel model_from_json(const Json& j, const std::string& source) {
    check_version(j, source);
    try {
        if (j.at("kind").get<std::string>() != "gp_model") throw FormatError(source + ": not a gp_model document");
        const auto& hj = j.at("hyper");
        const KernelHyperparams h{hj.at("sigma_f").get<double>(), hj.at("length_scale").get<double>(),
                                  hj.at("sigma_n_sq").get<double>()};
        const RegressionData reg{matrix_from_json(j.at("x_train"), source + ".x_train"),
                                 matrix_from_json(j.at("y_train"), source + ".y_train")};
        if (reg.dim() != j.at("n_x").get<long>()) throw FormatError(source + ": n_x does not match x_train");
        GpModel m(reg, h);
        const double stored = j.at("lml").get<double>();
        const double recomputed = log_marginal_likelihood(reg, h);
        if (std::fabs(recomputed - stored) > 1e-8 * std::max(1.0, std::fabs(stored))) {
            throw FormatError(source + ": log marginal likelihood checksum mismatch (stored " + fmt9(stored) +
                              ", recomputed " + fmt9(recomputed) + ")");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": " + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const GpModel& m, const Json& config = Json::object()) {
    write_file(path, model_to_json(m, config).dump(2) + "\n");
}

inline GpModel load_model(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return model_from_json(j, path.string());
}

// ---------------------------------------------------------------------------
// Detection records

inline Json detection_to_json(const DetectionResult& r) {
    return Json{{"format_version", kFormatVersion},
                {"p_value", round9(r.p_value)},
                {"p_thr", round9(r.p_thr)},
                {"dof", r.dof},
                {"mahalanobis_sq", round9(r.mahalanobis_sq)},
                {"verdict", to_string(r.verdict)},
                {"steps_used", r.steps_used}};
}

inline Json residual_report_to_json(const ResidualReport& r) {
    Json jac = Json::array();
    for (const auto& j : r.jacobians) jac.push_back(matrix_to_json(j, true));
    return Json{{"format_version", kFormatVersion},
                {"eps", vector_to_json(r.eps)},
                {"whitened", vector_to_json(r.whitened)},
                {"sigma_t", matrix_to_json(r.sigma_t, true)},
                {"mahalanobis_sq", round9(r.mahalanobis_sq)},
                {"dof", r.dof},
                {"jitter", round9(r.jitter)},
                {"noise_var", vector_to_json(r.noise_var)},
                {"gp_var", vector_to_json(r.gp_var)},
                {"jacobians", std::move(jac)}};
}

}  // namespace gpad::io
