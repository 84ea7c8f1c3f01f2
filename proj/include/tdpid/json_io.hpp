#pragma once

// JSON configs for plants and controllers, result JSON and history CSV.
//
// plant:      {"A0": [[..]], "B": [[..]], "C": [[..]], "tau0": 0.2,
//              "delays": [{"tau": 1.0, "A": [[..]]}], "description": ".."}
// controller: {"Kp": [[..]], "Ki": [[..]], "Kd": [[..]], "T": 0.1,
//              "feedback": "positive" | "negative", "description": ".."}

#include "tdpid/optimize.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <set>
#include <string>

namespace tdpid {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what) {
    if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) throw ValidationError(what + ": unknown key \"" + key + "\"");
}

inline double number_from_json(const Json& j, const std::string& what) {
    if (!j.is_number()) throw ValidationError(what + " must be a number");
    return j.get<double>();
}

}  // namespace detail

/// Matrix from a list of rows; a bare number is a 1x1 matrix.
inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty()) throw ValidationError(what + " must be a non-empty list of rows");
    const auto rows = j.size();
    if (!j[0].is_array() || j[0].empty()) throw ValidationError(what + " must be a non-empty list of rows");
    const auto cols = j[0].size();
    Matrix M(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw ValidationError(what + ": ragged rows");
        for (std::size_t c = 0; c < cols; ++c) M(r, c) = detail::number_from_json(j[r][c], what);
    }
    return M;
}

inline Json matrix_to_json(const Matrix& M) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline DelaySystem system_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"A0", "B", "C", "tau0", "delays", "description"}, "system");
    for (const char* key : {"A0", "B", "C"})
        if (!j.contains(key)) throw ValidationError(std::string("system: missing key \"") + key + "\"");
    DelaySystem sys;
    sys.A0 = matrix_from_json(j["A0"], "A0");
    sys.B = matrix_from_json(j["B"], "B");
    sys.C = matrix_from_json(j["C"], "C");
    sys.tau0 = j.contains("tau0") ? detail::number_from_json(j["tau0"], "tau0") : 0.0;
    if (j.contains("delays")) {
        if (!j["delays"].is_array()) throw ValidationError("delays must be a list");
        for (const auto& d : j["delays"]) {
            detail::reject_unknown_keys(d, {"tau", "A"}, "delay term");
            if (!d.contains("tau") || !d.contains("A")) throw ValidationError("delay term needs \"tau\" and \"A\"");
            sys.state_terms.push_back({detail::number_from_json(d["tau"], "tau"), matrix_from_json(d["A"], "A_k")});
        }
    }
    const auto report = validate_system(sys);
    if (!report.ok()) throw ValidationError(report.summary());
    return sys;
}

inline Json system_to_json(const DelaySystem& sys) {
    Json j{{"A0", matrix_to_json(sys.A0)}, {"B", matrix_to_json(sys.B)}, {"C", matrix_to_json(sys.C)}, {"tau0", sys.tau0}};
    if (!sys.state_terms.empty()) {
        Json d = Json::array();
        for (const auto& t : sys.state_terms) d.push_back({{"tau", t.tau}, {"A", matrix_to_json(t.A)}});
        j["delays"] = d;
    }
    return j;
}

/// Gains are read as written; "feedback": "negative" means u = -K y and is stored negated.
inline PIDFilterController controller_from_json(const Json& j, const DelaySystem* sys = nullptr) {
    detail::reject_unknown_keys(j, {"Kp", "Ki", "Kd", "T", "feedback", "description"}, "controller");
    for (const char* key : {"Kp", "Kd", "T"})
        if (!j.contains(key)) throw ValidationError(std::string("controller: missing key \"") + key + "\"");
    PIDFilterController ctl;
    ctl.Kp = matrix_from_json(j["Kp"], "Kp");
    ctl.Kd = matrix_from_json(j["Kd"], "Kd");
    ctl.Ki = j.contains("Ki") ? matrix_from_json(j["Ki"], "Ki") : Matrix::Zero(ctl.Kp.rows(), ctl.Kp.cols());
    ctl.T = detail::number_from_json(j["T"], "T");
    if (j.contains("feedback")) {
        const auto& fb = j["feedback"];
        if (!fb.is_string() || (fb != "positive" && fb != "negative"))
            throw ValidationError("feedback must be \"positive\" or \"negative\"");
        if (fb == "negative") ctl = PIDFilterController::negative_feedback(ctl.Kp, ctl.Ki, ctl.Kd, ctl.T);
    }
    if (sys) {
        const auto report = validate_controller(*sys, ctl);
        if (!report.ok()) throw ValidationError(report.summary());
    }
    return ctl;
}

inline Json controller_to_json(const PIDFilterController& ctl) {
    return {{"Kp", matrix_to_json(ctl.Kp)}, {"Ki", matrix_to_json(ctl.Ki)}, {"Kd", matrix_to_json(ctl.Kd)},
            {"T", ctl.T}, {"feedback", "positive"}};
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline DelaySystem load_system(const std::filesystem::path& path) {
    try {
        return system_from_json(read_json_file(path));
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        if (msg.find(path.string()) != std::string::npos) throw;
        throw ValidationError(path.string() + ": " + msg);
    }
}

inline PIDFilterController load_controller(const std::filesystem::path& path, const DelaySystem* sys = nullptr) {
    try {
        return controller_from_json(read_json_file(path), sys);
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        if (msg.find(path.string()) != std::string::npos) throw;
        throw ValidationError(path.string() + ": " + msg);
    }
}

inline Json result_to_json(const OptimizationResult& r) {
    return {{"gains", {{"Kp", matrix_to_json(r.params.Kp)}, {"Ki", matrix_to_json(r.params.Ki)}, {"Kd", matrix_to_json(r.params.Kd)}}},
            {"T", r.params.T},
            {"rho", r.rho},
            {"initial_rho", r.initial_rho},
            {"objective", r.objective},
            {"alpha", r.alpha},
            {"status", to_string(r.status)},
            {"iterations", r.iterations},
            {"evaluations", r.evaluations},
            {"grad_norm", r.grad_norm_final},
            {"sampling_certificate", r.sampling_certificate},
            {"projected", r.projected}};
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryEntry>& history) {
    const auto old = os.precision(17);
    os << "iteration,objective\n";
    for (const auto& h : history) os << h.iteration << ',' << h.objective << '\n';
    os.precision(old);
}

}  // namespace tdpid
