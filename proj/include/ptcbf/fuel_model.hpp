#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ptcbf/errors.hpp"

namespace ptcbf {

/// Rectangular engine fuel map, bilinear interpolation, clamped at the edges.
struct FuelTable {
    std::vector<double> speeds_rpm;   // ascending
    std::vector<double> torques_nm;   // ascending
    std::vector<double> rates_g_s;    // row-major: speed index outer, torque index inner

    double at(std::size_t i_speed, std::size_t j_torque) const {
        return rates_g_s[i_speed * torques_nm.size() + j_torque];
    }

    double interpolate(double rpm, double torque_nm) const {
        auto bracket = [](const std::vector<double>& axis, double x, std::size_t& lo, double& t) {
            if (axis.size() == 1 || x <= axis.front()) {
                lo = 0;
                t = 0.0;
                return;
            }
            if (x >= axis.back()) {
                lo = axis.size() - 2;
                t = 1.0;
                return;
            }
            auto it = std::upper_bound(axis.begin(), axis.end(), x);
            lo = static_cast<std::size_t>(it - axis.begin()) - 1;
            t = (x - axis[lo]) / (axis[lo + 1] - axis[lo]);
        };
        std::size_t i = 0, j = 0;
        double ti = 0.0, tj = 0.0;
        bracket(speeds_rpm, rpm, i, ti);
        bracket(torques_nm, torque_nm, j, tj);
        const std::size_t i1 = std::min(i + 1, speeds_rpm.size() - 1);
        const std::size_t j1 = std::min(j + 1, torques_nm.size() - 1);
        const double r00 = at(i, j), r01 = at(i, j1), r10 = at(i1, j), r11 = at(i1, j1);
        return (1 - ti) * ((1 - tj) * r00 + tj * r01) + ti * ((1 - tj) * r10 + tj * r11);
    }
};

enum class FuelModelKind { synthetic_willans, tabulated };

/// Engine fuel rate as a function of the operating point.
///
/// The synthetic model is a Willans line:
///   rate = idle + power_coeff * P_e[kW] + speed_coeff * (engine rev/s) / 1000
/// for positive engine power, and the idle rate otherwise.
struct FuelModel {
    FuelModelKind kind = FuelModelKind::synthetic_willans;
    double idle_rate_g_s = 0.4;
    double power_coeff_g_per_kJ = 0.05;
    double speed_coeff_g_per_krev = 12.0;
    FuelTable table;

    double rate_g_s(double engine_speed_rpm, double engine_torque_nm) const {
        const double omega = engine_speed_rpm * 2.0 * M_PI / 60.0;
        const double power_kw = engine_torque_nm * omega / 1000.0;
        if (!(power_kw > 0.0)) return idle_rate_g_s;
        double rate = 0.0;
        if (kind == FuelModelKind::tabulated) {
            rate = table.interpolate(engine_speed_rpm, engine_torque_nm);
        } else {
            rate = idle_rate_g_s + power_coeff_g_per_kJ * power_kw +
                   speed_coeff_g_per_krev * engine_speed_rpm / 60.0 / 1000.0;
        }
        return std::max(rate, idle_rate_g_s);
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError(path, "line " + std::to_string(line_no) + ": not a number: '" + s + "'");
    }
}

} // namespace detail

/// Parses a fuel map CSV with header `engine_speed_rpm,engine_torque_nm,fuel_rate_g_s`.
/// Rows must form a rectangular grid sorted by speed then torque, both ascending.
inline FuelTable parse_fuel_table(std::istream& in, const std::string& path = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw IoError(path, "empty fuel map");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "engine_speed_rpm,engine_torque_nm,fuel_rate_g_s")
        throw IoError(path, "unexpected header '" + line + "'");

    std::vector<double> speeds, torques, rates;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 3) throw IoError(path, "line " + std::to_string(line_no) + ": expected 3 columns");
        speeds.push_back(detail::parse_double(cells[0], path, line_no));
        torques.push_back(detail::parse_double(cells[1], path, line_no));
        rates.push_back(detail::parse_double(cells[2], path, line_no));
    }
    if (rates.empty()) throw IoError(path, "fuel map has no rows");

    FuelTable t;
    for (std::size_t k = 0; k < speeds.size(); ++k) {
        if (t.speeds_rpm.empty() || speeds[k] != t.speeds_rpm.back()) {
            if (!t.speeds_rpm.empty() && speeds[k] < t.speeds_rpm.back())
                throw IoError(path, "engine speeds not ascending");
            t.speeds_rpm.push_back(speeds[k]);
        }
    }
    const std::size_t n_torque = rates.size() / t.speeds_rpm.size();
    if (n_torque * t.speeds_rpm.size() != rates.size()) throw IoError(path, "fuel map grid is not rectangular");
    for (std::size_t j = 0; j < n_torque; ++j) t.torques_nm.push_back(torques[j]);
    for (std::size_t j = 1; j < n_torque; ++j)
        if (!(t.torques_nm[j] > t.torques_nm[j - 1])) throw IoError(path, "engine torques not strictly ascending");
    for (std::size_t i = 0; i < t.speeds_rpm.size(); ++i) {
        for (std::size_t j = 0; j < n_torque; ++j) {
            const std::size_t k = i * n_torque + j;
            if (speeds[k] != t.speeds_rpm[i] || torques[k] != t.torques_nm[j])
                throw IoError(path, "fuel map grid is not rectangular at row " + std::to_string(k + 2));
        }
    }
    t.rates_g_s = std::move(rates);
    return t;
}

inline FuelTable load_fuel_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open fuel map");
    return parse_fuel_table(in, path);
}

} // namespace ptcbf
