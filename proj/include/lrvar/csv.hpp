#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lrvar/common.hpp"

namespace lrvar {

/// 17 significant digits: round-trips 64-bit floats exactly.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void write_matrix_csv(const Matrix& m, const std::string& path,
                             const std::string& column_prefix = "c") {
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot open for writing: " + path);
    for (Index j = 0; j < m.cols(); ++j) {
        if (j > 0) f << ',';
        f << column_prefix << j;
    }
    f << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j > 0) f << ',';
            f << format_double(m(i, j));
        }
        f << '\n';
    }
    if (!f) throw IoFailure("write failed: " + path);
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoFailure("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoFailure("empty csv: " + path);
    const auto header = split_csv_line(line);
    const Index cols = static_cast<Index>(header.size());
    std::vector<double> data;
    Index rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (static_cast<Index>(cells.size()) != cols)
            throw IoFailure("ragged csv row in " + path);
        for (const auto& c : cells) data.push_back(std::stod(c));
        ++rows;
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = data[static_cast<std::size_t>(i * cols + j)];
    return m;
}

}  // namespace lrvar
