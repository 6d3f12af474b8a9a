#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cdam/estimators.hpp"

namespace cdam {

// Shortest-safe decimal for a double: 17 significant digits, so every value
// written reads back bit-identically.
std::string format_number(double v);

// A CSV file: one header line plus rows of raw cells. `lines[i]` is the
// 1-based line number of rows[i] in the source, for error messages.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;

    // Index of `name` in the header, or Errc::parse naming `source`.
    std::size_t column(std::string_view name, std::string_view source = "csv") const;
    bool has_column(std::string_view name) const;
};

// Plain comma-separated values without quoting; blank lines are skipped.
// Errc::parse names the line when a row has the wrong number of fields.
CsvTable parse_csv(std::string_view text, std::string_view source);
std::string format_csv(const CsvTable& table);

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// Errc::parse naming source, line and column when `cell` is not a finite number.
double parse_number(std::string_view cell, std::string_view source, std::size_t line, std::string_view column);

// "row,col,score", one line per patch token in row-major order.
std::string format_scoremap(const ScoreMap& map);
void write_scoremap(const std::filesystem::path& path, const ScoreMap& map);

// Parses a score-map CSV for a rows x cols patch grid. Each cell must appear
// exactly once, in any order. Errc::parse for malformed rows (with line),
// Errc::validation for out-of-range indices, duplicates or missing cells.
// The returned map has no token_scores.
ScoreMap parse_scoremap(std::string_view text, std::size_t rows, std::size_t cols, std::string_view source);
ScoreMap read_scoremap(const std::filesystem::path& path, std::size_t rows, std::size_t cols);

// Writes x plus one column per series; every series must match x in length.
struct CurveColumn {
    std::string name;
    std::vector<double> values;
};
CsvTable curve_table(const std::vector<CurveColumn>& columns);
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveColumn>& columns);

}  // namespace cdam
