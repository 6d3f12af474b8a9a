#include "cdam/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cdam/error.hpp"

namespace cdam {

namespace {

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
        out.emplace_back(field);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string where(std::string_view source, std::size_t line) {
    return std::string(source) + ":" + std::to_string(line);
}

}  // namespace

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::size_t CsvTable::column(std::string_view name, std::string_view source) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    fail(Errc::parse, std::string(source) + ": missing column '" + std::string(name) + "'");
}

bool CsvTable::has_column(std::string_view name) const {
    for (const auto& h : header) {
        if (h == name) return true;
    }
    return false;
}

CsvTable parse_csv(std::string_view text, std::string_view source) {
    CsvTable table;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        auto fields = split_fields(line);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            fail(Errc::parse, where(source, line_no) + ": expected " + std::to_string(table.header.size()) +
                                  " fields, found " + std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
        table.lines.push_back(line_no);
    }
    if (!have_header) fail(Errc::parse, std::string(source) + ": empty CSV (no header line)");
    return table;
}

std::string format_csv(const CsvTable& table) {
    std::string out;
    auto emit = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out += ',';
            out += fields[i];
        }
        out += '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) emit(r);
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(Errc::io, "short write to '" + path.string() + "'");
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text_file(path), path.string()); }

void write_csv(const std::filesystem::path& path, const CsvTable& table) { write_text_file(path, format_csv(table)); }

double parse_number(std::string_view cell, std::string_view source, std::size_t line, std::string_view column) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        fail(Errc::parse, where(source, line) + ": column '" + std::string(column) + "' holds '" + std::string(cell) +
                              "', not a finite number");
    }
    return v;
}

std::string format_scoremap(const ScoreMap& map) {
    if (map.grid.rank() != 2) fail(Errc::shape_mismatch, "score map grid must be rank 2");
    std::string out = "row,col,score\n";
    for (std::size_t r = 0; r < map.grid.rows(); ++r) {
        for (std::size_t c = 0; c < map.grid.cols(); ++c) {
            out += std::to_string(r) + ',' + std::to_string(c) + ',' + format_number(map.grid(r, c)) + '\n';
        }
    }
    return out;
}

void write_scoremap(const std::filesystem::path& path, const ScoreMap& map) {
    write_text_file(path, format_scoremap(map));
}

ScoreMap parse_scoremap(std::string_view text, std::size_t rows, std::size_t cols, std::string_view source) {
    const CsvTable table = parse_csv(text, source);
    if (table.header != std::vector<std::string>{"row", "col", "score"}) {
        fail(Errc::parse, std::string(source) + ": header must be 'row,col,score'");
    }
    ScoreMap map;
    map.grid = Tensor({rows, cols});
    std::vector<bool> seen(rows * cols, false);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& f = table.rows[i];
        const std::size_t line = table.lines[i];
        const double r = parse_number(f[0], source, line, "row");
        const double c = parse_number(f[1], source, line, "col");
        const double s = parse_number(f[2], source, line, "score");
        if (r != std::floor(r) || c != std::floor(c)) {
            fail(Errc::parse, where(source, line) + ": row and col must be integers");
        }
        if (r < 0 || c < 0 || r >= static_cast<double>(rows) || c >= static_cast<double>(cols)) {
            fail(Errc::validation, where(source, line) + ": cell (" + f[0] + "," + f[1] + ") outside the " +
                                       std::to_string(rows) + "x" + std::to_string(cols) + " patch grid");
        }
        const auto idx = static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c);
        if (seen[idx]) fail(Errc::validation, where(source, line) + ": duplicate cell (" + f[0] + "," + f[1] + ")");
        seen[idx] = true;
        map.grid[idx] = s;
    }
    if (table.rows.size() != rows * cols) {
        fail(Errc::validation, std::string(source) + ": expected " + std::to_string(rows * cols) + " cells, found " +
                                   std::to_string(table.rows.size()));
    }
    return map;
}

ScoreMap read_scoremap(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
    return parse_scoremap(read_text_file(path), rows, cols, path.string());
}

CsvTable curve_table(const std::vector<CurveColumn>& columns) {
    if (columns.empty()) fail(Errc::invalid_argument, "curve needs at least one column");
    CsvTable t;
    const std::size_t n = columns.front().values.size();
    for (const auto& c : columns) {
        if (c.values.size() != n) fail(Errc::shape_mismatch, "curve column '" + c.name + "' has a different length");
        t.header.push_back(c.name);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> row;
        for (const auto& c : columns) row.push_back(format_number(c.values[i]));
        t.rows.push_back(std::move(row));
        t.lines.push_back(i + 2);
    }
    return t;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveColumn>& columns) {
    write_csv(path, curve_table(columns));
}

}  // namespace cdam
