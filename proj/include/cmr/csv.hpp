#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace cmr {

// A parsed CSV file stored column-major as raw strings. Row numbers in
// error messages are 1-based file lines (the header is line 1).
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> columns;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
    // Index of a named column, or npos.
    std::size_t find(const std::string& name) const;
    const std::vector<std::string>& column(const std::string& name) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

RawTable parse_csv(std::istream& in);
RawTable read_csv(const std::string& path);

// Quotes a field when it contains a delimiter, quote or newline.
std::string csv_escape(const std::string& field);

// Shortest form that reproduces the double exactly ("%.17g").
std::string format_double(double value);

} // namespace cmr
