#include "cmr/csv.hpp"

#include "cmr/error.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

namespace cmr {

std::size_t RawTable::find(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return j;
    return npos;
}

const std::vector<std::string>& RawTable::column(const std::string& name) const {
    std::size_t j = find(name);
    if (j == npos) throw ValidationError("missing column '" + name + "'");
    return columns[j];
}

namespace {

// Reads one logical record. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    if (in.peek() == std::char_traits<char>::eof()) return false;
    ++line;
    std::string field;
    bool quoted = false;
    bool field_was_quoted = false;
    for (;;) {
        int c = in.get();
        if (c == std::char_traits<char>::eof()) {
            if (quoted) throw ValidationError("unterminated quoted field at row " + std::to_string(line));
            fields.push_back(field);
            return true;
        }
        char ch = static_cast<char>(c);
        if (quoted) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get();
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"') {
            if (!field.empty() || field_was_quoted)
                throw ValidationError("malformed quote at row " + std::to_string(line));
            quoted = true;
            field_was_quoted = true;
        } else if (ch == ',') {
            fields.push_back(field);
            field.clear();
            field_was_quoted = false;
        } else if (ch == '\r') {
            if (in.peek() == '\n') in.get();
            fields.push_back(field);
            return true;
        } else if (ch == '\n') {
            fields.push_back(field);
            return true;
        } else {
            field.push_back(ch);
        }
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

} // namespace

RawTable parse_csv(std::istream& in) {
    RawTable table;
    std::vector<std::string> fields;
    std::size_t line = 0;
    // Skip a UTF-8 byte order mark.
    if (in.peek() == 0xEF) {
        char bom[3];
        in.read(bom, 3);
    }
    if (!read_record(in, fields, line) || (fields.size() == 1 && trim(fields[0]).empty()))
        throw ValidationError("CSV input has no header row");
    for (auto& f : fields) table.header.push_back(trim(f));
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (table.header[j].empty())
            throw ValidationError("empty column name in header at position " + std::to_string(j + 1));
        for (std::size_t k = 0; k < j; ++k)
            if (table.header[k] == table.header[j])
                throw ValidationError("duplicate column name '" + table.header[j] + "'");
    }
    table.columns.resize(table.header.size());
    while (read_record(in, fields, line)) {
        if (fields.size() == 1 && trim(fields[0]).empty()) continue;   // blank line
        if (fields.size() != table.header.size())
            throw ValidationError("malformed CSV row " + std::to_string(line) + ": expected " +
                                  std::to_string(table.header.size()) + " fields, found " +
                                  std::to_string(fields.size()));
        for (std::size_t j = 0; j < fields.size(); ++j) table.columns[j].push_back(trim(fields[j]));
    }
    return table;
}

RawTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    try {
        return parse_csv(in);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

} // namespace cmr
