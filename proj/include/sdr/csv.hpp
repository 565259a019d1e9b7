#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace sdr {

/// Parsed CSV: header plus rows of raw fields.
struct CsvTable
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::ptrdiff_t column(const std::string& name) const
    {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return static_cast<std::ptrdiff_t>(j);
        return -1;
    }
};

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
/// The first record is the header.
inline CsvTable read_csv(std::istream& in, const std::string& label = "csv")
{
    CsvTable t;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;
    char ch;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (record.size() == 1 && record[0].empty()) {
            record.clear();
            return;
        }
        if (t.header.empty()) {
            t.header = std::move(record);
        } else {
            if (record.size() != t.header.size())
                throw InvalidInput(label + ": line " + std::to_string(line) + " has "
                                   + std::to_string(record.size()) + " fields, header has "
                                   + std::to_string(t.header.size()));
            t.rows.push_back(std::move(record));
        }
        record.clear();
    };

    while (in.get(ch)) {
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && !field_started && field.empty()) {
            in_quotes = true;
            field_started = true;
        } else if (ch == ',') {
            end_field();
        } else if (ch == '\r') {
            if (in.peek() == '\n') continue;
            end_record();
            ++line;
        } else if (ch == '\n') {
            end_record();
            ++line;
        } else {
            field.push_back(ch);
            field_started = true;
        }
    }
    if (in_quotes) throw InvalidInput(label + ": unterminated quoted field");
    if (!field.empty() || !record.empty()) end_record();
    if (t.header.empty()) throw InvalidInput(label + ": missing header row");
    // strip a UTF-8 byte order mark
    if (t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
    return t;
}

inline CsvTable read_csv_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    return read_csv(in, path);
}

inline double parse_number(const std::string& s, const std::string& where)
{
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    double v = 0.0;
    const auto res = std::from_chars(s.data() + b, s.data() + e, v);
    if (b == e || res.ec != std::errc() || res.ptr != s.data() + e || !std::isfinite(v))
        throw InvalidInput(where + ": '" + s + "' is not a finite number");
    return v;
}

/// Numeric columns `names` of `t` as an n x |names| matrix.
inline Eigen::MatrixXd numeric_columns(const CsvTable& t, const std::vector<std::string>& names,
                                       const std::string& label = "csv")
{
    Eigen::MatrixXd M(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto c = t.column(names[j]);
        if (c < 0) throw InvalidInput(label + ": missing column '" + names[j] + "'");
        for (std::size_t i = 0; i < t.rows.size(); ++i)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_number(
                t.rows[i][static_cast<std::size_t>(c)],
                label + " row " + std::to_string(i + 1) + " column '" + names[j] + "'");
    }
    return M;
}

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Small row-oriented CSV writer.
class CsvWriter
{
public:
    explicit CsvWriter(std::ostream& out) : out_(out) {}

    CsvWriter& cell(const std::string& s)
    {
        sep();
        out_ << csv_escape(s);
        return *this;
    }
    CsvWriter& cell(double v)
    {
        sep();
        out_ << format_double(v);
        return *this;
    }
    CsvWriter& cell(std::size_t v)
    {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& cell(int v)
    {
        sep();
        out_ << v;
        return *this;
    }
    void end()
    {
        out_ << '\n';
        first_ = true;
    }

private:
    void sep()
    {
        if (!first_) out_ << ',';
        first_ = false;
    }

    std::ostream& out_;
    bool first_ = true;
};

} // namespace sdr
