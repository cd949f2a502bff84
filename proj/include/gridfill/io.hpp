#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"

namespace gridfill {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Dense matrix from CSV text: one row per line, comma-separated values,
/// lines starting with '#' (and blank lines) skipped. All rows must have the
/// same width.
inline Matrix read_matrix_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(field, &used));
        while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) {
          ++used;
        }
        if (used != field.size()) throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(lineno) + ": bad numeric field '" + field + "'");
      }
    }
    if (row.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty row");
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("line " + std::to_string(lineno) + ": ragged row (" +
                       std::to_string(row.size()) + " fields, expected " +
                       std::to_string(rows.front().size()) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("matrix CSV contains no data rows");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return m;
}

/// Dense matrix from JSON: {"n1": rows, "n2": cols, "data": [row-major]}.
inline Matrix read_matrix_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid matrix JSON: ") + e.what());
  }
  try {
    const Index n1 = doc.at("n1").get<Index>();
    const Index n2 = doc.at("n2").get<Index>();
    const auto& data = doc.at("data");
    if (n1 < 1 || n2 < 1 || static_cast<Index>(data.size()) != n1 * n2) {
      throw ParseError("matrix JSON: data length does not match n1*n2");
    }
    Matrix m(n1, n2);
    for (Index i = 0; i < n1; ++i) {
      for (Index j = 0; j < n2; ++j) {
        m(i, j) = data.at(static_cast<std::size_t>(i * n2 + j)).get<double>();
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("matrix JSON missing fields: ") + e.what());
  }
}

/// Load a matrix by extension: .json via the JSON format, anything else CSV.
inline Matrix load_matrix(const std::string& path) {
  const std::string text = read_file(path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") return read_matrix_json(text);
  return read_matrix_csv(text);
}

/// Observed entries from CSV rows "i,j,value" (0-based indices, '#' comments).
inline std::vector<EntryValue> read_observations_csv(const std::string& text) {
  const Matrix table = read_matrix_csv(text);
  if (table.cols() != 3) {
    throw ParseError("observations CSV must have exactly 3 columns: i,j,value");
  }
  std::vector<EntryValue> out;
  out.reserve(static_cast<std::size_t>(table.rows()));
  for (Index k = 0; k < table.rows(); ++k) {
    const double fi = table(k, 0), fj = table(k, 1);
    if (fi != std::floor(fi) || fj != std::floor(fj) || fi < 0 || fj < 0) {
      throw ParseError("observation row " + std::to_string(k) + ": indices must be "
                       "non-negative integers");
    }
    out.push_back({static_cast<Index>(fi), static_cast<Index>(fj), table(k, 2)});
  }
  return out;
}

inline std::vector<EntryValue> load_observations(const std::string& path) {
  return read_observations_csv(read_file(path));
}

/// Sparse constraints from JSON:
/// {"constraints": [{"terms": [{"row","col","weight"}], "rhs": number}]}.
inline std::vector<SparseConstraint> read_constraints_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid constraints JSON: ") + e.what());
  }
  try {
    std::vector<SparseConstraint> out;
    for (const auto& c : doc.at("constraints")) {
      SparseConstraint row;
      row.rhs = c.value("rhs", 0.0);
      for (const auto& t : c.at("terms")) {
        row.terms.push_back({t.at("row").get<Index>(), t.at("col").get<Index>(),
                             t.at("weight").get<double>()});
      }
      out.push_back(std::move(row));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("constraints JSON missing fields: ") + e.what());
  }
}

inline std::vector<SparseConstraint> load_constraints(const std::string& path) {
  return read_constraints_json(read_file(path));
}

/// Write a matrix as CSV with 17-significant-digit floats; `header_lines`
/// are emitted first, each prefixed with "# ".
inline void save_matrix_csv(const std::string& path, const Matrix& m,
                            const std::vector<std::string>& header_lines = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (const std::string& h : header_lines) out << "# " << h << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ",";
      out << format_double(m(i, j));
    }
    out << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

}  // namespace gridfill
