#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uqe/dataset.hpp"
#include "uqe/errors.hpp"

namespace uqe {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no,
                           const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), ErrorKind::invalid_input, "");
    return v;
  } catch (...) {
    throw_error(ErrorKind::invalid_input,
                "csv: cannot parse value '" + s + "' in column " + col +
                    " at line " + std::to_string(line_no));
  }
}

}  // namespace io_detail

// Header-based CSV: required columns y, d, z1; optional z2..zK and x1..xM in
// any order. Unknown or duplicated headers are rejected; malformed rows name
// their line number.
inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::invalid_input, "csv: cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::invalid_input,
          "csv: " + path + " is empty (missing header)");
  const auto header = io_detail::split_csv_line(line);

  int y_col = -1, d_col = -1;
  std::map<int, int> z_cols, x_cols;  // index (1-based in name) -> column
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& name = header[j];
    auto set_unique = [&](int& slot) {
      require(slot < 0, ErrorKind::invalid_input,
              "csv: duplicate column '" + name + "'");
      slot = static_cast<int>(j);
    };
    if (name == "y") {
      set_unique(y_col);
    } else if (name == "d") {
      set_unique(d_col);
    } else if (name.size() > 1 && (name[0] == 'z' || name[0] == 'x')) {
      int idx = 0;
      try {
        std::size_t pos = 0;
        idx = std::stoi(name.substr(1), &pos);
        require(pos + 1 == name.size() && idx >= 1, ErrorKind::invalid_input,
                "");
      } catch (...) {
        throw_error(ErrorKind::invalid_input,
                    "csv: unknown column '" + name + "'");
      }
      auto& cols = (name[0] == 'z') ? z_cols : x_cols;
      require(cols.find(idx) == cols.end(), ErrorKind::invalid_input,
              "csv: duplicate column '" + name + "'");
      cols[idx] = static_cast<int>(j);
    } else {
      throw_error(ErrorKind::invalid_input,
                  "csv: unknown column '" + name + "'");
    }
  }
  require(y_col >= 0 && d_col >= 0, ErrorKind::invalid_input,
          "csv: required columns y and d missing");
  require(z_cols.count(1) == 1, ErrorKind::invalid_input,
          "csv: required column z1 missing");
  auto contiguous = [](const std::map<int, int>& cols, const char* what) {
    int expect = 1;
    for (const auto& [idx, _] : cols) {
      require(idx == expect, ErrorKind::invalid_input,
              std::string("csv: ") + what + " columns must be numbered " +
                  "contiguously from 1");
      ++expect;
    }
  };
  contiguous(z_cols, "z");
  contiguous(x_cols, "x");

  std::vector<double> ys, ds;
  std::vector<std::vector<double>> zs(z_cols.size()), xs(x_cols.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = io_detail::split_csv_line(line);
    require(fields.size() == header.size(), ErrorKind::invalid_input,
            "csv: line " + std::to_string(line_no) + " has " +
                std::to_string(fields.size()) + " fields, expected " +
                std::to_string(header.size()));
    ys.push_back(io_detail::parse_double(fields[y_col], line_no, "y"));
    const double dv = io_detail::parse_double(fields[d_col], line_no, "d");
    require(dv == 0.0 || dv == 1.0, ErrorKind::invalid_input,
            "csv: d must be 0 or 1 at line " + std::to_string(line_no));
    ds.push_back(dv);
    for (const auto& [idx, col] : z_cols) {
      zs[idx - 1].push_back(
          io_detail::parse_double(fields[col], line_no, "z" + std::to_string(idx)));
    }
    for (const auto& [idx, col] : x_cols) {
      xs[idx - 1].push_back(
          io_detail::parse_double(fields[col], line_no, "x" + std::to_string(idx)));
    }
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  require(n >= 1, ErrorKind::invalid_input, "csv: no data rows in " + path);

  Dataset data;
  data.y = Eigen::Map<VectorXd>(ys.data(), n);
  data.d = Eigen::Map<VectorXd>(ds.data(), n);
  data.z.resize(n, static_cast<Eigen::Index>(zs.size()));
  for (std::size_t j = 0; j < zs.size(); ++j) {
    data.z.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<VectorXd>(zs[j].data(), n);
  }
  data.x.resize(n, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t j = 0; j < xs.size(); ++j) {
    data.x.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<VectorXd>(xs[j].data(), n);
  }
  data.validate();
  return data;
}

inline void write_dataset_csv(const Dataset& data, std::ostream& os) {
  os << "y,d";
  for (Eigen::Index j = 0; j < data.dim_z(); ++j) os << ",z" << (j + 1);
  for (Eigen::Index j = 0; j < data.dim_x(); ++j) os << ",x" << (j + 1);
  os << "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    os << format_double(data.y[i]) << ',' << (data.d[i] == 1.0 ? 1 : 0);
    for (Eigen::Index j = 0; j < data.dim_z(); ++j) {
      os << ',' << format_double(data.z(i, j));
    }
    for (Eigen::Index j = 0; j < data.dim_x(); ++j) {
      os << ',' << format_double(data.x(i, j));
    }
    os << "\n";
  }
}

// Minimal CSV table writer: header names plus rows of doubles.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void write(std::ostream& os) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      os << (j ? "," : "") << header[j];
    }
    os << "\n";
    for (const auto& row : rows) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        os << (j ? "," : "") << format_double(row[j]);
      }
      os << "\n";
    }
  }
};

}  // namespace uqe
