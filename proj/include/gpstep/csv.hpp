#pragma once

#include "gpstep/gp.hpp"
#include "gpstep/trajectory.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gpstep {
namespace csv {

// Shortest exact round-trip formatting; keeps rewritten files byte-identical.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Dataset file: header x1..xq,y1..yn, one sample per row. The noise level
// travels in the run manifest, not here.
inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  for (int j = 0; j < ds.input_dim(); ++j) f << (j ? "," : "") << "x" << (j + 1);
  for (int j = 0; j < ds.output_dim(); ++j) f << ",y" << (j + 1);
  f << "\n";
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.input_dim(); ++j) f << (j ? "," : "") << fmt(ds.inputs(i, j));
    for (int j = 0; j < ds.output_dim(); ++j) f << "," << fmt(ds.targets(i, j));
    f << "\n";
  }
}

inline Dataset read_dataset(const std::string& path, double noise_std) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("empty dataset file: " + path);
  const auto header = split_line(line);
  int q = 0, n = 0;
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x') ++q;
    else if (h.size() > 1 && h[0] == 'y') ++n;
    else throw ConfigError("unexpected dataset header cell '" + h + "' in " + path);
  }
  std::vector<double> values;
  int rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != q + n)
      throw ConfigError("bad column count at data row " + std::to_string(rows + 1) + " in " + path);
    for (const auto& c : cells) values.push_back(std::stod(c));
    ++rows;
  }
  Dataset ds;
  ds.noise_std = noise_std;
  ds.inputs.resize(rows, q);
  ds.targets.resize(rows, n);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < q; ++j) ds.inputs(i, j) = values[i * (q + n) + j];
    for (int j = 0; j < n; ++j) ds.targets(i, j) = values[i * (q + n) + q + j];
  }
  ds.validate();
  return ds;
}

// Trajectory file: t,x1..xdn,u1..un,uhat1..uhatn.
inline void write_trajectory(const std::string& path, const Trajectory& tr) {
  tr.validate();
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  const int d = tr.states.empty() ? 0 : static_cast<int>(tr.states[0].size());
  const int n = tr.inputs.empty() ? 0 : static_cast<int>(tr.inputs[0].size());
  f << "t";
  for (int j = 0; j < d; ++j) f << ",x" << (j + 1);
  for (int j = 0; j < n; ++j) f << ",u" << (j + 1);
  for (int j = 0; j < n; ++j) f << ",uhat" << (j + 1);
  f << "\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    f << fmt(tr.times[i]);
    for (int j = 0; j < d; ++j) f << "," << fmt(tr.states[i][j]);
    for (int j = 0; j < n; ++j) f << "," << fmt(tr.inputs[i][j]);
    for (int j = 0; j < n; ++j) f << "," << fmt(tr.u_hats[i][j]);
    f << "\n";
  }
}

// Verification series: t,closeness,bound,residual (residual is nan at the
// two boundary points where the centered difference is undefined).
inline void write_verification(const std::string& path, const std::vector<double>& times,
                               const std::vector<double>& closeness,
                               const std::vector<double>& bound,
                               const std::vector<double>& residual_interior) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  f << "t,closeness,bound,residual\n";
  for (std::size_t i = 0; i < times.size(); ++i) {
    f << fmt(times[i]) << "," << fmt(closeness[i]) << "," << fmt(bound[i]) << ",";
    if (i == 0 || i + 1 >= times.size())
      f << "nan";
    else
      f << fmt(residual_interior[i - 1]);
    f << "\n";
  }
}

}  // namespace csv
}  // namespace gpstep
