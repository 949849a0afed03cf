#include "usd/point_cloud_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace usd {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& field, const std::string& path, int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  while (end != nullptr && (*end == ' ' || *end == '\r' || *end == '\t')) ++end;
  if (end == begin || end == nullptr || *end != '\0')
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad number '" + field +
                             "'");
  return v;
}

}  // namespace

void save_point_cloud(const std::string& path, const WeightedParticles& p) {
  p.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_point_cloud: cannot open " + path);
  for (int a = 0; a < p.dim(); ++a) out << "x" << a << ",";
  out << "w\n";
  char buf[32];
  for (int i = 0; i < p.size(); ++i) {
    for (int a = 0; a < p.dim(); ++a) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.points(i, a));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", p.weights(i));
    out << buf << "\n";
  }
  if (!out) throw std::runtime_error("save_point_cloud: write failed for " + path);
}

WeightedParticles load_point_cloud(const std::string& path, bool* weights_defaulted) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_point_cloud: cannot open " + path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv(line);
  if (header.empty() || header[0] != "x0")
    throw std::runtime_error(path + ":1: header must start with x0");
  const bool has_w = header.back() == "w";
  const int dim = static_cast<int>(header.size()) - (has_w ? 1 : 0);
  if (dim < 1) throw std::runtime_error(path + ":1: no coordinate columns");
  for (int a = 0; a < dim; ++a)
    if (header[a] != "x" + std::to_string(a))
      throw std::runtime_error(path + ":1: unexpected column '" + header[a] + "'");

  std::vector<double> coords;
  std::vector<double> weights;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (static_cast<int>(fields.size()) != dim + (has_w ? 1 : 0))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(dim + (has_w ? 1 : 0)) + " fields, got " +
                               std::to_string(fields.size()));
    for (int a = 0; a < dim; ++a) coords.push_back(parse_double(fields[a], path, line_no));
    if (has_w) {
      const double w = parse_double(fields[dim], path, line_no);
      if (w < 0.0)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": negative weight");
      weights.push_back(w);
    }
  }
  const int n = static_cast<int>(has_w ? weights.size() : coords.size() / dim);
  if (n < 1) throw std::runtime_error(path + ": no data rows");

  WeightedParticles p;
  p.points.resize(n, dim);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < dim; ++a) p.points(i, a) = coords[static_cast<std::size_t>(i) * dim + a];
  if (has_w) {
    p.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), n);
    if (weights_defaulted != nullptr) *weights_defaulted = false;
  } else {
    p.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    if (weights_defaulted != nullptr) *weights_defaulted = true;
  }
  p.validate();
  return p;
}

}  // namespace usd
