#include <charconv>
#include <fstream>
#include <sstream>

#include "moem/harness.hpp"

namespace moem {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty() && item.back() == '\r') item.pop_back();
    out.push_back(item);
  }
  return out;
}

double to_double(const std::string& field, const std::filesystem::path& path, int line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw Error(ErrorCode::Validation, path.string() + ":" + std::to_string(line) + ": bad number '" + field + "'");
  return v;
}

// Header plus numeric rows of equal width.
std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Validation, path.string() + ": empty file");
  const auto header = split_fields(line);
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::Validation, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                             std::to_string(header.size()) + " fields");
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(to_double(f, path, lineno));
    rows.push_back(std::move(row));
  }
  return {header, rows};
}

}  // namespace

std::string dataset_csv(const DataSetd& data) {
  std::string out;
  for (Eigen::Index j = 0; j < data.d(); ++j) out += "x" + std::to_string(j + 1) + ",";
  out += data.latents ? "y,z\n" : "y\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.d(); ++j) out += format_double(data.features(i, j)) + ",";
    out += format_double(data.targets[i]);
    if (data.latents) out += "," + std::to_string((*data.latents)[i]);
    out += "\n";
  }
  return out;
}

DataSetd read_dataset_csv(const std::filesystem::path& path, const ModelKind& kind) {
  const auto [header, rows] = read_table(path);
  const bool has_z = !header.empty() && header.back() == "z";
  const Eigen::Index d = Eigen::Index(header.size()) - (has_z ? 2 : 1);
  if (d < 1 || header[std::size_t(d)] != "y")
    throw Error(ErrorCode::Validation, path.string() + ": header must be x1..xd,y[,z]");
  DataSetd data;
  data.features.resize(Eigen::Index(rows.size()), d);
  data.targets.resize(Eigen::Index(rows.size()));
  if (has_z) data.latents = Eigen::VectorXi(Eigen::Index(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.features(Eigen::Index(i), j) = rows[i][std::size_t(j)];
    data.targets[Eigen::Index(i)] = rows[i][std::size_t(d)];
    if (has_z) (*data.latents)[Eigen::Index(i)] = int(rows[i][std::size_t(d) + 1]);
  }
  check_dataset(data, kind);
  return data;
}

std::string theta_csv(const Thetad& theta) {
  std::string out;
  const Eigen::Index c = theta.gating.cols();
  for (Eigen::Index j = 0; j < c; ++j) out += "w" + std::to_string(j + 1) + ",";
  for (Eigen::Index j = 0; j < c; ++j) out += "beta" + std::to_string(j + 1) + (j + 1 < c ? "," : "\n");
  for (Eigen::Index i = 0; i < theta.dim(); ++i) {
    for (Eigen::Index j = 0; j < c; ++j) out += format_double(theta.gating(i, j)) + ",";
    for (Eigen::Index j = 0; j < c; ++j) out += format_double(theta.experts(i, j)) + (j + 1 < c ? "," : "\n");
  }
  return out;
}

Thetad read_theta_csv(const std::filesystem::path& path, const ModelKind& kind) {
  const auto [header, rows] = read_table(path);
  const Eigen::Index c = kind.columns();
  if (Eigen::Index(header.size()) != 2 * c)
    throw Error(ErrorCode::Validation, path.string() + ": expected " + std::to_string(2 * c) + " columns");
  Thetad theta(Eigen::MatrixXd(Eigen::Index(rows.size()), c), Eigen::MatrixXd(Eigen::Index(rows.size()), c));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      theta.gating(Eigen::Index(i), j) = rows[i][std::size_t(j)];
      theta.experts(Eigen::Index(i), j) = rows[i][std::size_t(c + j)];
    }
  check_theta(theta, theta.dim(), kind);
  return theta;
}

}  // namespace moem
