#pragma once

// Dataset utilities: seeded synthetic cluster generation, the per-cluster
// sketch-variance diagnostic, and loaders for the fvecs and CSV point
// formats.

#include <hqh/core.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hqh {

// ---------------------------------------------------------------------------
// Synthetic clusters
// ---------------------------------------------------------------------------

struct ClusterSpec {
  int n_clusters = 6;
  int points_per_cluster = 1000;
  int d = 960;
  double centroid_scale = 10.0;  // centroid coordinates uniform in [-scale, scale]
  double noise_sigma = 1.0;      // isotropic Gaussian noise around the centroid
  std::uint64_t seed = 0;
};

struct LabeledDataset {
  DataMatrix data;
  std::vector<int> labels;  // cluster index per column, 0-based
};

// Isotropic Gaussian blobs around uniformly drawn centroids. Sampling order
// is fixed (all centroids first, then points cluster by cluster), so a seed
// fully determines the dataset.
inline LabeledDataset generate_clusters(const ClusterSpec& spec) {
  if (spec.n_clusters < 1 || spec.points_per_cluster < 1 || spec.d < 1)
    throw std::invalid_argument("generate_clusters: counts must be positive");
  if (spec.centroid_scale < 0.0 || spec.noise_sigma < 0.0)
    throw std::invalid_argument("generate_clusters: scales must be non-negative");

  std::mt19937_64 rng(derive_seed(spec.seed, "clusters"));
  std::uniform_real_distribution<double> unif(-spec.centroid_scale,
                                              spec.centroid_scale);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix centroids(spec.d, spec.n_clusters);
  for (int k = 0; k < spec.n_clusters; ++k)
    for (int i = 0; i < spec.d; ++i) centroids(i, k) = unif(rng);

  const Index n = static_cast<Index>(spec.n_clusters) * spec.points_per_cluster;
  LabeledDataset out;
  out.data.values.resize(spec.d, n);
  out.labels.resize(n);
  Index col = 0;
  for (int k = 0; k < spec.n_clusters; ++k) {
    for (int p = 0; p < spec.points_per_cluster; ++p, ++col) {
      for (int i = 0; i < spec.d; ++i)
        out.data.values(i, col) = centroids(i, k) + spec.noise_sigma * gauss(rng);
      out.labels[col] = k;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sketch variance
// ---------------------------------------------------------------------------

// Average within-cluster variance of sketch bits, read as +-1 values: for
// each cluster and bit the variance is 1 - mean^2, averaged over bits and
// then over clusters. Zero means every cluster hashes to a single code.
inline double sketch_variance(const std::vector<BinaryCode>& codes,
                              const std::vector<int>& labels) {
  if (codes.empty()) throw std::invalid_argument("sketch_variance: no codes");
  if (codes.size() != labels.size())
    throw std::invalid_argument("sketch_variance: codes/labels size mismatch");
  const std::uint32_t c = codes.front().size();
  int n_clusters = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("sketch_variance: negative label");
    n_clusters = std::max(n_clusters, l + 1);
  }

  std::vector<std::vector<double>> bit_sums(n_clusters,
                                            std::vector<double>(c, 0.0));
  std::vector<std::int64_t> counts(n_clusters, 0);
  for (std::size_t idx = 0; idx < codes.size(); ++idx) {
    if (codes[idx].size() != c)
      throw std::invalid_argument("sketch_variance: mixed code lengths");
    auto& sums = bit_sums[labels[idx]];
    for (std::uint32_t k = 0; k < c; ++k) sums[k] += codes[idx].sign(k);
    ++counts[labels[idx]];
  }

  double total = 0.0;
  for (int g = 0; g < n_clusters; ++g) {
    if (counts[g] == 0)
      throw std::invalid_argument("sketch_variance: empty cluster " +
                                  std::to_string(g));
    double cluster = 0.0;
    for (std::uint32_t k = 0; k < c; ++k) {
      double mean = bit_sums[g][k] / static_cast<double>(counts[g]);
      cluster += 1.0 - mean * mean;
    }
    total += cluster / static_cast<double>(c);
  }
  return total / static_cast<double>(n_clusters);
}

// ---------------------------------------------------------------------------
// fvecs
// ---------------------------------------------------------------------------

// TexMex fvecs: each record is a little-endian i32 dimension followed by that
// many little-endian f32 components. All records must share one dimension.
inline DataMatrix load_fvecs(const std::string& path) {
  std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  std::vector<std::vector<float>> records;
  std::size_t off = 0;
  Index d = -1;
  while (off < bytes.size()) {
    if (off + 4 > bytes.size())
      throw std::runtime_error("fvecs '" + path + "': truncated header at byte " +
                               std::to_string(off));
    std::int32_t dim;
    std::memcpy(&dim, bytes.data() + off, 4);
    if (dim <= 0)
      throw std::runtime_error("fvecs '" + path + "': non-positive dimension " +
                               std::to_string(dim) + " at byte " +
                               std::to_string(off));
    if (d >= 0 && dim != d)
      throw std::runtime_error("fvecs '" + path + "': record " +
                               std::to_string(records.size()) + " has dimension " +
                               std::to_string(dim) + ", expected " +
                               std::to_string(d));
    d = dim;
    off += 4;
    if (off + 4 * static_cast<std::size_t>(dim) > bytes.size())
      throw std::runtime_error("fvecs '" + path + "': truncated record at byte " +
                               std::to_string(off));
    std::vector<float> rec(dim);
    std::memcpy(rec.data(), bytes.data() + off, 4 * static_cast<std::size_t>(dim));
    off += 4 * static_cast<std::size_t>(dim);
    records.push_back(std::move(rec));
  }

  Matrix values(std::max<Index>(d, 0), static_cast<Index>(records.size()));
  for (std::size_t j = 0; j < records.size(); ++j)
    for (Index i = 0; i < d; ++i)
      values(i, static_cast<Index>(j)) = static_cast<double>(records[j][i]);
  return DataMatrix(std::move(values));
}

inline void save_fvecs(const DataMatrix& X, const std::string& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(X.n()) * (4 + 4 * X.d()));
  for (Index j = 0; j < X.n(); ++j) {
    std::int32_t dim = static_cast<std::int32_t>(X.d());
    std::uint8_t buf[4];
    std::memcpy(buf, &dim, 4);
    bytes.insert(bytes.end(), buf, buf + 4);
    for (Index i = 0; i < X.d(); ++i) {
      float v = static_cast<float>(X.values(i, j));
      std::memcpy(buf, &v, 4);
      bytes.insert(bytes.end(), buf, buf + 4);
    }
  }
  detail::write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Numeric CSV, one point per row. Rows must be rectangular; parse failures
// report 1-based line and column.
inline DataMatrix load_csv(const std::string& path, bool has_header = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  Index width = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && has_header) continue;
    if (line.empty()) continue;

    std::vector<double> row;
    std::size_t pos = 0;
    std::size_t col = 0;
    while (true) {
      ++col;
      std::size_t comma = line.find(',', pos);
      std::string field = line.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      // Trim surrounding spaces; from_chars wants a bare number.
      std::size_t b = field.find_first_not_of(" \t");
      std::size_t e = field.find_last_not_of(" \t");
      if (b == std::string::npos)
        throw std::runtime_error("csv '" + path + "' line " +
                                 std::to_string(line_no) + ", column " +
                                 std::to_string(col) + ": empty field");
      field = field.substr(b, e - b + 1);
      double value;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(),
                                       value);
      if (ec != std::errc{} || ptr != field.data() + field.size())
        throw std::runtime_error("csv '" + path + "' line " +
                                 std::to_string(line_no) + ", column " +
                                 std::to_string(col) + ": not a number: '" +
                                 field + "'");
      row.push_back(value);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }

    if (width >= 0 && static_cast<Index>(row.size()) != width)
      throw std::runtime_error("csv '" + path + "' line " +
                               std::to_string(line_no) + ": expected " +
                               std::to_string(width) + " fields, got " +
                               std::to_string(row.size()));
    width = static_cast<Index>(row.size());
    rows.push_back(std::move(row));
  }

  Matrix values(std::max<Index>(width, 0), static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (Index i = 0; i < width; ++i)
      values(i, static_cast<Index>(j)) = rows[j][i];
  return DataMatrix(std::move(values));
}

inline void save_csv(const DataMatrix& X, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.precision(17);
  for (Index j = 0; j < X.n(); ++j) {
    for (Index i = 0; i < X.d(); ++i) {
      if (i) out << ',';
      out << X.values(i, j);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace hqh
