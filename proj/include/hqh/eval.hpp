#pragma once

// Retrieval evaluation: threshold-based neighbor ground truth in the input
// space, Hamming ranking of binary sketches, mean average precision, and the
// seeded batch/online experiment drivers.

#include <hqh/core.hpp>
#include <hqh/hashing.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hqh {

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct GroundTruth {
  double threshold = 0.0;
  Index n_train = 0;
  std::vector<std::vector<Index>> neighbor_sets;  // ascending train indices
};

namespace detail {

// Squared Euclidean distances between the columns of A (m of them) and the
// columns of B (n of them), computed blockwise with the Gram expansion.
// Negative roundoff is clamped to zero.
inline Matrix squared_distances(const Matrix& A, const Matrix& B) {
  Vector a2 = A.colwise().squaredNorm();
  Vector b2 = B.colwise().squaredNorm();
  Matrix D(A.cols(), B.cols());
  const Index block = 512;
  for (Index start = 0; start < A.cols(); start += block) {
    Index count = std::min(block, A.cols() - start);
    Matrix G = A.middleCols(start, count).transpose() * B;  // count x n
    for (Index r = 0; r < count; ++r)
      for (Index j = 0; j < B.cols(); ++j)
        D(start + r, j) = std::max(0.0, a2[start + r] + b2[j] - 2.0 * G(r, j));
  }
  return D;
}

}  // namespace detail

// Neighborhood radius: the distance to the k-th nearest other training
// point, k = round(frac * n) clamped into [1, n-1], averaged over all
// training points.
inline double neighbor_threshold(const DataMatrix& train, double frac) {
  const Index n = train.n();
  if (n < 2) throw std::invalid_argument("neighbor_threshold: need n >= 2");
  if (!(frac > 0.0 && frac < 1.0))
    throw std::invalid_argument("neighbor_threshold: frac must be in (0, 1)");
  const Index k = std::clamp<Index>(
      static_cast<Index>(std::llround(frac * static_cast<double>(n))), 1, n - 1);

  Vector norms2 = train.values.colwise().squaredNorm();
  double total = 0.0;
  const Index block = 512;
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Index start = 0; start < n; start += block) {
    Index count = std::min(block, n - start);
    Matrix G = train.values.middleCols(start, count).transpose() * train.values;
    for (Index r = 0; r < count; ++r) {
      for (Index j = 0; j < n; ++j)
        row[static_cast<std::size_t>(j)] =
            std::max(0.0, norms2[start + r] + norms2[j] - 2.0 * G(r, j));
      row[static_cast<std::size_t>(start + r)] =
          std::numeric_limits<double>::infinity();  // exclude self
      std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
      total += std::sqrt(row[static_cast<std::size_t>(k - 1)]);
    }
  }
  return total / static_cast<double>(n);
}

// Variant averaging the k-th nearest-training-point distance over a query
// set instead of over the training points themselves.
inline double neighbor_threshold(const DataMatrix& train, const DataMatrix& queries,
                                 double frac) {
  const Index n = train.n();
  if (n < 1 || queries.n() < 1)
    throw std::invalid_argument("neighbor_threshold: empty input");
  if (queries.d() != train.d())
    throw std::invalid_argument("neighbor_threshold: dimension mismatch");
  if (!(frac > 0.0 && frac < 1.0))
    throw std::invalid_argument("neighbor_threshold: frac must be in (0, 1)");
  const Index k = std::clamp<Index>(
      static_cast<Index>(std::llround(frac * static_cast<double>(n))), 1, n);

  Matrix D = detail::squared_distances(queries.values, train.values);
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Index q = 0; q < queries.n(); ++q) {
    for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = D(q, j);
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    total += std::sqrt(row[static_cast<std::size_t>(k - 1)]);
  }
  return total / static_cast<double>(queries.n());
}

inline GroundTruth build_ground_truth(const DataMatrix& train,
                                      const DataMatrix& queries,
                                      double threshold) {
  if (train.n() < 1 || queries.n() < 1)
    throw std::invalid_argument("build_ground_truth: empty input");
  if (queries.d() != train.d())
    throw std::invalid_argument("build_ground_truth: dimension mismatch");
  if (!(threshold >= 0.0) || !std::isfinite(threshold))
    throw std::invalid_argument("build_ground_truth: bad threshold");

  GroundTruth gt;
  gt.threshold = threshold;
  gt.n_train = train.n();
  gt.neighbor_sets.resize(static_cast<std::size_t>(queries.n()));
  const double t2 = threshold * threshold;
  const Index block = 512;
  for (Index start = 0; start < queries.n(); start += block) {
    Index count = std::min(block, queries.n() - start);
    Matrix D = detail::squared_distances(
        Matrix(queries.values.middleCols(start, count)), train.values);
    for (Index r = 0; r < count; ++r) {
      auto& set = gt.neighbor_sets[static_cast<std::size_t>(start + r)];
      for (Index j = 0; j < train.n(); ++j)
        if (D(r, j) <= t2) set.push_back(j);
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Ranking and MAP
// ---------------------------------------------------------------------------

// Train indices ordered by ascending Hamming distance to the query code,
// ties broken by ascending index (bucket sort over the c+1 possible
// distances, so the order is total and deterministic).
inline std::vector<Index> rank_by_hamming(const BinaryCode& query,
                                          const std::vector<BinaryCode>& train) {
  if (train.empty()) throw std::invalid_argument("rank_by_hamming: no codes");
  std::vector<std::vector<Index>> buckets(query.size() + 1);
  for (std::size_t j = 0; j < train.size(); ++j)
    buckets[static_cast<std::size_t>(hamming(query, train[j]))].push_back(
        static_cast<Index>(j));
  std::vector<Index> order;
  order.reserve(train.size());
  for (auto& b : buckets) order.insert(order.end(), b.begin(), b.end());
  return order;
}

struct MapResult {
  double map = 0.0;
  Index scored = 0;    // queries entering the mean
  Index excluded = 0;  // queries dropped for having no true neighbors
};

// Mean average precision at cutoff k against threshold ground truth. Each
// query's AP normalizes by min(|neighbors|, k); queries without neighbors
// are excluded from the mean, and having no scorable query at all is an
// error rather than a silent zero.
inline MapResult map_at_k(const std::vector<std::vector<Index>>& rankings,
                          const GroundTruth& gt, Index k) {
  if (rankings.size() != gt.neighbor_sets.size())
    throw std::invalid_argument("map_at_k: rankings/ground truth size mismatch");
  if (k < 1) throw std::invalid_argument("map_at_k: need k >= 1");

  MapResult res;
  double sum = 0.0;
  std::vector<char> is_neighbor(static_cast<std::size_t>(gt.n_train), 0);
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& neighbors = gt.neighbor_sets[q];
    if (neighbors.empty()) {
      ++res.excluded;
      continue;
    }
    if (static_cast<Index>(rankings[q].size()) != gt.n_train)
      throw std::invalid_argument("map_at_k: ranking length mismatch at query " +
                                  std::to_string(q));
    for (Index t : neighbors) is_neighbor[static_cast<std::size_t>(t)] = 1;
    const Index cutoff = std::min<Index>(k, gt.n_train);
    Index hits = 0;
    double ap = 0.0;
    for (Index r = 0; r < cutoff; ++r) {
      if (is_neighbor[static_cast<std::size_t>(rankings[q][static_cast<std::size_t>(r)])]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    ap /= static_cast<double>(
        std::min<Index>(k, static_cast<Index>(neighbors.size())));
    sum += ap;
    ++res.scored;
    for (Index t : neighbors) is_neighbor[static_cast<std::size_t>(t)] = 0;
  }
  if (res.scored == 0)
    throw std::runtime_error(
        "map_at_k: undefined metric, all queries have empty neighbor sets");
  res.map = sum / static_cast<double>(res.scored);
  return res;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct EvalProtocol {
  Index n_queries = 1000;
  double frac = 0.01;   // neighborhood size as a fraction of the training set
  Index k = 2000;       // MAP cutoff
  int threads = 1;
  bool threshold_over_queries = false;
  bool measure_wall = true;  // false pins wall_ms to 0 for byte-stable reports
};

struct ReportRow {
  std::string method;
  Index c = 0;
  std::uint64_t seed = 0;
  std::int64_t checkpoint = 0;  // samples seen (online) or train size (batch)
  double map = 0.0;
  Index excluded = 0;
  std::int64_t wall_ms = 0;
};

struct ExperimentReport {
  std::string mode;  // "batch" or "online"
  EvalProtocol protocol;
  std::vector<ReportRow> rows;
};

namespace detail {

inline DataMatrix select_columns(const DataMatrix& X,
                                 const std::vector<Index>& idx) {
  Matrix out(X.d(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out.col(static_cast<Index>(j)) = X.values.col(idx[j]);
  return DataMatrix(std::move(out));
}

// Deterministic query/train split: a seeded shuffle of the column indices,
// first n_queries as queries, rest as training points.
inline void split_dataset(const DataMatrix& data, Index n_queries,
                          std::uint64_t seed, DataMatrix& train,
                          DataMatrix& queries) {
  const Index n = data.n();
  if (n_queries < 1 || n_queries >= n)
    throw std::invalid_argument("split_dataset: need 1 <= n_queries < n");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(derive_seed(seed, "partition"));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Index> q_idx(perm.begin(), perm.begin() + n_queries);
  std::vector<Index> t_idx(perm.begin() + n_queries, perm.end());
  queries = select_columns(data, q_idx);
  train = select_columns(data, t_idx);
}

inline double map_of_model(const HashModel& model, const DataMatrix& train,
                           const DataMatrix& queries, const GroundTruth& gt,
                           const EvalProtocol& protocol, Index* excluded) {
  std::vector<BinaryCode> train_codes =
      encode_all(model, train, protocol.threads);
  std::vector<BinaryCode> query_codes =
      encode_all(model, queries, protocol.threads);
  std::vector<std::vector<Index>> rankings;
  rankings.reserve(query_codes.size());
  for (const auto& qc : query_codes)
    rankings.push_back(rank_by_hamming(qc, train_codes));
  MapResult res = map_at_k(rankings, gt, protocol.k);
  if (excluded) *excluded = res.excluded;
  return res.map;
}

inline std::int64_t elapsed_ms(std::chrono::steady_clock::time_point t0,
                               bool measure) {
  if (!measure) return 0;
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

// One batch experiment per (seed, c, method): split, fit, encode, rank, MAP.
// Row order is seed-major, then code length, then method.
inline ExperimentReport run_batch_experiment(
    const DataMatrix& data, const std::vector<RotationMethod>& methods,
    const std::vector<Index>& code_lengths,
    const std::vector<std::uint64_t>& seeds, const EvalProtocol& protocol,
    const BatchPipelineConfig& base = {}) {
  if (methods.empty() || code_lengths.empty() || seeds.empty())
    throw std::invalid_argument("run_batch_experiment: empty sweep");
  ExperimentReport report;
  report.mode = "batch";
  report.protocol = protocol;
  for (std::uint64_t seed : seeds) {
    DataMatrix train, queries;
    detail::split_dataset(data, protocol.n_queries, seed, train, queries);
    double thr = protocol.threshold_over_queries
                     ? neighbor_threshold(train, queries, protocol.frac)
                     : neighbor_threshold(train, protocol.frac);
    GroundTruth gt = build_ground_truth(train, queries, thr);
    for (Index c : code_lengths) {
      for (RotationMethod m : methods) {
        auto t0 = std::chrono::steady_clock::now();
        BatchPipelineConfig cfg = base;
        cfg.c = c;
        cfg.rotation_method = m;
        cfg.seed = derive_seed(seed, "fit", static_cast<std::uint64_t>(c));
        HashModel model = fit_batch(train, cfg);
        ReportRow row;
        row.method = to_string(m);
        row.c = c;
        row.seed = seed;
        row.checkpoint = train.n();
        row.map = detail::map_of_model(model, train, queries, gt, protocol,
                                       &row.excluded);
        row.wall_ms = detail::elapsed_ms(t0, protocol.measure_wall);
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

// Streaming experiment: one pass over a seeded ordering of the training
// points per (seed, method), a MAP checkpoint against the full training set
// every checkpoint_every samples (and at the final sample), matching rows
// appended in stream order.
inline ExperimentReport run_online_experiment(
    const DataMatrix& data, const std::vector<RotationMethod>& methods, Index c,
    const std::vector<std::uint64_t>& seeds, Index checkpoint_every,
    Index max_samples, const EvalProtocol& protocol,
    const StreamPipelineConfig& base = {}) {
  if (methods.empty() || seeds.empty())
    throw std::invalid_argument("run_online_experiment: empty sweep");
  if (checkpoint_every < 1)
    throw std::invalid_argument("run_online_experiment: need checkpoint_every >= 1");
  ExperimentReport report;
  report.mode = "online";
  report.protocol = protocol;
  for (std::uint64_t seed : seeds) {
    DataMatrix train, queries;
    detail::split_dataset(data, protocol.n_queries, seed, train, queries);
    double thr = protocol.threshold_over_queries
                     ? neighbor_threshold(train, queries, protocol.frac)
                     : neighbor_threshold(train, protocol.frac);
    GroundTruth gt = build_ground_truth(train, queries, thr);

    std::vector<Index> order(static_cast<std::size_t>(train.n()));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(derive_seed(seed, "stream_order"));
    std::shuffle(order.begin(), order.end(), rng);
    const Index limit = std::min<Index>(
        max_samples > 0 ? max_samples : train.n(), train.n());

    for (RotationMethod m : methods) {
      auto t0 = std::chrono::steady_clock::now();
      StreamPipelineConfig cfg = base;
      cfg.c = c;
      cfg.rotation_method = m;
      cfg.seed = derive_seed(seed, "pipeline");
      StreamPipeline pipe(train.d(), cfg);
      for (Index t = 0; t < limit; ++t) {
        pipe.ingest(train.values.col(order[static_cast<std::size_t>(t)]));
        if ((t + 1) % checkpoint_every == 0 || t + 1 == limit) {
          ReportRow row;
          row.method = to_string(m);
          row.c = c;
          row.seed = seed;
          row.checkpoint = t + 1;
          row.map = detail::map_of_model(pipe.model(), train, queries, gt,
                                         protocol, &row.excluded);
          row.wall_ms = detail::elapsed_ms(t0, protocol.measure_wall);
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  return report;
}

// CSV writer: optional '#'-prefixed configuration echo, a fixed header, then
// one row per result with doubles at full precision.
inline void write_report_csv(const ExperimentReport& report, std::ostream& out,
                             const std::string& config_echo = {}) {
  if (!config_echo.empty()) out << "# " << config_echo << '\n';
  out << "method,c,seed,checkpoint,map,excluded_queries,wall_ms\n";
  char buf[64];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", row.map);
    out << row.method << ',' << row.c << ',' << row.seed << ','
        << row.checkpoint << ',' << buf << ',' << row.excluded << ','
        << row.wall_ms << '\n';
  }
}

}  // namespace hqh
