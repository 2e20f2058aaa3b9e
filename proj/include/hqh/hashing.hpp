#pragma once

// End-to-end hashing pipelines: batch fit (center -> PCA -> rotation), the
// streaming pipeline over the OPAST tracker with periodic rotation refits,
// bulk encoding, and binary model/code persistence with per-section
// checksums.

#include <hqh/core.hpp>
#include <hqh/rotation.hpp>
#include <hqh/subspace.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hqh {

// ---------------------------------------------------------------------------
// Batch pipeline
// ---------------------------------------------------------------------------

struct BatchPipelineConfig {
  Index c = 16;
  RotationMethod rotation_method = RotationMethod::unifdiag;
  int itq_iters = 50;
  IsoHashConfig isohash;
  std::uint64_t seed = 0;
};

// Center, project onto the top-c principal subspace, then fit the requested
// rotation on the projected data.
inline HashModel fit_batch(const DataMatrix& X, const BatchPipelineConfig& cfg) {
  if (cfg.c < 1) throw std::invalid_argument("fit_batch: need c >= 1");
  if (X.n() <= cfg.c)
    throw std::invalid_argument("fit_batch: need more points than bits");

  HashModel model;
  model.centering = CenteringState::from_batch(X);
  Matrix centered = X.values.colwise() - model.centering.mean();
  model.basis = batch_pca(DataMatrix(std::move(centered)), cfg.c);

  // Re-centering here avoids keeping two d x n copies alive at once.
  Matrix V = model.basis.rows() * (X.values.colwise() - model.centering.mean());
  model.covariance = covariance_of(V, true);

  switch (cfg.rotation_method) {
    case RotationMethod::identity:
      model.transform = OrthogonalTransform::identity(cfg.c);
      break;
    case RotationMethod::random:
      model.transform = random_rotation(cfg.c, derive_seed(cfg.seed, "rotation"));
      break;
    case RotationMethod::itq:
      model.transform =
          itq_fit(V, cfg.itq_iters, derive_seed(cfg.seed, "rotation")).R;
      break;
    case RotationMethod::isohash:
      model.transform = isohash_fit(model.covariance, cfg.isohash).transform;
      break;
    case RotationMethod::unifdiag:
      model.transform = unifdiag_fit(model.covariance).transform;
      break;
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Bulk encoding
// ---------------------------------------------------------------------------

// Encode every column of X. Each point is a single matrix-vector product
// against the combined projection, so the result is bitwise identical for
// any thread count: threads only partition the column range.
inline std::vector<BinaryCode> encode_all(const HashModel& model,
                                          const DataMatrix& X,
                                          int n_threads = 1) {
  model.validate();
  if (X.n() == 0) return {};
  if (X.d() != model.basis.d())
    throw std::invalid_argument("encode_all: point dimension mismatch");
  if (n_threads < 1) throw std::invalid_argument("encode_all: need n_threads >= 1");

  const Matrix P = model.effective_projection();  // c x d
  const Vector& mu = model.centering.mean();
  const Index n = X.n();
  std::vector<BinaryCode> codes(static_cast<std::size_t>(n));

  auto work = [&](Index begin, Index end) {
    Vector y(P.rows());
    for (Index col = begin; col < end; ++col) {
      y.noalias() = P * (X.values.col(col) - mu);
      codes[static_cast<std::size_t>(col)] = sign_quantize(y);
    }
  };

  if (n_threads == 1 || n < 2 * n_threads) {
    work(0, n);
    return codes;
  }
  std::vector<std::thread> pool;
  Index chunk = (n + n_threads - 1) / n_threads;
  for (int t = 0; t < n_threads; ++t) {
    Index begin = t * chunk;
    Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return codes;
}

// ---------------------------------------------------------------------------
// Streaming pipeline
// ---------------------------------------------------------------------------

struct StreamPipelineConfig {
  Index c = 16;
  RotationMethod rotation_method = RotationMethod::unifdiag;
  double beta = 0.99;      // forgetting factor for tracker and covariance
  int refit_every = 5;     // rotation refit cadence, in samples
  IsoHashConfig isohash;
  std::uint64_t seed = 0;
};

// Single-pass pipeline: running mean, OPAST subspace tracking, exponentially
// weighted covariance in tracked coordinates, and a rotation refit from the
// current covariance every refit_every samples. The exposed model always
// reflects the live mean/basis/covariance and the most recent rotation
// (identity until the first refit, except the random method, which is drawn
// once up front).
class StreamPipeline {
 public:
  StreamPipeline(Index d, StreamPipelineConfig cfg)
      : cfg_(cfg),
        tracker_(d, cfg.c, cfg.beta),
        cov_(Matrix::Zero(cfg.c, cfg.c)),
        transform_(OrthogonalTransform::identity(cfg.c)) {
    if (cfg.refit_every < 1)
      throw std::invalid_argument("StreamPipeline: need refit_every >= 1");
    if (cfg.rotation_method == RotationMethod::itq)
      throw std::invalid_argument(
          "StreamPipeline: itq needs the projected data, not just covariance; "
          "use a batch fit or a covariance-based method");
    centering_ = CenteringState(d);
    if (cfg.rotation_method == RotationMethod::random)
      transform_ = random_rotation(cfg.c, derive_seed(cfg.seed, "stream_rotation"));
    rebuild_model();
  }

  void ingest(const Eigen::Ref<const Vector>& x) {
    centering_.observe(x);
    Vector xc = centering_.center(x);

    OpastTracker::StepInfo info = tracker_.update(xc);
    if (info.moved) {
      // Basis moved by a rank-one update; carry the covariance into the new
      // coordinates with T = I + tau g g^T (T sigma T^T, O(c^2)).
      Vector u = cov_ * info.g;
      double gu = info.g.dot(u);
      cov_ += info.tau * (u * info.g.transpose() + info.g * u.transpose());
      cov_ += (info.tau * info.tau * gu) * (info.g * info.g.transpose());
      cov_ = ((cov_ + cov_.transpose()) / 2.0).eval();
    }
    Vector v = tracker_.basis_columns().transpose() * xc;
    cov_ *= cfg_.beta;
    cov_.selfadjointView<Eigen::Lower>().rankUpdate(v, 1.0 - cfg_.beta);
    cov_.triangularView<Eigen::StrictlyUpper>() = cov_.transpose();

    if (tracker_.steps() % cfg_.refit_every == 0) refit_rotation();
    rebuild_model();
  }

  const HashModel& model() const { return model_; }
  std::int64_t samples_seen() const { return tracker_.steps(); }
  const OpastTracker& tracker() const { return tracker_; }
  const StreamPipelineConfig& config() const { return cfg_; }

 private:
  void refit_rotation() {
    CovarianceState cov_state(cov_, true);
    switch (cfg_.rotation_method) {
      case RotationMethod::identity:
      case RotationMethod::random:
        break;  // fixed for the whole stream
      case RotationMethod::isohash:
        transform_ = isohash_fit(cov_state, cfg_.isohash).transform;
        break;
      case RotationMethod::unifdiag:
        transform_ = unifdiag_fit(cov_state).transform;
        break;
      case RotationMethod::itq:
        break;  // rejected in the constructor
    }
  }

  void rebuild_model() {
    model_.centering = centering_;
    model_.basis = ProjectionBasis::trusted(tracker_.basis_columns().transpose());
    model_.transform = transform_;
    model_.covariance = CovarianceState(cov_, true);
  }

  StreamPipelineConfig cfg_;
  CenteringState centering_;
  OpastTracker tracker_;
  Matrix cov_;
  OrthogonalTransform transform_;
  HashModel model_;
};

// Functional wrapper over StreamPipeline::ingest.
inline StreamPipeline stream_ingest(StreamPipeline pipeline,
                                    const Eigen::Ref<const Vector>& x) {
  pipeline.ingest(x);
  return pipeline;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

// CRC-32C (Castagnoli), reflected polynomial 0x82F63B78.
inline std::uint32_t crc32c(const std::uint8_t* data, std::size_t len,
                            std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t v = i;
      for (int k = 0; k < 8; ++k)
        v = (v & 1) ? (0x82F63B78u ^ (v >> 1)) : (v >> 1);
      t[i] = v;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t len, std::string context)
      : data_(data), len_(len), context_(std::move(context)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[off_ + i]} << (8 * i);
    off_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[off_ + i]} << (8 * i);
    off_ += 8;
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  const std::uint8_t* raw(std::size_t bytes) {
    need(bytes);
    const std::uint8_t* p = data_ + off_;
    off_ += bytes;
    return p;
  }

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return len_ - off_; }
  bool done() const { return off_ == len_; }

  void need(std::size_t bytes) const {
    if (off_ + bytes > len_)
      throw std::runtime_error("truncated " + context_ + " at byte " +
                               std::to_string(off_) + ": need " +
                               std::to_string(bytes) + " more, have " +
                               std::to_string(len_ - off_));
  }

  void set_context(std::string context) { context_ = std::move(context); }

 private:
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t off_ = 0;
  std::string context_;
};

// Matrices are framed as a (rows, cols) 32-bit header followed by the
// entries in row-major order as 64-bit little-endian floats.
inline void append_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
  append_u32(out, static_cast<std::uint32_t>(m.rows()));
  append_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) append_f64(out, m(i, j));
}

inline Matrix read_matrix(ByteReader& r) {
  std::uint32_t rows = r.u32();
  std::uint32_t cols = r.u32();
  if (rows > (1u << 24) || cols > (1u << 24))
    throw std::runtime_error("matrix dimensions out of range");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  return m;
}

}  // namespace detail

// Model file layout: magic "HQH1", u32 format version, then four sections
// (centering, basis, transform, covariance), each framed as u32 section id,
// u64 payload length, payload, u32 CRC-32C of the payload.
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline std::vector<std::uint8_t> serialize_model(const HashModel& model) {
  model.validate();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'H', 'Q', 'H', '1'});
  detail::append_u32(out, kModelFormatVersion);

  auto section = [&](std::uint32_t id, const std::vector<std::uint8_t>& payload) {
    detail::append_u32(out, id);
    detail::append_u64(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
    detail::append_u32(out, detail::crc32c(payload.data(), payload.size()));
  };

  std::vector<std::uint8_t> p;
  detail::append_u64(p, static_cast<std::uint64_t>(model.centering.count()));
  detail::append_u64(p, static_cast<std::uint64_t>(model.centering.mean().size()));
  for (Index i = 0; i < model.centering.mean().size(); ++i)
    detail::append_f64(p, model.centering.mean()[i]);
  section(1, p);

  p.clear();
  detail::append_matrix(p, model.basis.rows());
  section(2, p);

  p.clear();
  detail::append_u32(p, static_cast<std::uint32_t>(model.transform.provenance));
  detail::append_matrix(p, model.transform.R);
  section(3, p);

  p.clear();
  detail::append_u32(p, model.covariance.normalized ? 1 : 0);
  detail::append_matrix(p, model.covariance.sigma);
  section(4, p);

  return out;
}

inline HashModel deserialize_model(const std::uint8_t* data, std::size_t len) {
  detail::ByteReader r(data, len, "model header");
  r.need(8);
  if (!(data[0] == 'H' && data[1] == 'Q' && data[2] == 'H' && data[3] == '1'))
    throw std::runtime_error("model format version mismatch: bad magic bytes");
  (void)r.raw(4);
  std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw std::runtime_error("model format version mismatch: got " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kModelFormatVersion));

  static const char* kSectionNames[] = {"?", "centering", "basis", "transform",
                                        "covariance"};
  HashModel model;
  bool seen[5] = {false, false, false, false, false};
  while (!r.done()) {
    r.set_context("section header");
    std::uint32_t id = r.u32();
    std::uint64_t plen = r.u64();
    const char* name = (id >= 1 && id <= 4) ? kSectionNames[id] : "unknown";
    r.set_context(std::string(name) + " section");
    const std::uint8_t* payload = r.raw(plen);
    std::uint32_t stored = r.u32();
    std::uint32_t actual = detail::crc32c(payload, plen);
    if (stored != actual)
      throw std::runtime_error("checksum mismatch in " + std::string(name) +
                               " section");
    if (id < 1 || id > 4)
      throw std::runtime_error("unknown model section id " + std::to_string(id));
    seen[id] = true;

    detail::ByteReader pr(payload, plen, std::string(name) + " payload");
    switch (id) {
      case 1: {
        std::int64_t count = static_cast<std::int64_t>(pr.u64());
        std::uint64_t dim = pr.u64();
        Vector mean(static_cast<Index>(dim));
        for (std::uint64_t i = 0; i < dim; ++i)
          mean[static_cast<Index>(i)] = pr.f64();
        model.centering = CenteringState(std::move(mean), count);
        break;
      }
      case 2:
        model.basis = ProjectionBasis(detail::read_matrix(pr), 1e-6);
        break;
      case 3: {
        std::uint32_t prov = pr.u32();
        if (prov > 4)
          throw std::runtime_error("transform section: bad provenance tag");
        model.transform = OrthogonalTransform(
            detail::read_matrix(pr), static_cast<RotationMethod>(prov));
        break;
      }
      case 4: {
        bool normalized = pr.u32() != 0;
        model.covariance = CovarianceState(detail::read_matrix(pr), normalized);
        break;
      }
    }
  }
  for (int id = 1; id <= 4; ++id)
    if (!seen[id])
      throw std::runtime_error("model file missing " +
                               std::string(kSectionNames[id]) + " section");
  model.validate();
  return model;
}

inline void save_model(const HashModel& model, const std::string& path) {
  detail::write_file_bytes(path, serialize_model(model));
}

inline HashModel load_model(const std::string& path) {
  std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  return deserialize_model(bytes.data(), bytes.size());
}

// Codes file layout: magic "HQC1", u64 code count, u32 shared bit width,
// then each code in its standard serialized form.
inline std::vector<std::uint8_t> serialize_codes(
    const std::vector<BinaryCode>& codes) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'H', 'Q', 'C', '1'});
  detail::append_u64(out, codes.size());
  std::uint32_t c = codes.empty() ? 0 : codes.front().size();
  detail::append_u32(out, c);
  for (const auto& code : codes) {
    if (code.size() != c)
      throw std::invalid_argument("serialize_codes: mixed code lengths");
    code.append_bytes(out);
  }
  return out;
}

inline std::vector<BinaryCode> deserialize_codes(const std::uint8_t* data,
                                                 std::size_t len) {
  detail::ByteReader r(data, len, "codes header");
  r.need(4);
  if (!(data[0] == 'H' && data[1] == 'Q' && data[2] == 'C' && data[3] == '1'))
    throw std::runtime_error("codes format version mismatch: bad magic bytes");
  (void)r.raw(4);
  std::uint64_t n = r.u64();
  std::uint32_t c = r.u32();
  std::vector<BinaryCode> codes;
  codes.reserve(n);
  std::size_t off = r.offset();
  for (std::uint64_t k = 0; k < n; ++k) {
    BinaryCode code = BinaryCode::parse(data, len, off);
    if (code.size() != c)
      throw std::runtime_error("codes file: record " + std::to_string(k) +
                               " has width " + std::to_string(code.size()) +
                               ", expected " + std::to_string(c));
    codes.push_back(std::move(code));
  }
  if (off != len)
    throw std::runtime_error("codes file: trailing bytes after last record");
  return codes;
}

inline void save_codes(const std::vector<BinaryCode>& codes,
                       const std::string& path) {
  detail::write_file_bytes(path, serialize_codes(codes));
}

inline std::vector<BinaryCode> load_codes(const std::string& path) {
  std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  return deserialize_codes(bytes.data(), bytes.size());
}

}  // namespace hqh
