#pragma once

// Core types for hypercubic quantization hashing: centered data, orthonormal
// projections, orthogonal rotations, packed sign sketches and the projected
// covariance bookkeeping that the rotation learners consume.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hqh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

// splitmix64 step; cheap, full-period mixer used only for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic labelled sub-seed. Every consumer of randomness draws its
// engine seed through this, so results depend only on (root, label, index)
// and never on call order or thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the label
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t state = root;
  state = splitmix64(state) ^ h;
  state = splitmix64(state) ^ index;
  return splitmix64(state);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// Column-major point set: one point per column, d rows. Entries must be
// finite; n may be zero (e.g. an empty input file).
struct DataMatrix {
  Matrix values;

  DataMatrix() = default;
  explicit DataMatrix(Matrix v) : values(std::move(v)) {
    if (!values.allFinite())
      throw std::invalid_argument("DataMatrix: non-finite entry");
  }

  Index d() const { return values.rows(); }
  Index n() const { return values.cols(); }
};

// Running mean in d dimensions. Supports both one-shot batch estimation and
// per-sample streaming updates.
class CenteringState {
 public:
  CenteringState() = default;
  explicit CenteringState(Index d) : mean_(Vector::Zero(d)) {}
  CenteringState(Vector mean, std::int64_t count)
      : mean_(std::move(mean)), count_(count) {
    if (count_ < 0) throw std::invalid_argument("CenteringState: negative count");
    if (!mean_.allFinite())
      throw std::invalid_argument("CenteringState: non-finite mean");
  }

  static CenteringState from_batch(const DataMatrix& X) {
    if (X.n() < 1)
      throw std::invalid_argument("CenteringState::from_batch: empty data");
    return CenteringState(X.values.rowwise().mean(), X.n());
  }

  // Streaming update: mean_k = mean_{k-1} + (x - mean_{k-1}) / k.
  void observe(const Eigen::Ref<const Vector>& x) {
    if (x.size() != mean_.size())
      throw std::invalid_argument("CenteringState::observe: dimension mismatch");
    ++count_;
    mean_ += (x - mean_) / static_cast<double>(count_);
  }

  Vector center(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != mean_.size())
      throw std::invalid_argument("CenteringState::center: dimension mismatch");
    return x - mean_;
  }

  const Vector& mean() const { return mean_; }
  std::int64_t count() const { return count_; }
  Index d() const { return mean_.size(); }

 private:
  Vector mean_;
  std::int64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

// c x d matrix with orthonormal rows: the projection onto a tracked or
// PCA-estimated principal subspace.
class ProjectionBasis {
 public:
  ProjectionBasis() = default;

  // tol bounds ||W W^T - I||_F. Batch estimates should hold 1e-8; streamed
  // bases are allowed to drift to 1e-6.
  explicit ProjectionBasis(Matrix w, double tol = 1e-8) : W_(std::move(w)) {
    if (W_.rows() < 1 || W_.rows() > W_.cols())
      throw std::invalid_argument("ProjectionBasis: need 1 <= c <= d");
    if (!W_.allFinite())
      throw std::invalid_argument("ProjectionBasis: non-finite entry");
    double err = (W_ * W_.transpose() -
                  Matrix::Identity(W_.rows(), W_.rows())).norm();
    if (err > tol)
      throw std::invalid_argument("ProjectionBasis: rows not orthonormal, error " +
                                  std::to_string(err));
  }

  // Construction without the orthonormality check, for hot paths whose
  // producer maintains the invariant (verified separately in tests).
  static ProjectionBasis trusted(Matrix w) {
    ProjectionBasis b;
    b.W_ = std::move(w);
    return b;
  }

  const Matrix& rows() const { return W_; }
  Index c() const { return W_.rows(); }
  Index d() const { return W_.cols(); }

  double orthonormality_error() const {
    return (W_ * W_.transpose() - Matrix::Identity(W_.rows(), W_.rows())).norm();
  }

 private:
  Matrix W_;
};

enum class RotationMethod { identity, random, itq, isohash, unifdiag };

inline const char* to_string(RotationMethod m) {
  switch (m) {
    case RotationMethod::identity: return "none";
    case RotationMethod::random: return "random";
    case RotationMethod::itq: return "itq";
    case RotationMethod::isohash: return "isohash";
    case RotationMethod::unifdiag: return "unifdiag";
  }
  return "?";
}

inline RotationMethod rotation_method_from_string(std::string_view s) {
  if (s == "none" || s == "identity" || s == "pca") return RotationMethod::identity;
  if (s == "random") return RotationMethod::random;
  if (s == "itq") return RotationMethod::itq;
  if (s == "isohash") return RotationMethod::isohash;
  if (s == "unifdiag") return RotationMethod::unifdiag;
  throw std::invalid_argument("unknown rotation method '" + std::string(s) + "'");
}

// c x c orthogonal matrix applied after the projection, tagged with the
// method that produced it.
struct OrthogonalTransform {
  Matrix R;
  RotationMethod provenance = RotationMethod::identity;

  OrthogonalTransform() = default;
  OrthogonalTransform(Matrix r, RotationMethod p) : R(std::move(r)), provenance(p) {
    if (R.rows() != R.cols() || R.rows() < 1)
      throw std::invalid_argument("OrthogonalTransform: matrix must be square");
    if (!R.allFinite())
      throw std::invalid_argument("OrthogonalTransform: non-finite entry");
    const Matrix I = Matrix::Identity(R.rows(), R.cols());
    double err = std::max((R * R.transpose() - I).norm(),
                          (R.transpose() * R - I).norm());
    if (err > 1e-8)
      throw std::invalid_argument("OrthogonalTransform: not orthogonal, error " +
                                  std::to_string(err));
  }

  static OrthogonalTransform identity(Index c) {
    return OrthogonalTransform(Matrix::Identity(c, c), RotationMethod::identity);
  }

  Index c() const { return R.rows(); }
};

// Dense iid N(0,1) matrix, the random linear map used by the theory-side
// sampling of sign sketches. Not orthogonal.
struct GaussianTransform {
  Matrix R;
  std::uint64_t seed = 0;

  static GaussianTransform sample(Index rows, Index cols, std::uint64_t seed);
  Index c() const { return R.rows(); }
};

// ---------------------------------------------------------------------------
// Binary sketches
// ---------------------------------------------------------------------------

// c-bit sign sketch packed into 64-bit words; bit k lives in word k/64 at
// position k%64 and set means +1. High bits of the last word stay zero so
// word-wise comparison and XOR are valid.
class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(std::uint32_t bits)
      : bits_(bits), words_((bits + 63) / 64, 0) {
    if (bits == 0) throw std::invalid_argument("BinaryCode: zero length");
  }

  std::uint32_t size() const { return bits_; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  bool bit(std::uint32_t k) const {
    check_index(k);
    return (words_[k / 64] >> (k % 64)) & 1u;
  }

  int sign(std::uint32_t k) const { return bit(k) ? 1 : -1; }

  void set_bit(std::uint32_t k, bool plus) {
    check_index(k);
    std::uint64_t mask = std::uint64_t{1} << (k % 64);
    if (plus)
      words_[k / 64] |= mask;
    else
      words_[k / 64] &= ~mask;
  }

  bool operator==(const BinaryCode&) const = default;

  // Serialized form: u32 little-endian bit count, then the words as
  // little-endian u64.
  void append_bytes(std::vector<std::uint8_t>& out) const;
  static BinaryCode parse(const std::uint8_t* data, std::size_t len,
                          std::size_t& offset);

 private:
  void check_index(std::uint32_t k) const {
    if (k >= bits_) throw std::out_of_range("BinaryCode: bit index out of range");
  }

  std::uint32_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

inline int hamming(const BinaryCode& a, const BinaryCode& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("hamming: length mismatch");
  int dist = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t w = 0; w < wa.size(); ++w)
    dist += std::popcount(wa[w] ^ wb[w]);
  return dist;
}

// sign(y) with the tie broken towards +1, so 0.0 and -0.0 both map to +1.
inline BinaryCode sign_quantize(const Eigen::Ref<const Vector>& y) {
  if (y.size() < 1) throw std::invalid_argument("sign_quantize: empty input");
  BinaryCode code(static_cast<std::uint32_t>(y.size()));
  for (Index k = 0; k < y.size(); ++k) {
    double v = y[k];
    if (!std::isfinite(v))
      throw std::invalid_argument("sign_quantize: non-finite entry at index " +
                                  std::to_string(k));
    code.set_bit(static_cast<std::uint32_t>(k), v >= 0.0);
  }
  return code;
}

// ---------------------------------------------------------------------------
// Covariance
// ---------------------------------------------------------------------------

// Symmetric covariance estimate in projected coordinates, with its target
// uniform diagonal value tau = trace/c cached. `normalized` records whether
// the second-moment sum was divided by the sample count.
struct CovarianceState {
  Matrix sigma;
  double tau = 0.0;
  bool normalized = true;

  CovarianceState() = default;
  CovarianceState(Matrix s, bool norm) : sigma(std::move(s)), normalized(norm) {
    if (sigma.rows() != sigma.cols() || sigma.rows() < 1)
      throw std::invalid_argument("CovarianceState: matrix must be square");
    if (!sigma.allFinite())
      throw std::invalid_argument("CovarianceState: non-finite entry");
    double scale = sigma.norm();
    if ((sigma - sigma.transpose()).norm() > 1e-10 * scale + 1e-12)
      throw std::invalid_argument("CovarianceState: matrix not symmetric");
    double tr = sigma.trace();
    if (sigma.diagonal().minCoeff() < -1e-9 * std::abs(tr) - 1e-12)
      throw std::invalid_argument("CovarianceState: negative diagonal entry");
    sigma = ((sigma + sigma.transpose()) / 2.0).eval();  // exact symmetry
    tau = tr / static_cast<double>(sigma.rows());
  }

  Index c() const { return sigma.rows(); }
};

// Second moment of a set of projected points V (c x n): V V^T, divided by n
// when normalized.
inline CovarianceState covariance_of(const Matrix& V, bool normalized = true) {
  if (V.cols() < 1)
    throw std::invalid_argument("covariance_of: need at least one column");
  if (!V.allFinite())
    throw std::invalid_argument("covariance_of: non-finite entry");
  Matrix s = Matrix::Zero(V.rows(), V.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(V);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  if (normalized) s /= static_cast<double>(V.cols());
  return CovarianceState(std::move(s), normalized);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Full hashing model: b = sign(R W (x - mean)). Covariance is kept alongside
// so rotations can be refit and diagnostics reported without the data.
struct HashModel {
  CenteringState centering;
  ProjectionBasis basis;
  OrthogonalTransform transform;
  CovarianceState covariance;

  void validate() const {
    if (basis.d() != centering.d())
      throw std::invalid_argument("HashModel: basis/centering dimension mismatch");
    if (transform.c() != basis.c())
      throw std::invalid_argument("HashModel: transform/basis size mismatch");
    if (covariance.c() != basis.c())
      throw std::invalid_argument("HashModel: covariance/basis size mismatch");
  }

  // R W, the end-to-end linear map applied to centered points.
  Matrix effective_projection() const { return transform.R * basis.rows(); }
};

inline BinaryCode encode(const HashModel& m, const Eigen::Ref<const Vector>& x) {
  if (x.size() != m.basis.d())
    throw std::invalid_argument("encode: point dimension mismatch");
  Vector y = m.transform.R * (m.basis.rows() * m.centering.center(x));
  return sign_quantize(y);
}

// ---------------------------------------------------------------------------
// Inline definitions
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  in.seekg(0, std::ios::end);
  std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("failed reading '" + path + "'");
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

inline void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

inline void append_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(out, bits);
}

}  // namespace detail

inline void BinaryCode::append_bytes(std::vector<std::uint8_t>& out) const {
  detail::append_u32(out, bits_);
  for (std::uint64_t w : words_) detail::append_u64(out, w);
}

inline BinaryCode BinaryCode::parse(const std::uint8_t* data, std::size_t len,
                                    std::size_t& offset) {
  auto need = [&](std::size_t bytes) {
    if (offset + bytes > len)
      throw std::runtime_error("BinaryCode::parse: truncated at byte " +
                               std::to_string(offset));
  };
  need(4);
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= std::uint32_t{data[offset + i]} << (8 * i);
  offset += 4;
  if (bits == 0) throw std::runtime_error("BinaryCode::parse: zero bit count");
  BinaryCode code(bits);
  std::size_t n_words = (bits + 63) / 64;
  need(8 * n_words);
  for (std::size_t w = 0; w < n_words; ++w) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t{data[offset + i]} << (8 * i);
    offset += 8;
    code.words_[w] = v;
  }
  std::uint32_t rem = bits % 64;
  if (rem != 0 && (code.words_.back() >> rem) != 0)
    throw std::runtime_error("BinaryCode::parse: nonzero padding bits");
  return code;
}

inline GaussianTransform GaussianTransform::sample(Index rows, Index cols,
                                                   std::uint64_t seed) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("GaussianTransform::sample: empty shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GaussianTransform t;
  t.seed = seed;
  t.R.resize(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) t.R(i, j) = gauss(rng);
  return t;
}

}  // namespace hqh
