#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "hqh/core.hpp"
#include "hqh/data.hpp"
#include "hqh/hashing.hpp"

using Catch::Matchers::ContainsSubstring;
using hqh::Index;
using hqh::Matrix;
using hqh::Vector;

namespace {

hqh::DataMatrix blob_data(Index d, Index n, std::uint64_t seed) {
  hqh::ClusterSpec spec;
  spec.n_clusters = 4;
  spec.points_per_cluster = int(n / 4);
  spec.d = int(d);
  spec.centroid_scale = 5.0;
  spec.noise_sigma = 1.0;
  spec.seed = seed;
  return hqh::generate_clusters(spec).data;
}

std::uint32_t read_u32_at(const std::vector<std::uint8_t>& bytes,
                          std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[off + i]} << (8 * i);
  return v;
}

std::uint64_t read_u64_at(const std::vector<std::uint8_t>& bytes,
                          std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[off + i]} << (8 * i);
  return v;
}

// Byte ranges of the four framed sections in a serialized model.
struct SectionFrame {
  std::uint32_t id;
  std::size_t begin;  // frame start (section id field)
  std::size_t end;    // one past the trailing checksum
  std::size_t payload_begin;
};

std::vector<SectionFrame> walk_sections(const std::vector<std::uint8_t>& bytes) {
  std::vector<SectionFrame> frames;
  std::size_t off = 8;  // magic + version
  while (off < bytes.size()) {
    SectionFrame f;
    f.id = read_u32_at(bytes, off);
    std::uint64_t plen = read_u64_at(bytes, off + 4);
    f.begin = off;
    f.payload_begin = off + 12;
    f.end = f.payload_begin + plen + 4;
    frames.push_back(f);
    off = f.end;
  }
  return frames;
}

}  // namespace

TEST_CASE("crc32c matches the reference check value") {
  const std::uint8_t check[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
  CHECK(hqh::detail::crc32c(check, sizeof(check)) == 0xE3069283u);
  CHECK(hqh::detail::crc32c(nullptr, 0) == 0u);

  // Single bit flips change the checksum.
  std::uint8_t buf[16];
  for (int i = 0; i < 16; ++i) buf[i] = std::uint8_t(i * 7 + 1);
  std::uint32_t base = hqh::detail::crc32c(buf, sizeof(buf));
  for (int i = 0; i < 16; ++i) {
    buf[i] ^= 0x10;
    CHECK(hqh::detail::crc32c(buf, sizeof(buf)) != base);
    buf[i] ^= 0x10;
  }
  CHECK(hqh::detail::crc32c(buf, sizeof(buf)) == base);
}

TEST_CASE("fit_batch assembles a coherent model") {
  hqh::DataMatrix X = blob_data(24, 400, 5);
  hqh::BatchPipelineConfig cfg;
  cfg.c = 8;
  cfg.rotation_method = hqh::RotationMethod::unifdiag;
  cfg.seed = 11;

  hqh::HashModel model = hqh::fit_batch(X, cfg);
  model.validate();
  CHECK(model.basis.c() == 8);
  CHECK(model.basis.d() == 24);
  CHECK(model.basis.orthonormality_error() <= 1e-8);
  CHECK(model.transform.provenance == hqh::RotationMethod::unifdiag);
  CHECK(model.centering.count() == 400);
  CHECK((model.centering.mean() - X.values.rowwise().mean()).norm() <= 1e-10);

  // The stored covariance describes the projected (pre-rotation) data, and
  // the fitted rotation makes its diagonal uniform.
  Matrix V = model.basis.rows() * (X.values.colwise() - model.centering.mean());
  CHECK((model.covariance.sigma - hqh::covariance_of(V, true).sigma).norm() <=
        1e-10);
  Matrix rotated = model.transform.R * model.covariance.sigma *
                   model.transform.R.transpose();
  CHECK((rotated.diagonal().array() - model.covariance.tau).abs().maxCoeff() <=
        1e-8 * model.covariance.tau);

  // Identical configuration, identical bytes.
  CHECK(hqh::serialize_model(model) ==
        hqh::serialize_model(hqh::fit_batch(X, cfg)));

  for (auto method :
       {hqh::RotationMethod::identity, hqh::RotationMethod::random,
        hqh::RotationMethod::itq, hqh::RotationMethod::isohash}) {
    hqh::BatchPipelineConfig mc = cfg;
    mc.rotation_method = method;
    hqh::HashModel m = hqh::fit_batch(X, mc);
    m.validate();
    CHECK(m.transform.provenance == method);
    // The projection stage does not depend on the chosen rotation.
    CHECK(m.basis.rows() == model.basis.rows());
  }

  hqh::BatchPipelineConfig bad = cfg;
  bad.c = 0;
  CHECK_THROWS_AS(hqh::fit_batch(X, bad), std::invalid_argument);
  hqh::DataMatrix tiny(Matrix::Random(24, 8));
  CHECK_THROWS_WITH(hqh::fit_batch(tiny, cfg),
                    ContainsSubstring("more points than bits"));
}

TEST_CASE("encode_all partitions work without changing bits") {
  hqh::DataMatrix X = blob_data(16, 240, 6);
  hqh::BatchPipelineConfig cfg;
  cfg.c = 12;
  cfg.seed = 3;
  hqh::HashModel model = hqh::fit_batch(X, cfg);

  std::vector<hqh::BinaryCode> serial = hqh::encode_all(model, X, 1);
  REQUIRE(serial.size() == 240);
  for (int threads : {2, 3, 7, 16}) {
    std::vector<hqh::BinaryCode> parallel = hqh::encode_all(model, X, threads);
    REQUIRE(parallel.size() == serial.size());
    for (std::size_t i = 0; i < serial.size(); ++i)
      CHECK(serial[i] == parallel[i]);
  }
  // Bulk encoding agrees with the single-point entry point.
  for (Index j = 0; j < 10; ++j)
    CHECK(serial[std::size_t(j)] == hqh::encode(model, X.values.col(j)));

  CHECK(hqh::encode_all(model, hqh::DataMatrix(Matrix(16, 0)), 4).empty());
  CHECK_THROWS_WITH(hqh::encode_all(model, hqh::DataMatrix(Matrix(17, 3)), 1),
                    ContainsSubstring("dimension"));
  CHECK_THROWS_AS(hqh::encode_all(model, X, 0), std::invalid_argument);
}

TEST_CASE("stream pipeline stays orthonormal and refits on schedule") {
  const Index d = 10, c = 3;
  hqh::StreamPipelineConfig cfg;
  cfg.c = c;
  cfg.rotation_method = hqh::RotationMethod::unifdiag;
  cfg.beta = 0.95;
  cfg.refit_every = 5;
  cfg.seed = 1;

  std::mt19937_64 rng(hqh::derive_seed(99, "stream_test"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector scales(d);
  scales << 5.0, 3.0, 2.0, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3;
  auto draw = [&]() {
    Vector x(d);
    for (Index i = 0; i < d; ++i) x(i) = scales(i) * gauss(rng);
    return x;
  };

  hqh::StreamPipeline pipe(d, cfg);
  CHECK(pipe.samples_seen() == 0);
  CHECK(pipe.model().transform.R == Matrix::Identity(c, c));

  for (int t = 0; t < 60; ++t) {
    pipe.ingest(draw());
    const hqh::HashModel& m = pipe.model();
    m.validate();
    CHECK(m.basis.orthonormality_error() <= 1e-6);
    CHECK(m.centering.count() == t + 1);
    if (t + 1 < cfg.refit_every) {
      // No rotation before the first refit.
      CHECK(m.transform.R == Matrix::Identity(c, c));
    }
    if (t + 1 == cfg.refit_every)
      CHECK(m.transform.provenance == hqh::RotationMethod::unifdiag);
    // Covariance stays symmetric under the running updates.
    CHECK((m.covariance.sigma - m.covariance.sigma.transpose()).norm() <=
          1e-12);
  }
  CHECK(pipe.samples_seen() == 60);
  // The refitted rotation keeps the tracked covariance diagonal uniform.
  const hqh::HashModel& fin = pipe.model();
  Matrix rot = fin.transform.R * fin.covariance.sigma * fin.transform.R.transpose();
  CHECK((rot.diagonal().array() - fin.covariance.tau).abs().maxCoeff() <=
        1e-8 * fin.covariance.tau + 1e-12);

  // Bad dimension is rejected mid-stream.
  CHECK_THROWS_AS(pipe.ingest(Vector::Zero(d + 1)), std::invalid_argument);
}

TEST_CASE("stream pipeline method handling and determinism") {
  const Index d = 8;
  hqh::StreamPipelineConfig cfg;
  cfg.c = 2;
  cfg.refit_every = 3;
  cfg.seed = 4;

  cfg.rotation_method = hqh::RotationMethod::itq;
  CHECK_THROWS_WITH(hqh::StreamPipeline(d, cfg), ContainsSubstring("itq"));

  cfg.rotation_method = hqh::RotationMethod::identity;
  cfg.refit_every = 0;
  CHECK_THROWS_WITH(hqh::StreamPipeline(d, cfg),
                    ContainsSubstring("refit_every"));
  cfg.refit_every = 3;

  std::mt19937_64 rng(12345);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vector> stream;
  for (int t = 0; t < 30; ++t) {
    Vector x(d);
    for (Index i = 0; i < d; ++i) x(i) = gauss(rng);
    stream.push_back(x);
  }

  // A drawn-once random rotation never changes; identity never rotates.
  cfg.rotation_method = hqh::RotationMethod::random;
  hqh::StreamPipeline rand_pipe(d, cfg);
  Matrix first_r = rand_pipe.model().transform.R;
  CHECK(rand_pipe.model().transform.provenance == hqh::RotationMethod::random);
  CHECK((first_r - Matrix::Identity(2, 2)).norm() > 1e-6);
  for (const Vector& x : stream) {
    rand_pipe.ingest(x);
    CHECK(rand_pipe.model().transform.R == first_r);
  }

  cfg.rotation_method = hqh::RotationMethod::identity;
  hqh::StreamPipeline id_pipe(d, cfg);
  for (const Vector& x : stream) {
    id_pipe.ingest(x);
    CHECK(id_pipe.model().transform.R == Matrix::Identity(2, 2));
  }

  // Identical streams give byte-identical models.
  cfg.rotation_method = hqh::RotationMethod::unifdiag;
  hqh::StreamPipeline a(d, cfg), b(d, cfg);
  for (const Vector& x : stream) {
    a.ingest(x);
    b.ingest(x);
  }
  CHECK(hqh::serialize_model(a.model()) == hqh::serialize_model(b.model()));

  // The functional wrapper matches in-place ingestion.
  hqh::StreamPipeline fn(d, cfg);
  for (const Vector& x : stream) fn = hqh::stream_ingest(std::move(fn), x);
  CHECK(hqh::serialize_model(fn.model()) == hqh::serialize_model(a.model()));
}

TEST_CASE("model files round trip byte for byte") {
  hqh::DataMatrix X = blob_data(20, 300, 8);
  hqh::BatchPipelineConfig cfg;
  cfg.c = 6;
  cfg.rotation_method = hqh::RotationMethod::itq;
  cfg.seed = 21;
  hqh::HashModel model = hqh::fit_batch(X, cfg);

  std::vector<std::uint8_t> bytes = hqh::serialize_model(model);
  CHECK(bytes[0] == 'H');
  CHECK(bytes[1] == 'Q');
  CHECK(bytes[2] == 'H');
  CHECK(bytes[3] == '1');

  hqh::HashModel back = hqh::deserialize_model(bytes.data(), bytes.size());
  CHECK(back.centering.count() == model.centering.count());
  CHECK(back.centering.mean() == model.centering.mean());
  CHECK(back.basis.rows() == model.basis.rows());
  CHECK(back.transform.R == model.transform.R);
  CHECK(back.transform.provenance == model.transform.provenance);
  CHECK(back.covariance.sigma == model.covariance.sigma);
  CHECK(back.covariance.normalized == model.covariance.normalized);
  CHECK(back.covariance.tau == model.covariance.tau);
  CHECK(hqh::serialize_model(back) == bytes);

  const std::string path = "/tmp/hqh_test_model.bin";
  hqh::save_model(model, path);
  hqh::HashModel loaded = hqh::load_model(path);
  CHECK(hqh::serialize_model(loaded) == bytes);

  // Encoding behavior survives the round trip bit for bit.
  std::vector<hqh::BinaryCode> before = hqh::encode_all(model, X);
  std::vector<hqh::BinaryCode> after = hqh::encode_all(loaded, X);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("model files reject corruption by name") {
  hqh::DataMatrix X = blob_data(12, 200, 9);
  hqh::BatchPipelineConfig cfg;
  cfg.c = 4;
  hqh::HashModel model = hqh::fit_batch(X, cfg);
  const std::vector<std::uint8_t> good = hqh::serialize_model(model);

  std::vector<std::uint8_t> bad = good;
  bad[2] ^= 0xFF;
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("version mismatch"));

  bad = good;
  bad[4] = 9;  // format version field
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("version mismatch: got 9"));

  std::vector<SectionFrame> frames = walk_sections(good);
  REQUIRE(frames.size() == 4);
  REQUIRE(frames[0].id == 1);
  REQUIRE(frames[3].id == 4);

  // A flipped payload byte is caught by the named section checksum.
  bad = good;
  bad[frames[0].payload_begin] ^= 0x01;
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("checksum mismatch in centering section"));
  bad = good;
  bad[frames[2].payload_begin + 5] ^= 0x40;
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("checksum mismatch in transform section"));

  // Truncation inside the last section names it too.
  bad = good;
  bad.resize(good.size() - 5);
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("covariance"));

  // Dropping a whole section is reported as a missing section.
  bad = good;
  bad.erase(bad.begin() + long(frames[3].begin), bad.begin() + long(frames[3].end));
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("missing covariance section"));
  bad = good;
  bad.erase(bad.begin() + long(frames[1].begin), bad.begin() + long(frames[1].end));
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("missing basis section"));

  // An unrecognized section id fails even with a valid checksum.
  bad = good;
  hqh::detail::append_u32(bad, 9);
  hqh::detail::append_u64(bad, 0);
  hqh::detail::append_u32(bad, hqh::detail::crc32c(nullptr, 0));
  CHECK_THROWS_WITH(hqh::deserialize_model(bad.data(), bad.size()),
                    ContainsSubstring("unknown model section id 9"));
}

TEST_CASE("code files round trip and validate") {
  std::mt19937_64 rng(777);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<hqh::BinaryCode> codes;
  for (int k = 0; k < 5; ++k) {
    Vector v(70);
    for (Index i = 0; i < 70; ++i) v(i) = gauss(rng);
    codes.push_back(hqh::sign_quantize(v));
  }

  std::vector<std::uint8_t> bytes = hqh::serialize_codes(codes);
  CHECK(bytes[0] == 'H');
  CHECK(bytes[1] == 'Q');
  CHECK(bytes[2] == 'C');
  CHECK(bytes[3] == '1');
  std::vector<hqh::BinaryCode> back =
      hqh::deserialize_codes(bytes.data(), bytes.size());
  REQUIRE(back.size() == codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) CHECK(back[i] == codes[i]);
  CHECK(hqh::serialize_codes(back) == bytes);

  const std::string path = "/tmp/hqh_test_codes.bin";
  hqh::save_codes(codes, path);
  std::vector<hqh::BinaryCode> loaded = hqh::load_codes(path);
  CHECK(hqh::serialize_codes(loaded) == bytes);

  CHECK(hqh::deserialize_codes(hqh::serialize_codes({}).data(), 16).empty());

  std::vector<hqh::BinaryCode> mixed = {hqh::sign_quantize(Vector::Ones(3)),
                                        hqh::sign_quantize(Vector::Ones(4))};
  CHECK_THROWS_WITH(hqh::serialize_codes(mixed), ContainsSubstring("mixed"));

  std::vector<std::uint8_t> bad = bytes;
  bad[3] = '2';
  CHECK_THROWS_WITH(hqh::deserialize_codes(bad.data(), bad.size()),
                    ContainsSubstring("version mismatch"));

  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(hqh::deserialize_codes(bad.data(), bad.size()),
                  std::runtime_error);

  bad = bytes;
  bad.push_back(0x00);
  CHECK_THROWS_WITH(hqh::deserialize_codes(bad.data(), bad.size()),
                    ContainsSubstring("trailing"));

  // Record width disagreeing with the header is caught per record.
  std::vector<std::uint8_t> crafted;
  crafted.insert(crafted.end(), {'H', 'Q', 'C', '1'});
  hqh::detail::append_u64(crafted, 1);
  hqh::detail::append_u32(crafted, 8);
  hqh::sign_quantize(Vector::Ones(16)).append_bytes(crafted);
  CHECK_THROWS_WITH(hqh::deserialize_codes(crafted.data(), crafted.size()),
                    ContainsSubstring("record 0 has width 16, expected 8"));
}
