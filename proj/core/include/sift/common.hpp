#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sift {

// Row-major so that row t of a sequence matrix is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Base of every error raised by the library. `kind()` is the stable error name
// used in quarantine files and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SIFT_DEFINE_ERROR(Name)                                          \
  class Name : public ::sift::Error {                                    \
   public:                                                               \
    explicit Name(const std::string& what) : ::sift::Error(#Name, what) {} \
  }

SIFT_DEFINE_ERROR(InvalidSpec);
SIFT_DEFINE_ERROR(MalformedRecord);
SIFT_DEFINE_ERROR(DuplicateId);
SIFT_DEFINE_ERROR(FeatureUnavailable);
SIFT_DEFINE_ERROR(MissingTranscript);
SIFT_DEFINE_ERROR(MissingAttributes);
SIFT_DEFINE_ERROR(EmptyInstructionPool);
SIFT_DEFINE_ERROR(TransportError);
SIFT_DEFINE_ERROR(ProviderRefusal);
SIFT_DEFINE_ERROR(EmptyGeneration);
SIFT_DEFINE_ERROR(EmptyComponent);
SIFT_DEFINE_ERROR(InvalidWeight);
SIFT_DEFINE_ERROR(DimMismatch);
SIFT_DEFINE_ERROR(LengthMismatch);
SIFT_DEFINE_ERROR(TemplateError);
SIFT_DEFINE_ERROR(NoTargetTokens);
SIFT_DEFINE_ERROR(DecodeBudgetExceeded);
SIFT_DEFINE_ERROR(ZeroVector);
SIFT_DEFINE_ERROR(SingleClass);
SIFT_DEFINE_ERROR(IoError);
SIFT_DEFINE_ERROR(NonFiniteLoss);
SIFT_DEFINE_ERROR(StreamExhausted);
SIFT_DEFINE_ERROR(IncompatibleCheckpoints);
SIFT_DEFINE_ERROR(UnknownConfigTag);
SIFT_DEFINE_ERROR(ConfigError);

#undef SIFT_DEFINE_ERROR

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a base seed and a list of indices.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

// Seeded random source. Distributions are implemented here rather than taken
// from <random> so that byte-identical outputs do not depend on the standard
// library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// 64-bit FNV-1a; used where a cheap stable string hash is needed (data splits).
std::uint64_t fnv1a64(std::string_view s);

using Digest = std::array<std::uint8_t, 32>;
Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

// Little-endian byte sink used by every hashed binary layout.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  // Writes rows*cols doubles in row-major order regardless of storage order.
  void matrix(const Matrix& m);
  void vector(const Vector& v);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  void matrix(Matrix& m);  // m must be pre-sized
  void vector(Vector& v);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace sift
