#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slic {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Error hierarchy. Everything thrown by the library derives from Error so the
// CLI can report a single diagnostic and exit nonzero.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class CheckpointError : public Error {
 public:
  using Error::Error;
};
class DivergenceError : public Error {
 public:
  using Error::Error;
};
class DependencyError : public Error {
 public:
  using Error::Error;
};
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Reserved token ids. Content tokens start at kFirstContent.
struct Vocab {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kContext = 4;   // [CONTEXT]
  static constexpr TokenId kSummary = 5;   // [SUMMARY]
  static constexpr TokenId kSummaryA = 6;  // [SUMMARY A]
  static constexpr TokenId kSummaryB = 7;  // [SUMMARY B]
  static constexpr TokenId kGood = 8;
  static constexpr TokenId kBad = 9;
  static constexpr TokenId kA = 10;
  static constexpr TokenId kB = 11;
  static constexpr TokenId kFirstContent = 12;

  int size = 64;

  Vocab() = default;
  explicit Vocab(int vocab_size);

  bool contains(TokenId id) const { return id >= 0 && id < size; }
  static bool is_reserved(TokenId id) { return id >= 0 && id < kFirstContent; }
  int content_count() const { return size - kFirstContent; }
};

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Thin deterministic RNG wrapper. Conversions to real/int are done here rather
// than through <random> distributions so streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                        // [0, 1)
  std::size_t below(std::size_t n);        // [0, n)
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Lexicographic comparison used for deterministic tie-breaks.
bool lex_less(const Tokens& a, const Tokens& b);

std::string tokens_to_string(const Tokens& t);

}  // namespace slic
