#pragma once

#include <cstdint>
#include <string>
#include <utility>

namespace wsdfm {

/// Counter-based deterministic random stream.
///
/// A stream is identified by (seed, label, index). Draws advance only a
/// 64-bit counter; each draw hashes (key, counter) through a splitmix64-style
/// mixer, so streams with distinct identities are statistically independent
/// and a stream's output depends only on its identity and how many values
/// were drawn — never on what other streams did. That is what makes runs
/// reproducible under reordering: label the streams by purpose and the
/// results are byte-stable across refactors that shuffle unrelated draws.
///
/// substream(i) derives a child stream keyed by (parent key, i) without
/// consuming any state from the parent — handy for giving every sample of a
/// batch its own independent stream.
class RngStream {
 public:
  RngStream(std::uint64_t seed, const std::string& label,
            std::uint64_t index = 0);

  /// Child stream whose key is a hash of this stream's key and `i`.
  /// Derivation reads no state: the parent's draws are unaffected, and the
  /// same (parent identity, i) always yields the same child.
  RngStream substream(std::uint64_t i) const;

  /// Next raw 64-bit value.
  std::uint64_t next_u64();

  /// Uniform double in [0, 1), 53 bits of mantissa.
  double uniform();

  /// Uniform integer in [0, bound) by Lemire's method. bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);

  /// Standard normal via Box-Muller (both values used, cached).
  double normal();

  /// Identity key, exposed for tests.
  std::uint64_t key() const { return key_; }

 private:
  RngStream(std::uint64_t seed, std::uint64_t key);

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// FNV-1a over the bytes of a string; used to fold stream labels into keys.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace wsdfm
