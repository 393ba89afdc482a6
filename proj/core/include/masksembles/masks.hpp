#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace masksembles {

/// Parameters of a mask pool: `n` masks, each with exactly `m` ones placed
/// among `width()` positions. `s` controls the overlap; the nominal width is
/// round(m * s) unless an explicit width was pinned (fixed-width layers).
struct MaskSpec {
  std::size_t n = 1;
  std::size_t m = 1;
  double s = 1.0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> width_override;

  /// Pre-trim width W.
  std::size_t width() const;

  /// Throws ValidationError naming the first violated bound.
  void validate() const;

  /// Fraction of zeros in a pre-trim row when N is large: 1 - 1/s.
  double dropout_rate() const { return 1.0 - 1.0 / s; }

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Immutable N x K binary matrix of masks, K being the retained width.
class MaskSet {
 public:
  /// Builds a set from explicit rows. Every row must have the same length.
  /// Used for hand-made pools and for deserialization; `spec` is recorded
  /// as provenance only.
  MaskSet(MaskSpec spec, std::vector<std::vector<std::uint8_t>> rows,
          std::size_t pre_trim_width, bool trimmed);

  const MaskSpec& spec() const noexcept { return spec_; }
  std::size_t count() const noexcept { return count_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pre_trim_width() const noexcept { return pre_trim_width_; }
  std::size_t dropped_count() const noexcept { return pre_trim_width_ - width_; }
  bool trimmed() const noexcept { return trimmed_; }

  std::span<const std::uint8_t> row(std::size_t i) const;
  std::uint8_t at(std::size_t i, std::size_t j) const { return bits_[i * width_ + j]; }
  std::size_t ones_in_row(std::size_t i) const;

  friend bool operator==(const MaskSet&, const MaskSet&) = default;

 private:
  friend MaskSet generate_masks(const MaskSpec& spec, bool trim);
  MaskSet() = default;

  MaskSpec spec_;
  std::size_t count_ = 0;
  std::size_t width_ = 0;
  std::size_t pre_trim_width_ = 0;
  bool trimmed_ = false;
  std::vector<std::uint8_t> bits_;
};

/// Draws `spec.n` masks. Row i places its `m` ones on a uniform random
/// m-subset of the W positions, sampled by a partial Fisher-Yates shuffle on
/// its own PRNG substream derived from (seed, i). With `trim`, positions that
/// are zero in every row are removed; survivors keep their relative order.
MaskSet generate_masks(const MaskSpec& spec, bool trim);

/// Closed-form expectation of the retained width: W * [1 - (1 - 1/s)^n],
/// evaluated with the real-valued s (so W is taken as m * s).
double expected_size(const MaskSpec& spec);

/// Approximate mean pairwise IoU of a pool: 1 / (2s - 1).
double expected_iou(double s);

/// |a & b| / |a | b| for two equal-length binary rows. Two all-zero rows
/// have IoU 1 by convention.
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Arithmetic mean of the IoU over all unordered pairs of rows.
double empirical_mean_iou(const MaskSet& masks);

double dropout_rate_equivalent(const MaskSpec& spec);

/// Spec whose masks fill a layer of exactly `target_width` units:
/// m = round(target_width / s) and W pinned to target_width. Pair with
/// trim = false so the layer never shrinks.
MaskSpec solve_m_for_fixed_width(std::size_t target_width, std::size_t n,
                                 double s, std::uint64_t seed = 0);

// Text format:
//   line 1: "N M S seed trim" (+ " W" when the pre-trim width is pinned)
//   lines 2..N+1: K characters '0'/'1'
void write_masks(std::ostream& out, const MaskSet& masks);
MaskSet read_masks(std::istream& in);
void save_masks(const std::string& path, const MaskSet& masks);
MaskSet load_masks(const std::string& path);

}  // namespace masksembles
