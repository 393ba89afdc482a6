#include "masksembles/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "masksembles/error.hpp"
#include "masksembles/io.hpp"
#include "masksembles/rng.hpp"

namespace masksembles {

std::size_t MaskSpec::width() const {
  if (width_override) return *width_override;
  return static_cast<std::size_t>(std::llround(static_cast<double>(m) * s));
}

void MaskSpec::validate() const {
  if (n < 1) throw ValidationError("n must be ≥ 1");
  if (m < 1) throw ValidationError("m must be ≥ 1");
  if (!std::isfinite(s) || s < 1.0) throw ValidationError("s must be ≥ 1");
  if (width() < m) {
    throw ValidationError("pre-trim width " + std::to_string(width()) +
                          " must be ≥ m = " + std::to_string(m));
  }
}

MaskSet::MaskSet(MaskSpec spec, std::vector<std::vector<std::uint8_t>> rows,
                 std::size_t pre_trim_width, bool trimmed)
    : spec_(std::move(spec)),
      count_(rows.size()),
      width_(rows.empty() ? 0 : rows.front().size()),
      pre_trim_width_(pre_trim_width),
      trimmed_(trimmed) {
  if (rows.empty()) throw ValidationError("mask set needs at least one row");
  if (width_ > pre_trim_width_) {
    throw ValidationError("retained width exceeds pre-trim width");
  }
  bits_.reserve(count_ * width_);
  for (const auto& row : rows) {
    if (row.size() != width_) throw ValidationError("mask rows differ in length");
    for (std::uint8_t bit : row) {
      if (bit > 1) throw ValidationError("mask entries must be 0 or 1");
      bits_.push_back(bit);
    }
  }
}

std::span<const std::uint8_t> MaskSet::row(std::size_t i) const {
  if (i >= count_) {
    throw ValidationError("mask index " + std::to_string(i) + " out of range [0, " +
                          std::to_string(count_) + ")");
  }
  return {bits_.data() + i * width_, width_};
}

std::size_t MaskSet::ones_in_row(std::size_t i) const {
  const auto r = row(i);
  return static_cast<std::size_t>(std::count(r.begin(), r.end(), std::uint8_t{1}));
}

MaskSet generate_masks(const MaskSpec& spec, bool trim) {
  spec.validate();
  const std::size_t n = spec.n;
  const std::size_t w = spec.width();

  std::vector<std::uint8_t> full(n * w, 0);
  std::vector<std::size_t> positions(w);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(spec.seed, i));
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    for (std::size_t j = 0; j < spec.m; ++j) {
      const std::size_t pick = j + rng.below(w - j);
      std::swap(positions[j], positions[pick]);
      full[i * w + positions[j]] = 1;
    }
  }

  MaskSet out;
  out.spec_ = spec;
  out.count_ = n;
  out.pre_trim_width_ = w;
  out.trimmed_ = trim;
  if (!trim) {
    out.width_ = w;
    out.bits_ = std::move(full);
    return out;
  }

  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (full[i * w + j]) {
        kept.push_back(j);
        break;
      }
    }
  }
  out.width_ = kept.size();
  out.bits_.resize(n * kept.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kept.size(); ++k) {
      out.bits_[i * kept.size() + k] = full[i * w + kept[k]];
    }
  }
  return out;
}

double expected_size(const MaskSpec& spec) {
  spec.validate();
  const double m = static_cast<double>(spec.m);
  return m * spec.s * (1.0 - std::pow(1.0 - 1.0 / spec.s, static_cast<double>(spec.n)));
}

double expected_iou(double s) {
  if (!std::isfinite(s) || s < 1.0) throw ValidationError("s must be ≥ 1");
  return 1.0 / (2.0 * s - 1.0);
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ValidationError("masks differ in width");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    inter += static_cast<std::size_t>(a[j] & b[j]);
    uni += static_cast<std::size_t>(a[j] | b[j]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double empirical_mean_iou(const MaskSet& masks) {
  if (masks.count() < 2) throw ValidationError("mean IoU needs at least 2 masks");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < masks.count(); ++a) {
    for (std::size_t b = a + 1; b < masks.count(); ++b) {
      total += mask_iou(masks.row(a), masks.row(b));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double dropout_rate_equivalent(const MaskSpec& spec) {
  spec.validate();
  return spec.dropout_rate();
}

MaskSpec solve_m_for_fixed_width(std::size_t target_width, std::size_t n, double s,
                                 std::uint64_t seed) {
  if (target_width < 1) throw ValidationError("target width must be ≥ 1");
  if (!std::isfinite(s) || s < 1.0) throw ValidationError("s must be ≥ 1");
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(target_width) / s));
  if (m < 1) {
    throw ValidationError("width " + std::to_string(target_width) + " at s = " +
                          format_double(s) + " leaves m < 1");
  }
  MaskSpec spec{.n = n, .m = m, .s = s, .seed = seed, .width_override = target_width};
  spec.validate();
  return spec;
}

void write_masks(std::ostream& out, const MaskSet& masks) {
  const MaskSpec& spec = masks.spec();
  out << spec.n << ' ' << spec.m << ' ' << format_double(spec.s) << ' ' << spec.seed << ' '
      << (masks.trimmed() ? 1 : 0);
  if (spec.width_override) out << ' ' << *spec.width_override;
  out << '\n';
  std::string line(masks.width(), '0');
  for (std::size_t i = 0; i < masks.count(); ++i) {
    for (std::size_t j = 0; j < masks.width(); ++j) line[j] = masks.at(i, j) ? '1' : '0';
    out << line << '\n';
  }
}

MaskSet read_masks(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("mask file: missing header");
  const auto header = split_whitespace(line);
  if (header.size() != 5 && header.size() != 6) {
    throw IoError("mask file: header must be 'N M S seed trim [W]'");
  }
  MaskSpec spec;
  spec.n = parse_uint(header[0]);
  spec.m = parse_uint(header[1]);
  spec.s = parse_double(header[2]);
  spec.seed = parse_uint(header[3]);
  const std::uint64_t trim_flag = parse_uint(header[4]);
  if (trim_flag > 1) throw IoError("mask file: trim flag must be 0 or 1");
  if (header.size() == 6) spec.width_override = parse_uint(header[5]);
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw IoError(std::string("mask file: ") + e.what());
  }

  std::vector<std::vector<std::uint8_t>> rows;
  rows.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    if (!std::getline(in, line)) throw IoError("mask file: expected " + std::to_string(spec.n) + " rows");
    std::vector<std::uint8_t> row;
    row.reserve(line.size());
    for (char c : line) {
      if (c != '0' && c != '1') throw IoError("mask file: rows may contain only '0' and '1'");
      row.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    rows.push_back(std::move(row));
  }
  try {
    return MaskSet(spec, std::move(rows), spec.width(), trim_flag == 1);
  } catch (const ValidationError& e) {
    throw IoError(std::string("mask file: ") + e.what());
  }
}

void save_masks(const std::string& path, const MaskSet& masks) {
  std::ostringstream out;
  write_masks(out, masks);
  write_file_atomic(path, out.str());
}

MaskSet load_masks(const std::string& path) {
  std::istringstream in(read_file(path));
  return read_masks(in);
}

}  // namespace masksembles
