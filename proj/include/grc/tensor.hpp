#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grc {

// Element type is fixed at build time: f64 for tests and oracles, f32 when
// GRC_REAL_FLOAT is defined (benchmark builds).
#ifdef GRC_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

struct Shape4 {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);
std::ostream& operator<<(std::ostream& os, const Shape4& s);

/// Dense (batch, channel, height, width) array in channel-major planar order.
/// Each channel plane is a contiguous h*w block.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, Real fill = Real(0));
    Tensor4(Shape4 shape, std::vector<Real> data);

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int b, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }
    Real& at(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
    Real at(int b, int ch, int y, int x) const { return data_[index(b, ch, y, x)]; }
    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    std::span<Real> data() { return data_; }
    std::span<const Real> data() const { return data_; }

    /// Contiguous h*w plane of channel `ch` in batch item `b`.
    std::span<Real> plane(int b, int ch) {
        return {data_.data() + index(b, ch, 0, 0), shape_.plane()};
    }
    std::span<const Real> plane(int b, int ch) const {
        return {data_.data() + index(b, ch, 0, 0), shape_.plane()};
    }

    Real sum() const;
    bool all_finite() const;

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<Real> data_;
};

/// Throws std::invalid_argument when any dimension is < 1.
void validate_shape(const Shape4& s);

Tensor4 zeros(Shape4 shape);

/// Zero border of `pad` pixels on every side of each plane.
Tensor4 pad_zero(const Tensor4& t, int pad);

/// Inverse of pad_zero: drops `pad` pixels from every side.
Tensor4 crop_border(const Tensor4& t, int pad);

/// Items [begin, end) of the batch axis.
Tensor4 slice_batch(const Tensor4& t, int begin, int end);
Tensor4 concat_batch(std::span<const Tensor4> parts);

/// Convolution weights (c_out, c_in, K, K) and an optional per-filter bias.
struct FilterBank {
    Tensor4 weights;
    std::vector<Real> bias;  // empty when the bank has no bias

    FilterBank() = default;
    FilterBank(Shape4 shape, bool with_bias);

    int c_out() const { return weights.n(); }
    int c_in() const { return weights.c(); }
    int kernel() const { return weights.h(); }
    bool has_bias() const { return !bias.empty(); }
    std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

/// He-normal initialisation: zero mean, variance 2/(c_in*K*K). Deterministic in `seed`.
FilterBank fan_in_init(Shape4 shape, std::uint64_t seed, bool with_bias = false);

// Binary dump: "GRCT", version 0x01, element width (4|8), four u32 LE dims, LE payload.
inline constexpr std::array<char, 4> kDumpMagic{'G', 'R', 'C', 'T'};
inline constexpr std::uint8_t kDumpVersion = 0x01;

void write_tensor(std::ostream& os, const Tensor4& t, int element_width = sizeof(Real));
Tensor4 read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor4& t);
Tensor4 load_tensor(const std::string& path);

/// Bytes occupied by the dump of `shape` at the given element width.
std::size_t dump_size(const Shape4& shape, int element_width = sizeof(Real));

}  // namespace grc
