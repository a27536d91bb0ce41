#include "grc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "grc/rng.hpp"

namespace grc {

std::string to_string(const Shape4& s) {
    std::ostringstream os;
    os << s;
    return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape4& s) {
    return os << '(' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ')';
}

void validate_shape(const Shape4& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw std::invalid_argument("tensor dimensions must all be >= 1, got " + to_string(s));
    }
}

Tensor4::Tensor4(Shape4 shape, Real fill) : shape_(shape) {
    validate_shape(shape);
    data_.assign(shape.numel(), fill);
}

Tensor4::Tensor4(Shape4 shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    validate_shape(shape);
    if (data_.size() != shape.numel()) {
        throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                    " does not match shape " + to_string(shape));
    }
}

Real Tensor4::sum() const {
    Real s = 0;
    for (Real v : data_) s += v;
    return s;
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor4 zeros(Shape4 shape) { return Tensor4(shape); }

Tensor4 pad_zero(const Tensor4& t, int pad) {
    if (pad < 0) throw std::invalid_argument("pad must be >= 0");
    if (pad == 0) return t;
    const Shape4 s = t.shape();
    Tensor4 out({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
    for (int b = 0; b < s.n; ++b) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                const Real* src = t.data().data() + t.index(b, c, y, 0);
                std::copy(src, src + s.w, &out.at(b, c, y + pad, pad));
            }
        }
    }
    return out;
}

Tensor4 crop_border(const Tensor4& t, int pad) {
    if (pad < 0) throw std::invalid_argument("pad must be >= 0");
    if (pad == 0) return t;
    const Shape4 s = t.shape();
    if (s.h <= 2 * pad || s.w <= 2 * pad) {
        throw std::invalid_argument("crop of " + std::to_string(pad) + " exceeds " + to_string(s));
    }
    Tensor4 out({s.n, s.c, s.h - 2 * pad, s.w - 2 * pad});
    for (int b = 0; b < s.n; ++b) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < out.h(); ++y) {
                const Real* src = t.data().data() + t.index(b, c, y + pad, pad);
                std::copy(src, src + out.w(), &out.at(b, c, y, 0));
            }
        }
    }
    return out;
}

Tensor4 slice_batch(const Tensor4& t, int begin, int end) {
    if (begin < 0 || end > t.n() || begin >= end) {
        throw std::out_of_range("batch slice out of range");
    }
    const Shape4 s = t.shape();
    const std::size_t item = static_cast<std::size_t>(s.c) * s.plane();
    std::vector<Real> data(t.data().begin() + begin * item, t.data().begin() + end * item);
    return Tensor4({end - begin, s.c, s.h, s.w}, std::move(data));
}

Tensor4 concat_batch(std::span<const Tensor4> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_batch of nothing");
    Shape4 s = parts.front().shape();
    s.n = 0;
    std::vector<Real> data;
    for (const Tensor4& p : parts) {
        if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
            throw std::invalid_argument("concat_batch shape mismatch");
        }
        s.n += p.n();
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    return Tensor4(s, std::move(data));
}

FilterBank::FilterBank(Shape4 shape, bool with_bias) : weights(shape) {
    if (shape.h != shape.w) throw std::invalid_argument("filter kernels must be square");
    if (with_bias) bias.assign(shape.n, Real(0));
}

FilterBank fan_in_init(Shape4 shape, std::uint64_t seed, bool with_bias) {
    FilterBank bank(shape, with_bias);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(shape.c) * shape.h * shape.w));
    CounterRng rng(seed);
    for (Real& v : bank.weights.data()) v = static_cast<Real>(stddev * rng.normal());
    return bank;
}

namespace {

template <typename UInt>
void put_le(std::ostream& os, UInt v) {
    char bytes[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt get_le(std::istream& is) {
    unsigned char bytes[sizeof(UInt)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) {
        throw std::runtime_error("truncated tensor dump");
    }
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

std::size_t dump_size(const Shape4& shape, int element_width) {
    return 4 + 1 + 1 + 4 * 4 + shape.numel() * static_cast<std::size_t>(element_width);
}

void write_tensor(std::ostream& os, const Tensor4& t, int element_width) {
    if (element_width != 4 && element_width != 8) {
        throw std::invalid_argument("element width must be 4 or 8");
    }
    os.write(kDumpMagic.data(), kDumpMagic.size());
    os.put(static_cast<char>(kDumpVersion));
    os.put(static_cast<char>(element_width));
    for (int d : {t.n(), t.c(), t.h(), t.w()}) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (Real v : t.data()) {
        if (element_width == 8) {
            put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
        } else {
            put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    if (!os) throw std::runtime_error("failed writing tensor dump");
}

Tensor4 read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kDumpMagic) {
        throw std::runtime_error("not a tensor dump (bad magic)");
    }
    const int version = is.get();
    if (version != kDumpVersion) throw std::runtime_error("unsupported tensor dump version");
    const int width = is.get();
    if (width != 4 && width != 8) throw std::runtime_error("unsupported element width in tensor dump");
    Shape4 s;
    s.n = static_cast<int>(get_le<std::uint32_t>(is));
    s.c = static_cast<int>(get_le<std::uint32_t>(is));
    s.h = static_cast<int>(get_le<std::uint32_t>(is));
    s.w = static_cast<int>(get_le<std::uint32_t>(is));
    Tensor4 t(s);
    for (Real& v : t.data()) {
        if (width == 8) {
            v = static_cast<Real>(std::bit_cast<double>(get_le<std::uint64_t>(is)));
        } else {
            v = static_cast<Real>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
        }
    }
    return t;
}

void save_tensor(const std::string& path, const Tensor4& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_tensor(os, t);
}

Tensor4 load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_tensor(is);
}

}  // namespace grc
