#include <sstream>

#include "doctest.h"
#include "grc/gradcheck.hpp"
#include "grc/rng.hpp"
#include "grc/tensor.hpp"

using namespace grc;

TEST_CASE("zeros and shape accessors") {
    const Tensor4 t = zeros({2, 3, 4, 5});
    CHECK(t.size() == 120);
    CHECK(t.sum() == 0);
    CHECK(t.index(1, 2, 3, 4) == 119);
    CHECK(t.plane(1, 0).size() == 20);
    CHECK_THROWS_AS(validate_shape({0, 1, 1, 1}), std::invalid_argument);
}

TEST_CASE("pad_zero surrounds each plane and crop_border undoes it") {
    Tensor4 t({1, 2, 2, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(i + 1);
    const Tensor4 p = pad_zero(t, 2);
    CHECK(p.shape() == Shape4{1, 2, 6, 7});
    CHECK(p.at(0, 0, 0, 0) == 0);
    CHECK(p.at(0, 0, 2, 2) == 1);
    CHECK(p.at(0, 1, 3, 4) == 12);
    CHECK(p.sum() == t.sum());
    CHECK(crop_border(p, 2) == t);
    CHECK_THROWS_AS(pad_zero(t, -1), std::invalid_argument);
}

TEST_CASE("batch slicing round-trips") {
    const Tensor4 t = random_tensor({3, 2, 2, 2}, 5);
    const Tensor4 parts[] = {slice_batch(t, 0, 1), slice_batch(t, 1, 3)};
    CHECK(parts[1].n() == 2);
    CHECK(concat_batch(parts) == t);
}

TEST_CASE("fan-in initialisation has variance 2/(c_in K^2)") {
    const FilterBank f = fan_in_init({64, 32, 3, 3}, 11);
    double mean = 0, sq = 0;
    for (Real v : f.weights.data()) {
        mean += v;
        sq += v * v;
    }
    mean /= f.weights.size();
    const double var = sq / f.weights.size() - mean * mean;
    const double expected = 2.0 / (32 * 9);
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(expected).epsilon(0.2));
    CHECK_FALSE(f.has_bias());
    CHECK(fan_in_init({64, 32, 3, 3}, 11).weights == f.weights);
    CHECK_FALSE(fan_in_init({64, 32, 3, 3}, 12).weights == f.weights);
    CHECK(fan_in_init({4, 2, 1, 1}, 1, true).bias.size() == 4);
}

TEST_CASE("non-square kernels are rejected") {
    CHECK_THROWS_AS(FilterBank({2, 2, 3, 1}, false), std::invalid_argument);
}

TEST_CASE("tensor dump round-trips bit-exactly") {
    const Tensor4 t = random_tensor({2, 3, 4, 5}, 3, -1e3, 1e3);
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.size() == dump_size(t.shape()));
    CHECK(bytes.substr(0, 4) == "GRCT");
    CHECK(static_cast<unsigned char>(bytes[4]) == kDumpVersion);
    CHECK(static_cast<unsigned char>(bytes[5]) == sizeof(Real));
    // dims little-endian u32 after the 6-byte prefix
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);
    CHECK(static_cast<unsigned char>(bytes[10]) == 3);
    CHECK(read_tensor(ss) == t);
}

TEST_CASE("tensor dump rejects a bad header") {
    std::stringstream ss("GRCX\x01\x08");
    CHECK_THROWS(read_tensor(ss));
}

TEST_CASE("counter rng is reproducible from key and counter") {
    CounterRng a(42);
    a.next_u64();
    const std::uint64_t second = a.next_u64();
    CounterRng b(42, 1);
    CHECK(b.next_u64() == second);
    CHECK(derive_key(1, 2) != derive_key(2, 1));
    CounterRng u(7);
    double lo = 1, hi = 0;
    for (int i = 0; i < 10000; ++i) {
        const double v = u.uniform();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0);
    CHECK(hi < 1);
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}
