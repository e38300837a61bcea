#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "uadct/rng.hpp"
#include "uadct/tensor.hpp"

using namespace uadct;

TEST_CASE("seeded streams repeat and derived seeds differ") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next() == b.next());
    }
    CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
    CHECK(derive_seed({1, 2}) == derive_seed({1, 2}));
    CHECK(derive_seed({1}) != derive_seed({1, 0}));
}

TEST_CASE("rng state round trip") {
    Rng a(7);
    a.next();
    Rng b(0);
    b.set_state(a.state());
    CHECK(a == b);
    CHECK(a.uniform() == b.uniform());
}

TEST_CASE("bounded draws stay in range and cover it") {
    Rng r(3);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = r.below(7);
        REQUIRE(v < 7);
        ++seen[v];
    }
    for (int c : seen) {
        CHECK(c > 800);
        CHECK(c < 1200);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("normal draws have unit moments") {
    Rng r(5);
    double s = 0.0;
    double s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::abs(s / n) < 0.05);
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("shuffle is a seeded permutation") {
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    auto a = v;
    auto b = v;
    Rng(9).shuffle(std::span<int>(a));
    Rng(9).shuffle(std::span<int>(b));
    CHECK(a == b);
    CHECK(a != v);
    std::sort(a.begin(), a.end());
    CHECK(a == v);
}

TEST_CASE("batch concat and slice are inverse") {
    Tensor a(2, 1, 2, 3);
    Tensor b(3, 1, 2, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data()[i] = static_cast<double>(i);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        b.data()[i] = -static_cast<double>(i);
    }
    const Tensor c = concat_batch(a, b);
    CHECK(c.batch() == 5);
    CHECK(slice_batch(c, 0, 2) == a);
    CHECK(slice_batch(c, 2, 3) == b);
    CHECK(concat_batch(Tensor{}, b) == b);
    CHECK(concat_batch(a, Tensor{}) == a);

    LabelMask la(1, 2, 2, 1);
    LabelMask lb(2, 2, 2, 2);
    const LabelMask lc = concat_batch(la, lb);
    CHECK(lc.batch == 3);
    CHECK(lc.at(0, 1, 1) == 1);
    CHECK(lc.at(2, 0, 0) == 2);
}

TEST_CASE("tensor arithmetic helpers") {
    Tensor t(1, 2, 2, 2, 1.0);
    Tensor u(1, 2, 2, 2, 2.0);
    t.axpy(0.5, u);
    for (double v : t.data()) {
        CHECK(v == 2.0);
    }
    CHECK(t.all_finite());
    t.at(0, 1, 1, 1) = std::nan("");
    CHECK_FALSE(t.all_finite());
    Field f(1, 2, 2, 3.0);
    CHECK(f.sum() == 12.0);
    CHECK(f.mean() == 3.0);
}
