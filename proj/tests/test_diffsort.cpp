#include "doctest.h"

#include "bend/diffsort.hpp"
#include "bend/error.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace bend;
using namespace bend::diffsort;

namespace {

ScoreVector scores_of(const std::vector<std::vector<double>>& rows) {
    ScoreVector s{Matrix(rows.size(), rows.front().size())};
    for (std::size_t b = 0; b < rows.size(); ++b) std::copy(rows[b].begin(), rows[b].end(), s.values.row(b).begin());
    return s;
}

std::vector<std::size_t> decoded_row(const HardDecode& d, std::size_t b) {
    return {d.indices.begin() + static_cast<std::ptrdiff_t>(b * d.n),
            d.indices.begin() + static_cast<std::ptrdiff_t>((b + 1) * d.n)};
}

double l1_to_exact(const SoftPermutation& p, std::size_t b, const std::vector<std::size_t>& order) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.n(); ++i)
        for (std::size_t k = 0; k < p.n(); ++k) acc += std::abs(p(b, i, k) - (order[i] == k ? 1.0 : 0.0));
    return acc;
}

}  // namespace

TEST_CASE("bitonic schedule sorts hard inputs and has the expected depth") {
    for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
        const auto schedule = bitonic_schedule(n);
        std::size_t k = 0;
        while ((std::size_t{1} << k) < n) ++k;
        CHECK(schedule.size() == k * (k + 1) / 2);
        auto v = oracle::uniform(n, n);
        for (const auto& layer : schedule)
            for (const Comparator& c : layer)
                if (v[c.lo] > v[c.hi]) std::swap(v[c.lo], v[c.hi]);
        CHECK(std::is_sorted(v.begin(), v.end()));
    }
    CHECK_THROWS_AS(bitonic_schedule(6), Error);
}

TEST_CASE("well-separated ascending scores give the identity at steepness 50") {
    const auto r = soft_sort(scores_of({{1, 2, 3, 4}}), 50.0);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 4; ++k) max_dev = std::max(max_dev, std::abs(r.perm(0, i, k) - (i == k ? 1.0 : 0.0)));
    CHECK(max_dev < 1e-8);
}

TEST_CASE("steep sort of [3, 1, 2, 0] decodes to the exact argsort") {
    const std::vector<double> v{3, 1, 2, 0};
    const auto r = soft_sort(scores_of({v}), 1e4);
    const auto d = hard_decode(r.perm);
    CHECK(d.valid);
    CHECK(decoded_row(d, 0) == oracle::argsort(v));
    CHECK(decoded_row(d, 0) == std::vector<std::size_t>{3, 1, 2, 0});
}

TEST_CASE("all-equal scores: every comparator weight is one half and sorting is a no-op") {
    SortTrace trace;
    const auto r = soft_sort(scores_of({{1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5}}), 50.0, &trace);
    for (double w : trace.weights[0]) CHECK(w == 0.5);
    for (std::size_t i = 0; i < 8; ++i) CHECK(r.sorted(0, i) == 1.5);
}

TEST_CASE("soft_sort argument errors") {
    CHECK_THROWS_AS(soft_sort(scores_of({{1, 2, 3}}), 50.0), Error);
    try {
        soft_sort(scores_of({{1, 2, 3}}), 50.0);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Size);
    }
    try {
        soft_sort(scores_of({{1, 2}}), 0.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidConfig);
    }
}

TEST_CASE("hard_decode on identity, reversal and a non-permutation") {
    const std::size_t n = 5;
    std::vector<std::size_t> id(n), rev(n);
    for (std::size_t i = 0; i < n; ++i) {
        id[i] = i;
        rev[i] = n - 1 - i;
    }
    const auto d = hard_decode(SoftPermutation::from_indices({id, rev}));
    CHECK(d.valid);
    CHECK(decoded_row(d, 0) == id);
    CHECK(decoded_row(d, 1) == rev);

    SoftPermutation dup(1, 2, 1.0);
    dup(0, 0, 0) = 1.0;
    dup(0, 1, 0) = 1.0;
    CHECK_FALSE(hard_decode(dup).valid);
}

TEST_CASE("steepness 50 recovers argsort for all 24 orderings of four distinct values") {
    std::vector<double> v{0.0, 1.0, 2.0, 3.0};
    int cases = 0;
    do {
        const auto d = hard_decode(soft_sort(scores_of({v}), 50.0).perm);
        CHECK(decoded_row(d, 0) == oracle::argsort(v));
        ++cases;
    } while (std::next_permutation(v.begin(), v.end()));
    CHECK(cases == 24);
}

TEST_CASE("property: hard-limit correctness for every permutation with n <= 8") {
    for (std::size_t n : {2u, 4u, 8u}) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
        // Batch all permutations of this length through one call.
        std::vector<std::vector<double>> rows;
        do rows.push_back(v);
        while (std::next_permutation(v.begin(), v.end()));
        const auto r = soft_sort(scores_of(rows), 1e4);
        const auto d = hard_decode(r.perm);
        bool ok = d.valid;
        double worst = 0.0;
        for (std::size_t b = 0; b < rows.size(); ++b) {
            const auto order = oracle::argsort(rows[b]);
            ok = ok && decoded_row(d, b) == order;
            worst = std::max(worst, l1_to_exact(r.perm, b, order));
        }
        CAPTURE(n);
        CHECK(ok);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("property: soft permutations are doubly stochastic") {
    std::uint64_t seed = 100;
    double worst = 0.0;
    bool in_range = true;
    for (double steepness : {1.0, 50.0, 1e4})
        for (std::size_t n : {2u, 4u, 8u, 16u}) {
            ScoreVector s{Matrix(100, n)};
            const auto v = oracle::uniform(seed++, 100 * n, -3.0, 3.0);
            std::copy(v.begin(), v.end(), s.values.data());
            const auto r = soft_sort(s, steepness);
            for (std::size_t b = 0; b < 100; ++b)
                for (std::size_t i = 0; i < n; ++i) {
                    double row = 0.0, col = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        row += r.perm(b, i, k);
                        col += r.perm(b, k, i);
                        in_range = in_range && r.perm(b, i, k) >= 0.0 && r.perm(b, i, k) <= 1.0;
                    }
                    worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
                }
        }
    CHECK(in_range);
    CHECK(worst < 1e-5);
}

TEST_CASE("property: sorted output is exactly perm * scores") {
    ScoreVector s{Matrix(6, 8)};
    const auto v = oracle::uniform(5, s.values.size());
    std::copy(v.begin(), v.end(), s.values.data());
    const auto r = soft_sort(s, 7.0);
    for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t i = 0; i < 8; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 8; ++k) acc += r.perm(b, i, k) * s.values(b, k);
            CHECK(r.sorted(b, i) == acc);
        }
}

TEST_CASE("soft_sort gradients match central differences") {
    const std::size_t n = 4;
    const auto x0 = oracle::uniform(31, 2 * n, -1.0, 1.0);
    const auto r_sorted = oracle::uniform(32, 2 * n);
    const auto r_perm = oracle::uniform(33, 2 * n * n);

    // Scalar probe touching both outputs.
    const auto probe = [&](std::span<const double> x) {
        ScoreVector s{Matrix(2, n)};
        std::copy(x.begin(), x.end(), s.values.data());
        const auto r = soft_sort(s, 5.0);
        double acc = 0.0;
        for (std::size_t k = 0; k < r.sorted.size(); ++k) acc += r.sorted.data()[k] * r_sorted[k];
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t k = 0; k < n * n; ++k) acc += r.perm.sample(b)[k] * r_perm[b * n * n + k];
        return acc;
    };

    ScoreVector s{Matrix(2, n)};
    std::copy(x0.begin(), x0.end(), s.values.data());
    SortTrace trace;
    soft_sort(s, 5.0, &trace);
    Matrix d_sorted(2, n);
    std::copy(r_sorted.begin(), r_sorted.end(), d_sorted.data());
    SoftPermutation d_perm(2, n, 5.0);
    for (std::size_t b = 0; b < 2; ++b) std::copy_n(r_perm.begin() + static_cast<std::ptrdiff_t>(b * n * n), n * n, d_perm.sample(b));

    const Matrix g = soft_sort_backward(trace, &d_sorted, &d_perm);
    CHECK(oracle::relative_error(g.values(), oracle::finite_difference(probe, x0)) < 1e-3);

    // d(sorted)/d(scores) alone.
    const auto sorted_only = [&](std::span<const double> x) {
        ScoreVector t{Matrix(2, n)};
        std::copy(x.begin(), x.end(), t.values.data());
        const auto r = soft_sort(t, 5.0);
        double acc = 0.0;
        for (std::size_t k = 0; k < r.sorted.size(); ++k) acc += r.sorted.data()[k] * r_sorted[k];
        return acc;
    };
    const Matrix g2 = soft_sort_backward(trace, &d_sorted, nullptr);
    CHECK(oracle::relative_error(g2.values(), oracle::finite_difference(sorted_only, x0)) < 1e-3);
}

TEST_CASE("permute_axis: identity, reversal and gather oracle") {
    const Tensor4 a = oracle::random_tensor(41, 2, 3, 4, 8);
    std::vector<std::size_t> id4{0, 1, 2, 3}, rev4{3, 2, 1, 0};
    CHECK(permute_axis(a, SoftPermutation::from_indices({id4, id4}), SortAxis::height) == a);

    const Tensor4 flipped = permute_axis(a, SoftPermutation::from_indices({rev4, rev4}), SortAxis::height);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 8; ++x) CHECK(flipped(b, c, y, x) == a(b, c, 3 - y, x));

    // Random hard permutations along each axis against direct gathering.
    for (bool height : {true, false}) {
        const std::size_t n = height ? 4 : 8;
        std::vector<std::vector<std::size_t>> idx(2);
        for (std::size_t b = 0; b < 2; ++b) {
            const auto keys = oracle::uniform(50 + b + (height ? 0 : 10), n);
            idx[b] = oracle::argsort(keys);
        }
        const auto axis = height ? SortAxis::height : SortAxis::width;
        CHECK(permute_axis(a, SoftPermutation::from_indices(idx), axis) == oracle::gather_axis(a, idx, height));
    }
}

TEST_CASE("permute_axis shape errors") {
    const Tensor4 a(1, 2, 4, 16);
    std::vector<std::size_t> id8{0, 1, 2, 3, 4, 5, 6, 7};
    CHECK_THROWS_AS(permute_axis(a, SoftPermutation::from_indices({id8}), SortAxis::width), Error);
    std::vector<std::size_t> id4{0, 1, 2, 3};
    CHECK_THROWS_AS(permute_axis(a, SoftPermutation::from_indices({id4, id4}), SortAxis::height), Error);
}

TEST_CASE("permute_axis backward matches central differences in both arguments") {
    for (bool height : {true, false}) {
        const auto axis = height ? SortAxis::height : SortAxis::width;
        const Tensor4 a = oracle::random_tensor(61, 2, 2, 4, 4);
        SoftPermutation p(2, 4, 1.0);
        const auto pv = oracle::uniform(62, 2 * 16, 0.0, 1.0);
        for (std::size_t b = 0; b < 2; ++b) std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(b * 16), 16, p.sample(b));
        const Tensor4 r = oracle::random_tensor(63, 2, 2, 4, 4);
        const auto dot = [&](const Tensor4& t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < t.size(); ++k) acc += t.data()[k] * r.data()[k];
            return acc;
        };

        Tensor4 d_a;
        SoftPermutation d_p;
        permute_axis_backward(a, p, axis, r, &d_a, &d_p);

        const auto fd_a = oracle::finite_difference(
            [&](std::span<const double> x) {
                Tensor4 t = a;
                std::copy(x.begin(), x.end(), t.data());
                return dot(permute_axis(t, p, axis));
            },
            std::vector<double>(a.values().begin(), a.values().end()));
        CHECK(oracle::relative_error(d_a.values(), fd_a) < 1e-6);

        const auto fd_p = oracle::finite_difference(
            [&](std::span<const double> x) {
                SoftPermutation q(2, 4, 1.0);
                for (std::size_t b = 0; b < 2; ++b) std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(b * 16), 16, q.sample(b));
                return dot(permute_axis(a, q, axis));
            },
            pv);
        std::vector<double> dp(d_p.sample(0), d_p.sample(0) + 32);
        CHECK(oracle::relative_error(dp, fd_p) < 1e-6);
    }
}

TEST_CASE("row_scores shapes and zero head") {
    const Tensor4 a = oracle::random_tensor(71, 2, 4, 8, 16);
    std::vector<double> w(4 * 9, 0.0), b(1, 0.0);
    const kernels::ConvWeights head{w, b, 1, 4};
    const auto sw = row_scores(a, head, SortAxis::width);
    CHECK(sw.values.rows() == 2);
    CHECK(sw.values.cols() == 16);
    for (double v : sw.values.values()) CHECK(v == 0.0);
    const auto sh = row_scores(a, head, SortAxis::height);
    CHECK(sh.values.cols() == 8);

    std::vector<double> w3(3 * 9, 0.0);
    CHECK_THROWS_AS(row_scores(a, {w3, b, 1, 3}, SortAxis::width), Error);
}

TEST_CASE("row_scores backward matches central differences") {
    const Tensor4 a = oracle::random_tensor(81, 2, 3, 4, 8);
    const auto w = oracle::uniform(82, 27), b = oracle::uniform(83, 1);
    for (auto axis : {SortAxis::height, SortAxis::width}) {
        const std::size_t n = axis == SortAxis::height ? 4 : 8;
        const auto r = oracle::uniform(84, 2 * n);
        Matrix d_s(2, n);
        std::copy(r.begin(), r.end(), d_s.data());
        std::vector<double> dw(27, 0.0), db(1, 0.0);
        Tensor4 d_a;
        row_scores_backward(a, {w, b, 1, 3}, axis, d_s, {dw, db}, &d_a);
        const auto fd_w = oracle::finite_difference(
            [&](std::span<const double> x) {
                const auto s = row_scores(a, {x, b, 1, 3}, axis);
                double acc = 0.0;
                for (std::size_t k = 0; k < r.size(); ++k) acc += s.values.data()[k] * r[k];
                return acc;
            },
            w);
        CHECK(oracle::relative_error(dw, fd_w) < 1e-6);
    }
}
