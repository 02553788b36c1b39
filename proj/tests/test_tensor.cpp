#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "naive_ref.hpp"
#include "vssl/gradcheck.hpp"
#include "vssl/rng.hpp"
#include "vssl/tensor.hpp"

using namespace vssl;

namespace {

// Keeps values away from relu / max-pool kinks so central differences stay
// valid (see the gradient-check invariant).
Tensor random_tensor_no_kink(Shape shape, Rng& rng, double margin = 1e-4) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = rng.next_uniform(-1.0, 1.0);
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
        t.data()[i] = v;
    }
    return t;
}

}  // namespace

TEST_CASE("conv3d: 1x1x1 identity-sum kernel maps ones to ones") {
    Tensor x({1, 1, 3, 3, 3}, 1.0);
    Tensor k({1, 1, 1, 1, 1}, 1.0);
    Tensor b({1}, 0.0);
    Tensor y = conv3d(x, k, b, {1, 1, 1}, {0, 0, 0});
    CHECK(y.shape() == Shape{1, 1, 3, 3, 3});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("conv3d: output shape arithmetic") {
    Tensor x({2, 3, 16, 32, 32});
    Tensor k({8, 3, 3, 3, 3});
    Tensor b({8});
    Tensor y = conv3d(x, k, b, {1, 1, 1}, {1, 1, 1});
    CHECK(y.shape() == Shape{2, 8, 16, 32, 32});
}

TEST_CASE("conv3d: shape mismatch is rejected with both shapes named") {
    Tensor x({1, 2, 4, 4, 4});
    Tensor k({3, 5, 2, 2, 2});  // Ci=5 vs input Ci=2
    Tensor b({3});
    CHECK_THROWS_WITH_AS(conv3d(x, k, b, {1, 1, 1}, {0, 0, 0}),
                         doctest::Contains("[1,2,4,4,4]"), ShapeError);
    CHECK_THROWS_WITH_AS(conv3d(x, k, b, {1, 1, 1}, {0, 0, 0}),
                         doctest::Contains("[3,5,2,2,2]"), ShapeError);
}

TEST_CASE("conv3d: randomized agreement with the nested-loop oracle") {
    Rng rng(101);
    for (int iter = 0; iter < 100; ++iter) {
        const int64_t N = 1 + rng.next_index(2);
        const int64_t CI = 1 + rng.next_index(3);
        const int64_t T = 3 + rng.next_index(4);
        const int64_t H = 3 + rng.next_index(5);
        const int64_t W = 3 + rng.next_index(5);
        const int64_t CO = 1 + rng.next_index(4);
        const int64_t KT = 1 + rng.next_index(std::min<int64_t>(3, T));
        const int64_t KH = 1 + rng.next_index(std::min<int64_t>(3, H));
        const int64_t KW = 1 + rng.next_index(std::min<int64_t>(3, W));
        const std::array<int64_t, 3> stride{1 + rng.next_index(2), 1 + rng.next_index(2),
                                            1 + rng.next_index(2)};
        const std::array<int64_t, 3> pad{rng.next_index(2), rng.next_index(2),
                                         rng.next_index(2)};
        Tensor x = naive::random_tensor({N, CI, T, H, W}, rng);
        Tensor k = naive::random_tensor({CO, CI, KT, KH, KW}, rng);
        Tensor b = naive::random_tensor({CO}, rng);
        Tensor fast = conv3d(x, k, b, stride, pad);
        Tensor ref = naive::conv3d(x, k, b, stride, pad);
        REQUIRE(fast.shape() == ref.shape());
        CHECK(naive::max_abs_diff(fast, ref) < 1e-12);
    }
}

TEST_CASE("conv3d: spec oracle example [1,2,4,5,5] x [3,2,2,3,3]") {
    Rng rng(7);
    Tensor x = naive::random_tensor({1, 2, 4, 5, 5}, rng);
    Tensor k = naive::random_tensor({3, 2, 2, 3, 3}, rng);
    Tensor b = naive::random_tensor({3}, rng);
    Tensor fast = conv3d(x, k, b, {1, 1, 1}, {0, 0, 0});
    Tensor ref = naive::conv3d(x, k, b, {1, 1, 1}, {0, 0, 0});
    CHECK(naive::max_abs_diff(fast, ref) < 1e-12);
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity map") {
    Rng rng(11);
    Tensor x = naive::random_tensor({1, 1, 4, 4}, rng);
    Tensor k({1, 1, 1, 1}, 1.0);
    Tensor b({1}, 0.0);
    Tensor y = conv2d(x, k, b, {1, 1}, {0, 0});
    CHECK(naive::max_abs_diff(x, Tensor::from_values({1, 1, 4, 4}, y.values())) < 1e-15);
}

TEST_CASE("conv2d: strided shape arithmetic") {
    Tensor x({1, 3, 8, 8});
    Tensor k({4, 3, 3, 3});
    Tensor b({4});
    Tensor y = conv2d(x, k, b, {2, 2}, {1, 1});
    CHECK(y.shape() == Shape{1, 4, 4, 4});
}

TEST_CASE("conv2d: randomized agreement with the nested-loop oracle") {
    Rng rng(202);
    for (int iter = 0; iter < 100; ++iter) {
        const int64_t N = 1 + rng.next_index(3);
        const int64_t CI = 1 + rng.next_index(3);
        const int64_t H = 3 + rng.next_index(6);
        const int64_t W = 3 + rng.next_index(6);
        const int64_t CO = 1 + rng.next_index(4);
        const int64_t KH = 1 + rng.next_index(std::min<int64_t>(3, H));
        const int64_t KW = 1 + rng.next_index(std::min<int64_t>(3, W));
        const std::array<int64_t, 2> stride{1 + rng.next_index(2), 1 + rng.next_index(2)};
        const std::array<int64_t, 2> pad{rng.next_index(2), rng.next_index(2)};
        Tensor x = naive::random_tensor({N, CI, H, W}, rng);
        Tensor k = naive::random_tensor({CO, CI, KH, KW}, rng);
        Tensor b = naive::random_tensor({CO}, rng);
        Tensor fast = conv2d(x, k, b, stride, pad);
        Tensor ref = naive::conv2d(x, k, b, stride, pad);
        REQUIRE(fast.shape() == ref.shape());
        CHECK(naive::max_abs_diff(fast, ref) < 1e-12);
    }
}

TEST_CASE("relu: forward values and gradient routing") {
    Tensor x = Tensor::from_values({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu(x);
    CHECK(y.values() == std::vector<double>{0.0, 0.0, 2.0});

    // All-negative input: zero output, zero input gradient.
    Tensor neg = Tensor::from_values({4}, {-3.0, -2.0, -1.0, -0.5});
    neg.set_requires_grad(true);
    Graph graph;
    {
        RecordScope scope(graph);
        Tensor loss = sum_all(relu(neg));
        graph.backward(loss);
    }
    CHECK(neg.grad() == std::vector<double>(4, 0.0));
}

TEST_CASE("pool3d: mean over the full extent of a constant tensor") {
    Tensor x({1, 2, 3, 3, 3}, 7.5);
    Tensor y = pool3d(x, PoolMode::mean, {3, 3, 3}, {1, 1, 1});
    CHECK(y.shape() == Shape{1, 2, 1, 1, 1});
    CHECK(y.data()[0] == doctest::Approx(7.5));
    CHECK(y.data()[1] == doctest::Approx(7.5));
}

TEST_CASE("pool3d: max over 1..8 cube") {
    std::vector<double> vals(8);
    for (int i = 0; i < 8; ++i) vals[static_cast<size_t>(i)] = i + 1;
    Tensor x = Tensor::from_values({1, 1, 2, 2, 2}, vals);
    Tensor y = pool3d(x, PoolMode::max, {2, 2, 2}, {2, 2, 2});
    CHECK(y.numel() == 1);
    CHECK(y.value() == doctest::Approx(8.0));
}

TEST_CASE("pool3d: randomized agreement with the nested-loop oracle") {
    Rng rng(303);
    for (int iter = 0; iter < 100; ++iter) {
        const int64_t N = 1 + rng.next_index(2);
        const int64_t C = 1 + rng.next_index(3);
        const int64_t T = 2 + rng.next_index(5);
        const int64_t H = 2 + rng.next_index(5);
        const int64_t W = 2 + rng.next_index(5);
        const std::array<int64_t, 3> window{1 + rng.next_index(T), 1 + rng.next_index(H),
                                            1 + rng.next_index(W)};
        const std::array<int64_t, 3> stride{1 + rng.next_index(2), 1 + rng.next_index(2),
                                            1 + rng.next_index(2)};
        const bool max_mode = rng.next_index(2) == 0;
        Tensor x = naive::random_tensor({N, C, T, H, W}, rng);
        Tensor fast =
            pool3d(x, max_mode ? PoolMode::max : PoolMode::mean, window, stride);
        Tensor ref = naive::pool3d(x, max_mode, window, stride);
        REQUIRE(fast.shape() == ref.shape());
        CHECK(naive::max_abs_diff(fast, ref) < 1e-12);
    }
}

TEST_CASE("global_avg_pool: constants and two-element mean") {
    Tensor c({2, 3, 2, 2, 2}, 3.0);
    Tensor y = global_avg_pool(c);
    CHECK(y.shape() == Shape{2, 3});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(3.0));

    Tensor two = Tensor::from_values({1, 1, 1, 1, 2}, {2.0, 4.0});
    CHECK(global_avg_pool(two).value() == doctest::Approx(3.0));

    Rng rng(5);
    Tensor x = naive::random_tensor({2, 4, 3, 5, 4}, rng);
    CHECK(naive::max_abs_diff(global_avg_pool(x), naive::global_avg_pool(x)) < 1e-12);
}

TEST_CASE("linear: identity weight, fixed example, random oracle") {
    Tensor x = Tensor::from_values({1, 2}, {1.0, 2.0});
    Tensor eye = Tensor::from_values({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor zero({2}, 0.0);
    Tensor y = linear(x, eye, zero);
    CHECK(y.values() == std::vector<double>{1.0, 2.0});

    Tensor w = Tensor::from_values({2, 2}, {1.0, 1.0, 0.0, 1.0});
    Tensor y2 = linear(x, w, zero);
    CHECK(y2.values() == std::vector<double>{3.0, 2.0});

    Rng rng(404);
    for (int iter = 0; iter < 100; ++iter) {
        const int64_t N = 1 + rng.next_index(4);
        const int64_t D = 1 + rng.next_index(6);
        const int64_t O = 1 + rng.next_index(5);
        Tensor xi = naive::random_tensor({N, D}, rng);
        Tensor wi = naive::random_tensor({O, D}, rng);
        Tensor bi = naive::random_tensor({O}, rng);
        CHECK(naive::max_abs_diff(linear(xi, wi, bi), naive::linear(xi, wi, bi)) < 1e-12);
    }
}

TEST_CASE("softmax: uniform logits, shift invariance, row sums") {
    Tensor u({1, 4}, 0.7);
    Tensor p = softmax_rows(u);
    for (int64_t i = 0; i < 4; ++i) CHECK(p.data()[i] == doctest::Approx(0.25));

    Rng rng(17);
    Tensor logits = naive::random_tensor({6, 5}, rng, -3.0, 3.0);
    Tensor shifted(logits.shape());
    for (int64_t r = 0; r < 6; ++r) {
        const double c = rng.next_uniform(-10.0, 10.0);
        for (int64_t j = 0; j < 5; ++j) {
            shifted.data()[r * 5 + j] = logits.data()[r * 5 + j] + c;
        }
    }
    Tensor a = softmax_rows(logits);
    Tensor b = softmax_rows(shifted);
    CHECK(naive::max_abs_diff(a, b) < 1e-12);
    for (int64_t r = 0; r < 6; ++r) {
        double row = 0.0;
        for (int64_t j = 0; j < 5; ++j) row += a.data()[r * 5 + j];
        CHECK(std::abs(row - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax: Jacobian matches central differences") {
    Rng rng(18);
    Tensor logits = random_tensor_no_kink({3, 4}, rng);
    logits.set_requires_grad(true);
    Tensor coeff = naive::random_tensor({3, 4}, rng);
    Tensor params[] = {logits};
    const double err = grad_check(
        [&] { return sum_all(mul(coeff, softmax_rows(logits))); }, params, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("backward: sum gives unit gradients, quadratic gives w") {
    Tensor w = Tensor::from_values({2, 3}, {0.3, -0.7, 1.1, 0.0, 2.5, -4.0});
    w.set_requires_grad(true);
    Graph graph;
    {
        RecordScope scope(graph);
        Tensor loss = sum_all(w);
        graph.backward(loss);
    }
    CHECK(w.grad() == std::vector<double>(6, 1.0));

    Tensor v = Tensor::from_values({3}, {1.0, 2.0, 3.0});
    v.set_requires_grad(true);
    Graph graph2;
    {
        RecordScope scope(graph2);
        Tensor loss = scale(sum_all(mul(v, v)), 0.5);
        graph2.backward(loss);
    }
    CHECK(v.grad() == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("backward: non-scalar loss rejected; unreachable parameters stay zero") {
    Tensor w({2, 2}, 1.0, true);
    Graph graph;
    RecordScope scope(graph);
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(graph.backward(y), ShapeError);

    Tensor unused({3}, 2.0, true);
    Tensor loss = sum_all(y);
    graph.backward(loss);
    CHECK_FALSE(unused.has_grad());
    CHECK(unused.grad_at(0) == 0.0);
}

TEST_CASE("backward: running twice without zeroing doubles every gradient") {
    Rng rng(21);
    Tensor w = naive::random_tensor({4, 3}, rng);
    w.set_requires_grad(true);
    Graph graph;
    Tensor loss;
    {
        RecordScope scope(graph);
        loss = sum_all(mul(w, relu(w)));
    }
    graph.backward(loss);
    const std::vector<double> once = w.grad();
    graph.backward(loss);
    for (size_t i = 0; i < once.size(); ++i) {
        CHECK(w.grad()[i] == 2.0 * once[i]);
    }
}

TEST_CASE("composed chain: conv3d -> relu -> pool -> gap -> linear -> softmax -> CE") {
    Rng rng(31);
    Tensor x = random_tensor_no_kink({2, 2, 4, 6, 6}, rng);
    Tensor k = random_tensor_no_kink({3, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor_no_kink({3}, rng);
    Tensor w = random_tensor_no_kink({4, 3}, rng);
    Tensor wb = random_tensor_no_kink({4}, rng);
    for (Tensor* t : {&x, &k, &b, &w, &wb}) t->set_requires_grad(true);

    // One-hot targets for a two-row batch.
    Tensor y = Tensor::from_values({2, 4}, {0, 1, 0, 0, 0, 0, 0, 1});

    auto forward = [&] {
        Tensor h = conv3d(x, k, b, {1, 1, 1}, {1, 1, 1});
        h = relu(h);
        h = pool3d(h, PoolMode::max, {1, 2, 2}, {1, 2, 2});
        Tensor f = global_avg_pool(h);
        Tensor p = softmax_rows(linear(f, w, wb));
        return scale(sum_all(mul(y, log_clamped(p))), -0.5);
    };

    Tensor params[] = {x, k, b, w, wb};
    const double err = grad_check(forward, params, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng(41);

    SUBCASE("conv3d stride 1 (fast path)") {
        Tensor x = random_tensor_no_kink({1, 2, 3, 5, 5}, rng);
        Tensor k = random_tensor_no_kink({2, 2, 2, 3, 3}, rng);
        Tensor b = random_tensor_no_kink({2}, rng);
        for (Tensor* t : {&x, &k, &b}) t->set_requires_grad(true);
        Tensor coeff = naive::random_tensor({1, 2, 2, 5, 5}, rng);
        Tensor params[] = {x, k, b};
        const double err = grad_check(
            [&] { return sum_all(mul(coeff, conv3d(x, k, b, {1, 1, 1}, {0, 1, 1}))); },
            params, 1e-6);
        CHECK(err < 1e-5);
    }

    SUBCASE("conv3d stride 2 (generic path)") {
        Tensor x = random_tensor_no_kink({1, 2, 5, 5, 5}, rng);
        Tensor k = random_tensor_no_kink({2, 2, 3, 3, 3}, rng);
        Tensor b = random_tensor_no_kink({2}, rng);
        for (Tensor* t : {&x, &k, &b}) t->set_requires_grad(true);
        Tensor out = conv3d(x, k, b, {2, 2, 2}, {1, 1, 1});
        Tensor coeff = naive::random_tensor(out.shape(), rng);
        Tensor params[] = {x, k, b};
        const double err = grad_check(
            [&] { return sum_all(mul(coeff, conv3d(x, k, b, {2, 2, 2}, {1, 1, 1}))); },
            params, 1e-6);
        CHECK(err < 1e-5);
    }

    SUBCASE("conv2d strided") {
        Tensor x = random_tensor_no_kink({2, 2, 6, 6}, rng);
        Tensor k = random_tensor_no_kink({3, 2, 3, 3}, rng);
        Tensor b = random_tensor_no_kink({3}, rng);
        for (Tensor* t : {&x, &k, &b}) t->set_requires_grad(true);
        Tensor coeff = naive::random_tensor({2, 3, 3, 3}, rng);
        Tensor params[] = {x, k, b};
        const double err = grad_check(
            [&] { return sum_all(mul(coeff, conv2d(x, k, b, {2, 2}, {1, 1}))); },
            params, 1e-6);
        CHECK(err < 1e-5);
    }

    SUBCASE("pool3d max and mean") {
        Tensor x = random_tensor_no_kink({1, 2, 4, 4, 4}, rng);
        x.set_requires_grad(true);
        Tensor coeff = naive::random_tensor({1, 2, 2, 2, 2}, rng);
        Tensor params[] = {x};
        for (PoolMode mode : {PoolMode::max, PoolMode::mean}) {
            const double err = grad_check(
                [&] { return sum_all(mul(coeff, pool3d(x, mode, {2, 2, 2}, {2, 2, 2}))); },
                params, 1e-6);
            CHECK(err < 1e-5);
        }
    }

    SUBCASE("linear / rows_slice / log / add / scale") {
        Tensor x = random_tensor_no_kink({4, 3}, rng);
        Tensor w = random_tensor_no_kink({2, 3}, rng);
        Tensor b = random_tensor_no_kink({2}, rng);
        for (Tensor* t : {&x, &w, &b}) t->set_requires_grad(true);
        Tensor coeff = naive::random_tensor({2, 2}, rng);
        Tensor params[] = {x, w, b};
        const double err = grad_check(
            [&] {
                Tensor full = linear(x, w, b);
                Tensor top = rows_slice(full, 0, 2);
                Tensor soft = softmax_rows(top);
                return add(sum_all(mul(coeff, log_clamped(soft))),
                           scale(sum_all(mul(top, top)), 0.25));
            },
            params, 1e-6);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("grad_check: quadratic loss is exact to rounding") {
    Tensor w = Tensor::from_values({3}, {0.5, -1.5, 2.0});
    w.set_requires_grad(true);
    Tensor params[] = {w};
    const double err =
        grad_check([&] { return scale(sum_all(mul(w, w)), 0.5); }, params, 1e-6);
    CHECK(err < 1e-8);
}

TEST_CASE("grad_check: relu away from the kink") {
    Tensor w = Tensor::from_values({4}, {0.5, -0.75, 1.25, -2.0});
    w.set_requires_grad(true);
    Tensor params[] = {w};
    const double err = grad_check([&] { return sum_all(relu(w)); }, params, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("tensor serialization: round trip and error cases") {
    Rng rng(55);
    Tensor t = naive::random_tensor({2, 3, 4}, rng);
    std::stringstream buf;
    write_tensor(buf, t);
    Tensor back = read_tensor(buf);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());

    // Bad magic.
    std::stringstream bad;
    bad << "XSSLT";
    CHECK_THROWS_AS(read_tensor(bad), IoError);
    try {
        std::stringstream bad2;
        bad2 << "XSSLTxxxxxxx";
        read_tensor(bad2);
    } catch (const IoError& e) {
        CHECK(e.kind() == IoError::Kind::bad_magic);
    }

    // Truncated payload.
    std::string full = buf.str();
    {
        std::stringstream buf2;
        write_tensor(buf2, t);
        full = buf2.str();
    }
    std::stringstream cut(full.substr(0, full.size() / 2));
    try {
        read_tensor(cut);
        CHECK(false);
    } catch (const IoError& e) {
        CHECK(e.kind() == IoError::Kind::truncated);
    }

    // Version mismatch.
    std::string tampered = full;
    tampered[5] = 9;  // version byte
    std::stringstream vbuf(tampered);
    try {
        read_tensor(vbuf);
        CHECK(false);
    } catch (const IoError& e) {
        CHECK(e.kind() == IoError::Kind::version_mismatch);
    }
}

TEST_CASE("graph: insertion order is topological, backward visits reverse order") {
    Tensor w({2}, 1.0, true);
    Graph graph;
    {
        RecordScope scope(graph);
        Tensor a = scale(w, 2.0);
        Tensor b = add(a, w);
        Tensor loss = sum_all(b);
        CHECK(graph.node_count() == 3);
        graph.backward(loss);
    }
    // d(sum(2w + w))/dw = 3 per element.
    CHECK(w.grad() == std::vector<double>{3.0, 3.0});
}
