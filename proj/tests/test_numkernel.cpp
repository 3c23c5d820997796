#include <doctest.h>

#include <random>

#include "ctlrp/matrix.hpp"
#include "ctlrp/tape.hpp"

using namespace ctlrp;

namespace {

// Independent triple-loop matmul oracle.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double range = 1.0) {
    std::uniform_real_distribution<double> dist(-range, range);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(rng);
    return m;
}

// Two-layer ReLU net: relu(x W1 + b1) W2 + b2, summed to a scalar objective.
struct SmallNet {
    ParamSet params;
    int w1, b1, w2, b2;

    SmallNet(std::mt19937_64& rng, std::size_t in, std::size_t hid, std::size_t out) {
        w1 = params.add("w1", random_matrix(rng, in, hid));
        b1 = params.add("b1", random_matrix(rng, 1, hid));
        w2 = params.add("w2", random_matrix(rng, hid, out));
        b2 = params.add("b2", random_matrix(rng, 1, out));
    }

    Tape run(const Matrix& x, int& out_id) const {
        Tape tape;
        int id = tape.push_value(x);
        id = tape.linear(id, params, w1, b1);
        id = tape.relu(id);
        id = tape.linear(id, params, w2, b2);
        out_id = id;
        return tape;
    }

    double objective(const Matrix& x) const {
        int out_id;
        Tape tape = run(x, out_id);
        return tape.value(out_id).sum();
    }
};

}  // namespace

TEST_CASE("linear forward: identity weights") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{1, 0}, {0, 1}}));
    int b = p.add("b", Matrix(1, 2));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{1, 2}}));
    int y = tape.linear(x, p, w, b);
    CHECK(tape.value(y) == Matrix::from_rows({{1, 2}}));
}

TEST_CASE("linear forward: hand arithmetic with bias") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{2}, {3}}));
    int b = p.add("b", Matrix::from_rows({{1}}));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{1, 1}}));
    int y = tape.linear(x, p, w, b);
    CHECK(tape.value(y)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("linear forward: matches naive triple-loop oracle") {
    std::mt19937_64 rng(11);
    Matrix a = random_matrix(rng, 3, 4);
    ParamSet p;
    int w = p.add("w", random_matrix(rng, 4, 2));
    Tape tape;
    int x = tape.push_value(a);
    int y = tape.linear(x, p, w);
    Matrix expect = naive_matmul(a, p.at(w));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(tape.value(y)(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
}

TEST_CASE("linear forward: shape mismatch rejected") {
    ParamSet p;
    int w = p.add("w", Matrix(3, 2));
    Tape tape;
    int x = tape.push_value(Matrix(1, 2));
    CHECK_THROWS_AS(tape.linear(x, p, w), DimensionError);
}

TEST_CASE("lrp linear backward: symmetric split") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{1}, {1}}));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{1, 1}}));
    tape.linear(x, p, w);
    Matrix r = lrp_linear_backward(tape, p, tape.traces[0], Matrix::from_rows({{2}}), Epsilon(1e-12));
    CHECK(r(0, 0) == doctest::Approx(1.0));
    CHECK(r(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("lrp linear backward: zero activation gets zero") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{1}, {1}}));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{1, 0}}));
    tape.linear(x, p, w);
    Matrix r = lrp_linear_backward(tape, p, tape.traces[0], Matrix::from_rows({{5}}), Epsilon(1e-12));
    CHECK(r(0, 0) == doctest::Approx(5.0));
    CHECK(r(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("lrp linear backward: conservation by direct summation") {
    std::mt19937_64 rng(7);
    for (double eps : {1e-9, 1e-6}) {
        for (int rep = 0; rep < 20; ++rep) {
            ParamSet p;
            int w = p.add("w", random_matrix(rng, 4, 3));
            Tape tape;
            int x = tape.push_value(random_matrix(rng, 1, 4));
            tape.linear(x, p, w);
            Matrix upstream = random_matrix(rng, 1, 3);
            for (double& v : upstream.data()) v = 0.5 + std::abs(v);  // keep the sum away from zero
            Matrix r = lrp_linear_backward(tape, p, tape.traces[0], upstream, Epsilon(eps));
            double l1 = 0.0;
            for (double v : upstream.data()) l1 += std::abs(v);
            // |sum in - sum out| <= c*eps*||r_out||_1 for a bias-free layer
            CHECK(std::abs(r.sum() - upstream.sum()) <= 100.0 * eps * l1 + 1e-12);
            if (eps == 1e-9)
                CHECK(std::abs(r.sum() - upstream.sum()) <= 1e-6 * std::abs(upstream.sum()));
        }
    }
}

TEST_CASE("lrp relu backward: identity pass-through") {
    Matrix up = Matrix::from_rows({{1, -2, 3}});
    CHECK(lrp_relu_backward(up) == up);
    Matrix zeros(1, 3);
    CHECK(lrp_relu_backward(zeros) == zeros);
}

TEST_CASE("grad backward: scalar linear f(x)=w*x") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{3}}));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{2}}));
    int y = tape.linear(x, p, w);
    Gradients g = grad_backward(tape, p, y, Matrix::from_rows({{1}}));
    CHECK(g.value_grad(x)(0, 0) == doctest::Approx(3.0));
    CHECK(g.param_grads[0](0, 0) == doctest::Approx(2.0));
}

TEST_CASE("grad backward: empty trace is a usage error") {
    ParamSet p;
    Tape tape;
    int x = tape.push_value(Matrix(1, 1));
    CHECK_THROWS_AS(grad_backward(tape, p, x, Matrix(1, 1)), ConfigError);
}

TEST_CASE("grad backward: dead relu path has zero gradient") {
    ParamSet p;
    int w = p.add("w", Matrix::from_rows({{1}}));
    Tape tape;
    int x = tape.push_value(Matrix::from_rows({{-2}}));
    int h = tape.linear(x, p, w);
    int y = tape.relu(h);
    Gradients g = grad_backward(tape, p, y, Matrix::from_rows({{1}}));
    CHECK(g.value_grad(x)(0, 0) == 0.0);
    CHECK(g.param_grads[0](0, 0) == 0.0);
}

TEST_CASE("grad backward: matches central finite differences on 100 random nets") {
    std::mt19937_64 rng(42);
    const double step = 1e-4;
    double max_rel = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        SmallNet net(rng, 3, 4, 2);
        Matrix x = random_matrix(rng, 2, 3);
        int out_id;
        Tape tape = net.run(x, out_id);
        Matrix seed(tape.value(out_id).rows(), tape.value(out_id).cols(), 1.0);
        Gradients g = grad_backward(tape, net.params, out_id, seed);

        auto check_entry = [&](double analytic, double fplus, double fminus) {
            const double fd = (fplus - fminus) / (2.0 * step);
            const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        };
        // input gradients
        for (std::size_t i = 0; i < x.size(); ++i) {
            Matrix xp = x, xm = x;
            xp.data()[i] += step;
            xm.data()[i] -= step;
            check_entry(g.value_grad(0).data()[i], net.objective(xp), net.objective(xm));
        }
        // parameter gradients
        for (std::size_t pi = 0; pi < net.params.count(); ++pi) {
            for (std::size_t i = 0; i < net.params.at(static_cast<int>(pi)).size(); ++i) {
                SmallNet np = net, nm = net;
                np.params.at(static_cast<int>(pi)).data()[i] += step;
                nm.params.at(static_cast<int>(pi)).data()[i] -= step;
                check_entry(g.param_grads[pi].data()[i], np.objective(x), nm.objective(x));
            }
        }
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("replay determinism: rerunning forward on stored inputs reproduces outputs exactly") {
    std::mt19937_64 rng(5);
    SmallNet net(rng, 3, 5, 2);
    Matrix x = random_matrix(rng, 4, 3);
    int out_a, out_b;
    Tape a = net.run(x, out_a);
    Tape b = net.run(a.value(0), out_b);
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("lrp equals gradient*input for a bias-free single linear layer at eps->0") {
    std::mt19937_64 rng(9);
    ParamSet p;
    int w = p.add("w", random_matrix(rng, 4, 3));
    Matrix x = random_matrix(rng, 1, 4);
    Tape tape;
    int xid = tape.push_value(x);
    int y = tape.linear(xid, p, w);
    Matrix upstream = random_matrix(rng, 1, 3);

    Matrix r = lrp_linear_backward(tape, p, tape.traces[0], upstream, Epsilon(1e-300));

    // gradient*input route: r_j = x_j * sum_k w_jk * (r_k / z_k)
    Gradients g = grad_backward(tape, p, y, [&] {
        Matrix seed(1, 3);
        for (std::size_t k = 0; k < 3; ++k) seed(0, k) = upstream(0, k) / tape.value(y)(0, k);
        return seed;
    }());
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(r(0, j) == doctest::Approx(x(0, j) * g.value_grad(xid)(0, j)).epsilon(1e-9));
}
