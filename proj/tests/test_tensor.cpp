#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "relex/tensor.hpp"

using namespace relex;
using Catch::Approx;

TEST_CASE("matmul basics") {
    SECTION("identity leaves the matrix unchanged") {
        Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
        Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
        Tensor c = matmul(a, eye);
        REQUIRE(c.value() == std::vector<double>{1, 2, 3, 4});
    }
    SECTION("row times column") {
        Tensor a = Tensor::from_values({1, 2}, {1, 2});
        Tensor b = Tensor::from_values({2, 1}, {3, 4});
        REQUIRE(matmul(a, b).item() == Approx(11.0));  // 1*3 + 2*4
    }
    SECTION("inner dimension mismatch names both shapes") {
        Tensor a = Tensor::zeros({2, 3});
        Tensor b = Tensor::zeros({2, 3});
        REQUIRE_THROWS_MATCHES(matmul(a, b), DimensionError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("(2, 3)")));
    }
    SECTION("batched product matches per-slice products") {
        Rng rng(7);
        Tensor a = Tensor::uniform({2, 3, 4}, -1, 1, rng);
        Tensor b = Tensor::uniform({2, 4, 2}, -1, 1, rng);
        Tensor c = matmul(a, b);
        REQUIRE(c.shape() == Shape{2, 3, 2});
        for (std::size_t s = 0; s < 2; ++s) {
            Tensor as = slice(a, 0, s, s + 1);
            Tensor bs = slice(b, 0, s, s + 1);
            Tensor cs = matmul(reshape(as, {3, 4}), reshape(bs, {4, 2}));
            for (std::size_t i = 0; i < 6; ++i)
                REQUIRE(c.value()[s * 6 + i] == Approx(cs.value()[i]));
        }
    }
    SECTION("size-1 batch dimension broadcasts") {
        Rng rng(8);
        Tensor a = Tensor::uniform({1, 2, 3}, -1, 1, rng);
        Tensor b = Tensor::uniform({4, 3, 2}, -1, 1, rng);
        Tensor c = matmul(a, b);
        REQUIRE(c.shape() == Shape{4, 2, 2});
        Tensor a2 = reshape(a, {2, 3});
        for (std::size_t s = 0; s < 4; ++s) {
            Tensor bs = reshape(slice(b, 0, s, s + 1), {3, 2});
            Tensor cs = matmul(a2, bs);
            for (std::size_t i = 0; i < 4; ++i)
                REQUIRE(c.value()[s * 4 + i] == Approx(cs.value()[i]));
        }
    }
    SECTION("gradient flows to both operands and reduces over broadcasts") {
        Rng rng(9);
        Tensor a = Tensor::uniform({1, 2, 3}, -1, 1, rng);
        Tensor b = Tensor::uniform({4, 3, 2}, -1, 1, rng);
        auto an = Tensor::from_values(a.shape(), a.value(), true);
        auto bn = Tensor::from_values(b.shape(), b.value(), true);
        auto f = [&] { return sum(matmul(an, bn)); };
        REQUIRE(grad_check(f, an) < 1e-8);
        REQUIRE(grad_check(f, bn) < 1e-8);
    }
}

TEST_CASE("elementwise operations") {
    SECTION("sigmoid at zero is one half") {
        REQUIRE(sigmoid(Tensor::scalar(0.0)).item() == Approx(0.5));
    }
    SECTION("tanh at zero is zero") {
        REQUIRE(relex::tanh(Tensor::scalar(0.0)).item() == 0.0);
    }
    SECTION("hadamard product") {
        Tensor a = Tensor::from_values({3}, {1, 2, 3});
        Tensor b = Tensor::from_values({3}, {4, 5, 6});
        REQUIRE(mul(a, b).value() == std::vector<double>{4, 10, 18});
    }
    SECTION("bias addition broadcasts over rows") {
        Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
        Tensor b = Tensor::from_values({2}, {10, 20});
        REQUIRE(add(a, b).value() == std::vector<double>{11, 22, 13, 24});
    }
    SECTION("log of a non-positive value is a domain error") {
        REQUIRE_THROWS_AS(relex::log(Tensor::scalar(0.0)), DomainError);
        REQUIRE_THROWS_AS(relex::log(Tensor::scalar(-1.0)), DomainError);
    }
    SECTION("binary shape mismatch is a dimension error") {
        REQUIRE_THROWS_AS(mul(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
        REQUIRE_THROWS_AS(sub(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    }
    SECTION("scale") {
        Tensor a = Tensor::from_values({2}, {1, -2});
        REQUIRE(scale(a, 0.5).value() == std::vector<double>{0.5, -1.0});
    }
}

TEST_CASE("softmax") {
    SECTION("uniform input gives uniform probabilities") {
        Tensor y = softmax(Tensor::from_values({3}, {0, 0, 0}));
        for (double v : y.value()) REQUIRE(v == Approx(1.0 / 3.0));
    }
    SECTION("large equal inputs do not overflow") {
        Tensor y = softmax(Tensor::from_values({2}, {1000, 1000}));
        REQUIRE(y.value()[0] == Approx(0.5));
        REQUIRE(y.value()[1] == Approx(0.5));
    }
    SECTION("rows sum to one with argmax preserved") {
        Tensor y = softmax(Tensor::from_values({3}, {1, 2, 3}));
        double total = y.value()[0] + y.value()[1] + y.value()[2];
        REQUIRE(std::abs(total - 1.0) < 1e-9);
        REQUIRE(y.value()[2] > y.value()[1]);
        REQUIRE(y.value()[1] > y.value()[0]);
    }
    SECTION("shift invariance and row normalization on random rows") {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor x = Tensor::uniform({4, 6}, -5, 5, rng);
            Tensor y = softmax(x);
            const double c = rng.uniform(-100, 100);
            std::vector<double> shifted = x.value();
            for (double& v : shifted) v += c;
            Tensor y2 = softmax(Tensor::from_values({4, 6}, shifted));
            for (std::size_t r = 0; r < 4; ++r) {
                double total = 0;
                for (std::size_t i = 0; i < 6; ++i) {
                    total += y.value()[r * 6 + i];
                    REQUIRE(std::abs(y.value()[r * 6 + i] - y2.value()[r * 6 + i]) < 1e-9);
                }
                REQUIRE(std::abs(total - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("layer_norm") {
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    SECTION("constant row normalizes to zeros via eps") {
        Tensor y = layer_norm(Tensor::from_values({1, 4}, {5, 5, 5, 5}), gain, bias, 1e-10);
        for (double v : y.value()) REQUIRE(v == 0.0);
    }
    SECTION("two-point row") {
        Tensor g2 = Tensor::full({2}, 1.0);
        Tensor b2 = Tensor::zeros({2});
        Tensor y = layer_norm(Tensor::from_values({1, 2}, {1, 3}), g2, b2, 1e-10);
        REQUIRE(std::abs(y.value()[0] - (-1.0)) < 1e-6);  // mean 2, population var 1
        REQUIRE(std::abs(y.value()[1] - 1.0) < 1e-6);
    }
    SECTION("normalized rows have tiny mean and unit variance") {
        Rng rng(13);
        Tensor x = Tensor::uniform({8, 4}, -3, 3, rng);
        Tensor y = layer_norm(x, gain, bias, 1e-10);
        for (std::size_t r = 0; r < 8; ++r) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < 4; ++i) mean += y.value()[r * 4 + i];
            mean /= 4;
            for (std::size_t i = 0; i < 4; ++i) {
                double d = y.value()[r * 4 + i] - mean;
                var += d * d;
            }
            var /= 4;
            REQUIRE(std::abs(mean) <= 1e-9);
            REQUIRE(std::abs(var - 1.0) <= 1e-6);
        }
    }
    SECTION("gradient matches central differences for x, gain, bias") {
        Rng rng(17);
        Tensor x = Tensor::uniform({3, 4}, -2, 2, rng, true);
        Tensor g = Tensor::uniform({4}, 0.5, 1.5, rng, true);
        Tensor b = Tensor::uniform({4}, -0.5, 0.5, rng, true);
        auto f = [&] { return sum(mul(layer_norm(x, g, b, 1e-10), layer_norm(x, g, b, 1e-10))); };
        REQUIRE(grad_check(f, x) < 1e-6);
        REQUIRE(grad_check(f, g) < 1e-6);
        REQUIRE(grad_check(f, b) < 1e-6);
    }
}

TEST_CASE("concat and slice") {
    SECTION("column concat layout") {
        Tensor a = Tensor::from_values({2, 1}, {1, 2});
        Tensor b = Tensor::from_values({2, 1}, {3, 4});
        Tensor c = concat({a, b}, 1);
        REQUIRE(c.shape() == Shape{2, 2});
        REQUIRE(c.value() == std::vector<double>{1, 3, 2, 4});
    }
    SECTION("single input is the identity") {
        Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
        REQUIRE(concat({a}, 0).value() == a.value());
    }
    SECTION("off-axis mismatch is a dimension error") {
        REQUIRE_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1),
                          DimensionError);
    }
    SECTION("concat then slice recovers each input") {
        Rng rng(19);
        for (std::size_t axis = 0; axis < 2; ++axis) {
            Tensor a = Tensor::uniform({3, 2}, -1, 1, rng);
            Tensor b = Tensor::uniform(axis == 0 ? Shape{4, 2} : Shape{3, 5}, -1, 1, rng);
            Tensor c = concat({a, b}, axis);
            Tensor ra = slice(c, axis, 0, a.shape()[axis]);
            Tensor rb = slice(c, axis, a.shape()[axis], a.shape()[axis] + b.shape()[axis]);
            REQUIRE(ra.value() == a.value());
            REQUIRE(rb.value() == b.value());
        }
    }
    SECTION("gradient splits back to the inputs") {
        Rng rng(23);
        Tensor a = Tensor::uniform({2, 3}, -1, 1, rng, true);
        Tensor b = Tensor::uniform({2, 2}, -1, 1, rng, true);
        auto f = [&] {
            Tensor c = concat({a, b}, 1);
            return sum(mul(c, c));
        };
        REQUIRE(grad_check(f, a) < 1e-6);
        REQUIRE(grad_check(f, b) < 1e-6);
    }
    SECTION("stack0 builds a new leading axis") {
        Tensor a = Tensor::from_values({2}, {1, 2});
        Tensor b = Tensor::from_values({2}, {3, 4});
        Tensor s = stack0({a, b});
        REQUIRE(s.shape() == Shape{2, 2});
        REQUIRE(s.value() == std::vector<double>{1, 2, 3, 4});
    }
}

TEST_CASE("cross_entropy") {
    SECTION("perfect one-hot prediction has near-zero loss") {
        Tensor pred = Tensor::from_values({1, 3}, {1, 0, 0});
        Tensor gold = Tensor::from_values({1, 3}, {1, 0, 0});
        REQUIRE(cross_entropy(pred, gold).item() == Approx(0.0).margin(1e-12));
    }
    SECTION("uniform binary prediction costs ln 2") {
        Tensor pred = Tensor::from_values({1, 2}, {0.5, 0.5});
        Tensor gold = Tensor::from_values({1, 2}, {1, 0});
        REQUIRE(cross_entropy(pred, gold).item() == Approx(0.6931471805599453));
    }
    SECTION("all-zero gold rows and masked rows contribute nothing") {
        Tensor pred = Tensor::from_values({2, 2}, {0.1, 0.9, 0.2, 0.8});
        Tensor gold_empty = Tensor::from_values({2, 2}, {0, 0, 0, 0});
        REQUIRE(cross_entropy(pred, gold_empty).item() == 0.0);
        Tensor gold = Tensor::from_values({2, 2}, {1, 0, 0, 1});
        Tensor mask = Tensor::from_values({2}, {0, 1});
        REQUIRE(cross_entropy(pred, gold, mask).item() == Approx(-std::log(0.8)));
    }
    SECTION("confident wrong prediction is clamped, not infinite") {
        Tensor pred = Tensor::from_values({1, 2}, {0.0, 1.0});
        Tensor gold = Tensor::from_values({1, 2}, {1, 0});
        REQUIRE(std::isfinite(cross_entropy(pred, gold).item()));
    }
    SECTION("shape mismatch is a dimension error") {
        REQUIRE_THROWS_AS(cross_entropy(Tensor::zeros({1, 2}), Tensor::zeros({1, 3})),
                          DimensionError);
    }
    SECTION("gradient against central differences") {
        Rng rng(29);
        Tensor logits = Tensor::uniform({3, 4}, -1, 1, rng, true);
        Tensor gold = Tensor::zeros({3, 4});
        gold.data()[1] = 1;
        gold.data()[4 + 2] = 1;
        gold.data()[8 + 0] = 1;
        Tensor mask = Tensor::from_values({3}, {1, 1, 0});
        auto f = [&] { return cross_entropy(softmax(logits), gold, mask); };
        REQUIRE(grad_check(f, logits) < 1e-6);
    }
    SECTION("binary cross entropy gradient") {
        Rng rng(31);
        Tensor logits = Tensor::uniform({2, 3}, -1, 1, rng, true);
        Tensor gold = Tensor::from_values({2, 3}, {1, 0, 0, 0, 1, 1});
        auto f = [&] { return binary_cross_entropy(sigmoid(logits), gold); };
        REQUIRE(grad_check(f, logits) < 1e-6);
    }
}

TEST_CASE("backward") {
    SECTION("gradient of a plain sum is all ones") {
        Tensor x = Tensor::from_values({3}, {5, -1, 2}, true);
        backward(sum(x));
        REQUIRE(x.grad() == std::vector<double>{1, 1, 1});
    }
    SECTION("gradient of sum of squares") {
        Tensor x = Tensor::from_values({2}, {1, 2}, true);
        backward(sum(mul(x, x)));
        REQUIRE(x.grad()[0] == Approx(2.0));
        REQUIRE(x.grad()[1] == Approx(4.0));
    }
    SECTION("sigmoid gradient at zero is a quarter") {
        Tensor w = Tensor::from_values({1}, {0.0}, true);
        backward(sum(sigmoid(w)));
        REQUIRE(w.grad()[0] == Approx(0.25));
    }
    SECTION("repeated backward accumulates until grads are zeroed") {
        Tensor x = Tensor::from_values({2}, {1, 1}, true);
        Tensor loss = sum(x);
        backward(loss);
        loss.zero_grad();  // reseed the output before replaying
        backward(loss);
        REQUIRE(x.grad() == std::vector<double>{2, 2});
        x.zero_grad();
        REQUIRE(x.grad() == std::vector<double>{0, 0});
    }
    SECTION("a reused operand accumulates from every use") {
        Tensor x = Tensor::from_values({1}, {3.0}, true);
        backward(sum(mul(x, x)));
        REQUIRE(x.grad()[0] == Approx(6.0));
    }
    SECTION("non-scalar loss is a contract error") {
        Tensor x = Tensor::from_values({2}, {1, 2}, true);
        REQUIRE_THROWS_AS(backward(mul(x, x)), ContractError);
    }
}

TEST_CASE("grad_check") {
    SECTION("sum of squares") {
        Rng rng(37);
        Tensor x = Tensor::uniform({5}, -2, 2, rng, true);
        auto f = [&] { return sum(mul(x, x)); };
        REQUIRE(grad_check(f, x) <= 1e-6);
    }
    SECTION("constant function has zero error") {
        Tensor x = Tensor::from_values({3}, {1, 2, 3}, true);
        auto f = [&] { return add(sum(x), scale(sum(x), -1.0)); };
        REQUIRE(grad_check(f, x) == 0.0);
    }
    SECTION("composite through softmax, tanh and matmul") {
        Rng rng(41);
        Tensor x = Tensor::uniform({3, 4}, -1, 1, rng, true);
        Tensor w = Tensor::uniform({4, 2}, -1, 1, rng, true);
        auto f = [&] { return sum(softmax(relex::tanh(matmul(x, w)))); };
        REQUIRE(grad_check(f, x) <= 1e-6);
        REQUIRE(grad_check(f, w) <= 1e-6);
    }
    SECTION("sampled variant agrees with the full sweep on small tensors") {
        Rng rng(43);
        Tensor x = Tensor::uniform({4}, -1, 1, rng, true);
        auto f = [&] { return sum(mul(x, x)); };
        Rng pick(1);
        REQUIRE(grad_check_sampled(f, x, 1e-5, 100, pick) <= 1e-6);
    }
}

TEST_CASE("gather_rows") {
    Tensor table = Tensor::from_values({3, 2}, {0, 0, 10, 11, 20, 21}, true);
    SECTION("rows are copied by id") {
        Tensor out = gather_rows(table, {2, 0, 2});
        REQUIRE(out.value() == std::vector<double>{20, 21, 0, 0, 20, 21});
    }
    SECTION("out-of-range id is a vocabulary error") {
        REQUIRE_THROWS_AS(gather_rows(table, {3}), VocabError);
        REQUIRE_THROWS_AS(gather_rows(table, {-1}), VocabError);
    }
    SECTION("repeated rows accumulate gradient") {
        table.zero_grad();
        backward(sum(gather_rows(table, {1, 1})));
        REQUIRE(table.grad()[2] == Approx(2.0));
        REQUIRE(table.grad()[3] == Approx(2.0));
        REQUIRE(table.grad()[0] == 0.0);
    }
}

TEST_CASE("determinism of seeded fills") {
    Rng a(12345), b(12345);
    Tensor ta = Tensor::uniform({64}, -1, 1, a);
    Tensor tb = Tensor::uniform({64}, -1, 1, b);
    REQUIRE(ta.value() == tb.value());
}
