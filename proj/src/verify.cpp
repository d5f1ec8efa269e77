#include "sivit/verify.hpp"

#include <algorithm>
#include <cmath>

#include "sivit/tensor.hpp"

namespace sivit {

namespace {

// Reduces a tensor to a scalar through a fixed random weighting so the
// upstream gradient reaching the op under test is arbitrary, not all-ones.
Tensor wsum(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

Tensor rnd(Shape shape, std::mt19937_64& rng, double stddev = 1.0, bool rg = false) {
    return Tensor::randn(std::move(shape), rng, stddev, rg);
}

using Fn = std::function<Tensor(const Tensor&)>;

double check(const Fn& f, const Tensor& x0) { return grad_check(f, x0); }

}  // namespace

const std::vector<GradCheckCase>& gradcheck_cases() {
    static const std::vector<GradCheckCase> cases = {
        {"matmul",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor a0 = rnd({3, 4}, rng);
             Tensor b0 = rnd({4, 2}, rng);
             Tensor w = rnd({3, 2}, rng);
             double ea = check([&](const Tensor& a) { return wsum(matmul(a, b0), w); }, a0);
             double eb = check([&](const Tensor& b) { return wsum(matmul(a0, b), w); }, b0);
             return std::max(ea, eb);
         }},
        {"transpose",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 5}, rng);
             Tensor w = rnd({5, 3}, rng);
             return check([&](const Tensor& x) { return wsum(transpose(x), w); }, x0);
         }},
        {"add",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({4, 3}, rng);
             Tensor c = rnd({4, 3}, rng);
             Tensor w = rnd({4, 3}, rng);
             double e1 = check([&](const Tensor& x) { return wsum(add(x, c), w); }, x0);
             // Same tensor on both sides: gradient must accumulate to 2w.
             double e2 = check([&](const Tensor& x) { return wsum(add(x, x), w); }, x0);
             return std::max(e1, e2);
         }},
        {"sub",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({4, 3}, rng);
             Tensor c = rnd({4, 3}, rng);
             Tensor w = rnd({4, 3}, rng);
             double e1 = check([&](const Tensor& x) { return wsum(sub(x, c), w); }, x0);
             double e2 = check([&](const Tensor& x) { return wsum(sub(c, x), w); }, x0);
             return std::max(e1, e2);
         }},
        {"mul",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({4, 3}, rng);
             Tensor c = rnd({4, 3}, rng);
             Tensor w = rnd({4, 3}, rng);
             double e1 = check([&](const Tensor& x) { return wsum(mul(x, c), w); }, x0);
             double e2 = check([&](const Tensor& x) { return wsum(mul(x, x), w); }, x0);
             return std::max(e1, e2);
         }},
        {"scale",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({2, 6}, rng);
             Tensor w = rnd({2, 6}, rng);
             return check([&](const Tensor& x) { return wsum(scale(x, -1.7), w); }, x0);
         }},
        {"add_scalar",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({2, 6}, rng);
             Tensor w = rnd({2, 6}, rng);
             return check([&](const Tensor& x) { return wsum(add_scalar(x, 0.4), w); }, x0);
         }},
        {"add_rowvec",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor m0 = rnd({4, 3}, rng);
             Tensor v0 = rnd({3}, rng);
             Tensor w = rnd({4, 3}, rng);
             double em = check([&](const Tensor& m) { return wsum(add_rowvec(m, v0), w); }, m0);
             double ev = check([&](const Tensor& v) { return wsum(add_rowvec(m0, v), w); }, v0);
             return std::max(em, ev);
         }},
        {"gelu",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 4}, rng, 2.0);
             Tensor w = rnd({3, 4}, rng);
             return check([&](const Tensor& x) { return wsum(gelu(x), w); }, x0);
         }},
        {"softmax",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 5}, rng, 2.0);
             Tensor w = rnd({3, 5}, rng);
             Tensor wt = rnd({5, 3}, rng);
             double e1 = check([&](const Tensor& x) { return wsum(softmax(x, 1), w); }, x0);
             double e0 = check(
                 [&](const Tensor& x) { return wsum(softmax(transpose(x), 0), wt); }, x0);
             return std::max(e1, e0);
         }},
        {"layer_norm",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 6}, rng, 1.5);
             Tensor g0 = rnd({6}, rng);
             Tensor b0 = rnd({6}, rng);
             Tensor w = rnd({3, 6}, rng);
             double ex = check([&](const Tensor& x) { return wsum(layer_norm(x, g0, b0), w); }, x0);
             double eg = check([&](const Tensor& g) { return wsum(layer_norm(x0, g, b0), w); }, g0);
             double eb = check([&](const Tensor& b) { return wsum(layer_norm(x0, g0, b), w); }, b0);
             return std::max({ex, eg, eb});
         }},
        {"sum",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             return check([](const Tensor& x) { return sum(x); }, rnd({4, 4}, rng));
         }},
        {"mean",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             return check([](const Tensor& x) { return mean(x); }, rnd({4, 4}, rng));
         }},
        {"sum_axis0",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({5, 3}, rng);
             Tensor w = rnd({3}, rng);
             return check([&](const Tensor& x) { return wsum(sum_axis0(x), w); }, x0);
         }},
        {"mean_axis0",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({5, 3}, rng);
             Tensor w = rnd({3}, rng);
             return check([&](const Tensor& x) { return wsum(mean_axis0(x), w); }, x0);
         }},
        {"reshape",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({4, 6}, rng);
             Tensor w = rnd({8, 3}, rng);
             return check([&](const Tensor& x) { return wsum(reshape(x, {8, 3}), w); }, x0);
         }},
        {"gather_rows",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({5, 3}, rng);
             // Repeated index: both pulls must accumulate into row 2.
             std::vector<int> idx = {2, 0, 2, 4};
             Tensor w = rnd({4, 3}, rng);
             return check([&](const Tensor& x) { return wsum(gather_rows(x, idx), w); }, x0);
         }},
        {"scatter_rows",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 4}, rng);
             std::vector<int> idx = {4, 0, 2};
             Tensor w = rnd({6, 4}, rng);
             return check([&](const Tensor& x) { return wsum(scatter_rows(x, idx, 6), w); }, x0);
         }},
        {"slice_rows",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({6, 3}, rng);
             Tensor w = rnd({3, 3}, rng);
             return check([&](const Tensor& x) { return wsum(slice_rows(x, 2, 5), w); }, x0);
         }},
        {"slice_cols",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 8}, rng);
             Tensor w = rnd({3, 4}, rng);
             return check([&](const Tensor& x) { return wsum(slice_cols(x, 2, 6), w); }, x0);
         }},
        {"concat_rows",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({2, 3}, rng);
             Tensor c = rnd({3, 3}, rng);
             Tensor w = rnd({7, 3}, rng);
             // x appears twice; its gradient is the sum of both segments.
             return check(
                 [&](const Tensor& x) { return wsum(concat_rows({x, c, x}), w); }, x0);
         }},
        {"concat_cols",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 2}, rng);
             Tensor c = rnd({3, 4}, rng);
             Tensor w = rnd({3, 8}, rng);
             return check(
                 [&](const Tensor& x) { return wsum(concat_cols({x, c, x}), w); }, x0);
         }},
        {"pick",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 4}, rng);
             return check([&](const Tensor& x) { return pick(x, 7); }, x0);
         }},
        {"cross_entropy",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({4, 3}, rng, 2.0);
             std::vector<int> t = {0, 2, 1, 2};
             return check([&](const Tensor& x) { return cross_entropy_logits(x, t); }, x0);
         }},
        {"cross_entropy_soft",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({3, 2}, rng, 2.0);
             std::vector<double> t = {0.3, 0.7, 1.0, 0.0, 0.5, 0.5};
             return check([&](const Tensor& x) { return cross_entropy_soft(x, t); }, x0);
         }},
        {"mse_loss",
         [](uint64_t seed) {
             std::mt19937_64 rng(seed);
             Tensor x0 = rnd({2, 3}, rng);
             std::vector<double> t = {0.1, -0.2, 0.3, 0.0, 1.0, -1.0};
             return check([&](const Tensor& x) { return mse_loss(x, t); }, x0);
         }},
        {"mlp_chain",
         [](uint64_t seed) {
             // Two dense layers + GELU + mean-squared loss, differentiated
             // through the whole chain w.r.t. the input.
             std::mt19937_64 rng(seed);
             Tensor w1 = rnd({4, 6}, rng, 0.5);
             Tensor b1 = rnd({6}, rng, 0.5);
             Tensor w2 = rnd({6, 2}, rng, 0.5);
             Tensor b2 = rnd({2}, rng, 0.5);
             std::vector<double> t = {0.2, -0.4, 0.6, 0.1, -0.3, 0.5};
             Tensor x0 = rnd({3, 4}, rng);
             return check(
                 [&](const Tensor& x) {
                     Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
                     Tensor y = add_rowvec(matmul(h, w2), b2);
                     return mse_loss(y, t);
                 },
                 x0);
         }},
    };
    return cases;
}

}  // namespace sivit
