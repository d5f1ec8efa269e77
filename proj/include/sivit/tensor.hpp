#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace sivit {

// Dense row-major f64 tensor with a reverse-mode gradient tape. Small by
// intent: exactly the ops a compact ViT plus its two heads need, each with a
// hand-written backward rule.

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool retain_grad = false;  // keep grad after backward even on non-leaves
    std::vector<ImplPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;  // null on leaves
    const char* op = "leaf";
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev,
                        bool requires_grad = false);
    // Normal(0, stddev) resampled until within 2*stddev; ViT-style init.
    static Tensor trunc_normal(Shape shape, std::mt19937_64& rng, double stddev,
                               bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int numel() const { return static_cast<int>(impl_->value.size()); }

    std::vector<double>& data() { return impl_->value; }
    const std::vector<double>& data() const { return impl_->value; }
    double item() const;  // scalar tensors only
    double at(int i) const { return impl_->value[static_cast<size_t>(i)]; }
    double at(int r, int c) const;

    bool requires_grad() const { return impl_->requires_grad; }
    // Ask backward to keep this node's gradient (interior nodes are scratch
    // otherwise). Used by the attribution pass.
    void retain_grad() { impl_->retain_grad = true; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<double>& grad();  // allocates zeros on first touch
    const std::vector<double>& grad() const { return impl_->grad; }
    void zero_grad();

    TensorImpl* impl() const { return impl_.get(); }
    const ImplPtr& impl_ptr() const { return impl_; }

private:
    ImplPtr impl_;
};

// Topological linearization of the graph reaching a root. Replaying in the
// recorded order (root first) visits each node once, after all its consumers.
struct GradTape {
    std::vector<ImplPtr> order;
    static GradTape record(const Tensor& root);
    void replay();
};

// Seeds d(loss)/d(loss)=1 and accumulates gradients into every requires_grad
// leaf. Loss must be scalar; gradients add onto whatever is already stored,
// so callers zero grads between steps.
void backward(const Tensor& loss);

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // (m,n) + (n)
Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis0(const Tensor& a);   // (m,n) -> (n)
Tensor mean_axis0(const Tensor& a);  // (m,n) -> (n)
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
// Rows of a placed at `indices` of an (out_rows, n) zero tensor. Indices must
// be distinct; backward is the matching gather.
Tensor scatter_rows(const Tensor& a, const std::vector<int>& indices, int out_rows);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor pick(const Tensor& a, int flat_index);  // -> scalar

// Fused log-softmax losses; targets are plain data, not differentiated.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets);
Tensor cross_entropy_soft(const Tensor& logits, const std::vector<double>& targets);
Tensor mse_loss(const Tensor& pred, const std::vector<double>& target);

// ---- verification ----------------------------------------------------

// Central-difference check of d f / d x at x0. Returns the max over checked
// coordinates of |analytic - numeric| / max(1, |numeric|). When numel exceeds
// max_coords (>0), a seeded subset of coordinates is checked.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                  double h = 1e-5, int max_coords = -1, uint64_t coord_seed = 1);

}  // namespace sivit
