#include "sivit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sivit/errors.hpp"

namespace sivit {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

int shape_numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

namespace {

void finite_or_throw(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value in result");
        }
    }
}

std::vector<double>& ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
    return t.grad;
}

ImplPtr make_impl(Shape shape, std::vector<double> value, const char* op) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    impl->op = op;
    return impl;
}

// Wires the result into the graph when any parent needs gradients.
Tensor finish(ImplPtr impl, std::vector<ImplPtr> parents,
              std::function<void(TensorImpl&)> backward_fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(impl));
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimError(std::string(op) + ": expected rank-2 tensor, got shape " +
                       shape_str(t.shape()));
    }
}

// C(m,n) += A(m,k) * B(k,n)
void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = a[l];
            const double* b = B + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C(m,k) += A(m,n) * B(k,n)^T
void mm_nt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * n;
        double* c = C + static_cast<size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* b = B + static_cast<size_t>(j) * n;
            double s = 0.0;
            for (int l = 0; l < n; ++l) s += a[l] * b[l];
            c[j] += s;
        }
    }
}

// C(k,n) += A(m,k)^T * B(m,n)
void mm_tn_acc(const double* A, const double* B, double* C, int k, int m, int n) {
    for (int l = 0; l < m; ++l) {
        const double* a = A + static_cast<size_t>(l) * k;
        const double* b = B + static_cast<size_t>(l) * n;
        for (int i = 0; i < k; ++i) {
            const double av = a[i];
            double* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <class F, class DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF dfdx) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
    finite_or_throw(out, name);
    auto impl = make_impl(a.shape(), std::move(out), name);
    return finish(std::move(impl), {a.impl_ptr()}, [dfdx](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
        }
    });
}

template <class F, class DFA, class DFB>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name, F f,
                         DFA dfa, DFB dfb) {
    if (a.shape() != b.shape()) {
        throw DimError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i], b.data()[i]);
    finite_or_throw(out, name);
    auto impl = make_impl(a.shape(), std::move(out), name);
    return finish(std::move(impl), {a.impl_ptr(), b.impl_ptr()},
                  [dfa, dfb](TensorImpl& self) {
                      TensorImpl& pa = *self.parents[0];
                      TensorImpl& pb = *self.parents[1];
                      if (pa.requires_grad) {
                          auto& g = ensure_grad(pa);
                          for (size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * dfa(pa.value[i], pb.value[i]);
                      }
                      if (pb.requires_grad) {
                          auto& g = ensure_grad(pb);
                          for (size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * dfb(pa.value[i], pb.value[i]);
                      }
                  });
}

}  // namespace

// ---- Tensor ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = make_impl(shape, std::vector<double>(shape_numel(shape), 0.0), "leaf");
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto impl = make_impl(shape, std::vector<double>(shape_numel(shape), v), "leaf");
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return full(Shape{}, v, requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<int>(data.size()) != shape_numel(shape)) {
        throw DimError("Tensor::from: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), std::move(data), "leaf");
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : data) x = dist(rng);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::trunc_normal(Shape shape, std::mt19937_64& rng, double stddev,
                            bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : data) {
        double v = dist(rng);
        while (std::abs(v) > 2.0 * stddev) v = dist(rng);
        x = v;
    }
    return from(std::move(shape), std::move(data), requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("Tensor::item: tensor of shape " + shape_str(shape()) +
                            " is not scalar");
    }
    return impl_->value[0];
}

double Tensor::at(int r, int c) const {
    return impl_->value[static_cast<size_t>(r) * dim(1) + c];
}

std::vector<double>& Tensor::grad() { return ensure_grad(*impl_); }

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// ---- tape ------------------------------------------------------------

GradTape GradTape::record(const Tensor& root) {
    GradTape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    struct Frame {
        ImplPtr node;
        size_t next = 0;
    };
    std::unordered_set<const TensorImpl*> seen;
    std::vector<Frame> stack;
    stack.push_back({root.impl_ptr()});
    seen.insert(root.impl());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            ImplPtr p = f.node->parents[f.next++];
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back({std::move(p)});
            }
        } else {
            tape.order.push_back(f.node);
            stack.pop_back();
        }
    }
    std::reverse(tape.order.begin(), tape.order.end());  // root first
    return tape;
}

void GradTape::replay() {
    for (const auto& node : order) {
        if (node->backward_fn) node->backward_fn(*node);
    }
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any requires_grad leaf");
    }
    GradTape tape = GradTape::record(loss);
    ensure_grad(*loss.impl());
    loss.impl()->grad[0] += 1.0;
    tape.replay();
    // Non-leaf grads are scratch state of this call; reset them so a later
    // backward over a shared subgraph starts clean.
    for (const auto& node : tape.order) {
        if (node->backward_fn && !node->retain_grad) node->grad.clear();
    }
}

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    mm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    finite_or_throw(out, "matmul");
    auto impl = make_impl({m, n}, std::move(out), "matmul");
    return finish(std::move(impl), {a.impl_ptr(), b.impl_ptr()},
                  [m, k, n](TensorImpl& self) {
                      TensorImpl& A = *self.parents[0];
                      TensorImpl& B = *self.parents[1];
                      if (A.requires_grad) {
                          mm_nt_acc(self.grad.data(), B.value.data(),
                                    ensure_grad(A).data(), m, n, k);
                      }
                      if (B.requires_grad) {
                          mm_tn_acc(A.value.data(), self.grad.data(),
                                    ensure_grad(B).data(), k, m, n);
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    auto impl = make_impl({n, m}, std::move(out), "transpose");
    return finish(std::move(impl), {a.impl_ptr()}, [m, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                g[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary_op(
        a, "scale", [s](double x) { return x * s; },
        [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        a, "add_scalar", [s](double x) { return x + s; },
        [](double, double) { return 1.0; });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_rank2(a, "add_rowvec");
    if (v.rank() != 1 || v.dim(0) != a.dim(1)) {
        throw DimError("add_rowvec: vector shape " + shape_str(v.shape()) +
                       " does not match matrix " + shape_str(a.shape()));
    }
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] =
                a.data()[static_cast<size_t>(i) * n + j] + v.data()[static_cast<size_t>(j)];
    finite_or_throw(out, "add_rowvec");
    auto impl = make_impl({m, n}, std::move(out), "add_rowvec");
    return finish(std::move(impl), {a.impl_ptr(), v.impl_ptr()},
                  [m, n](TensorImpl& self) {
                      TensorImpl& pa = *self.parents[0];
                      TensorImpl& pv = *self.parents[1];
                      if (pa.requires_grad) {
                          auto& g = ensure_grad(pa);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                      }
                      if (pv.requires_grad) {
                          auto& g = ensure_grad(pv);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j)
                                  g[static_cast<size_t>(j)] +=
                                      self.grad[static_cast<size_t>(i) * n + j];
                      }
                  });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor softmax(const Tensor& a, int axis) {
    if (a.rank() == 1) {
        if (axis != 0) throw DimError("softmax: axis out of range for rank-1 tensor");
        Tensor r = softmax(reshape(a, {1, a.dim(0)}), 1);
        return reshape(r, a.shape());
    }
    require_rank2(a, "softmax");
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    if (axis != 1) throw DimError("softmax: invalid axis " + std::to_string(axis));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<size_t>(i) * n;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= s;
    }
    finite_or_throw(out, "softmax");
    auto impl = make_impl({m, n}, std::move(out), "softmax");
    return finish(std::move(impl), {a.impl_ptr()}, [m, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (int i = 0; i < m; ++i) {
            const double* y = self.value.data() + static_cast<size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* gr = g.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gr[j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    Tensor xm = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
    require_rank2(xm, "layer_norm");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const int m = xm.dim(0), n = xm.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n) {
        throw DimError("layer_norm: gamma/beta shape must be (" + std::to_string(n) +
                       "), got " + shape_str(gamma.shape()) + " and " +
                       shape_str(beta.shape()));
    }
    std::vector<double> out(xm.data().size());
    std::vector<double> inv_std(static_cast<size_t>(m));
    std::vector<double> means(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = xm.data().data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        means[static_cast<size_t>(i)] = mu;
        inv_std[static_cast<size_t>(i)] = is;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            orow[j] = gamma.data()[static_cast<size_t>(j)] * (row[j] - mu) * is +
                      beta.data()[static_cast<size_t>(j)];
        }
    }
    finite_or_throw(out, "layer_norm");
    auto impl = make_impl({m, n}, std::move(out), "layer_norm");
    Tensor r = finish(
        std::move(impl), {xm.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()},
        [m, n, means, inv_std](TensorImpl& self) {
            TensorImpl& px = *self.parents[0];
            TensorImpl& pg = *self.parents[1];
            TensorImpl& pb = *self.parents[2];
            for (int i = 0; i < m; ++i) {
                const double* row = px.value.data() + static_cast<size_t>(i) * n;
                const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
                const double mu = means[static_cast<size_t>(i)];
                const double is = inv_std[static_cast<size_t>(i)];
                if (pg.requires_grad || pb.requires_grad) {
                    auto& gg = ensure_grad(pg);
                    auto& gb = ensure_grad(pb);
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mu) * is;
                        if (pg.requires_grad) gg[static_cast<size_t>(j)] += dy[j] * xhat;
                        if (pb.requires_grad) gb[static_cast<size_t>(j)] += dy[j];
                    }
                }
                if (px.requires_grad) {
                    auto& gx = ensure_grad(px);
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mu) * is;
                        const double dxhat = dy[j] * pg.value[static_cast<size_t>(j)];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    double* gr = gx.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mu) * is;
                        const double dxhat = dy[j] * pg.value[static_cast<size_t>(j)];
                        gr[j] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
        });
    return x.rank() == 1 ? reshape(r, x.shape()) : r;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    if (!std::isfinite(s)) throw NumericError("sum: non-finite value in result");
    auto impl = make_impl({}, {s}, "sum");
    return finish(std::move(impl), {a.impl_ptr()}, [](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (double& x : g) x += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double x : a.data()) s += x;
    s /= n;
    if (!std::isfinite(s)) throw NumericError("mean: non-finite value in result");
    auto impl = make_impl({}, {s}, "mean");
    return finish(std::move(impl), {a.impl_ptr()}, [n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (double& x : g) x += self.grad[0] / n;
    });
}

Tensor sum_axis0(const Tensor& a) {
    require_rank2(a, "sum_axis0");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j)] += a.data()[static_cast<size_t>(i) * n + j];
    finite_or_throw(out, "sum_axis0");
    auto impl = make_impl({n}, std::move(out), "sum_axis0");
    return finish(std::move(impl), {a.impl_ptr()}, [m, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j)];
    });
}

Tensor mean_axis0(const Tensor& a) {
    require_rank2(a, "mean_axis0");
    return scale(sum_axis0(a), 1.0 / a.dim(0));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimError("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                       shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), a.data(), "reshape");
    return finish(std::move(impl), {a.impl_ptr()}, [](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
    require_rank2(a, "gather_rows");
    const int m = a.dim(0), n = a.dim(1);
    for (int idx : indices) {
        if (idx < 0 || idx >= m) {
            throw ContractError("gather_rows: index " + std::to_string(idx) +
                                " out of range [0, " + std::to_string(m) + ")");
        }
    }
    const int k = static_cast<int>(indices.size());
    std::vector<double> out(static_cast<size_t>(k) * n);
    for (int i = 0; i < k; ++i) {
        const double* src = a.data().data() + static_cast<size_t>(indices[static_cast<size_t>(i)]) * n;
        std::copy(src, src + n, out.data() + static_cast<size_t>(i) * n);
    }
    auto impl = make_impl({k, n}, std::move(out), "gather_rows");
    return finish(std::move(impl), {a.impl_ptr()}, [indices, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < indices.size(); ++i) {
            double* dst = g.data() + static_cast<size_t>(indices[i]) * n;
            const double* src = self.grad.data() + i * static_cast<size_t>(n);
            for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
    });
}

Tensor scatter_rows(const Tensor& a, const std::vector<int>& indices, int out_rows) {
    require_rank2(a, "scatter_rows");
    if (static_cast<int>(indices.size()) != a.dim(0)) {
        throw ContractError("scatter_rows: got " + std::to_string(indices.size()) +
                            " indices for " + std::to_string(a.dim(0)) + " rows");
    }
    std::unordered_set<int> seen;
    for (int idx : indices) {
        if (idx < 0 || idx >= out_rows) {
            throw ContractError("scatter_rows: index " + std::to_string(idx) +
                                " out of range [0, " + std::to_string(out_rows) + ")");
        }
        if (!seen.insert(idx).second) {
            throw ContractError("scatter_rows: duplicate index " + std::to_string(idx));
        }
    }
    const int n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(out_rows) * n, 0.0);
    for (size_t i = 0; i < indices.size(); ++i) {
        const double* src = a.data().data() + i * static_cast<size_t>(n);
        std::copy(src, src + n, out.data() + static_cast<size_t>(indices[i]) * n);
    }
    auto impl = make_impl({out_rows, n}, std::move(out), "scatter_rows");
    return finish(std::move(impl), {a.impl_ptr()}, [indices, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < indices.size(); ++i) {
            const double* src = self.grad.data() + static_cast<size_t>(indices[i]) * n;
            double* dst = g.data() + i * static_cast<size_t>(n);
            for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
    });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_rank2(a, "slice_rows");
    if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
        throw ContractError("slice_rows: invalid range [" + std::to_string(r0) + ", " +
                            std::to_string(r1) + ") for " + shape_str(a.shape()));
    }
    const int n = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<size_t>(r0) * n,
                            a.data().begin() + static_cast<size_t>(r1) * n);
    auto impl = make_impl({r1 - r0, n}, std::move(out), "slice_rows");
    return finish(std::move(impl), {a.impl_ptr()}, [r0, n](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < self.grad.size(); ++i)
            g[static_cast<size_t>(r0) * n + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_rank2(a, "slice_cols");
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw ContractError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                            std::to_string(c1) + ") for " + shape_str(a.shape()));
    }
    const int m = a.dim(0), n = a.dim(1), w = c1 - c0;
    std::vector<double> out(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<size_t>(i) * w + j] =
                a.data()[static_cast<size_t>(i) * n + c0 + j];
    auto impl = make_impl({m, w}, std::move(out), "slice_cols");
    return finish(std::move(impl), {a.impl_ptr()}, [m, n, c0, w](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                g[static_cast<size_t>(i) * n + c0 + j] +=
                    self.grad[static_cast<size_t>(i) * w + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty part list");
    const int n = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    int m = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dim(1) != n) {
            throw DimError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
        }
        m += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(m) * n);
    std::vector<ImplPtr> parents;
    std::vector<int> row_counts;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.impl_ptr());
        row_counts.push_back(p.dim(0));
    }
    auto impl = make_impl({m, n}, std::move(out), "concat_rows");
    return finish(std::move(impl), std::move(parents), [row_counts, n](TensorImpl& self) {
        size_t off = 0;
        for (size_t k = 0; k < row_counts.size(); ++k) {
            TensorImpl& p = *self.parents[k];
            const size_t cnt = static_cast<size_t>(row_counts[k]) * n;
            if (p.requires_grad) {
                auto& g = ensure_grad(p);
                for (size_t i = 0; i < cnt; ++i) g[i] += self.grad[off + i];
            }
            off += cnt;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty part list");
    const int m = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
    int n = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != m) {
            throw DimError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
        }
        n += p.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(m) * n);
    std::vector<ImplPtr> parents;
    std::vector<int> widths;
    int col = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(i) * n + col + j] =
                    p.data()[static_cast<size_t>(i) * w + j];
        parents.push_back(p.impl_ptr());
        widths.push_back(w);
        col += w;
    }
    auto impl = make_impl({m, n}, std::move(out), "concat_cols");
    return finish(std::move(impl), std::move(parents), [m, n, widths](TensorImpl& self) {
        int col = 0;
        for (size_t k = 0; k < widths.size(); ++k) {
            TensorImpl& p = *self.parents[k];
            const int w = widths[k];
            if (p.requires_grad) {
                auto& g = ensure_grad(p);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        g[static_cast<size_t>(i) * w + j] +=
                            self.grad[static_cast<size_t>(i) * n + col + j];
            }
            col += w;
        }
    });
}

Tensor pick(const Tensor& a, int flat_index) {
    if (flat_index < 0 || flat_index >= a.numel()) {
        throw ContractError("pick: index " + std::to_string(flat_index) +
                            " out of range for " + shape_str(a.shape()));
    }
    auto impl = make_impl({}, {a.data()[static_cast<size_t>(flat_index)]}, "pick");
    return finish(std::move(impl), {a.impl_ptr()}, [flat_index](TensorImpl& self) {
        TensorImpl& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p)[static_cast<size_t>(flat_index)] += self.grad[0];
    });
}

namespace {

// Shared forward for the two cross-entropy variants: row-wise
// loss_i = sum_j t_j * (logsumexp(row) - row_j), mean over rows. For target
// rows summing to 1 this is standard soft cross-entropy.
Tensor ce_impl(const Tensor& logits, std::vector<double> target_probs, const char* name) {
    require_rank2(logits, name);
    const int m = logits.dim(0), n = logits.dim(1);
    std::vector<double> probs(logits.data().size());
    std::vector<double> tsums(static_cast<size_t>(m));
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        double dot = 0.0, tsum = 0.0;
        for (int j = 0; j < n; ++j) {
            probs[static_cast<size_t>(i) * n + j] = std::exp(row[j] - lse);
            dot += target_probs[static_cast<size_t>(i) * n + j] * row[j];
            tsum += target_probs[static_cast<size_t>(i) * n + j];
        }
        tsums[static_cast<size_t>(i)] = tsum;
        loss += tsum * lse - dot;
    }
    loss /= m;
    if (!std::isfinite(loss)) throw NumericError(std::string(name) + ": non-finite loss");
    auto impl = make_impl({}, {loss}, name);
    return finish(std::move(impl), {logits.impl_ptr()},
                  [m, n, probs = std::move(probs), tsums = std::move(tsums),
                   targets = std::move(target_probs)](TensorImpl& self) {
                      TensorImpl& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      auto& g = ensure_grad(p);
                      const double d = self.grad[0] / m;
                      for (int i = 0; i < m; ++i) {
                          const double ts = tsums[static_cast<size_t>(i)];
                          for (int j = 0; j < n; ++j) {
                              const size_t idx = static_cast<size_t>(i) * n + j;
                              g[idx] += d * (ts * probs[idx] - targets[idx]);
                          }
                      }
                  });
}

}  // namespace

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets) {
    Tensor lg = logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
    require_rank2(lg, "cross_entropy");
    const int m = lg.dim(0), n = lg.dim(1);
    if (static_cast<int>(targets.size()) != m) {
        throw ContractError("cross_entropy: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(m) + " rows");
    }
    std::vector<double> onehot(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= n) {
            throw ContractError("cross_entropy: target class " +
                                std::to_string(targets[static_cast<size_t>(i)]) +
                                " out of range [0, " + std::to_string(n) + ")");
        }
        onehot[static_cast<size_t>(i) * n + targets[static_cast<size_t>(i)]] = 1.0;
    }
    return ce_impl(lg, std::move(onehot), "cross_entropy");
}

Tensor cross_entropy_soft(const Tensor& logits, const std::vector<double>& targets) {
    Tensor lg = logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
    require_rank2(lg, "cross_entropy_soft");
    if (targets.size() != lg.data().size()) {
        throw ContractError("cross_entropy_soft: target size " +
                            std::to_string(targets.size()) + " does not match logits " +
                            shape_str(lg.shape()));
    }
    return ce_impl(lg, targets, "cross_entropy_soft");
}

Tensor mse_loss(const Tensor& pred, const std::vector<double>& target) {
    if (target.size() != pred.data().size()) {
        throw ContractError("mse_loss: target size " + std::to_string(target.size()) +
                            " does not match prediction " + shape_str(pred.shape()));
    }
    const double n = static_cast<double>(pred.numel());
    double loss = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        const double d = pred.data()[i] - target[i];
        loss += d * d;
    }
    loss /= n;
    if (!std::isfinite(loss)) throw NumericError("mse_loss: non-finite loss");
    auto impl = make_impl({}, {loss}, "mse_loss");
    return finish(std::move(impl), {pred.impl_ptr()},
                  [n, target](TensorImpl& self) {
                      TensorImpl& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      auto& g = ensure_grad(p);
                      for (size_t i = 0; i < g.size(); ++i)
                          g[i] += self.grad[0] * 2.0 * (p.value[i] - target[i]) / n;
                  });
}

// ---- grad_check ------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                  double h, int max_coords, uint64_t coord_seed) {
    Tensor x = Tensor::from(x0.shape(), x0.data(), true);
    Tensor loss = f(x);
    if (loss.numel() != 1) {
        throw ContractError("grad_check: f must return a scalar");
    }
    backward(loss);
    std::vector<double> analytic = x.grad();

    std::vector<int> coords;
    const int n = x.numel();
    if (max_coords > 0 && n > max_coords) {
        std::mt19937_64 rng(coord_seed);
        std::uniform_int_distribution<int> dist(0, n - 1);
        std::unordered_set<int> chosen;
        while (static_cast<int>(chosen.size()) < max_coords) chosen.insert(dist(rng));
        coords.assign(chosen.begin(), chosen.end());
        std::sort(coords.begin(), coords.end());
    } else {
        coords.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    double max_rel = 0.0;
    for (int c : coords) {
        const double orig = x.data()[static_cast<size_t>(c)];
        x.data()[static_cast<size_t>(c)] = orig + h;
        const double fp = f(x).item();
        x.data()[static_cast<size_t>(c)] = orig - h;
        const double fm = f(x).item();
        x.data()[static_cast<size_t>(c)] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[static_cast<size_t>(c)];
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
            throw NumericError("grad_check: NaN gradient at coordinate " + std::to_string(c));
        }
        max_rel = std::max(max_rel, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return max_rel;
}

}  // namespace sivit
