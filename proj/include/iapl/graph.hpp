#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/tensor.hpp"

namespace iapl {

inline constexpr double kEntropyClamp = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
double sigmoid_scalar(T z) {
    double zd = static_cast<double>(z);
    if (zd >= 0) return 1.0 / (1.0 + std::exp(-zd));
    double e = std::exp(zd);
    return e / (1.0 + e);
}

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order and backward() sweeps the tape once in reverse, so no explicit
// topological sort is needed. Leaf nodes alias caller-owned tensors (which
// must outlive the graph); everything else is owned by the tape.
template <typename T>
class Graph {
    enum class Op {
        Leaf,
        Const,
        MatMul,      // [m,k] x [k,n]
        MatMulNT,    // [m,k] x [n,k]^T
        Add,         // same shape
        AddRowVec,   // [m,n] + [n]
        Mul,         // elementwise
        ColGate,     // [m,n] * gate[n] per column
        Scale,       // x * scalar
        Relu,
        Gelu,
        Sigmoid,
        LayerNorm,   // rows normalized; inputs (x, gamma, beta)
        SoftmaxRows,
        SliceRows,   // rows [i0, i1)
        ConcatRows,
        SliceCols,   // cols [i0, i1)
        ConcatCols,
        Reshape,
        Conv3x3S2,   // (x[C,H,W], w[Co,C,3,3], b[Co]), stride 2, pad 1
        GlobalAvgPool,  // [C,H,W] -> [1,C]
        MeanAll,        // -> [1]
        BceWithLogits,  // scalar logit, label in `scalar`
        BinaryEntropy,  // elementwise, clamped
    };

    struct Node {
        Op op = Op::Const;
        std::vector<int> in;
        double scalar = 0.0;
        int i0 = 0, i1 = 0;
        Tensor<T> owned;
        const Tensor<T>* ext = nullptr;
        Tensor<T> grad;
        Tensor<T> aux;  // layernorm: xhat; sigmoid/softmax reuse owned
        std::vector<T> aux2;  // layernorm: inv_std per row
        bool has_grad = false;
        bool needs_grad = false;

        const Tensor<T>& val() const { return ext ? *ext : owned; }
    };

public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<Mat>;
    using CMatMap = Eigen::Map<const Mat>;

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }
    void reserve(size_t n) { nodes_.reserve(n); }

    const Tensor<T>& val(int id) const { return nodes_[id].val(); }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    bool has_grad(int id) const { return nodes_[id].has_grad; }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor<T>(n.val().shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    int leaf(const Tensor<T>& t, bool requires_grad) {
        Node n;
        n.op = Op::Leaf;
        n.ext = &t;
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    int value(Tensor<T> t) {
        Node n;
        n.op = Op::Const;
        n.owned = std::move(t);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    void backward(int root) {
        if (val(root).numel() != 1) throw ArgumentError("backward: root must be scalar");
        grad(root).fill(T(1));
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.needs_grad && n.has_grad) backward_node(id);
        }
    }

    // ---- ops ----

    int matmul(int a, int b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw ArgumentError("matmul: shape mismatch " + shape_str(A.shape) + " x " +
                                shape_str(B.shape));
        Tensor<T> out({A.shape[0], B.shape[1]});
        MatMap(out.data.data(), out.shape[0], out.shape[1]).noalias() =
            CMatMap(A.data.data(), A.shape[0], A.shape[1]) *
            CMatMap(B.data.data(), B.shape[0], B.shape[1]);
        return push(Op::MatMul, std::move(out), {a, b});
    }

    int matmul_nt(int a, int b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[1])
            throw ArgumentError("matmul_nt: shape mismatch");
        Tensor<T> out({A.shape[0], B.shape[0]});
        MatMap(out.data.data(), out.shape[0], out.shape[1]).noalias() =
            CMatMap(A.data.data(), A.shape[0], A.shape[1]) *
            CMatMap(B.data.data(), B.shape[0], B.shape[1]).transpose();
        return push(Op::MatMulNT, std::move(out), {a, b});
    }

    int add(int a, int b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (!A.same_shape(B)) throw ArgumentError("add: shape mismatch");
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] + B.data[i];
        return push(Op::Add, std::move(out), {a, b});
    }

    int add_rowvec(int a, int v) {
        const Tensor<T>&A = val(a), &V = val(v);
        if (A.rank() != 2 || static_cast<int>(V.numel()) != A.shape[1])
            throw ArgumentError("add_rowvec: shape mismatch");
        Tensor<T> out(A.shape);
        int m = A.shape[0], n = A.shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = A(i, j) + V.data[j];
        return push(Op::AddRowVec, std::move(out), {a, v});
    }

    int mul(int a, int b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (!A.same_shape(B)) throw ArgumentError("mul: shape mismatch");
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * B.data[i];
        return push(Op::Mul, std::move(out), {a, b});
    }

    int colgate(int a, int gate) {
        const Tensor<T>&A = val(a), &G = val(gate);
        if (A.rank() != 2 || static_cast<int>(G.numel()) != A.shape[1])
            throw ArgumentError("colgate: shape mismatch");
        Tensor<T> out(A.shape);
        int m = A.shape[0], n = A.shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = A(i, j) * G.data[j];
        return push(Op::ColGate, std::move(out), {a, gate});
    }

    int scale(int a, double s) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<T>(A.data[i] * s);
        int id = push(Op::Scale, std::move(out), {a});
        nodes_[id].scalar = s;
        return id;
    }

    int relu(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = A.data[i] > T(0) ? A.data[i] : T(0);
        return push(Op::Relu, std::move(out), {a});
    }

    int gelu(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i) {
            double x = static_cast<double>(A.data[i]);
            out.data[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)));
        }
        return push(Op::Gelu, std::move(out), {a});
    }

    int sigmoid(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<T>(sigmoid_scalar(A.data[i]));
        return push(Op::Sigmoid, std::move(out), {a});
    }

    int layernorm(int a, int gamma, int beta) {
        const Tensor<T>&A = val(a), &G = val(gamma), &B = val(beta);
        if (A.rank() != 2 || static_cast<int>(G.numel()) != A.shape[1] || G.numel() != B.numel())
            throw ArgumentError("layernorm: shape mismatch");
        int m = A.shape[0], n = A.shape[1];
        Tensor<T> out(A.shape);
        Tensor<T> xhat(A.shape);
        std::vector<T> inv_std(m);
        for (int i = 0; i < m; ++i) {
            double mu = 0;
            for (int j = 0; j < n; ++j) mu += A(i, j);
            mu /= n;
            double var = 0;
            for (int j = 0; j < n; ++j) {
                double d = A(i, j) - mu;
                var += d * d;
            }
            var /= n;
            double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_std[i] = static_cast<T>(inv);
            for (int j = 0; j < n; ++j) {
                double xh = (A(i, j) - mu) * inv;
                xhat(i, j) = static_cast<T>(xh);
                out(i, j) = static_cast<T>(xh * G.data[j] + B.data[j]);
            }
        }
        int id = push(Op::LayerNorm, std::move(out), {a, gamma, beta});
        nodes_[id].aux = std::move(xhat);
        nodes_[id].aux2 = std::move(inv_std);
        return id;
    }

    int softmax_rows(int a) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2) throw ArgumentError("softmax_rows: need 2-d input");
        int m = A.shape[0], n = A.shape[1];
        Tensor<T> out(A.shape);
        for (int i = 0; i < m; ++i) {
            double mx = A(i, 0);
            for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(A(i, j)));
            double z = 0;
            for (int j = 0; j < n; ++j) {
                double e = std::exp(static_cast<double>(A(i, j)) - mx);
                out(i, j) = static_cast<T>(e);
                z += e;
            }
            for (int j = 0; j < n; ++j) out(i, j) = static_cast<T>(out(i, j) / z);
        }
        return push(Op::SoftmaxRows, std::move(out), {a});
    }

    int slice_rows(int a, int r0, int r1) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2 || r0 < 0 || r1 > A.shape[0] || r0 >= r1)
            throw ArgumentError("slice_rows: bad range");
        int n = A.shape[1];
        Tensor<T> out({r1 - r0, n});
        std::copy(A.data.begin() + static_cast<size_t>(r0) * n,
                  A.data.begin() + static_cast<size_t>(r1) * n, out.data.begin());
        int id = push(Op::SliceRows, std::move(out), {a});
        nodes_[id].i0 = r0;
        nodes_[id].i1 = r1;
        return id;
    }

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw ArgumentError("concat_rows: empty");
        int n = val(parts[0]).rank() == 2 ? val(parts[0]).shape[1] : -1;
        if (n < 0) throw ArgumentError("concat_rows: need 2-d parts");
        int m = 0;
        for (int p : parts) {
            const Tensor<T>& P = val(p);
            if (P.rank() != 2 || P.shape[1] != n) throw ArgumentError("concat_rows: width mismatch");
            m += P.shape[0];
        }
        Tensor<T> out({m, n});
        size_t off = 0;
        for (int p : parts) {
            const Tensor<T>& P = val(p);
            std::copy(P.data.begin(), P.data.end(), out.data.begin() + off);
            off += P.data.size();
        }
        return push(Op::ConcatRows, std::move(out), parts);
    }

    int slice_cols(int a, int c0, int c1) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2 || c0 < 0 || c1 > A.shape[1] || c0 >= c1)
            throw ArgumentError("slice_cols: bad range");
        int m = A.shape[0], w = c1 - c0;
        Tensor<T> out({m, w});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out(i, j) = A(i, c0 + j);
        int id = push(Op::SliceCols, std::move(out), {a});
        nodes_[id].i0 = c0;
        nodes_[id].i1 = c1;
        return id;
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw ArgumentError("concat_cols: empty");
        int m = val(parts[0]).shape[0];
        int n = 0;
        for (int p : parts) {
            const Tensor<T>& P = val(p);
            if (P.rank() != 2 || P.shape[0] != m) throw ArgumentError("concat_cols: height mismatch");
            n += P.shape[1];
        }
        Tensor<T> out({m, n});
        int off = 0;
        for (int p : parts) {
            const Tensor<T>& P = val(p);
            int w = P.shape[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) out(i, off + j) = P(i, j);
            off += w;
        }
        return push(Op::ConcatCols, std::move(out), parts);
    }

    int reshape(int a, std::vector<int> shape) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(std::move(shape));
        if (out.numel() != A.numel()) throw ArgumentError("reshape: numel mismatch");
        out.data = A.data;
        return push(Op::Reshape, std::move(out), {a});
    }

    int conv3x3_s2(int x, int w, int b) {
        const Tensor<T>&X = val(x), &W = val(w), &B = val(b);
        if (X.rank() != 3 || W.rank() != 4 || W.shape[2] != 3 || W.shape[3] != 3 ||
            W.shape[1] != X.shape[0] || static_cast<int>(B.numel()) != W.shape[0])
            throw ArgumentError("conv3x3_s2: shape mismatch");
        int ci = X.shape[0], h = X.shape[1], wd = X.shape[2], co = W.shape[0];
        int oh = (h - 1) / 2 + 1, ow = (wd - 1) / 2 + 1;
        Tensor<T> out({co, oh, ow});
        for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = B.data[oc];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < 3; ++ky) {
                            int iy = oy * 2 + ky - 1;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                int ix = ox * 2 + kx - 1;
                                if (ix < 0 || ix >= wd) continue;
                                acc += static_cast<double>(
                                           W.data[((static_cast<size_t>(oc) * ci + ic) * 3 + ky) * 3 +
                                                  kx]) *
                                       X.data[(static_cast<size_t>(ic) * h + iy) * wd + ix];
                            }
                        }
                    out.data[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = static_cast<T>(acc);
                }
        return push(Op::Conv3x3S2, std::move(out), {x, w, b});
    }

    int global_avg_pool(int x) {
        const Tensor<T>& X = val(x);
        if (X.rank() != 3) throw ArgumentError("global_avg_pool: need 3-d input");
        int c = X.shape[0], h = X.shape[1], w = X.shape[2];
        Tensor<T> out({1, c});
        for (int ic = 0; ic < c; ++ic) {
            double acc = 0;
            for (int i = 0; i < h * w; ++i) acc += X.data[static_cast<size_t>(ic) * h * w + i];
            out.data[ic] = static_cast<T>(acc / (h * w));
        }
        return push(Op::GlobalAvgPool, std::move(out), {x});
    }

    int mean_all(int a) {
        const Tensor<T>& A = val(a);
        if (A.numel() == 0) throw ArgumentError("mean_all: empty input");
        double acc = 0;
        for (T v : A.data) acc += v;
        Tensor<T> out({1});
        out.data[0] = static_cast<T>(acc / A.numel());
        return push(Op::MeanAll, std::move(out), {a});
    }

    int bce_with_logits(int z, double label) {
        const Tensor<T>& Z = val(z);
        if (Z.numel() != 1) throw ArgumentError("bce_with_logits: logit must be scalar");
        double zd = Z.data[0];
        double loss = std::max(zd, 0.0) - zd * label + std::log1p(std::exp(-std::abs(zd)));
        Tensor<T> out({1});
        out.data[0] = static_cast<T>(loss);
        int id = push(Op::BceWithLogits, std::move(out), {z});
        nodes_[id].scalar = label;
        return id;
    }

    int binary_entropy(int p) {
        const Tensor<T>& P = val(p);
        Tensor<T> out(P.shape);
        for (size_t i = 0; i < P.data.size(); ++i) {
            double pd =
                std::clamp(static_cast<double>(P.data[i]), kEntropyClamp, 1.0 - kEntropyClamp);
            out.data[i] = static_cast<T>(-(pd * std::log(pd) + (1.0 - pd) * std::log(1.0 - pd)));
        }
        return push(Op::BinaryEntropy, std::move(out), {p});
    }

private:
    std::vector<Node> nodes_;

    int push(Op op, Tensor<T> out, std::vector<int> inputs) {
        Node n;
        n.op = op;
        n.owned = std::move(out);
        n.in = std::move(inputs);
        for (int i : n.in)
            if (nodes_[i].needs_grad) {
                n.needs_grad = true;
                break;
            }
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    bool wants(int id) const { return nodes_[id].needs_grad; }

    void backward_node(int id) {
        Node& n = nodes_[id];
        const Tensor<T>& d = n.grad;
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::MatMul: {
                int a = n.in[0], b = n.in[1];
                const Tensor<T>&A = val(a), &B = val(b);
                int m = A.shape[0], k = A.shape[1], c = B.shape[1];
                if (wants(a))
                    MatMap(grad(a).data.data(), m, k).noalias() +=
                        CMatMap(d.data.data(), m, c) * CMatMap(B.data.data(), k, c).transpose();
                if (wants(b))
                    MatMap(grad(b).data.data(), k, c).noalias() +=
                        CMatMap(A.data.data(), m, k).transpose() * CMatMap(d.data.data(), m, c);
                break;
            }
            case Op::MatMulNT: {
                int a = n.in[0], b = n.in[1];
                const Tensor<T>&A = val(a), &B = val(b);
                int m = A.shape[0], k = A.shape[1], c = B.shape[0];
                if (wants(a))
                    MatMap(grad(a).data.data(), m, k).noalias() +=
                        CMatMap(d.data.data(), m, c) * CMatMap(B.data.data(), c, k);
                if (wants(b))
                    MatMap(grad(b).data.data(), c, k).noalias() +=
                        CMatMap(d.data.data(), m, c).transpose() * CMatMap(A.data.data(), m, k);
                break;
            }
            case Op::Add: {
                for (int inp : n.in)
                    if (wants(inp)) {
                        Tensor<T>& g = grad(inp);
                        for (size_t i = 0; i < d.data.size(); ++i) g.data[i] += d.data[i];
                    }
                break;
            }
            case Op::AddRowVec: {
                int a = n.in[0], v = n.in[1];
                int m = d.shape[0], c = d.shape[1];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (size_t i = 0; i < d.data.size(); ++i) g.data[i] += d.data[i];
                }
                if (wants(v)) {
                    Tensor<T>& g = grad(v);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) g.data[j] += d(i, j);
                }
                break;
            }
            case Op::Mul: {
                int a = n.in[0], b = n.in[1];
                const Tensor<T>&A = val(a), &B = val(b);
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (size_t i = 0; i < d.data.size(); ++i) g.data[i] += d.data[i] * B.data[i];
                }
                if (wants(b)) {
                    Tensor<T>& g = grad(b);
                    for (size_t i = 0; i < d.data.size(); ++i) g.data[i] += d.data[i] * A.data[i];
                }
                break;
            }
            case Op::ColGate: {
                int a = n.in[0], gt = n.in[1];
                const Tensor<T>&A = val(a), &G = val(gt);
                int m = d.shape[0], c = d.shape[1];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) g(i, j) += d(i, j) * G.data[j];
                }
                if (wants(gt)) {
                    Tensor<T>& g = grad(gt);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) g.data[j] += d(i, j) * A(i, j);
                }
                break;
            }
            case Op::Scale: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (size_t i = 0; i < d.data.size(); ++i)
                        g.data[i] += static_cast<T>(d.data[i] * n.scalar);
                }
                break;
            }
            case Op::Relu: {
                int a = n.in[0];
                if (wants(a)) {
                    const Tensor<T>& A = val(a);
                    Tensor<T>& g = grad(a);
                    for (size_t i = 0; i < d.data.size(); ++i)
                        if (A.data[i] > T(0)) g.data[i] += d.data[i];
                }
                break;
            }
            case Op::Gelu: {
                int a = n.in[0];
                if (wants(a)) {
                    const Tensor<T>& A = val(a);
                    Tensor<T>& g = grad(a);
                    constexpr double inv_sqrt2pi = 0.3989422804014327;
                    for (size_t i = 0; i < d.data.size(); ++i) {
                        double x = static_cast<double>(A.data[i]);
                        double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                        g.data[i] += static_cast<T>(d.data[i] * (cdf + x * pdf));
                    }
                }
                break;
            }
            case Op::Sigmoid: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    const Tensor<T>& y = n.owned;
                    for (size_t i = 0; i < d.data.size(); ++i)
                        g.data[i] += d.data[i] * y.data[i] * (T(1) - y.data[i]);
                }
                break;
            }
            case Op::LayerNorm: {
                int a = n.in[0], ga = n.in[1], be = n.in[2];
                int m = d.shape[0], c = d.shape[1];
                const Tensor<T>& xhat = n.aux;
                const Tensor<T>& G = val(ga);
                if (wants(ga)) {
                    Tensor<T>& g = grad(ga);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) g.data[j] += d(i, j) * xhat(i, j);
                }
                if (wants(be)) {
                    Tensor<T>& g = grad(be);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j) g.data[j] += d(i, j);
                }
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (int i = 0; i < m; ++i) {
                        double mean_dxhat = 0, mean_dxhat_xhat = 0;
                        for (int j = 0; j < c; ++j) {
                            double dxh = static_cast<double>(d(i, j)) * G.data[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat(i, j);
                        }
                        mean_dxhat /= c;
                        mean_dxhat_xhat /= c;
                        double inv = n.aux2[i];
                        for (int j = 0; j < c; ++j) {
                            double dxh = static_cast<double>(d(i, j)) * G.data[j];
                            g(i, j) += static_cast<T>(
                                inv * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat));
                        }
                    }
                }
                break;
            }
            case Op::SoftmaxRows: {
                int a = n.in[0];
                if (wants(a)) {
                    const Tensor<T>& y = n.owned;
                    Tensor<T>& g = grad(a);
                    int m = d.shape[0], c = d.shape[1];
                    for (int i = 0; i < m; ++i) {
                        double dot = 0;
                        for (int j = 0; j < c; ++j) dot += static_cast<double>(d(i, j)) * y(i, j);
                        for (int j = 0; j < c; ++j)
                            g(i, j) += static_cast<T>(y(i, j) * (d(i, j) - dot));
                    }
                }
                break;
            }
            case Op::SliceRows: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    int c = d.shape[1];
                    for (int i = 0; i < d.shape[0]; ++i)
                        for (int j = 0; j < c; ++j) g(n.i0 + i, j) += d(i, j);
                }
                break;
            }
            case Op::ConcatRows: {
                int r = 0;
                int c = d.shape[1];
                for (int inp : n.in) {
                    int h = val(inp).shape[0];
                    if (wants(inp)) {
                        Tensor<T>& g = grad(inp);
                        for (int i = 0; i < h; ++i)
                            for (int j = 0; j < c; ++j) g(i, j) += d(r + i, j);
                    }
                    r += h;
                }
                break;
            }
            case Op::SliceCols: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (int i = 0; i < d.shape[0]; ++i)
                        for (int j = 0; j < d.shape[1]; ++j) g(i, n.i0 + j) += d(i, j);
                }
                break;
            }
            case Op::ConcatCols: {
                int off = 0;
                for (int inp : n.in) {
                    int w = val(inp).shape[1];
                    if (wants(inp)) {
                        Tensor<T>& g = grad(inp);
                        for (int i = 0; i < d.shape[0]; ++i)
                            for (int j = 0; j < w; ++j) g(i, j) += d(i, off + j);
                    }
                    off += w;
                }
                break;
            }
            case Op::Reshape: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    for (size_t i = 0; i < d.data.size(); ++i) g.data[i] += d.data[i];
                }
                break;
            }
            case Op::Conv3x3S2: {
                int x = n.in[0], w = n.in[1], b = n.in[2];
                const Tensor<T>&X = val(x), &W = val(w);
                int ci = X.shape[0], h = X.shape[1], wd = X.shape[2];
                int co = W.shape[0], oh = d.shape[1], ow = d.shape[2];
                Tensor<T>* gx = wants(x) ? &grad(x) : nullptr;
                Tensor<T>* gw = wants(w) ? &grad(w) : nullptr;
                Tensor<T>* gb = wants(b) ? &grad(b) : nullptr;
                for (int oc = 0; oc < co; ++oc)
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            T dv = d.data[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                            if (dv == T(0)) continue;
                            if (gb) gb->data[oc] += dv;
                            for (int ic = 0; ic < ci; ++ic)
                                for (int ky = 0; ky < 3; ++ky) {
                                    int iy = oy * 2 + ky - 1;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        int ix = ox * 2 + kx - 1;
                                        if (ix < 0 || ix >= wd) continue;
                                        size_t wi =
                                            ((static_cast<size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx;
                                        size_t xi = (static_cast<size_t>(ic) * h + iy) * wd + ix;
                                        if (gx) gx->data[xi] += dv * W.data[wi];
                                        if (gw) gw->data[wi] += dv * X.data[xi];
                                    }
                                }
                        }
                break;
            }
            case Op::GlobalAvgPool: {
                int x = n.in[0];
                if (wants(x)) {
                    const Tensor<T>& X = val(x);
                    int c = X.shape[0], hw = X.shape[1] * X.shape[2];
                    Tensor<T>& g = grad(x);
                    for (int ic = 0; ic < c; ++ic) {
                        T dv = static_cast<T>(d.data[ic] / hw);
                        for (int i = 0; i < hw; ++i) g.data[static_cast<size_t>(ic) * hw + i] += dv;
                    }
                }
                break;
            }
            case Op::MeanAll: {
                int a = n.in[0];
                if (wants(a)) {
                    Tensor<T>& g = grad(a);
                    T dv = static_cast<T>(d.data[0] / static_cast<double>(g.numel()));
                    for (auto& v : g.data) v += dv;
                }
                break;
            }
            case Op::BceWithLogits: {
                int z = n.in[0];
                if (wants(z)) {
                    double s = sigmoid_scalar(val(z).data[0]);
                    grad(z).data[0] += static_cast<T>(d.data[0] * (s - n.scalar));
                }
                break;
            }
            case Op::BinaryEntropy: {
                int p = n.in[0];
                if (wants(p)) {
                    const Tensor<T>& P = val(p);
                    Tensor<T>& g = grad(p);
                    for (size_t i = 0; i < d.data.size(); ++i) {
                        double pd = static_cast<double>(P.data[i]);
                        if (pd <= kEntropyClamp || pd >= 1.0 - kEntropyClamp) continue;
                        g.data[i] += static_cast<T>(d.data[i] * std::log((1.0 - pd) / pd));
                    }
                }
                break;
            }
        }
    }
};

}  // namespace iapl
