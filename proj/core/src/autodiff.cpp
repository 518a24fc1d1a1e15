#include "rae/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace rae {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> as_mat(const BasicTensor<T>& t) {
    return CMapMat<T>(t.data(), t.rows(), t.cols());
}
template <typename T>
MapMat<T> as_mat(BasicTensor<T>& t) {
    return MapMat<T>(t.data(), t.rows(), t.cols());
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& node, const BasicTensor<T>& g) {
    if (!node->requires_grad) return;
    auto& dst = node->ensure_grad();
    T* d = dst.data();
    const T* s = g.data();
    const auto n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& n) {
    return n && n->requires_grad;
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 operands");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    BasicTensor<T> out({a.dim(0), b.dim(1)});
    as_mat(out).noalias() = as_mat(a) * as_mat(b);
    return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects rank 2");
    BasicTensor<T> out({a.dim(1), a.dim(0)});
    as_mat(out) = as_mat(a).transpose();
    return out;
}

template <typename T>
BasicTensor<T> layer_norm_no_affine(const BasicTensor<T>& x, T eps) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    if (cols < 2) throw ContractError("layer_norm_no_affine needs at least 2 channels");
    BasicTensor<T> out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = x.data() + r * cols;
        T* dst = out.data() + r * cols;
        double mean = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) mean += src[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double d = src[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (std::int64_t c = 0; c < cols; ++c) dst[c] = static_cast<T>((src[c] - mean) * inv);
    }
    return out;
}

template <typename T>
Var<T> make_result(BasicTensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(const BasicTensor<T>&)> backward_fn) {
    bool any = false;
    for (const auto& p : parents) any = any || wants(p);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw ContractError("backward() requires a scalar loss");
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order without recursion limits.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto& seed = loss.node()->ensure_grad();
    seed[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(node->grad);
    }
    // Interior gradients are scratch; drop them so repeated backward passes stay clean.
    for (Node<T>* node : order) {
        if (node->backward_fn) node->grad = BasicTensor<T>();
    }
}

namespace ad {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    auto out = rae::matmul(a.value(), b.value());
    auto na = a.node();
    auto nb = b.node();
    return make_result<T>(std::move(out), {na, nb}, [na, nb](const BasicTensor<T>& g) {
        if (wants(na)) {
            auto& ga = na->ensure_grad();
            as_mat(ga).noalias() += as_mat(g) * as_mat(nb->value).transpose();
        }
        if (wants(nb)) {
            auto& gb = nb->ensure_grad();
            as_mat(gb).noalias() += as_mat(na->value).transpose() * as_mat(g);
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (wv.rank() != 2 || xv.cols() != wv.dim(0)) {
        throw DimensionError("linear: input width " + std::to_string(xv.cols()) + " does not match weight " +
                             shape_string(wv.shape()));
    }
    const auto rows = xv.rows();
    const auto out_dim = wv.dim(1);
    Shape out_shape = xv.shape();
    if (out_shape.empty()) out_shape = {1};
    out_shape.back() = out_dim;
    BasicTensor<T> out(out_shape);
    auto om = MapMat<T>(out.data(), rows, out_dim);
    om.noalias() = CMapMat<T>(xv.data(), rows, xv.cols()) * as_mat(wv);
    if (bias.defined()) {
        if (bias.value().numel() != out_dim) throw DimensionError("linear: bias length mismatch");
        om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), out_dim);
    }
    auto nx = x.node();
    auto nw = w.node();
    std::shared_ptr<Node<T>> nb = bias.defined() ? bias.node() : nullptr;
    std::vector<std::shared_ptr<Node<T>>> parents{nx, nw};
    if (nb) parents.push_back(nb);
    return make_result<T>(std::move(out), std::move(parents), [nx, nw, nb, rows, out_dim](const BasicTensor<T>& g) {
        auto gm = CMapMat<T>(g.data(), rows, out_dim);
        const auto in_dim = nw->value.dim(0);
        if (wants(nx)) {
            auto& gx = nx->ensure_grad();
            MapMat<T>(gx.data(), rows, in_dim).noalias() += gm * as_mat(nw->value).transpose();
        }
        if (wants(nw)) {
            auto& gw = nw->ensure_grad();
            as_mat(gw).noalias() += CMapMat<T>(nx->value.data(), rows, in_dim).transpose() * gm;
        }
        if (wants(nb)) {
            auto& gb = nb->ensure_grad();
            T* d = gb.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* src = g.data() + r * out_dim;
                for (std::int64_t c = 0; c < out_dim; ++c) d[c] += src[c];
            }
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    BasicTensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    auto na = a.node();
    auto nb = b.node();
    return make_result<T>(std::move(out), {na, nb}, [na, nb](const BasicTensor<T>& g) {
        accumulate(na, g);
        accumulate(nb, g);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "sub");
    BasicTensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
    auto na = a.node();
    auto nb = b.node();
    return make_result<T>(std::move(out), {na, nb}, [na, nb](const BasicTensor<T>& g) {
        accumulate(na, g);
        if (wants(nb)) {
            auto& gb = nb->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "mul");
    BasicTensor<T> out(a.shape());
    const auto n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    auto na = a.node();
    auto nb = b.node();
    return make_result<T>(std::move(out), {na, nb}, [na, nb](const BasicTensor<T>& g) {
        if (wants(na)) {
            auto& ga = na->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * nb->value[i];
        }
        if (wants(nb)) {
            auto& gb = nb->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * na->value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    BasicTensor<T> out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
    auto na = a.node();
    return make_result<T>(std::move(out), {na}, [na, s](const BasicTensor<T>& g) {
        auto& ga = na->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
    });
}

template <typename T>
Var<T> add_cyclic(const Var<T>& x, const Var<T>& table) {
    const auto& xv = x.value();
    const auto& tv = table.value();
    const auto rows = xv.rows();
    const auto cols = xv.cols();
    const auto period = tv.rows();
    if (tv.cols() != cols || period == 0 || rows % period != 0) {
        throw DimensionError("add_cyclic: table " + shape_string(tv.shape()) + " does not tile " +
                             shape_string(xv.shape()));
    }
    BasicTensor<T> out(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* t = tv.data() + (r % period) * cols;
        for (std::int64_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) + t[c];
    }
    auto nx = x.node();
    auto nt = table.node();
    return make_result<T>(std::move(out), {nx, nt}, [nx, nt, rows, cols, period](const BasicTensor<T>& g) {
        accumulate(nx, g);
        if (wants(nt)) {
            auto& gt = nt->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                T* d = gt.data() + (r % period) * cols;
                for (std::int64_t c = 0; c < cols; ++c) d[c] += g.at(r, c);
            }
        }
    });
}

template <typename T>
Var<T> repeat_rows(const Var<T>& c, std::int64_t group) {
    const auto& cv = c.value();
    const auto rows = cv.rows();
    const auto cols = cv.cols();
    BasicTensor<T> out({rows * group, cols});
    for (std::int64_t r = 0; r < rows * group; ++r) {
        std::copy_n(cv.data() + (r / group) * cols, cols, out.data() + r * cols);
    }
    auto nc = c.node();
    return make_result<T>(std::move(out), {nc}, [nc, rows, cols, group](const BasicTensor<T>& g) {
        auto& gc = nc->ensure_grad();
        for (std::int64_t r = 0; r < rows * group; ++r) {
            T* d = gc.data() + (r / group) * cols;
            for (std::int64_t k = 0; k < cols; ++k) d[k] += g.at(r, k);
        }
    });
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale_v, std::int64_t group) {
    const auto& xv = x.value();
    const auto rows = xv.rows();
    const auto cols = xv.cols();
    if (group <= 0 || rows % group != 0 || shift.value().rows() * group != rows || shift.value().cols() != cols ||
        !shift.value().same_shape(scale_v.value())) {
        throw DimensionError("modulate: conditioning shape does not match input");
    }
    BasicTensor<T> out(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* sh = shift.value().data() + (r / group) * cols;
        const T* sc = scale_v.value().data() + (r / group) * cols;
        for (std::int64_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) * (T(1) + sc[c]) + sh[c];
    }
    auto nx = x.node();
    auto nsh = shift.node();
    auto nsc = scale_v.node();
    return make_result<T>(std::move(out), {nx, nsh, nsc}, [nx, nsh, nsc, rows, cols, group](const BasicTensor<T>& g) {
        const bool gx = wants(nx), gsh = wants(nsh), gsc = wants(nsc);
        T* dx = gx ? nx->ensure_grad().data() : nullptr;
        T* dsh = gsh ? nsh->ensure_grad().data() : nullptr;
        T* dsc = gsc ? nsc->ensure_grad().data() : nullptr;
        const T* scv = nsc->value.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const auto cr = (r / group) * cols;
            for (std::int64_t c = 0; c < cols; ++c) {
                const T gv = g.at(r, c);
                if (gx) dx[r * cols + c] += gv * (T(1) + scv[cr + c]);
                if (gsh) dsh[cr + c] += gv;
                if (gsc) dsc[cr + c] += gv * nx->value.at(r, c);
            }
        }
    });
}

template <typename T>
Var<T> gated_add(const Var<T>& x, const Var<T>& gate, const Var<T>& y, std::int64_t group) {
    const auto& xv = x.value();
    require_same_shape(xv, y.value(), "gated_add");
    const auto rows = xv.rows();
    const auto cols = xv.cols();
    if (group <= 0 || gate.value().rows() * group != rows || gate.value().cols() != cols) {
        throw DimensionError("gated_add: gate shape does not match input");
    }
    BasicTensor<T> out(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* gt = gate.value().data() + (r / group) * cols;
        for (std::int64_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) + gt[c] * y.value().at(r, c);
    }
    auto nx = x.node();
    auto ng = gate.node();
    auto ny = y.node();
    return make_result<T>(std::move(out), {nx, ng, ny}, [nx, ng, ny, rows, cols, group](const BasicTensor<T>& g) {
        accumulate(nx, g);
        const bool gg = wants(ng), gy = wants(ny);
        T* dg = gg ? ng->ensure_grad().data() : nullptr;
        T* dy = gy ? ny->ensure_grad().data() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const auto cr = (r / group) * cols;
            for (std::int64_t c = 0; c < cols; ++c) {
                const T gv = g.at(r, c);
                if (gg) dg[cr + c] += gv * ny->value.at(r, c);
                if (gy) dy[r * cols + c] += gv * ng->value[cr + c];
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, T eps) {
    const auto& xv = x.value();
    const auto rows = xv.rows();
    const auto cols = xv.cols();
    if (cols < 2) throw ContractError("layer_norm needs at least 2 channels");
    BasicTensor<T> out(xv.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = xv.data() + r * cols;
        T mean = 0;
        for (std::int64_t c = 0; c < cols; ++c) mean += src[c];
        mean /= static_cast<T>(cols);
        T var = 0;
        for (std::int64_t c = 0; c < cols; ++c) var += (src[c] - mean) * (src[c] - mean);
        var /= static_cast<T>(cols);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = inv;
        for (std::int64_t c = 0; c < cols; ++c) out.at(r, c) = (src[c] - mean) * inv;
    }
    auto nx = x.node();
    auto result = make_result<T>(std::move(out), {nx}, nullptr);
    if (!result.requires_grad()) return result;
    // The closure reads the normalized output from the result node itself.
    std::weak_ptr<Node<T>> self = result.node();
    result.node()->backward_fn = [nx, self, inv_std = std::move(inv_std), rows, cols](const BasicTensor<T>& g) {
        auto me = self.lock();
        const auto& y = me->value;
        auto& gx = nx->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* gy = g.data() + r * cols;
            const T* yr = y.data() + r * cols;
            T mean_g = 0, mean_gy = 0;
            for (std::int64_t c = 0; c < cols; ++c) {
                mean_g += gy[c];
                mean_gy += gy[c] * yr[c];
            }
            mean_g /= static_cast<T>(cols);
            mean_gy /= static_cast<T>(cols);
            const T inv = inv_std[static_cast<std::size_t>(r)];
            T* d = gx.data() + r * cols;
            for (std::int64_t c = 0; c < cols; ++c) d[c] += inv * (gy[c] - mean_g - yr[c] * mean_gy);
        }
    };
    return result;
}

namespace {

template <typename T>
using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using CMapArr = Eigen::Map<const Arr<T>>;
template <typename T>
using MapArr = Eigen::Map<Arr<T>>;

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = static_cast<T>(0.044715);

}  // namespace

// tanh-approximated GELU; the tanh values are kept for the backward pass.
template <typename T>
Var<T> gelu(const Var<T>& x) {
    const auto n = x.value().numel();
    CMapArr<T> xa(x.value().data(), n);
    auto th = std::make_shared<Arr<T>>((kGeluC<T> * (xa + kGeluA<T> * xa.cube())).tanh());
    BasicTensor<T> out(x.shape());
    MapArr<T>(out.data(), n) = T(0.5) * xa * (T(1) + *th);
    auto nx = x.node();
    return make_result<T>(std::move(out), {nx}, [nx, th, n](const BasicTensor<T>& g) {
        CMapArr<T> xa(nx->value.data(), n);
        const auto du = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * xa.square());
        MapArr<T>(nx->ensure_grad().data(), n) +=
            CMapArr<T>(g.data(), n) * (T(0.5) * (T(1) + *th) + T(0.5) * xa * (T(1) - th->square()) * du);
    });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    const auto n = x.value().numel();
    CMapArr<T> xa(x.value().data(), n);
    auto sig = std::make_shared<Arr<T>>(T(1) / (T(1) + (-xa).exp()));
    BasicTensor<T> out(x.shape());
    MapArr<T>(out.data(), n) = xa * *sig;
    auto nx = x.node();
    return make_result<T>(std::move(out), {nx}, [nx, sig, n](const BasicTensor<T>& g) {
        CMapArr<T> xa(nx->value.data(), n);
        MapArr<T>(nx->ensure_grad().data(), n) += CMapArr<T>(g.data(), n) * (*sig * (T(1) + xa * (T(1) - *sig)));
    });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    const auto n = x.value().numel();
    BasicTensor<T> out(x.shape());
    MapArr<T>(out.data(), n) = CMapArr<T>(x.value().data(), n).tanh();
    auto nx = x.node();
    auto result = make_result<T>(std::move(out), {nx}, nullptr);
    if (!result.requires_grad()) return result;
    std::weak_ptr<Node<T>> self = result.node();
    result.node()->backward_fn = [nx, self, n](const BasicTensor<T>& g) {
        CMapArr<T> y(self.lock()->value.data(), n);
        MapArr<T>(nx->ensure_grad().data(), n) += CMapArr<T>(g.data(), n) * (T(1) - y.square());
    };
    return result;
}

template <typename T>
Var<T> attention(const Var<T>& qkv, std::int64_t batch, std::int64_t heads) {
    const auto& in = qkv.value();
    const auto rows = in.rows();
    const auto width3 = in.cols();
    if (batch <= 0 || rows % batch != 0 || width3 % 3 != 0) {
        throw DimensionError("attention: packed qkv " + shape_string(in.shape()) + " incompatible with batch");
    }
    const auto dim = width3 / 3;
    if (heads <= 0 || dim % heads != 0) throw DimensionError("attention: width not divisible by heads");
    const auto tokens = rows / batch;
    const auto hd = dim / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

    using Mat = RowMat<T>;
    using Stride = Eigen::OuterStride<>;
    using CStrided = Eigen::Map<const Mat, 0, Stride>;
    using Strided = Eigen::Map<Mat, 0, Stride>;

    BasicTensor<T> out({rows, dim});
    // Attention probabilities, one tokens x tokens block per (batch, head).
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch * heads * tokens * tokens));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* base = in.data() + b * tokens * width3;
        for (std::int64_t h = 0; h < heads; ++h) {
            CStrided q(base + h * hd, tokens, hd, Stride(width3));
            CStrided k(base + dim + h * hd, tokens, hd, Stride(width3));
            CStrided v(base + 2 * dim + h * hd, tokens, hd, Stride(width3));
            Eigen::Map<Mat> p(probs->data() + (b * heads + h) * tokens * tokens, tokens, tokens);
            p.noalias() = (q * k.transpose()) * inv_sqrt;
            for (std::int64_t i = 0; i < tokens; ++i) {
                const T mx = p.row(i).maxCoeff();
                T total = 0;
                for (std::int64_t j = 0; j < tokens; ++j) {
                    p(i, j) = std::exp(p(i, j) - mx);
                    total += p(i, j);
                }
                p.row(i) /= total;
            }
            Strided o(out.data() + b * tokens * dim + h * hd, tokens, hd, Stride(dim));
            o.noalias() = p * v;
        }
    }
    auto nq = qkv.node();
    return make_result<T>(std::move(out), {nq}, [nq, probs, batch, heads, tokens, hd, dim, width3, inv_sqrt](
                                                     const BasicTensor<T>& g) {
        const auto& in = nq->value;
        auto& gin = nq->ensure_grad();
        Mat dp(tokens, tokens);
        Mat ds(tokens, tokens);
        for (std::int64_t b = 0; b < batch; ++b) {
            const T* base = in.data() + b * tokens * width3;
            T* gbase = gin.data() + b * tokens * width3;
            for (std::int64_t h = 0; h < heads; ++h) {
                CStrided q(base + h * hd, tokens, hd, Stride(width3));
                CStrided k(base + dim + h * hd, tokens, hd, Stride(width3));
                CStrided v(base + 2 * dim + h * hd, tokens, hd, Stride(width3));
                Strided gq(gbase + h * hd, tokens, hd, Stride(width3));
                Strided gk(gbase + dim + h * hd, tokens, hd, Stride(width3));
                Strided gv(gbase + 2 * dim + h * hd, tokens, hd, Stride(width3));
                Eigen::Map<const Mat> p(probs->data() + (b * heads + h) * tokens * tokens, tokens, tokens);
                CStrided go(g.data() + b * tokens * dim + h * hd, tokens, hd, Stride(dim));
                gv.noalias() += p.transpose() * go;
                dp.noalias() = go * v.transpose();
                for (std::int64_t i = 0; i < tokens; ++i) {
                    T dot = 0;
                    for (std::int64_t j = 0; j < tokens; ++j) dot += dp(i, j) * p(i, j);
                    for (std::int64_t j = 0; j < tokens; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
                }
                gq.noalias() += ds * k;
                gk.noalias() += ds.transpose() * q;
            }
        }
    });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    const auto rows = a.value().rows();
    if (b.value().rows() != rows) throw DimensionError("concat_cols: row counts differ");
    const auto ca = a.value().cols();
    const auto cb = b.value().cols();
    BasicTensor<T> out({rows, ca + cb});
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    auto na = a.node();
    auto nb = b.node();
    return make_result<T>(std::move(out), {na, nb}, [na, nb, rows, ca, cb](const BasicTensor<T>& g) {
        if (wants(na)) {
            auto& ga = na->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
        }
        if (wants(nb)) {
            auto& gb = nb->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::int64_t start, std::int64_t count) {
    const auto rows = x.value().rows();
    const auto cols = x.value().cols();
    if (start < 0 || count < 0 || start + count > cols) throw DimensionError("slice_cols: range out of bounds");
    BasicTensor<T> out({rows, count});
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(x.value().data() + r * cols + start, count, out.data() + r * count);
    auto nx = x.node();
    return make_result<T>(std::move(out), {nx}, [nx, rows, cols, start, count](const BasicTensor<T>& g) {
        auto& gx = nx->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < count; ++c) gx[r * cols + start + c] += g[r * count + c];
    });
}

template <typename T>
Var<T> prepend_row(const Var<T>& x, const Var<T>& token, std::int64_t group) {
    const auto rows = x.value().rows();
    const auto cols = x.value().cols();
    if (group <= 0 || rows % group != 0 || token.value().numel() != cols) {
        throw DimensionError("prepend_row: token or grouping does not match input");
    }
    const auto batch = rows / group;
    BasicTensor<T> out({batch * (group + 1), cols});
    for (std::int64_t b = 0; b < batch; ++b) {
        T* dst = out.data() + b * (group + 1) * cols;
        std::copy_n(token.value().data(), cols, dst);
        std::copy_n(x.value().data() + b * group * cols, group * cols, dst + cols);
    }
    auto nx = x.node();
    auto nt = token.node();
    return make_result<T>(std::move(out), {nx, nt}, [nx, nt, batch, group, cols](const BasicTensor<T>& g) {
        for (std::int64_t b = 0; b < batch; ++b) {
            const T* src = g.data() + b * (group + 1) * cols;
            if (wants(nt)) {
                auto& gt = nt->ensure_grad();
                for (std::int64_t c = 0; c < cols; ++c) gt[c] += src[c];
            }
            if (wants(nx)) {
                auto& gx = nx->ensure_grad();
                T* d = gx.data() + b * group * cols;
                for (std::int64_t i = 0; i < group * cols; ++i) d[i] += src[cols + i];
            }
        }
    });
}

template <typename T>
Var<T> slice_rows_grouped(const Var<T>& x, std::int64_t group, std::int64_t start, std::int64_t count) {
    const auto rows = x.value().rows();
    const auto cols = x.value().cols();
    if (group <= 0 || rows % group != 0 || start < 0 || count < 0 || start + count > group) {
        throw DimensionError("slice_rows_grouped: range out of bounds");
    }
    const auto batch = rows / group;
    BasicTensor<T> out({batch * count, cols});
    for (std::int64_t b = 0; b < batch; ++b) {
        std::copy_n(x.value().data() + (b * group + start) * cols, count * cols, out.data() + b * count * cols);
    }
    auto nx = x.node();
    return make_result<T>(std::move(out), {nx}, [nx, batch, group, start, count, cols](const BasicTensor<T>& g) {
        auto& gx = nx->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b) {
            T* d = gx.data() + (b * group + start) * cols;
            const T* s = g.data() + b * count * cols;
            for (std::int64_t i = 0; i < count * cols; ++i) d[i] += s[i];
        }
    });
}

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids) {
    const auto vocab = table.value().rows();
    const auto cols = table.value().cols();
    BasicTensor<T> out({static_cast<std::int64_t>(ids.size()), cols});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) throw ContractError("embedding: id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table.value().data() + ids[i] * cols, cols, out.data() + static_cast<std::int64_t>(i) * cols);
    }
    auto nt = table.node();
    return make_result<T>(std::move(out), {nt}, [nt, ids, cols](const BasicTensor<T>& g) {
        auto& gt = nt->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            T* d = gt.data() + ids[i] * cols;
            const T* s = g.data() + static_cast<std::int64_t>(i) * cols;
            for (std::int64_t c = 0; c < cols; ++c) d[c] += s[c];
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    auto out = x.value().reshaped(shape);
    auto nx = x.node();
    return make_result<T>(std::move(out), {nx}, [nx](const BasicTensor<T>& g) { accumulate(nx, g); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    const double total = sum_sequential(x.value().span());
    auto nx = x.node();
    return make_result<T>(BasicTensor<T>({}, std::vector<T>{static_cast<T>(total)}), {nx},
                          [nx](const BasicTensor<T>& g) {
                              auto& gx = nx->ensure_grad();
                              for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
                          });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const auto n = x.value().numel();
    if (n == 0) throw ContractError("mean of empty tensor");
    const double total = sum_sequential(x.value().span()) / static_cast<double>(n);
    auto nx = x.node();
    return make_result<T>(BasicTensor<T>({}, std::vector<T>{static_cast<T>(total)}), {nx},
                          [nx, n](const BasicTensor<T>& g) {
                              auto& gx = nx->ensure_grad();
                              const T s = g[0] / static_cast<T>(n);
                              for (std::int64_t i = 0; i < n; ++i) gx[i] += s;
                          });
}

template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
    require_same_shape(pred.value(), target.value(), "mse");
    const auto n = pred.value().numel();
    if (n == 0) throw ContractError("mse of empty tensor");
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
        acc += d * d;
    }
    auto np = pred.node();
    auto nt = target.node();
    return make_result<T>(BasicTensor<T>({}, std::vector<T>{static_cast<T>(acc / static_cast<double>(n))}), {np, nt},
                          [np, nt, n](const BasicTensor<T>& g) {
                              const T s = T(2) * g[0] / static_cast<T>(n);
                              if (wants(np)) {
                                  auto& gp = np->ensure_grad();
                                  for (std::int64_t i = 0; i < n; ++i) gp[i] += s * (np->value[i] - nt->value[i]);
                              }
                              if (wants(nt)) {
                                  auto& gt = nt->ensure_grad();
                                  for (std::int64_t i = 0; i < n; ++i) gt[i] -= s * (np->value[i] - nt->value[i]);
                              }
                          });
}

template <typename T>
Var<T> l1(const Var<T>& pred, const Var<T>& target) {
    require_same_shape(pred.value(), target.value(), "l1");
    const auto n = pred.value().numel();
    if (n == 0) throw ContractError("l1 of empty tensor");
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        acc += std::abs(static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]));
    }
    auto np = pred.node();
    auto nt = target.node();
    return make_result<T>(BasicTensor<T>({}, std::vector<T>{static_cast<T>(acc / static_cast<double>(n))}), {np, nt},
                          [np, nt, n](const BasicTensor<T>& g) {
                              const T s = g[0] / static_cast<T>(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                  const T d = np->value[i] - nt->value[i];
                                  const T sign = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
                                  if (wants(np)) np->ensure_grad()[i] += s * sign;
                                  if (wants(nt)) nt->ensure_grad()[i] -= s * sign;
                              }
                          });
}

}  // namespace ad

#define RAE_INSTANTIATE(T)                                                                                      \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                                  \
    template BasicTensor<T> layer_norm_no_affine(const BasicTensor<T>&, T);                                    \
    template Var<T> make_result(BasicTensor<T>, std::vector<std::shared_ptr<Node<T>>>,                         \
                                std::function<void(const BasicTensor<T>&)>);                                   \
    template void backward(const Var<T>&);                                                                     \
    namespace ad {                                                                                             \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                                      \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                       \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> scale(const Var<T>&, T);                                                                   \
    template Var<T> add_cyclic(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> repeat_rows(const Var<T>&, std::int64_t);                                                  \
    template Var<T> modulate(const Var<T>&, const Var<T>&, const Var<T>&, std::int64_t);                       \
    template Var<T> gated_add(const Var<T>&, const Var<T>&, const Var<T>&, std::int64_t);                      \
    template Var<T> layer_norm(const Var<T>&, T);                                                              \
    template Var<T> gelu(const Var<T>&);                                                                       \
    template Var<T> silu(const Var<T>&);                                                                       \
    template Var<T> tanh(const Var<T>&);                                                                       \
    template Var<T> attention(const Var<T>&, std::int64_t, std::int64_t);                                      \
    template Var<T> concat_cols(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> slice_cols(const Var<T>&, std::int64_t, std::int64_t);                                     \
    template Var<T> prepend_row(const Var<T>&, const Var<T>&, std::int64_t);                                   \
    template Var<T> slice_rows_grouped(const Var<T>&, std::int64_t, std::int64_t, std::int64_t);               \
    template Var<T> embedding(const Var<T>&, const std::vector<int>&);                                         \
    template Var<T> reshape(const Var<T>&, Shape);                                                             \
    template Var<T> sum(const Var<T>&);                                                                        \
    template Var<T> mean(const Var<T>&);                                                                       \
    template Var<T> mse(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> l1(const Var<T>&, const Var<T>&);                                                          \
    }

RAE_INSTANTIATE(float)
RAE_INSTANTIATE(double)

#undef RAE_INSTANTIATE

}  // namespace rae
