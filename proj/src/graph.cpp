#include "hyperlora/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hyperlora/gemm.hpp"
#include "hyperlora/nn.hpp"

namespace hyperlora {

namespace {

constexpr float kGeluC0 = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluC1 = 0.044715f;

// Iterates the index space of `as` in row-major order, handing the linear
// index into `a` and the matching (possibly broadcast) linear index into `b`.
// `bs` must be rank-matched with every dim equal to the a-dim or 1.
template <typename Fn>
void bcast_loop(const Shape& as, const Shape& bs, Fn&& fn) {
    if (as.rank != bs.rank) throw ShapeError("broadcast rank mismatch " + as.str() + " vs " + bs.str());
    int64_t dim[4] = {1, 1, 1, 1};
    int64_t bstride[4] = {0, 0, 0, 0};
    int64_t stride = 1;
    for (int i = bs.rank - 1; i >= 0; --i) {
        if (bs.d[i] != as.d[i] && bs.d[i] != 1)
            throw ShapeError("broadcast dim mismatch " + as.str() + " vs " + bs.str());
        bstride[i] = (bs.d[i] == 1) ? 0 : stride;
        stride *= bs.d[i];
    }
    for (int i = 0; i < as.rank; ++i) dim[i] = as.d[i];
    int64_t ai = 0;
    for (int64_t i0 = 0; i0 < dim[0]; ++i0)
        for (int64_t i1 = 0; i1 < dim[1]; ++i1)
            for (int64_t i2 = 0; i2 < dim[2]; ++i2) {
                int64_t base = i0 * bstride[0] + i1 * bstride[1] + i2 * bstride[2];
                for (int64_t i3 = 0; i3 < dim[3]; ++i3, ++ai) fn(ai, base + i3 * bstride[3]);
            }
}

int64_t conv_out_extent(int64_t in, int64_t k, int64_t pad, int64_t stride) {
    return (in + 2 * pad - k) / stride + 1;
}

// Scatters x (single sample, [Ci,H,W]) into the column matrix
// [Ci*kh*kw, Ho*Wo] used by the GEMM-backed convolution.
void im2col(const float* x, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride, float* cols,
            int64_t ho, int64_t wo) {
    const int64_t ph = kh / 2, pw = kw / 2;
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                float* row = cols + ((c * kh + ki) * kw + kj) * (ho * wo);
                for (int64_t i = 0; i < ho; ++i) {
                    int64_t hi = i * stride + ki - ph;
                    if (hi < 0 || hi >= h) {
                        std::memset(row + i * wo, 0, sizeof(float) * static_cast<size_t>(wo));
                        continue;
                    }
                    const float* src = x + (c * h + hi) * w;
                    for (int64_t j = 0; j < wo; ++j) {
                        int64_t wi = j * stride + kj - pw;
                        row[i * wo + j] = (wi < 0 || wi >= w) ? 0.0f : src[wi];
                    }
                }
            }
        }
    }
}

// Transpose of im2col: accumulates column-matrix gradients back into dx.
void col2im_acc(const float* cols, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride, float* dx,
                int64_t ho, int64_t wo) {
    const int64_t ph = kh / 2, pw = kw / 2;
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const float* row = cols + ((c * kh + ki) * kw + kj) * (ho * wo);
                for (int64_t i = 0; i < ho; ++i) {
                    int64_t hi = i * stride + ki - ph;
                    if (hi < 0 || hi >= h) continue;
                    float* dst = dx + (c * h + hi) * w;
                    for (int64_t j = 0; j < wo; ++j) {
                        int64_t wi = j * stride + kj - pw;
                        if (wi >= 0 && wi < w) dst[wi] += row[i * wo + j];
                    }
                }
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kAddB: return "add_b";
        case Op::kMul: return "mul";
        case Op::kMulB: return "mul_b";
        case Op::kScale: return "scale";
        case Op::kShift: return "shift";
        case Op::kRelu: return "relu";
        case Op::kGelu: return "gelu";
        case Op::kLog: return "log";
        case Op::kMatmul: return "matmul";
        case Op::kBmm: return "bmm";
        case Op::kBmmT: return "bmm_t";
        case Op::kConv2d: return "conv2d";
        case Op::kUpsample2: return "upsample2";
        case Op::kPatchify: return "patchify";
        case Op::kReshape: return "reshape";
        case Op::kPermute: return "permute";
        case Op::kConcat1: return "concat1";
        case Op::kSlice1: return "slice1";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kSoftmax: return "softmax";
        case Op::kEmbedding: return "embedding";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
    }
    return "?";
}

Graph::Node& Graph::node(ValueId v) {
    if (!v.valid() || v.idx >= size()) throw Error("invalid value id");
    return nodes_[static_cast<size_t>(v.idx)];
}
const Graph::Node& Graph::node(ValueId v) const {
    if (!v.valid() || v.idx >= size()) throw Error("invalid value id");
    return nodes_[static_cast<size_t>(v.idx)];
}

const Tensor& Graph::value(ValueId v) const { return node(v).out; }

void Graph::check_node_finite(const Node& n) const {
    if (!check_finite_) return;
    if (!n.out.all_finite())
        throw NumericsError(std::string("non-finite output at node '") + op_name(n.op) +
                            (n.name.empty() ? "'" : "' (" + n.name + ")"));
}

ValueId Graph::push(Node n) {
    for (int i = 0; i < n.n_in; ++i)
        if (nodes_[static_cast<size_t>(n.in[static_cast<size_t>(i)])].requires_grad) n.requires_grad = true;
    check_node_finite(n);
    nodes_.push_back(std::move(n));
    return ValueId{size() - 1};
}

ValueId Graph::input(const std::string& name, Tensor t) {
    Node n;
    n.op = Op::kLeaf;
    n.name = name;
    t.set_requires_grad(false);
    n.out = std::move(t);
    n.requires_grad = false;
    check_node_finite(n);
    nodes_.push_back(std::move(n));
    return ValueId{size() - 1};
}

ValueId Graph::param(const std::string& name, Tensor t) {
    Node n;
    n.op = Op::kLeaf;
    n.name = name;
    t.set_requires_grad(true);
    n.out = std::move(t);
    n.requires_grad = true;
    check_node_finite(n);
    nodes_.push_back(std::move(n));
    return ValueId{size() - 1};
}

// ---------------------------------------------------------------- elementwise

ValueId Graph::add(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape() != tb.shape()) throw ShapeError("add " + ta.shape().str() + " vs " + tb.shape().str());
    Node n;
    n.op = Op::kAdd;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) + tb.at(i);
    return push(std::move(n));
}

ValueId Graph::sub(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape() != tb.shape()) throw ShapeError("sub " + ta.shape().str() + " vs " + tb.shape().str());
    Node n;
    n.op = Op::kSub;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) - tb.at(i);
    return push(std::move(n));
}

ValueId Graph::add_b(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    Node n;
    n.op = Op::kAddB;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(ta.shape());
    Tensor& out = n.out;
    bcast_loop(ta.shape(), tb.shape(), [&](int64_t ai, int64_t bi) { out.at(ai) = ta.at(ai) + tb.at(bi); });
    return push(std::move(n));
}

ValueId Graph::mul(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape() != tb.shape()) throw ShapeError("mul " + ta.shape().str() + " vs " + tb.shape().str());
    Node n;
    n.op = Op::kMul;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) * tb.at(i);
    return push(std::move(n));
}

ValueId Graph::mul_b(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    Node n;
    n.op = Op::kMulB;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(ta.shape());
    Tensor& out = n.out;
    bcast_loop(ta.shape(), tb.shape(), [&](int64_t ai, int64_t bi) { out.at(ai) = ta.at(ai) * tb.at(bi); });
    return push(std::move(n));
}

ValueId Graph::scale(ValueId a, float c) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kScale;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.c = c;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) * c;
    return push(std::move(n));
}

ValueId Graph::shift(ValueId a, float c) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kShift;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.c = c;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) + c;
    return push(std::move(n));
}

ValueId Graph::relu(ValueId a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kRelu;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = ta.at(i) > 0.0f ? ta.at(i) : 0.0f;
    return push(std::move(n));
}

ValueId Graph::gelu(ValueId a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kGelu;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) {
        float x = ta.at(i);
        float t = std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x));
        n.out.at(i) = 0.5f * x * (1.0f + t);
    }
    return push(std::move(n));
}

ValueId Graph::log(ValueId a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kLog;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) n.out.at(i) = std::log(ta.at(i));
    return push(std::move(n));
}

// ---------------------------------------------------------------- linear algebra

ValueId Graph::matmul(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape().rank != 2 || tb.shape().rank != 2 || ta.shape()[1] != tb.shape()[0])
        throw ShapeError("matmul " + ta.shape().str() + " x " + tb.shape().str());
    const int64_t m = ta.shape()[0], k = ta.shape()[1], p = tb.shape()[1];
    Node n;
    n.op = Op::kMatmul;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(Shape{m, p});
    gemm_f32(false, false, m, p, k, 1.0f, ta.data(), k, tb.data(), p, 0.0f, n.out.data(), p);
    return push(std::move(n));
}

ValueId Graph::bmm(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape().rank != 3 || tb.shape().rank != 3 || ta.shape()[0] != tb.shape()[0] ||
        ta.shape()[2] != tb.shape()[1])
        throw ShapeError("bmm " + ta.shape().str() + " x " + tb.shape().str());
    const int64_t bs = ta.shape()[0], m = ta.shape()[1], k = ta.shape()[2], p = tb.shape()[2];
    Node n;
    n.op = Op::kBmm;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(Shape{bs, m, p});
    for (int64_t i = 0; i < bs; ++i)
        gemm_f32(false, false, m, p, k, 1.0f, ta.data() + i * m * k, k, tb.data() + i * k * p, p, 0.0f,
                 n.out.data() + i * m * p, p);
    return push(std::move(n));
}

ValueId Graph::bmm_t(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape().rank != 3 || tb.shape().rank != 3 || ta.shape()[0] != tb.shape()[0] ||
        ta.shape()[2] != tb.shape()[2])
        throw ShapeError("bmm_t " + ta.shape().str() + " x " + tb.shape().str());
    const int64_t bs = ta.shape()[0], m = ta.shape()[1], k = ta.shape()[2], p = tb.shape()[1];
    Node n;
    n.op = Op::kBmmT;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(Shape{bs, m, p});
    for (int64_t i = 0; i < bs; ++i)
        gemm_f32(false, true, m, p, k, 1.0f, ta.data() + i * m * k, k, tb.data() + i * p * k, k, 0.0f,
                 n.out.data() + i * m * p, p);
    return push(std::move(n));
}

ValueId Graph::conv2d(ValueId x, ValueId w, ValueId b, int stride) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (stride != 1 && stride != 2) throw ShapeError("conv2d stride must be 1 or 2");
    if (tx.shape().rank != 4 || tw.shape().rank != 4) throw ShapeError("conv2d expects NCHW input and OIHW weight");
    const int64_t N = tx.shape()[0], Ci = tx.shape()[1], H = tx.shape()[2], W = tx.shape()[3];
    const int64_t Co = tw.shape()[0], kh = tw.shape()[2], kw = tw.shape()[3];
    if (tw.shape()[1] != Ci) throw ShapeError("conv2d channel mismatch " + tx.shape().str() + " vs " + tw.shape().str());
    if (tb.shape().rank != 1 || tb.shape()[0] != Co) throw ShapeError("conv2d bias shape " + tb.shape().str());
    const int64_t ph = kh / 2, pw = kw / 2;
    const int64_t Ho = conv_out_extent(H, kh, ph, stride), Wo = conv_out_extent(W, kw, pw, stride);
    Node n;
    n.op = Op::kConv2d;
    n.in = {x.idx, w.idx, b.idx};
    n.n_in = 3;
    n.stride = stride;
    n.out = Tensor(Shape{N, Co, Ho, Wo});
    std::vector<float> cols(static_cast<size_t>(Ci * kh * kw * Ho * Wo));
    for (int64_t i = 0; i < N; ++i) {
        im2col(tx.data() + i * Ci * H * W, Ci, H, W, kh, kw, stride, cols.data(), Ho, Wo);
        float* y = n.out.data() + i * Co * Ho * Wo;
        gemm_f32(false, false, Co, Ho * Wo, Ci * kh * kw, 1.0f, tw.data(), Ci * kh * kw, cols.data(), Ho * Wo, 0.0f, y,
                 Ho * Wo);
        for (int64_t co = 0; co < Co; ++co) {
            const float bias = tb.at(co);
            float* row = y + co * Ho * Wo;
            for (int64_t j = 0; j < Ho * Wo; ++j) row[j] += bias;
        }
    }
    return push(std::move(n));
}

ValueId Graph::upsample2(ValueId x) {
    const Tensor& tx = value(x);
    if (tx.shape().rank != 4) throw ShapeError("upsample2 expects NCHW");
    const int64_t N = tx.shape()[0], C = tx.shape()[1], H = tx.shape()[2], W = tx.shape()[3];
    Node n;
    n.op = Op::kUpsample2;
    n.in = {x.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(Shape{N, C, 2 * H, 2 * W});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* src = tx.data() + nc * H * W;
        float* dst = n.out.data() + nc * 4 * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                float v = src[i * W + j];
                dst[(2 * i) * 2 * W + 2 * j] = v;
                dst[(2 * i) * 2 * W + 2 * j + 1] = v;
                dst[(2 * i + 1) * 2 * W + 2 * j] = v;
                dst[(2 * i + 1) * 2 * W + 2 * j + 1] = v;
            }
    }
    return push(std::move(n));
}

ValueId Graph::patchify(ValueId x, int patch) {
    const Tensor& tx = value(x);
    if (tx.shape().rank != 4) throw ShapeError("patchify expects NCHW");
    const int64_t N = tx.shape()[0], C = tx.shape()[1], H = tx.shape()[2], W = tx.shape()[3];
    if (patch <= 0 || H % patch != 0 || W % patch != 0) throw ShapeError("patchify: extent not divisible by patch");
    const int64_t p = patch, gh = H / p, gw = W / p;
    Node n;
    n.op = Op::kPatchify;
    n.in = {x.idx, -1, -1};
    n.n_in = 1;
    n.patch = patch;
    n.out = Tensor(Shape{N, gh * gw, C * p * p});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    int64_t tok = (h / p) * gw + (w / p);
                    int64_t f = (c * p + h % p) * p + w % p;
                    n.out.at((i * gh * gw + tok) * C * p * p + f) = tx.at(((i * C + c) * H + h) * W + w);
                }
    return push(std::move(n));
}

// ---------------------------------------------------------------- shape ops

ValueId Graph::reshape(ValueId a, Shape s) {
    const Tensor& ta = value(a);
    if (s.numel() != ta.numel()) throw ShapeError("reshape " + ta.shape().str() + " -> " + s.str());
    Node n;
    n.op = Op::kReshape;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(s, ta.vec());
    return push(std::move(n));
}

ValueId Graph::permute(ValueId a, std::vector<int> perm) {
    const Tensor& ta = value(a);
    const int rank = ta.shape().rank;
    if (static_cast<int>(perm.size()) != rank) throw ShapeError("permute rank mismatch");
    std::vector<int> seen(static_cast<size_t>(rank), 0);
    for (int p : perm) {
        if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]++) throw ShapeError("permute is not a permutation");
    }
    Node n;
    n.op = Op::kPermute;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    for (int i = 0; i < rank; ++i) n.perm[static_cast<size_t>(i)] = perm[static_cast<size_t>(i)];
    std::vector<int64_t> od(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) od[static_cast<size_t>(i)] = ta.shape()[perm[static_cast<size_t>(i)]];
    n.out = Tensor(Shape::of(od));
    // strides of the input, indexed by output dim
    int64_t istr[4] = {0, 0, 0, 0};
    {
        int64_t s = 1;
        int64_t tmp[4];
        for (int i = rank - 1; i >= 0; --i) {
            tmp[i] = s;
            s *= ta.shape()[i];
        }
        for (int i = 0; i < rank; ++i) istr[i] = tmp[perm[static_cast<size_t>(i)]];
    }
    int64_t dim[4] = {1, 1, 1, 1};
    for (int i = 0; i < rank; ++i) dim[i] = n.out.shape()[i];
    int64_t oi = 0;
    for (int64_t i0 = 0; i0 < dim[0]; ++i0)
        for (int64_t i1 = 0; i1 < dim[1]; ++i1)
            for (int64_t i2 = 0; i2 < dim[2]; ++i2)
                for (int64_t i3 = 0; i3 < dim[3]; ++i3, ++oi)
                    n.out.at(oi) = ta.at(i0 * istr[0] + i1 * istr[1] + i2 * istr[2] + i3 * istr[3]);
    return push(std::move(n));
}

ValueId Graph::concat1(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape().rank != 3 || tb.shape().rank != 3 || ta.shape()[0] != tb.shape()[0] ||
        ta.shape()[2] != tb.shape()[2])
        throw ShapeError("concat1 " + ta.shape().str() + " vs " + tb.shape().str());
    const int64_t B = ta.shape()[0], Ta = ta.shape()[1], Tb = tb.shape()[1], D = ta.shape()[2];
    Node n;
    n.op = Op::kConcat1;
    n.in = {a.idx, b.idx, -1};
    n.n_in = 2;
    n.out = Tensor(Shape{B, Ta + Tb, D});
    for (int64_t i = 0; i < B; ++i) {
        std::memcpy(n.out.data() + i * (Ta + Tb) * D, ta.data() + i * Ta * D, sizeof(float) * static_cast<size_t>(Ta * D));
        std::memcpy(n.out.data() + (i * (Ta + Tb) + Ta) * D, tb.data() + i * Tb * D,
                    sizeof(float) * static_cast<size_t>(Tb * D));
    }
    return push(std::move(n));
}

ValueId Graph::slice1(ValueId a, int64_t start, int64_t len) {
    const Tensor& ta = value(a);
    if (ta.shape().rank != 3) throw ShapeError("slice1 expects rank-3 input");
    const int64_t B = ta.shape()[0], T = ta.shape()[1], D = ta.shape()[2];
    if (start < 0 || len <= 0 || start + len > T) throw ShapeError("slice1 range out of bounds");
    Node n;
    n.op = Op::kSlice1;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.start = start;
    n.out = Tensor(Shape{B, len, D});
    for (int64_t i = 0; i < B; ++i)
        std::memcpy(n.out.data() + i * len * D, ta.data() + (i * T + start) * D,
                    sizeof(float) * static_cast<size_t>(len * D));
    return push(std::move(n));
}

// ---------------------------------------------------------------- normalisation

ValueId Graph::layer_norm(ValueId a, float eps) {
    const Tensor& ta = value(a);
    const int64_t D = ta.shape()[ta.shape().rank - 1];
    const int64_t R = ta.numel() / D;
    Node n;
    n.op = Op::kLayerNorm;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.eps = eps;
    n.out = Tensor(ta.shape());
    n.aux.resize(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const float* x = ta.data() + r * D;
        float* y = n.out.data() + r * D;
        double mu = 0.0;
        for (int64_t j = 0; j < D; ++j) mu += x[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            double d = x[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(D);
        float rstd = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        n.aux[static_cast<size_t>(r)] = rstd;
        for (int64_t j = 0; j < D; ++j) y[j] = (x[j] - static_cast<float>(mu)) * rstd;
    }
    return push(std::move(n));
}

ValueId Graph::softmax(ValueId a) {
    const Tensor& ta = value(a);
    const int64_t D = ta.shape()[ta.shape().rank - 1];
    const int64_t R = ta.numel() / D;
    Node n;
    n.op = Op::kSoftmax;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(ta.shape());
    for (int64_t r = 0; r < R; ++r) {
        const float* x = ta.data() + r * D;
        float* y = n.out.data() + r * D;
        float m = x[0];
        for (int64_t j = 1; j < D; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        const float inv = static_cast<float>(1.0 / z);
        for (int64_t j = 0; j < D; ++j) y[j] *= inv;
    }
    return push(std::move(n));
}

ValueId Graph::embedding(ValueId table, std::vector<int32_t> ids) {
    const Tensor& tt = value(table);
    if (tt.shape().rank != 2) throw ShapeError("embedding table must be rank 2");
    const int64_t V = tt.shape()[0], D = tt.shape()[1];
    for (int32_t id : ids)
        if (id < 0 || id >= V) throw ValidationError("embedding id " + std::to_string(id) + " out of range");
    if (ids.empty()) throw ShapeError("embedding requires at least one id");
    Node n;
    n.op = Op::kEmbedding;
    n.in = {table.idx, -1, -1};
    n.n_in = 1;
    n.out = Tensor(Shape{static_cast<int64_t>(ids.size()), D});
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(n.out.data() + static_cast<int64_t>(i) * D, tt.data() + ids[i] * D,
                    sizeof(float) * static_cast<size_t>(D));
    n.ids = std::move(ids);
    return push(std::move(n));
}

ValueId Graph::sum(ValueId a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kSum;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    double acc = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) acc += ta.at(i);
    n.out = Tensor::scalar(static_cast<float>(acc));
    return push(std::move(n));
}

ValueId Graph::mean(ValueId a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::kMean;
    n.in = {a.idx, -1, -1};
    n.n_in = 1;
    double acc = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) acc += ta.at(i);
    n.out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(ta.numel())));
    return push(std::move(n));
}

// ---------------------------------------------------------------- backward

Tensor& Graph::grad_buf(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (!n.grad_alloc) {
        n.grad = Tensor(n.out.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

Tensor Graph::grad(ValueId v) const {
    const Node& n = node(v);
    if (!n.grad_alloc) return Tensor(n.out.shape());
    return n.grad;
}

void Graph::backward(ValueId loss) {
    if (value(loss).numel() != 1) throw ShapeError("backward requires a scalar loss, got " + value(loss).shape().str());
    backward(loss, Tensor::scalar(1.0f));
}

void Graph::backward(ValueId out, const Tensor& seed) {
    if (backward_done_) throw Error("backward already run on this graph");
    backward_done_ = true;
    Node& top = node(out);
    if (seed.shape() != top.out.shape()) throw ShapeError("backward seed shape mismatch");
    if (!top.requires_grad) return;  // nothing reachable; all grads stay zero
    grad_buf(out.idx) = seed;
    for (int idx = out.idx; idx >= 0; --idx) {
        Node& n = nodes_[static_cast<size_t>(idx)];
        if (!n.grad_alloc || !n.requires_grad || n.op == Op::kLeaf) continue;
        backward_node(idx);
    }
}

void Graph::backward_node(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    const Tensor& g = n.grad;
    auto in_t = [&](int k) -> const Tensor& { return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(k)])].out; };
    auto needs = [&](int k) { return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(k)])].requires_grad; };
    auto gbuf = [&](int k) -> Tensor& { return grad_buf(n.in[static_cast<size_t>(k)]); };

    switch (n.op) {
        case Op::kLeaf: break;
        case Op::kAdd: {
            for (int k = 0; k < 2; ++k)
                if (needs(k)) {
                    Tensor& d = gbuf(k);
                    for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
                }
            break;
        }
        case Op::kSub: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) -= g.at(i);
            }
            break;
        }
        case Op::kAddB: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                bcast_loop(n.out.shape(), in_t(1).shape(), [&](int64_t ai, int64_t bi) { d.at(bi) += g.at(ai); });
            }
            break;
        }
        case Op::kMul: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * b.at(i);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * a.at(i);
            }
            break;
        }
        case Op::kMulB: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            if (needs(0)) {
                Tensor& d = gbuf(0);
                bcast_loop(a.shape(), b.shape(), [&](int64_t ai, int64_t bi) { d.at(ai) += g.at(ai) * b.at(bi); });
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                bcast_loop(a.shape(), b.shape(), [&](int64_t ai, int64_t bi) { d.at(bi) += g.at(ai) * a.at(ai); });
            }
            break;
        }
        case Op::kScale: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * n.c;
            }
            break;
        }
        case Op::kShift: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            break;
        }
        case Op::kRelu: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += x.at(i) > 0.0f ? g.at(i) : 0.0f;
            }
            break;
        }
        case Op::kGelu: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    float v = x.at(i);
                    float u = kGeluC0 * (v + kGeluC1 * v * v * v);
                    float t = std::tanh(u);
                    float du = kGeluC0 * (1.0f + 3.0f * kGeluC1 * v * v);
                    float dg = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                    d.at(i) += g.at(i) * dg;
                }
            }
            break;
        }
        case Op::kLog: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) / x.at(i);
            }
            break;
        }
        case Op::kMatmul: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            const int64_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
            if (needs(0)) gemm_f32(false, true, m, k, p, 1.0f, g.data(), p, b.data(), p, 1.0f, gbuf(0).data(), k);
            if (needs(1)) gemm_f32(true, false, k, p, m, 1.0f, a.data(), k, g.data(), p, 1.0f, gbuf(1).data(), p);
            break;
        }
        case Op::kBmm: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            const int64_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], p = b.shape()[2];
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < bs; ++i)
                    gemm_f32(false, true, m, k, p, 1.0f, g.data() + i * m * p, p, b.data() + i * k * p, p, 1.0f,
                             d.data() + i * m * k, k);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                for (int64_t i = 0; i < bs; ++i)
                    gemm_f32(true, false, k, p, m, 1.0f, a.data() + i * m * k, k, g.data() + i * m * p, p, 1.0f,
                             d.data() + i * k * p, p);
            }
            break;
        }
        case Op::kBmmT: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            const int64_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], p = b.shape()[1];
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < bs; ++i)
                    gemm_f32(false, false, m, k, p, 1.0f, g.data() + i * m * p, p, b.data() + i * p * k, k, 1.0f,
                             d.data() + i * m * k, k);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                for (int64_t i = 0; i < bs; ++i)
                    gemm_f32(true, false, p, k, m, 1.0f, g.data() + i * m * p, p, a.data() + i * m * k, k, 1.0f,
                             d.data() + i * p * k, k);
            }
            break;
        }
        case Op::kConv2d: {
            const Tensor& x = in_t(0);
            const Tensor& w = in_t(1);
            const int64_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
            const int64_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
            const int64_t Ho = n.out.shape()[2], Wo = n.out.shape()[3];
            const int64_t ck = Ci * kh * kw;
            std::vector<float> cols(static_cast<size_t>(ck * Ho * Wo));
            const bool nx = needs(0), nw = needs(1), nb = needs(2);
            if (nb) {
                Tensor& db = gbuf(2);
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t co = 0; co < Co; ++co) {
                        const float* row = g.data() + (i * Co + co) * Ho * Wo;
                        double acc = 0.0;
                        for (int64_t j = 0; j < Ho * Wo; ++j) acc += row[j];
                        db.at(co) += static_cast<float>(acc);
                    }
            }
            for (int64_t i = 0; i < N; ++i) {
                const float* gy = g.data() + i * Co * Ho * Wo;
                if (nw) {
                    im2col(x.data() + i * Ci * H * W, Ci, H, W, kh, kw, n.stride, cols.data(), Ho, Wo);
                    gemm_f32(false, true, Co, ck, Ho * Wo, 1.0f, gy, Ho * Wo, cols.data(), Ho * Wo, 1.0f,
                             gbuf(1).data(), ck);
                }
                if (nx) {
                    gemm_f32(true, false, ck, Ho * Wo, Co, 1.0f, w.data(), ck, gy, Ho * Wo, 0.0f, cols.data(), Ho * Wo);
                    col2im_acc(cols.data(), Ci, H, W, kh, kw, n.stride, gbuf(0).data() + i * Ci * H * W, Ho, Wo);
                }
            }
            break;
        }
        case Op::kUpsample2: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                const int64_t NC = x.shape()[0] * x.shape()[1], H = x.shape()[2], W = x.shape()[3];
                Tensor& d = gbuf(0);
                for (int64_t nc = 0; nc < NC; ++nc) {
                    const float* gs = g.data() + nc * 4 * H * W;
                    float* dd = d.data() + nc * H * W;
                    for (int64_t i = 0; i < H; ++i)
                        for (int64_t j = 0; j < W; ++j)
                            dd[i * W + j] += gs[(2 * i) * 2 * W + 2 * j] + gs[(2 * i) * 2 * W + 2 * j + 1] +
                                             gs[(2 * i + 1) * 2 * W + 2 * j] + gs[(2 * i + 1) * 2 * W + 2 * j + 1];
                }
            }
            break;
        }
        case Op::kPatchify: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
                const int64_t p = n.patch, gw = W / p;
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w2 = 0; w2 < W; ++w2) {
                                int64_t tok = (h / p) * gw + (w2 / p);
                                int64_t f = (c * p + h % p) * p + w2 % p;
                                d.at(((i * C + c) * H + h) * W + w2) +=
                                    g.at((i * (H / p) * gw + tok) * C * p * p + f);
                            }
            }
            break;
        }
        case Op::kReshape: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            break;
        }
        case Op::kPermute: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                const int rank = x.shape().rank;
                Tensor& d = gbuf(0);
                int64_t istr[4] = {0, 0, 0, 0};
                {
                    int64_t s = 1;
                    int64_t tmp[4];
                    for (int i = rank - 1; i >= 0; --i) {
                        tmp[i] = s;
                        s *= x.shape()[i];
                    }
                    for (int i = 0; i < rank; ++i) istr[i] = tmp[n.perm[static_cast<size_t>(i)]];
                }
                int64_t dim[4] = {1, 1, 1, 1};
                for (int i = 0; i < rank; ++i) dim[i] = n.out.shape()[i];
                int64_t oi = 0;
                for (int64_t i0 = 0; i0 < dim[0]; ++i0)
                    for (int64_t i1 = 0; i1 < dim[1]; ++i1)
                        for (int64_t i2 = 0; i2 < dim[2]; ++i2)
                            for (int64_t i3 = 0; i3 < dim[3]; ++i3, ++oi)
                                d.at(i0 * istr[0] + i1 * istr[1] + i2 * istr[2] + i3 * istr[3]) += g.at(oi);
            }
            break;
        }
        case Op::kConcat1: {
            const Tensor& a = in_t(0);
            const Tensor& b = in_t(1);
            const int64_t B = a.shape()[0], Ta = a.shape()[1], Tb = b.shape()[1], D = a.shape()[2];
            if (needs(0)) {
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < Ta * D; ++j) d.at(i * Ta * D + j) += g.at(i * (Ta + Tb) * D + j);
            }
            if (needs(1)) {
                Tensor& d = gbuf(1);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < Tb * D; ++j) d.at(i * Tb * D + j) += g.at((i * (Ta + Tb) + Ta) * D + j);
            }
            break;
        }
        case Op::kSlice1: {
            if (needs(0)) {
                const Tensor& x = in_t(0);
                const int64_t B = x.shape()[0], T = x.shape()[1], D = x.shape()[2];
                const int64_t len = n.out.shape()[1];
                Tensor& d = gbuf(0);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < len * D; ++j) d.at((i * T + n.start) * D + j) += g.at(i * len * D + j);
            }
            break;
        }
        case Op::kLayerNorm: {
            if (needs(0)) {
                const int64_t D = n.out.shape()[n.out.shape().rank - 1];
                const int64_t R = n.out.numel() / D;
                Tensor& d = gbuf(0);
                for (int64_t r = 0; r < R; ++r) {
                    const float* y = n.out.data() + r * D;
                    const float* gr = g.data() + r * D;
                    float* dr = d.data() + r * D;
                    const float rstd = n.aux[static_cast<size_t>(r)];
                    double mg = 0.0, mgy = 0.0;
                    for (int64_t j = 0; j < D; ++j) {
                        mg += gr[j];
                        mgy += static_cast<double>(gr[j]) * y[j];
                    }
                    mg /= static_cast<double>(D);
                    mgy /= static_cast<double>(D);
                    for (int64_t j = 0; j < D; ++j)
                        dr[j] += rstd * (gr[j] - static_cast<float>(mg) - y[j] * static_cast<float>(mgy));
                }
            }
            break;
        }
        case Op::kSoftmax: {
            if (needs(0)) {
                const int64_t D = n.out.shape()[n.out.shape().rank - 1];
                const int64_t R = n.out.numel() / D;
                Tensor& d = gbuf(0);
                for (int64_t r = 0; r < R; ++r) {
                    const float* y = n.out.data() + r * D;
                    const float* gr = g.data() + r * D;
                    float* dr = d.data() + r * D;
                    double dot = 0.0;
                    for (int64_t j = 0; j < D; ++j) dot += static_cast<double>(gr[j]) * y[j];
                    for (int64_t j = 0; j < D; ++j) dr[j] += y[j] * (gr[j] - static_cast<float>(dot));
                }
            }
            break;
        }
        case Op::kEmbedding: {
            if (needs(0)) {
                const int64_t D = n.out.shape()[1];
                Tensor& d = gbuf(0);
                for (size_t i = 0; i < n.ids.size(); ++i) {
                    float* row = d.data() + n.ids[i] * D;
                    const float* gr = g.data() + static_cast<int64_t>(i) * D;
                    for (int64_t j = 0; j < D; ++j) row[j] += gr[j];
                }
            }
            break;
        }
        case Op::kSum: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                const float gv = g.at(0);
                for (int64_t i = 0; i < d.numel(); ++i) d.at(i) += gv;
            }
            break;
        }
        case Op::kMean: {
            if (needs(0)) {
                Tensor& d = gbuf(0);
                const float gv = g.at(0) / static_cast<float>(d.numel());
                for (int64_t i = 0; i < d.numel(); ++i) d.at(i) += gv;
            }
            break;
        }
    }
}

}  // namespace hyperlora
