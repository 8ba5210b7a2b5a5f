#include <cmath>
#include <cstring>
#include <functional>
#include <map>

#include "hyperlora/graph.hpp"
#include "hyperlora/nn.hpp"
#include "hyperlora/rng.hpp"

namespace hyperlora {

namespace {

// ---------------------------------------------------------------------------
// Independent double-precision evaluator used as the finite-difference
// oracle. Deliberately written with plain loops (no GEMM backend, no im2col)
// so it shares no numerical code with the production float32 engine.
// ---------------------------------------------------------------------------

struct DT {
    Shape shape;
    std::vector<double> v;
    DT() = default;
    explicit DT(Shape s) : shape(s), v(static_cast<size_t>(s.numel()), 0.0) {}
    double& at(int64_t i) { return v[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return v[static_cast<size_t>(i)]; }
};

DT from_tensor(const Tensor& t) {
    DT d(t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) d.at(i) = t.at(i);
    return d;
}

struct OracleCtx {
    using V = DT;

    static DT binary(const DT& a, const DT& b, double (*f)(double, double)) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(i) = f(a.at(i), b.at(i));
        return o;
    }
    DT add(const DT& a, const DT& b) { return binary(a, b, [](double x, double y) { return x + y; }); }
    DT sub(const DT& a, const DT& b) { return binary(a, b, [](double x, double y) { return x - y; }); }
    DT mul(const DT& a, const DT& b) { return binary(a, b, [](double x, double y) { return x * y; }); }

    static void bcast(const DT& a, const DT& b, DT& o, bool add_mode) {
        int64_t bst[4] = {0, 0, 0, 0}, dim[4] = {1, 1, 1, 1};
        int64_t s = 1;
        for (int i = b.shape.rank - 1; i >= 0; --i) {
            bst[i] = (b.shape.d[i] == 1) ? 0 : s;
            s *= b.shape.d[i];
        }
        for (int i = 0; i < a.shape.rank; ++i) dim[i] = a.shape.d[i];
        int64_t ai = 0;
        for (int64_t i0 = 0; i0 < dim[0]; ++i0)
            for (int64_t i1 = 0; i1 < dim[1]; ++i1)
                for (int64_t i2 = 0; i2 < dim[2]; ++i2)
                    for (int64_t i3 = 0; i3 < dim[3]; ++i3, ++ai) {
                        int64_t bi = i0 * bst[0] + i1 * bst[1] + i2 * bst[2] + i3 * bst[3];
                        o.at(ai) = add_mode ? a.at(ai) + b.at(bi) : a.at(ai) * b.at(bi);
                    }
    }
    DT add_b(const DT& a, const DT& b) {
        DT o(a.shape);
        bcast(a, b, o, true);
        return o;
    }
    DT mul_b(const DT& a, const DT& b) {
        DT o(a.shape);
        bcast(a, b, o, false);
        return o;
    }
    DT scale(const DT& a, double c) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(i) = a.at(i) * c;
        return o;
    }
    DT shift(const DT& a, double c) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(i) = a.at(i) + c;
        return o;
    }
    DT relu(const DT& a) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(i) = a.at(i) > 0 ? a.at(i) : 0.0;
        return o;
    }
    DT gelu(const DT& a) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) {
            double x = a.at(i);
            double t = std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x));
            o.at(i) = 0.5 * x * (1.0 + t);
        }
        return o;
    }
    DT log(const DT& a) {
        DT o(a.shape);
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(i) = std::log(a.at(i));
        return o;
    }
    DT matmul(const DT& a, const DT& b) {
        const int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
        DT o(Shape{m, p});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < p; ++j) {
                double acc = 0.0;
                for (int64_t q = 0; q < k; ++q) acc += a.at(i * k + q) * b.at(q * p + j);
                o.at(i * p + j) = acc;
            }
        return o;
    }
    DT bmm(const DT& a, const DT& b) {
        const int64_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], p = b.shape[2];
        DT o(Shape{bs, m, p});
        for (int64_t n = 0; n < bs; ++n)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < p; ++j) {
                    double acc = 0.0;
                    for (int64_t q = 0; q < k; ++q) acc += a.at((n * m + i) * k + q) * b.at((n * k + q) * p + j);
                    o.at((n * m + i) * p + j) = acc;
                }
        return o;
    }
    DT bmm_t(const DT& a, const DT& b) {
        const int64_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], p = b.shape[1];
        DT o(Shape{bs, m, p});
        for (int64_t n = 0; n < bs; ++n)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < p; ++j) {
                    double acc = 0.0;
                    for (int64_t q = 0; q < k; ++q) acc += a.at((n * m + i) * k + q) * b.at((n * p + j) * k + q);
                    o.at((n * m + i) * p + j) = acc;
                }
        return o;
    }
    DT conv2d(const DT& x, const DT& w, const DT& b, int stride) {
        const int64_t N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int64_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
        const int64_t ph = kh / 2, pw = kw / 2;
        const int64_t Ho = (H + 2 * ph - kh) / stride + 1, Wo = (W + 2 * pw - kw) / stride + 1;
        DT o(Shape{N, Co, Ho, Wo});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t i = 0; i < Ho; ++i)
                    for (int64_t j = 0; j < Wo; ++j) {
                        double acc = b.at(co);
                        for (int64_t ci = 0; ci < Ci; ++ci)
                            for (int64_t ki = 0; ki < kh; ++ki)
                                for (int64_t kj = 0; kj < kw; ++kj) {
                                    int64_t hi = i * stride + ki - ph, wi = j * stride + kj - pw;
                                    if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                    acc += x.at(((n * Ci + ci) * H + hi) * W + wi) *
                                           w.at(((co * Ci + ci) * kh + ki) * kw + kj);
                                }
                        o.at(((n * Co + co) * Ho + i) * Wo + j) = acc;
                    }
        return o;
    }
    DT upsample2(const DT& x) {
        const int64_t NC = x.shape[0] * x.shape[1], H = x.shape[2], W = x.shape[3];
        DT o(Shape{x.shape[0], x.shape[1], 2 * H, 2 * W});
        for (int64_t nc = 0; nc < NC; ++nc)
            for (int64_t i = 0; i < 2 * H; ++i)
                for (int64_t j = 0; j < 2 * W; ++j)
                    o.at((nc * 2 * H + i) * 2 * W + j) = x.at((nc * H + i / 2) * W + j / 2);
        return o;
    }
    DT patchify(const DT& x, int patch) {
        const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int64_t p = patch, gh = H / p, gw = W / p;
        DT o(Shape{N, gh * gw, C * p * p});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w2 = 0; w2 < W; ++w2)
                        o.at((n * gh * gw + (h / p) * gw + w2 / p) * C * p * p + (c * p + h % p) * p + w2 % p) =
                            x.at(((n * C + c) * H + h) * W + w2);
        return o;
    }
    DT reshape(const DT& a, Shape s) {
        DT o = a;
        o.shape = s;
        return o;
    }
    DT permute(const DT& a, const std::vector<int>& perm) {
        const int rank = a.shape.rank;
        std::vector<int64_t> od(static_cast<size_t>(rank));
        for (int i = 0; i < rank; ++i) od[static_cast<size_t>(i)] = a.shape[perm[static_cast<size_t>(i)]];
        DT o(Shape::of(od));
        int64_t istr[4] = {0, 0, 0, 0};
        int64_t tmp[4];
        int64_t s = 1;
        for (int i = rank - 1; i >= 0; --i) {
            tmp[i] = s;
            s *= a.shape[i];
        }
        for (int i = 0; i < rank; ++i) istr[i] = tmp[perm[static_cast<size_t>(i)]];
        int64_t dim[4] = {1, 1, 1, 1};
        for (int i = 0; i < rank; ++i) dim[i] = o.shape[i];
        int64_t oi = 0;
        for (int64_t i0 = 0; i0 < dim[0]; ++i0)
            for (int64_t i1 = 0; i1 < dim[1]; ++i1)
                for (int64_t i2 = 0; i2 < dim[2]; ++i2)
                    for (int64_t i3 = 0; i3 < dim[3]; ++i3, ++oi)
                        o.at(oi) = a.at(i0 * istr[0] + i1 * istr[1] + i2 * istr[2] + i3 * istr[3]);
        return o;
    }
    DT concat1(const DT& a, const DT& b) {
        const int64_t B = a.shape[0], Ta = a.shape[1], Tb = b.shape[1], D = a.shape[2];
        DT o(Shape{B, Ta + Tb, D});
        for (int64_t i = 0; i < B; ++i) {
            for (int64_t j = 0; j < Ta * D; ++j) o.at(i * (Ta + Tb) * D + j) = a.at(i * Ta * D + j);
            for (int64_t j = 0; j < Tb * D; ++j) o.at((i * (Ta + Tb) + Ta) * D + j) = b.at(i * Tb * D + j);
        }
        return o;
    }
    DT slice1(const DT& a, int64_t start, int64_t len) {
        const int64_t B = a.shape[0], T = a.shape[1], D = a.shape[2];
        DT o(Shape{B, len, D});
        for (int64_t i = 0; i < B; ++i)
            for (int64_t j = 0; j < len * D; ++j) o.at(i * len * D + j) = a.at((i * T + start) * D + j);
        return o;
    }
    DT layer_norm(const DT& a, double eps = 1e-5) {
        const int64_t D = a.shape[a.shape.rank - 1], R = a.shape.numel() / D;
        DT o(a.shape);
        for (int64_t r = 0; r < R; ++r) {
            double mu = 0.0, var = 0.0;
            for (int64_t j = 0; j < D; ++j) mu += a.at(r * D + j);
            mu /= static_cast<double>(D);
            for (int64_t j = 0; j < D; ++j) {
                double d = a.at(r * D + j) - mu;
                var += d * d;
            }
            var /= static_cast<double>(D);
            double rstd = 1.0 / std::sqrt(var + eps);
            for (int64_t j = 0; j < D; ++j) o.at(r * D + j) = (a.at(r * D + j) - mu) * rstd;
        }
        return o;
    }
    DT softmax(const DT& a) {
        const int64_t D = a.shape[a.shape.rank - 1], R = a.shape.numel() / D;
        DT o(a.shape);
        for (int64_t r = 0; r < R; ++r) {
            double m = a.at(r * D);
            for (int64_t j = 1; j < D; ++j) m = std::max(m, a.at(r * D + j));
            double z = 0.0;
            for (int64_t j = 0; j < D; ++j) {
                o.at(r * D + j) = std::exp(a.at(r * D + j) - m);
                z += o.at(r * D + j);
            }
            for (int64_t j = 0; j < D; ++j) o.at(r * D + j) /= z;
        }
        return o;
    }
    DT embedding(const DT& table, const std::vector<int32_t>& ids) {
        const int64_t D = table.shape[1];
        DT o(Shape{static_cast<int64_t>(ids.size()), D});
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < D; ++j) o.at(static_cast<int64_t>(i) * D + j) = table.at(ids[i] * D + j);
        return o;
    }
    DT sum(const DT& a) {
        DT o(Shape{1});
        for (int64_t i = 0; i < a.shape.numel(); ++i) o.at(0) += a.at(i);
        return o;
    }
    DT mean(const DT& a) {
        DT o = sum(a);
        o.at(0) /= static_cast<double>(a.shape.numel());
        return o;
    }
};

// Adapter giving Graph the same builder interface as OracleCtx, so each
// registered kind is described once and evaluated on both paths.
struct GraphCtx {
    using V = ValueId;
    Graph& g;
    V add(V a, V b) { return g.add(a, b); }
    V sub(V a, V b) { return g.sub(a, b); }
    V mul(V a, V b) { return g.mul(a, b); }
    V add_b(V a, V b) { return g.add_b(a, b); }
    V mul_b(V a, V b) { return g.mul_b(a, b); }
    V scale(V a, double c) { return g.scale(a, static_cast<float>(c)); }
    V shift(V a, double c) { return g.shift(a, static_cast<float>(c)); }
    V relu(V a) { return g.relu(a); }
    V gelu(V a) { return g.gelu(a); }
    V log(V a) { return g.log(a); }
    V matmul(V a, V b) { return g.matmul(a, b); }
    V bmm(V a, V b) { return g.bmm(a, b); }
    V bmm_t(V a, V b) { return g.bmm_t(a, b); }
    V conv2d(V x, V w, V b, int s) { return g.conv2d(x, w, b, s); }
    V upsample2(V x) { return g.upsample2(x); }
    V patchify(V x, int p) { return g.patchify(x, p); }
    V reshape(V a, Shape s) { return g.reshape(a, s); }
    V permute(V a, const std::vector<int>& p) { return g.permute(a, p); }
    V concat1(V a, V b) { return g.concat1(a, b); }
    V slice1(V a, int64_t s, int64_t l) { return g.slice1(a, s, l); }
    V layer_norm(V a, double) { return g.layer_norm(a); }
    V softmax(V a) { return g.softmax(a); }
    V embedding(V t, const std::vector<int32_t>& ids) { return g.embedding(t, ids); }
    V sum(V a) { return g.sum(a); }
    V mean(V a) { return g.mean(a); }
};

struct KindInfo {
    std::vector<Shape> shapes;
    std::vector<int> positive;  // inputs sampled in (0.1, 1.1)
};

const std::map<std::string, KindInfo>& kind_registry() {
    static const std::map<std::string, KindInfo> reg = {
        {"add", {{Shape{3, 4}, Shape{3, 4}}, {}}},
        {"sub", {{Shape{3, 4}, Shape{3, 4}}, {}}},
        {"add_b", {{Shape{3, 4, 5}, Shape{1, 1, 5}}, {}}},
        {"mul", {{Shape{3, 4}, Shape{3, 4}}, {}}},
        {"mul_b", {{Shape{3, 4, 5}, Shape{3, 1, 5}}, {}}},
        {"scale", {{Shape{3, 4}}, {}}},
        {"shift", {{Shape{3, 4}}, {}}},
        {"relu", {{Shape{4, 6}}, {}}},
        {"gelu", {{Shape{4, 6}}, {}}},
        {"log", {{Shape{4, 6}}, {0}}},
        {"matmul", {{Shape{4, 5}, Shape{5, 3}}, {}}},
        {"bmm", {{Shape{2, 3, 4}, Shape{2, 4, 5}}, {}}},
        {"bmm_t", {{Shape{2, 3, 4}, Shape{2, 5, 4}}, {}}},
        {"conv2d", {{Shape{2, 3, 6, 6}, Shape{4, 3, 3, 3}, Shape{4}}, {}}},
        {"conv2d_s2", {{Shape{2, 3, 6, 6}, Shape{4, 3, 3, 3}, Shape{4}}, {}}},
        {"upsample2", {{Shape{2, 3, 4, 4}}, {}}},
        {"patchify", {{Shape{2, 3, 8, 8}}, {}}},
        {"reshape", {{Shape{3, 4}}, {}}},
        {"permute", {{Shape{2, 3, 4}}, {}}},
        {"concat1", {{Shape{2, 3, 4}, Shape{2, 5, 4}}, {}}},
        {"slice1", {{Shape{2, 6, 4}}, {}}},
        {"layer_norm", {{Shape{4, 16}}, {}}},
        {"softmax", {{Shape{4, 8}}, {}}},
        {"embedding", {{Shape{6, 4}}, {}}},
        {"sum", {{Shape{3, 4}}, {}}},
        {"mean", {{Shape{3, 4}}, {}}},
        {"attention", {{Shape{1, 8, 16}, Shape{16, 16}, Shape{16, 16}, Shape{16, 16}, Shape{16, 16}}, {}}},
    };
    return reg;
}

// Single description of each kind's computation, instantiated for both the
// float32 engine and the double oracle.
template <class Ctx>
typename Ctx::V build_kind(const std::string& kind, Ctx& c, const std::vector<typename Ctx::V>& v) {
    using V = typename Ctx::V;
    if (kind == "add") return c.add(v[0], v[1]);
    if (kind == "sub") return c.sub(v[0], v[1]);
    if (kind == "add_b") return c.add_b(v[0], v[1]);
    if (kind == "mul") return c.mul(v[0], v[1]);
    if (kind == "mul_b") return c.mul_b(v[0], v[1]);
    if (kind == "scale") return c.scale(v[0], -1.7);
    if (kind == "shift") return c.shift(v[0], 0.31);
    if (kind == "relu") return c.relu(v[0]);
    if (kind == "gelu") return c.gelu(v[0]);
    if (kind == "log") return c.log(v[0]);
    if (kind == "matmul") return c.matmul(v[0], v[1]);
    if (kind == "bmm") return c.bmm(v[0], v[1]);
    if (kind == "bmm_t") return c.bmm_t(v[0], v[1]);
    if (kind == "conv2d") return c.conv2d(v[0], v[1], v[2], 1);
    if (kind == "conv2d_s2") return c.conv2d(v[0], v[1], v[2], 2);
    if (kind == "upsample2") return c.upsample2(v[0]);
    if (kind == "patchify") return c.patchify(v[0], 4);
    if (kind == "reshape") return c.reshape(v[0], Shape{2, 6});
    if (kind == "permute") return c.permute(v[0], {2, 0, 1});
    if (kind == "concat1") return c.concat1(v[0], v[1]);
    if (kind == "slice1") return c.slice1(v[0], 1, 3);
    if (kind == "layer_norm") return c.layer_norm(v[0], 1e-5);
    if (kind == "softmax") return c.softmax(v[0]);
    if (kind == "embedding") return c.embedding(v[0], {1, 3, 3, 0, 5});
    if (kind == "sum") return c.sum(v[0]);
    if (kind == "mean") return c.mean(v[0]);
    if (kind == "attention") {
        // multi-head self-attention, 2 heads over [1,8,16] tokens
        const int64_t N = 1, T = 8, D = 16, heads = 2, dh = D / heads;
        auto split = [&](V x) {
            return c.reshape(c.permute(c.reshape(x, Shape{N, T, heads, dh}), {0, 2, 1, 3}), Shape{N * heads, T, dh});
        };
        auto project = [&](V x, V w) {
            return c.reshape(c.matmul(c.reshape(x, Shape{N * T, D}), w), Shape{N, T, D});
        };
        V q = split(project(v[0], v[1]));
        V k = split(project(v[0], v[2]));
        V val = split(project(v[0], v[3]));
        V attn = c.softmax(c.scale(c.bmm_t(q, k), 1.0 / std::sqrt(static_cast<double>(dh))));
        V ctx = c.bmm(attn, val);
        V merged = c.reshape(c.permute(c.reshape(ctx, Shape{N, heads, T, dh}), {0, 2, 1, 3}), Shape{N, T, D});
        return project(merged, v[4]);
    }
    throw ValidationError("unknown node kind '" + kind + "'");
}

}  // namespace

std::vector<std::string> grad_check_kinds() {
    std::vector<std::string> v;
    for (const auto& [k, _] : kind_registry()) v.push_back(k);
    return v;
}

float grad_check(const std::string& node_kind, const std::vector<Shape>& shapes, uint64_t seed) {
    auto it = kind_registry().find(node_kind);
    if (it == kind_registry().end()) throw ValidationError("unknown node kind '" + node_kind + "'");
    const KindInfo& kind = it->second;
    const std::vector<Shape>& in_shapes = shapes.empty() ? kind.shapes : shapes;
    if (in_shapes.size() != kind.shapes.size())
        throw ValidationError("node kind '" + node_kind + "' expects " + std::to_string(kind.shapes.size()) +
                              " inputs");

    Rng rng(seed);
    auto is_positive = [&](int i) {
        for (int p : kind.positive)
            if (p == i) return true;
        return false;
    };
    std::vector<Tensor> inputs;
    for (size_t i = 0; i < in_shapes.size(); ++i) {
        float lo = is_positive(static_cast<int>(i)) ? 0.1f : -1.0f;
        float hi = is_positive(static_cast<int>(i)) ? 1.1f : 1.0f;
        Tensor t = Tensor::uniform(in_shapes[i], rng, lo, hi);
        if (node_kind == "relu") {
            // keep samples clear of the kink so central differences are valid
            for (int64_t j = 0; j < t.numel(); ++j) {
                float& x = t.at(j);
                if (std::fabs(x) < 0.05f) x = x < 0.0f ? -0.05f : 0.05f;
            }
        }
        inputs.push_back(std::move(t));
    }

    // Analytic gradients from the float32 engine, seeded with probe
    // cotangents whose magnitudes stay in [0.5, 1].
    Tensor probe;
    std::vector<Tensor> analytic;
    {
        Graph g;
        GraphCtx ctx{g};
        std::vector<ValueId> vals;
        for (size_t i = 0; i < inputs.size(); ++i) vals.push_back(g.param("in" + std::to_string(i), inputs[i]));
        ValueId out = build_kind(node_kind, ctx, vals);
        Rng prng(seed ^ 0xabcdef12345ull);
        probe = Tensor(g.shape(out));
        for (int64_t j = 0; j < probe.numel(); ++j)
            probe.at(j) = prng.uniform(0.5f, 1.0f) * (prng.uniform() < 0.5f ? -1.0f : 1.0f);
        ValueId loss = g.sum(g.mul(out, g.constant(probe)));
        g.backward(loss);
        for (auto v : vals) analytic.push_back(g.grad(v));
    }

    // Numeric side: central differences over the double-precision oracle.
    auto eval64 = [&](const std::vector<Tensor>& ins) {
        OracleCtx ctx;
        std::vector<DT> vals;
        for (const Tensor& t : ins) vals.push_back(from_tensor(t));
        DT out = build_kind(node_kind, ctx, vals);
        double lv = 0.0;
        for (int64_t j = 0; j < out.shape.numel(); ++j) lv += out.at(j) * static_cast<double>(probe.at(j));
        return lv;
    };

    const float h = 1e-3f;  // documented central-difference step
    float max_rel = 0.0f;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t j = 0; j < inputs[i].numel(); ++j) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[i].at(j) += h;
            minus[i].at(j) -= h;
            double numeric = (eval64(plus) - eval64(minus)) / (2.0 * static_cast<double>(h));
            double rel = std::fabs(static_cast<double>(analytic[i].at(j)) - numeric) / (std::fabs(numeric) + 1e-8);
            max_rel = std::max(max_rel, static_cast<float>(rel));
        }
    }
    return max_rel;
}

}  // namespace hyperlora
