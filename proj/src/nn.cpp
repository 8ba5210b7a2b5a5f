#include "hyperlora/nn.hpp"

#include <cmath>

namespace hyperlora::nn {

ValueId proj(Graph& g, ValueId x, ValueId w) {
    const Shape& xs = g.shape(x);
    const Shape& ws = g.shape(w);
    if (xs.rank != 3) throw ShapeError("proj expects [N,T,D] tokens");
    const int64_t N = xs[0], T = xs[1], D = xs[2];
    if (ws.rank == 2) {
        ValueId flat = g.reshape(x, Shape{N * T, D});
        ValueId y = g.matmul(flat, w);
        return g.reshape(y, Shape{N, T, ws[1]});
    }
    if (ws.rank == 3) {
        if (ws[0] != N) throw ShapeError("per-sample projection batch mismatch");
        return g.bmm(x, w);
    }
    throw ShapeError("proj weight must be rank 2 or 3");
}

ValueId attention(Graph& g, ValueId tokens, ValueId kv, const AttnWeights& w, int heads) {
    const Shape& xs = g.shape(tokens);
    const Shape& ks = g.shape(kv);
    const int64_t N = xs[0], T = xs[1], D = xs[2], S = ks[1];
    if (D % heads != 0) throw ShapeError("attention dim not divisible by heads");
    const int64_t dh = D / heads;

    auto split_heads = [&](ValueId v, int64_t len) {
        ValueId r = g.reshape(v, Shape{N, len, heads, dh});
        ValueId p = g.permute(r, {0, 2, 1, 3});  // [N,h,len,dh]
        return g.reshape(p, Shape{N * heads, len, dh});
    };

    ValueId q = split_heads(proj(g, tokens, w.wq), T);
    ValueId k = split_heads(proj(g, kv, w.wk), S);
    ValueId v = split_heads(proj(g, kv, w.wv), S);

    ValueId scores = g.scale(g.bmm_t(q, k), 1.0f / std::sqrt(static_cast<float>(dh)));
    ValueId attn = g.softmax(scores);          // [N*h, T, S]
    ValueId ctx = g.bmm(attn, v);              // [N*h, T, dh]
    ValueId merged = g.reshape(g.permute(g.reshape(ctx, Shape{N, heads, T, dh}), {0, 2, 1, 3}), Shape{N, T, D});
    return proj(g, merged, w.wo);
}

ValueId linear(Graph& g, ValueId x, ValueId w, ValueId b) {
    ValueId y = g.matmul(x, w);
    return g.add_b(y, g.reshape(b, Shape{1, g.shape(b)[0]}));
}

ValueId token_mlp(Graph& g, ValueId x, ValueId w1, ValueId b1, ValueId w2, ValueId b2) {
    const Shape& xs = g.shape(x);
    const int64_t N = xs[0], T = xs[1], D = xs[2];
    ValueId flat = g.reshape(x, Shape{N * T, D});
    ValueId h = g.gelu(linear(g, flat, w1, b1));
    ValueId y = linear(g, h, w2, b2);
    return g.reshape(y, Shape{N, T, g.shape(w2)[1]});
}

ValueId mse(Graph& g, ValueId a, ValueId b) {
    ValueId d = g.sub(a, b);
    return g.mean(g.mul(d, d));
}

}  // namespace hyperlora::nn
