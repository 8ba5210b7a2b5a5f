#pragma once

#include "hyperlora/graph.hpp"

namespace hyperlora::nn {

// Q/K/V/output projection handles. Each is either [D,D] (shared across the
// batch) or [N,D,D] (one effective matrix per sample, used when adapter
// deltas differ inside a batch).
struct AttnWeights {
    ValueId wq, wk, wv, wo;
};

// x: [N,T,D] tokens, w: [D,D] or [N,D,D]. Applies the projection.
ValueId proj(Graph& g, ValueId x, ValueId w);

// Multi-head scaled dot-product attention. tokens [N,T,D] attend to kv
// [N,S,D]; all four projections are D->D. No masking.
ValueId attention(Graph& g, ValueId tokens, ValueId kv, const AttnWeights& w, int heads);

// x [R,K] @ w [K,M] + b [M]
ValueId linear(Graph& g, ValueId x, ValueId w, ValueId b);

// Token-wise MLP on [N,T,D]: linear(D->H), GELU, linear(H->D).
ValueId token_mlp(Graph& g, ValueId x, ValueId w1, ValueId b1, ValueId w2, ValueId b2);

// mean((a - b)^2) over all entries.
ValueId mse(Graph& g, ValueId a, ValueId b);

}  // namespace hyperlora::nn
