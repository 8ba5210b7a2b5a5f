#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hyperlora/tensor.hpp"

namespace hyperlora {

// Handle into a Graph's node list.
struct ValueId {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

enum class Op : uint8_t {
    kLeaf,
    kAdd,        // same shape
    kSub,        // same shape
    kAddB,       // rank-matched broadcast (b dims are 1 or equal)
    kMul,        // same shape
    kMulB,       // rank-matched broadcast
    kScale,      // multiply by constant
    kShift,      // add constant
    kRelu,
    kGelu,       // tanh approximation
    kLog,
    kMatmul,     // [M,K] x [K,N]
    kBmm,        // [B,M,K] x [B,K,N]
    kBmmT,       // [B,M,K] x [B,N,K] -> [B,M,N]
    kConv2d,     // NCHW in, [Co,Ci,kh,kw] weight, [Co] bias, stride 1|2, same padding
    kUpsample2,  // NCHW nearest-neighbour 2x
    kPatchify,   // NCHW -> [N, (H/p)*(W/p), C*p*p]
    kReshape,
    kPermute,    // rank 2..4
    kConcat1,    // two rank-3 tensors along dim 1
    kSlice1,     // rank-3 tensor, dim-1 range
    kLayerNorm,  // normalise last dim (no affine)
    kSoftmax,    // last dim
    kEmbedding,  // table [V,d] gathered by ids -> [L,d]
    kSum,        // all entries -> scalar
    kMean,       // all entries -> scalar
};

const char* op_name(Op op);

// Reverse-mode tape. Operations execute eagerly as the graph is built and
// every intermediate is retained, so backward() can run any time after the
// loss node exists. Execution is single-threaded and deterministic.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ----
    ValueId input(const std::string& name, Tensor t);            // requires_grad forced off
    ValueId param(const std::string& name, Tensor t);            // requires_grad from tensor (default on)
    ValueId constant(Tensor t) { return input("", std::move(t)); }

    // ---- operations ----
    ValueId add(ValueId a, ValueId b);
    ValueId sub(ValueId a, ValueId b);
    ValueId add_b(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId mul_b(ValueId a, ValueId b);
    ValueId scale(ValueId a, float c);
    ValueId shift(ValueId a, float c);
    ValueId relu(ValueId a);
    ValueId gelu(ValueId a);
    ValueId log(ValueId a);
    ValueId matmul(ValueId a, ValueId b);
    ValueId bmm(ValueId a, ValueId b);
    ValueId bmm_t(ValueId a, ValueId b);
    ValueId conv2d(ValueId x, ValueId w, ValueId b, int stride);
    ValueId upsample2(ValueId x);
    ValueId patchify(ValueId x, int patch);
    ValueId reshape(ValueId a, Shape s);
    ValueId permute(ValueId a, std::vector<int> perm);
    ValueId concat1(ValueId a, ValueId b);
    ValueId slice1(ValueId a, int64_t start, int64_t len);
    ValueId layer_norm(ValueId a, float eps = 1e-5f);
    ValueId softmax(ValueId a);
    ValueId embedding(ValueId table, std::vector<int32_t> ids);
    ValueId sum(ValueId a);
    ValueId mean(ValueId a);

    // ---- access ----
    const Tensor& value(ValueId v) const;
    const Shape& shape(ValueId v) const { return value(v).shape(); }
    int size() const { return static_cast<int>(nodes_.size()); }

    // ---- reverse pass ----
    // Scalar loss variant seeds d(loss)/d(loss) = 1.
    void backward(ValueId loss);
    // Chained-graph variant: seed an arbitrary node with a cotangent.
    void backward(ValueId out, const Tensor& seed);
    // Gradient w.r.t. any node; zeros if the node is off every path to the
    // seeded output. Valid after backward().
    Tensor grad(ValueId v) const;

    // Finite-value checking after every op (on by default).
    void set_check_finite(bool b) { check_finite_ = b; }

  private:
    struct Node {
        Op op = Op::kLeaf;
        std::string name;
        std::array<int, 3> in{-1, -1, -1};
        int n_in = 0;
        Tensor out;
        Tensor grad;           // empty until backward touches it
        bool requires_grad = false;
        bool grad_alloc = false;
        // attributes
        float c = 0.0f;
        int stride = 1;
        int patch = 0;
        std::array<int, 4> perm{0, 1, 2, 3};
        int64_t start = 0;
        float eps = 1e-5f;
        std::vector<int32_t> ids;
        std::vector<float> aux;  // layer-norm rstd cache
    };

    ValueId push(Node n);
    Node& node(ValueId v);
    const Node& node(ValueId v) const;
    Tensor& grad_buf(int idx);
    void backward_node(int idx);
    void check_node_finite(const Node& n) const;

    std::vector<Node> nodes_;
    bool check_finite_ = true;
    bool backward_done_ = false;
};

// Finite-difference gradient check for a registered operation kind. Builds a
// small graph for the op at the given shapes, compares analytic gradients of
// a scalar probe loss against central differences, and returns the maximum
// relative error max |analytic - numeric| / (|numeric| + 1e-8).
// Registered kinds: add, sub, add_b, mul, mul_b, scale, shift, relu, gelu,
// log, matmul, bmm, bmm_t, conv2d, conv2d_s2, upsample2, patchify, reshape,
// permute, concat1, slice1, layer_norm, softmax, embedding, sum, mean,
// attention (composite block).
float grad_check(const std::string& node_kind, const std::vector<Shape>& shapes, uint64_t seed);

// Kinds accepted by grad_check, in a stable order.
std::vector<std::string> grad_check_kinds();

}  // namespace hyperlora
