#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyperlora/optim.hpp"
#include "hyperlora/tensor.hpp"

namespace hyperlora {

// One adapted weight matrix in the host model. `id` doubles as the parameter
// name in the model's ParamStore.
struct LayerTarget {
    std::string id;
    int64_t n = 0;  // rows of W
    int64_t m = 0;  // cols of W
    std::string host;  // "denoiser" | "text-encoder"
    std::string role;  // "q" | "k" | "v" | "o"
};

// Returns a dim_full x dim_basis matrix whose columns are mutually
// orthogonal, each with Euclidean norm `magnitude`. Deterministic in seed:
// Gaussian sample, modified Gram-Schmidt, column scaling.
Tensor orthogonal_basis(int64_t dim_full, int64_t dim_basis, uint64_t seed, float magnitude);

// Nested low-rank residual: dW = A_aux * A_train * B_train * B_aux with the
// aux factors frozen random orthogonal bases and only A_train/B_train
// trainable (r*(a+b) values per layer).
struct LidbLayer {
    Tensor a_aux;    // n x a, frozen, columns orthogonal
    Tensor a_train;  // a x r
    Tensor b_train;  // r x b
    Tensor b_aux;    // b x m, frozen, rows orthogonal
    uint64_t a_seed = 0;
    uint64_t b_seed = 0;
};

struct LidbResidualSet {
    std::vector<LayerTarget> targets;
    std::vector<LidbLayer> layers;
    int64_t a = 0, b = 0, r = 0;
    float magnitude = 1.0f;
    uint64_t master_seed = 0;

    int64_t per_layer_trainables() const { return r * (a + b); }
    int64_t trainable_count() const { return per_layer_trainables() * static_cast<int64_t>(layers.size()); }

    // Trainables flattened in inventory order: per layer A_train row-major
    // then B_train row-major. This layout is shared with the hypernetwork.
    Tensor flatten() const;
    void unflatten(const Tensor& theta);
};

// Plain low-rank residual dW = A * B used for rank-relaxed finetuning.
struct LoraLayer {
    Tensor a;  // n x r
    Tensor b;  // r x m
};

struct LoraResidualSet {
    std::vector<LayerTarget> targets;
    std::vector<LoraLayer> layers;
    int64_t r = 0;
    uint64_t seed = 0;

    int64_t trainable_count() const;
    Tensor flatten() const;
    void unflatten(const Tensor& theta);
};

// Fresh residual sets. Trainable factors start at zero (LiDB) or with B zero
// (LoRA), so a new adapter composes to dW = 0 exactly.
LidbResidualSet init_lidb(const std::vector<LayerTarget>& targets, int64_t r, int64_t a, int64_t b, uint64_t seed,
                          float magnitude = 1.0f);
LoraResidualSet init_lora_relaxed(const std::vector<LayerTarget>& targets, int64_t r_relaxed, uint64_t seed);

// Composed per-layer delta, an n x m matrix of numerical rank <= r.
Tensor compose_delta(const LidbResidualSet& set, size_t layer);
Tensor compose_delta(const LoraResidualSet& set, size_t layer);

// W' = W + scale * dW for every adapted layer; other weights untouched.
// Unknown layer ids raise ValidationError.
void merge(ParamStore& weights, const LidbResidualSet& set, float scale);
void merge(ParamStore& weights, const LoraResidualSet& set, float scale);

// Trainable-entry accounting. bytes is exactly 4 * count; container header
// overhead is excluded from the reported model size.
struct SizeReport {
    int64_t trainable_count = 0;
    int64_t bytes = 0;
    std::vector<std::pair<std::string, int64_t>> per_layer;
};

SizeReport account(const LidbResidualSet& set);
SizeReport account(const LoraResidualSet& set);

// Adapter container ("LDBA"): JSON header with layer inventory, hyper-
// parameters and aux seeds; payload holds only the trainable factors. Aux
// bases are regenerated from their seeds on load, so the round-trip is
// bit-exact while storage stays at 4 bytes per trainable.
void save_adapter(const std::string& path, const LidbResidualSet& set);
void save_adapter(const std::string& path, const LoraResidualSet& set);
LidbResidualSet load_lidb_adapter(const std::string& path);
LoraResidualSet load_lora_adapter(const std::string& path);

}  // namespace hyperlora
