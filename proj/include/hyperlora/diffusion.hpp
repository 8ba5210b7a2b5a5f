#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlora/adapters.hpp"
#include "hyperlora/config.hpp"
#include "hyperlora/graph.hpp"
#include "hyperlora/optim.hpp"
#include "hyperlora/rng.hpp"
#include "hyperlora/text.hpp"

namespace hyperlora {

struct ModelDims {
    int64_t image_size = 32;
    int64_t c1 = 32;  // fine-level channels
    int64_t c2 = 64;  // coarse-level channels
    int64_t heads = 4;
    int64_t text_dim = 32;
    int64_t text_layers = 2;
    int64_t text_heads = 2;
    int64_t time_feat = 32;
    int64_t time_dim = 64;
    int64_t train_steps = 256;

    static ModelDims from_config(const Config& cfg);
    nlohmann::json to_json() const;
    static ModelDims from_json(const nlohmann::json& j);
    bool operator==(const ModelDims&) const = default;
};

// Cosine noise schedule. alpha_bar is indexed 0..T with alpha_bar[0] = 1;
// values are in (0,1] and strictly decreasing, per-step betas in (0,1) and
// increasing.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<float> alpha_bar;
    std::vector<float> beta;

    static NoiseSchedule cosine(int64_t T);
    float abar(int64_t t) const;
};

// Forward process x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t in [1, T].
Tensor noise_image(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

struct Prompt {
    std::string text;
    std::vector<int32_t> ids;
    Tensor embedding;  // [len, text_dim]
};

// Binds a ParamStore into a Graph, registering each weight as a leaf on
// first use. Adapter attachments install per-name hooks that replace the
// returned value with the adapted effective weight.
class BoundWeights {
  public:
    BoundWeights(Graph& g, const ParamStore& store, bool trainable)
        : g_(&g), store_(&store), trainable_(trainable) {}

    ValueId get(const std::string& name);   // effective (hooked) weight
    ValueId base(const std::string& name);  // raw leaf
    void hook(const std::string& name, std::function<ValueId(Graph&, ValueId)> fn);
    Graph& graph() { return *g_; }
    bool trainable() const { return trainable_; }

    // leaf ids actually registered (for reading gradients of base weights)
    const std::map<std::string, ValueId>& leaves() const { return leaf_; }

  private:
    Graph* g_;
    const ParamStore* store_;
    bool trainable_;
    std::map<std::string, ValueId> leaf_;
    std::map<std::string, ValueId> effective_;
    std::map<std::string, std::function<ValueId(Graph&, ValueId)>> hooks_;
};

// Adapter trainables registered as graph leaves (for optimising the adapter
// itself). Returns the leaf handles in flatten() order per layer.
struct AttachedAdapter {
    std::vector<std::pair<std::string, ValueId>> leaves;  // param name -> leaf
};
AttachedAdapter attach_lidb_leaves(BoundWeights& bw, const LidbResidualSet& set, float scale);
AttachedAdapter attach_lora_leaves(BoundWeights& bw, const LoraResidualSet& set, float scale);

// Adapter trainables supplied as an in-graph value theta (hypernetwork
// output). theta is [batch, total] and the effective weights become
// per-sample [batch, n, m]; batch 1 composes shared 2-D weights.
void attach_lidb_theta(BoundWeights& bw, const LidbResidualSet& set, ValueId theta, float scale);

// Frozen adapter values folded in from the residual set itself.
void attach_lidb_fixed(BoundWeights& bw, const LidbResidualSet& set, float scale);
void attach_lora_fixed(BoundWeights& bw, const LoraResidualSet& set, float scale);

class DiffusionModel {
  public:
    ModelDims dims;
    NoiseSchedule sched;
    ParamStore weights;

    static DiffusionModel build(const ModelDims& dims, uint64_t seed);

    // q/k/v/o projections of every attention block, denoiser blocks in
    // forward order then text-encoder layers; ids double as weight names.
    std::vector<LayerTarget> layer_inventory() const;

    // x0 prediction graph. xt [N,3,H,W]; one token sequence per sample, all
    // the same length; ts holds each sample's timestep.
    ValueId forward(BoundWeights& bw, ValueId xt, const std::vector<std::vector<int32_t>>& ids,
                    const std::vector<int64_t>& ts) const;

    // Denoising loss: t ~ U[1,T] and eps ~ N(0,1) drawn per sample from rng,
    // mean squared error between the x0 prediction and x0 over all pixels.
    ValueId recon_loss(BoundWeights& bw, const Tensor& x0, const std::vector<std::vector<int32_t>>& ids,
                       Rng& rng) const;

    Prompt encode_prompt(const std::string& text) const;

    // Deterministic x-prediction sampling (DDIM-style update, no noise
    // injection). Returns `count` images in [-1,1].
    std::vector<Tensor> sample(const std::string& prompt, int64_t steps, uint64_t seed, int64_t count = 1,
                               const LidbResidualSet* lidb = nullptr, const LoraResidualSet* lora = nullptr,
                               float scale = 1.0f) const;
};

// Scalar convenience wrapper over recon_loss with optional attached
// adapters; used by tests and diagnostics.
float reconstruction_loss(const DiffusionModel& model, const Tensor& image, const std::string& prompt, Rng& rng,
                          const LidbResidualSet* lidb = nullptr, const LoraResidualSet* lora = nullptr,
                          float scale = 1.0f);

// Model checkpoint ("LDBC", kind "diffusion"); optionally carries optimizer
// moments and trainer state so interrupted training resumes bit-comparably.
void save_model(const std::string& path, const DiffusionModel& model, const nlohmann::json& trainer = {},
                const AdamState* opt = nullptr);
DiffusionModel load_model(const std::string& path, AdamState* opt = nullptr, nlohmann::json* trainer = nullptr);

struct PretrainResult {
    double initial_smoothed = 0.0;  // mean loss over the first 50 steps
    double final_smoothed = 0.0;    // mean loss over the last 50 steps
    int64_t steps = 0;
    std::string checkpoint;  // path of the final model
};

// Full pretraining loop over the corpus pretrain split. Writes
// model_latest.ldbc (with optimizer state) every checkpoint_every epochs and
// model.ldbc at the end. If resume is set and model_latest.ldbc exists,
// training continues from it.
struct CorpusManifest;  // facegen.hpp
PretrainResult pretrain(DiffusionModel& model, const CorpusManifest& corpus, const Config& cfg,
                        const std::string& out_dir, bool resume = false,
                        const std::function<void(int64_t, double)>& log = {});

}  // namespace hyperlora
