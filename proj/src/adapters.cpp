#include "hyperlora/adapters.hpp"

#include <cmath>

#include "hyperlora/container.hpp"
#include "hyperlora/gemm.hpp"
#include "hyperlora/rng.hpp"

namespace hyperlora {

Tensor orthogonal_basis(int64_t dim_full, int64_t dim_basis, uint64_t seed, float magnitude) {
    if (dim_basis > dim_full)
        throw ValidationError("orthogonal_basis: dim_basis " + std::to_string(dim_basis) + " exceeds dim_full " +
                              std::to_string(dim_full));
    if (dim_basis < 1) throw ValidationError("orthogonal_basis: dim_basis must be >= 1");
    if (!(magnitude > 0.0f)) throw ValidationError("orthogonal_basis: magnitude must be positive");

    Rng rng(seed);
    Tensor q = Tensor::randn(Shape{dim_full, dim_basis}, rng);
    // modified Gram-Schmidt over columns, double accumulation
    for (int64_t j = 0; j < dim_basis; ++j) {
        for (int64_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int64_t i = 0; i < dim_full; ++i) dot += static_cast<double>(q.at2(i, k)) * q.at2(i, j);
            for (int64_t i = 0; i < dim_full; ++i) q.at2(i, j) -= static_cast<float>(dot) * q.at2(i, k);
        }
        double norm = 0.0;
        for (int64_t i = 0; i < dim_full; ++i) norm += static_cast<double>(q.at2(i, j)) * q.at2(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-6) throw NumericsError("orthogonal_basis: degenerate column");
        const float inv = static_cast<float>(1.0 / norm);
        for (int64_t i = 0; i < dim_full; ++i) q.at2(i, j) *= inv;
    }
    if (magnitude != 1.0f)
        for (int64_t i = 0; i < q.numel(); ++i) q.at(i) *= magnitude;
    return q;
}

namespace {

Tensor transpose2d(const Tensor& t) {
    const int64_t n = t.shape()[0], m = t.shape()[1];
    Tensor out(Shape{m, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out.at2(j, i) = t.at2(i, j);
    return out;
}

Tensor mm(const Tensor& a, const Tensor& b) {
    const int64_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
    Tensor c(Shape{m, p});
    gemm_f32(false, false, m, p, k, 1.0f, a.data(), k, b.data(), p, 0.0f, c.data(), p);
    return c;
}

void merge_layer(ParamStore& weights, const std::string& id, const Tensor& delta, float scale) {
    if (!weights.contains(id)) throw ValidationError("merge: unknown layer id '" + id + "'");
    Tensor& w = weights.at(id);
    if (w.shape() != delta.shape())
        throw ShapeError("merge: layer '" + id + "' shape " + w.shape().str() + " vs delta " + delta.shape().str());
    if (scale == 0.0f) return;
    for (int64_t i = 0; i < w.numel(); ++i) w.at(i) += scale * delta.at(i);
}

}  // namespace

LidbResidualSet init_lidb(const std::vector<LayerTarget>& targets, int64_t r, int64_t a, int64_t b, uint64_t seed,
                          float magnitude) {
    if (r < 1) throw ValidationError("init_lidb: r must be >= 1");
    if (a < 1 || b < 1) throw ValidationError("init_lidb: a and b must be >= 1");
    if (r > std::min(a, b)) throw ValidationError("init_lidb: r must not exceed min(a, b)");
    LidbResidualSet set;
    set.targets = targets;
    set.a = a;
    set.b = b;
    set.r = r;
    set.magnitude = magnitude;
    set.master_seed = seed;
    Rng master(seed);
    for (const LayerTarget& t : targets) {
        if (a >= t.n || b >= t.m)
            throw ValidationError("init_lidb: layer '" + t.id + "' needs a < n and b < m (n=" + std::to_string(t.n) +
                                  ", m=" + std::to_string(t.m) + ")");
        LidbLayer layer;
        layer.a_seed = master.stream(hash_name(t.id + "/a_aux")).seed();
        layer.b_seed = master.stream(hash_name(t.id + "/b_aux")).seed();
        layer.a_aux = orthogonal_basis(t.n, a, layer.a_seed, magnitude);
        // rows of B_aux are the orthogonal family: build columns, transpose
        layer.b_aux = transpose2d(orthogonal_basis(t.m, b, layer.b_seed, magnitude));
        layer.a_train = Tensor(Shape{a, r});
        layer.b_train = Tensor(Shape{r, b});
        set.layers.push_back(std::move(layer));
    }
    return set;
}

LoraResidualSet init_lora_relaxed(const std::vector<LayerTarget>& targets, int64_t r_relaxed, uint64_t seed) {
    if (r_relaxed < 1) throw ValidationError("init_lora_relaxed: rank must be >= 1");
    LoraResidualSet set;
    set.targets = targets;
    set.r = r_relaxed;
    set.seed = seed;
    Rng master(seed);
    for (const LayerTarget& t : targets) {
        LoraLayer layer;
        Rng stream = master.stream(hash_name(t.id + "/lora_a"));
        layer.a = Tensor::randn(Shape{t.n, r_relaxed}, stream, 1.0f / std::sqrt(static_cast<float>(t.n)));
        layer.b = Tensor(Shape{r_relaxed, t.m});  // zero: initial dW = 0
        set.layers.push_back(std::move(layer));
    }
    return set;
}

Tensor compose_delta(const LidbResidualSet& set, size_t layer) {
    if (layer >= set.layers.size()) throw ValidationError("compose_delta: layer index out of range");
    const LidbLayer& l = set.layers[layer];
    return mm(mm(l.a_aux, l.a_train), mm(l.b_train, l.b_aux));
}

Tensor compose_delta(const LoraResidualSet& set, size_t layer) {
    if (layer >= set.layers.size()) throw ValidationError("compose_delta: layer index out of range");
    return mm(set.layers[layer].a, set.layers[layer].b);
}

void merge(ParamStore& weights, const LidbResidualSet& set, float scale) {
    for (size_t i = 0; i < set.layers.size(); ++i) merge_layer(weights, set.targets[i].id, compose_delta(set, i), scale);
}

void merge(ParamStore& weights, const LoraResidualSet& set, float scale) {
    for (size_t i = 0; i < set.layers.size(); ++i) merge_layer(weights, set.targets[i].id, compose_delta(set, i), scale);
}

Tensor LidbResidualSet::flatten() const {
    Tensor theta(Shape{std::max<int64_t>(trainable_count(), 1)});
    int64_t off = 0;
    for (const LidbLayer& l : layers) {
        for (int64_t i = 0; i < l.a_train.numel(); ++i) theta.at(off++) = l.a_train.at(i);
        for (int64_t i = 0; i < l.b_train.numel(); ++i) theta.at(off++) = l.b_train.at(i);
    }
    return theta;
}

void LidbResidualSet::unflatten(const Tensor& theta) {
    if (theta.numel() != trainable_count())
        throw ShapeError("unflatten: theta has " + std::to_string(theta.numel()) + " entries, want " +
                         std::to_string(trainable_count()));
    int64_t off = 0;
    for (LidbLayer& l : layers) {
        for (int64_t i = 0; i < l.a_train.numel(); ++i) l.a_train.at(i) = theta.at(off++);
        for (int64_t i = 0; i < l.b_train.numel(); ++i) l.b_train.at(i) = theta.at(off++);
    }
}

int64_t LoraResidualSet::trainable_count() const {
    int64_t n = 0;
    for (size_t i = 0; i < layers.size(); ++i) n += r * (targets[i].n + targets[i].m);
    return n;
}

Tensor LoraResidualSet::flatten() const {
    Tensor theta(Shape{std::max<int64_t>(trainable_count(), 1)});
    int64_t off = 0;
    for (const LoraLayer& l : layers) {
        for (int64_t i = 0; i < l.a.numel(); ++i) theta.at(off++) = l.a.at(i);
        for (int64_t i = 0; i < l.b.numel(); ++i) theta.at(off++) = l.b.at(i);
    }
    return theta;
}

void LoraResidualSet::unflatten(const Tensor& theta) {
    if (theta.numel() != trainable_count())
        throw ShapeError("unflatten: theta has " + std::to_string(theta.numel()) + " entries, want " +
                         std::to_string(trainable_count()));
    int64_t off = 0;
    for (LoraLayer& l : layers) {
        for (int64_t i = 0; i < l.a.numel(); ++i) l.a.at(i) = theta.at(off++);
        for (int64_t i = 0; i < l.b.numel(); ++i) l.b.at(i) = theta.at(off++);
    }
}

SizeReport account(const LidbResidualSet& set) {
    SizeReport rep;
    for (size_t i = 0; i < set.layers.size(); ++i) {
        const int64_t c = set.per_layer_trainables();
        rep.per_layer.emplace_back(set.targets[i].id, c);
        rep.trainable_count += c;
    }
    rep.bytes = 4 * rep.trainable_count;
    return rep;
}

SizeReport account(const LoraResidualSet& set) {
    SizeReport rep;
    for (size_t i = 0; i < set.layers.size(); ++i) {
        const int64_t c = set.r * (set.targets[i].n + set.targets[i].m);
        rep.per_layer.emplace_back(set.targets[i].id, c);
        rep.trainable_count += c;
    }
    rep.bytes = 4 * rep.trainable_count;
    return rep;
}

namespace {

nlohmann::json targets_json(const std::vector<LayerTarget>& targets) {
    nlohmann::json arr = nlohmann::json::array();
    for (const LayerTarget& t : targets)
        arr.push_back({{"id", t.id}, {"n", t.n}, {"m", t.m}, {"host", t.host}, {"role", t.role}});
    return arr;
}

std::vector<LayerTarget> targets_from_json(const nlohmann::json& arr) {
    std::vector<LayerTarget> targets;
    for (const auto& e : arr)
        targets.push_back({e.at("id").get<std::string>(), e.at("n").get<int64_t>(), e.at("m").get<int64_t>(),
                           e.at("host").get<std::string>(), e.at("role").get<std::string>()});
    return targets;
}

}  // namespace

void save_adapter(const std::string& path, const LidbResidualSet& set) {
    Container c;
    c.magic = "LDBA";
    nlohmann::json seeds = nlohmann::json::array();
    for (const LidbLayer& l : set.layers) seeds.push_back({{"a_seed", l.a_seed}, {"b_seed", l.b_seed}});
    c.header = {{"kind", "lidb"},
                {"a", set.a},
                {"b", set.b},
                {"r", set.r},
                {"magnitude", set.magnitude},
                {"master_seed", set.master_seed},
                {"targets", targets_json(set.targets)},
                {"aux_seeds", seeds},
                {"per_layer_trainables", set.per_layer_trainables()}};
    Tensor theta = set.flatten();
    if (set.trainable_count() > 0) c.payload.assign(theta.vec().begin(), theta.vec().end());
    save_container(path, c);
}

void save_adapter(const std::string& path, const LoraResidualSet& set) {
    Container c;
    c.magic = "LDBA";
    nlohmann::json offsets = nlohmann::json::array();
    int64_t off = 0;
    for (size_t i = 0; i < set.layers.size(); ++i) {
        offsets.push_back(off);
        off += set.r * (set.targets[i].n + set.targets[i].m);
    }
    c.header = {{"kind", "lora"},
                {"r", set.r},
                {"seed", set.seed},
                {"targets", targets_json(set.targets)},
                {"offsets", offsets}};
    Tensor theta = set.flatten();
    if (set.trainable_count() > 0) c.payload.assign(theta.vec().begin(), theta.vec().end());
    save_container(path, c);
}

LidbResidualSet load_lidb_adapter(const std::string& path) {
    Container c = load_container(path, "LDBA", 1);
    if (c.header.at("kind") != "lidb") throw IoError("adapter '" + path + "' is not a lidb record");
    LidbResidualSet set = init_lidb(targets_from_json(c.header.at("targets")), c.header.at("r").get<int64_t>(),
                                    c.header.at("a").get<int64_t>(), c.header.at("b").get<int64_t>(),
                                    c.header.at("master_seed").get<uint64_t>(), c.header.at("magnitude").get<float>());
    // aux factors come back from their seeds; verify the stored seeds match
    const auto& seeds = c.header.at("aux_seeds");
    for (size_t i = 0; i < set.layers.size(); ++i) {
        if (set.layers[i].a_seed != seeds.at(i).at("a_seed").get<uint64_t>() ||
            set.layers[i].b_seed != seeds.at(i).at("b_seed").get<uint64_t>())
            throw IoError("adapter '" + path + "' has inconsistent aux seeds");
    }
    if (set.trainable_count() != static_cast<int64_t>(c.payload.size()))
        throw IoError("adapter '" + path + "' payload size mismatch");
    if (set.trainable_count() > 0)
        set.unflatten(Tensor(Shape{set.trainable_count()}, std::vector<float>(c.payload)));
    return set;
}

LoraResidualSet load_lora_adapter(const std::string& path) {
    Container c = load_container(path, "LDBA", 1);
    if (c.header.at("kind") != "lora") throw IoError("adapter '" + path + "' is not a lora record");
    LoraResidualSet set = init_lora_relaxed(targets_from_json(c.header.at("targets")), c.header.at("r").get<int64_t>(),
                                            c.header.at("seed").get<uint64_t>());
    if (set.trainable_count() != static_cast<int64_t>(c.payload.size()))
        throw IoError("adapter '" + path + "' payload size mismatch");
    if (set.trainable_count() > 0)
        set.unflatten(Tensor(Shape{set.trainable_count()}, std::vector<float>(c.payload)));
    return set;
}

}  // namespace hyperlora
