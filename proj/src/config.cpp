#include "hyperlora/config.hpp"

#include <fstream>

#include "hyperlora/threads.hpp"

namespace hyperlora {

using nlohmann::json;

json Config::defaults() {
    return json{
        {"seed", 1234},
        {"jobs", 0},  // 0 = hardware concurrency
        {"corpus",
         {{"n_identities", 2000},
          {"styles", {"photo", "sketch", "invert", "sepia"}},
          {"n_pretrain", 1600},
          {"n_hyper_train", 320},
          {"n_hyper_val", 48},
          {"n_held_out", 32},
          {"jitter", 1.0}}},
        {"model",
         {{"image_size", 32},
          {"base_channels", 32},
          {"channel_mult", 2},
          {"heads", 4},
          {"text_dim", 32},
          {"text_layers", 2},
          {"text_heads", 2},
          {"text_len", 8},
          {"time_dim", 32},
          {"train_steps", 256}}},
        {"pretrain",
         {{"epochs", 24},
          {"batch", 8},
          {"lr", 2e-3},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"eps", 1e-8},
          {"checkpoint_every", 4},
          {"log_every", 100}}},
        {"adapters", {{"a", 8}, {"b", 4}, {"r", 1}, {"magnitude", 1.0}, {"scale", 1.0}}},
        {"precompute",
         {{"iters", 400},
          {"lr", 5e-3},
          {"noise_batch", 4},
          {"identity_gate", 0.8},
          {"gate_samples", 4},
          {"exclude_below_gate", true}}},
        {"hyper",
         {{"dim", 128},
          {"vit_layers", 4},
          {"vit_heads", 4},
          {"patch", 4},
          {"dec_layers", 2},
          {"dec_heads", 4},
          {"mlp_ratio", 2},
          {"s", 4},
          {"alpha", 1.0},
          {"beta", 10.0},
          {"epochs", 40},
          {"batch", 8},
          {"lr", 1e-3}}},
        {"pipeline", {{"s", 4}, {"r_relaxed", 4}, {"finetune_iters", 40}, {"lr", 1e-3}, {"noise_batch", 4}}},
        {"sample", {{"steps", 32}}},
        {"eval",
         {{"probe_epochs", 16},
          {"probe_lr", 1e-3},
          {"probe_batch", 32},
          {"embed_dim", 64},
          {"samples_per_subject", 4},
          {"sample_steps", 16},
          {"threshold", 0.8},
          {"max_iters", 200},
          {"eval_every", 10}}},
    };
}

namespace {

void merge_strict(json& base, const json& update, const std::string& prefix) {
    for (const auto& [key, val] : update.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ValidationError("unknown config key '" + path + "'");
        json& slot = base.at(key);
        if (slot.is_object()) {
            if (!val.is_object()) throw ValidationError("config key '" + path + "' expects a table");
            merge_strict(slot, val, path);
        } else if (slot.is_number_integer()) {
            if (!val.is_number_integer()) throw ValidationError("config key '" + path + "' expects an integer");
            slot = val;
        } else if (slot.is_number_float()) {
            if (!val.is_number()) throw ValidationError("config key '" + path + "' expects a number");
            slot = val.is_number_float() ? val : json(val.get<double>());
        } else if (slot.is_boolean()) {
            if (!val.is_boolean()) throw ValidationError("config key '" + path + "' expects a boolean");
            slot = val;
        } else if (slot.is_string()) {
            if (!val.is_string()) throw ValidationError("config key '" + path + "' expects a string");
            slot = val;
        } else if (slot.is_array()) {
            if (!val.is_array()) throw ValidationError("config key '" + path + "' expects an array");
            slot = val;
        } else {
            throw ValidationError("config key '" + path + "' has unsupported type");
        }
    }
}

json parse_override_value(const json& slot, const std::string& path, const std::string& text) {
    try {
        if (slot.is_number_integer()) return json(std::stoll(text));
        if (slot.is_number_float()) return json(std::stod(text));
        if (slot.is_boolean()) {
            if (text == "true" || text == "1") return json(true);
            if (text == "false" || text == "0") return json(false);
            throw ValidationError("");
        }
        if (slot.is_string()) return json(text);
        if (slot.is_array()) return json::parse(text);
    } catch (const ValidationError&) {
    } catch (const std::exception&) {
    }
    throw ValidationError("cannot parse override value '" + text + "' for key '" + path + "'");
}

}  // namespace

Config Config::load(const std::string& path, const std::vector<std::string>& overrides) {
    Config cfg;
    cfg.tree_ = defaults();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        json file;
        try {
            file = json::parse(in);
        } catch (const json::exception& e) {
            throw ValidationError("config file '" + path + "' does not parse: " + e.what());
        }
        merge_strict(cfg.tree_, file, "");
    }
    for (const std::string& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos) throw ValidationError("override '" + ov + "' is not key=value");
        const std::string key = ov.substr(0, eq);
        const std::string val = ov.substr(eq + 1);
        // navigate to the slot
        json* slot = &cfg.tree_;
        size_t pos = 0;
        while (true) {
            auto dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
            if (!slot->is_object() || !slot->contains(part))
                throw ValidationError("unknown config key '" + key + "'");
            slot = &slot->at(part);
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        if (slot->is_object()) throw ValidationError("config key '" + key + "' is a table, not a value");
        *slot = parse_override_value(*slot, key, val);
    }
    return cfg;
}

Config Config::from_json(const json& resolved) {
    Config cfg;
    cfg.tree_ = defaults();
    merge_strict(cfg.tree_, resolved, "");
    return cfg;
}

const json& Config::node(const std::string& dotted) const {
    const json* slot = &tree_;
    size_t pos = 0;
    while (true) {
        auto dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!slot->is_object() || !slot->contains(part)) throw ValidationError("unknown config key '" + dotted + "'");
        slot = &slot->at(part);
        if (dot == std::string::npos) return *slot;
        pos = dot + 1;
    }
}

int64_t Config::geti(const std::string& dotted) const {
    const json& n = node(dotted);
    if (!n.is_number_integer()) throw ValidationError("config key '" + dotted + "' is not an integer");
    return n.get<int64_t>();
}
double Config::getf(const std::string& dotted) const {
    const json& n = node(dotted);
    if (!n.is_number()) throw ValidationError("config key '" + dotted + "' is not a number");
    return n.get<double>();
}
bool Config::getb(const std::string& dotted) const {
    const json& n = node(dotted);
    if (!n.is_boolean()) throw ValidationError("config key '" + dotted + "' is not a boolean");
    return n.get<bool>();
}
std::string Config::gets(const std::string& dotted) const {
    const json& n = node(dotted);
    if (!n.is_string()) throw ValidationError("config key '" + dotted + "' is not a string");
    return n.get<std::string>();
}
std::vector<std::string> Config::get_list(const std::string& dotted) const {
    const json& n = node(dotted);
    if (!n.is_array()) throw ValidationError("config key '" + dotted + "' is not an array");
    return n.get<std::vector<std::string>>();
}

int Config::jobs() const {
    int64_t j = geti("jobs");
    return j <= 0 ? default_jobs() : static_cast<int>(j);
}

}  // namespace hyperlora
