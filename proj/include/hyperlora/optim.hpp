#pragma once

#include <map>
#include <string>

#include "hyperlora/tensor.hpp"

namespace hyperlora {

// Named parameter set. std::map keeps iteration (and serialization) order
// stable across runs.
class ParamStore {
  public:
    void add(const std::string& name, Tensor t) {
        if (params_.count(name)) throw Error("duplicate parameter '" + name + "'");
        params_.emplace(name, std::move(t));
    }
    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::map<std::string, Tensor>& map() { return params_; }
    const std::map<std::string, Tensor>& map() const { return params_; }
    size_t size() const { return params_.size(); }
    int64_t total_entries() const {
        int64_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

  private:
    std::map<std::string, Tensor> params_;
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Moments for every parameter plus the shared step counter.
struct AdamState {
    AdamConfig cfg;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    int64_t step = 0;
};

// One Adam update over every entry of `grads`. Parameters without a gradient
// entry are left untouched. Moments are created on first use.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state);

}  // namespace hyperlora
