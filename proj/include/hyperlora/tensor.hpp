#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hyperlora/common.hpp"
#include "hyperlora/rng.hpp"

namespace hyperlora {

// Dense shape of rank 1..4.
struct Shape {
    std::array<int64_t, 4> d{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<int64_t> dims) {
        if (dims.size() < 1 || dims.size() > 4) throw ShapeError("rank must be 1..4");
        rank = static_cast<int>(dims.size());
        int i = 0;
        for (int64_t v : dims) {
            if (v <= 0) throw ShapeError("extent must be positive");
            d[i++] = v;
        }
    }
    static Shape of(const std::vector<int64_t>& dims) {
        Shape s;
        if (dims.size() < 1 || dims.size() > 4) throw ShapeError("rank must be 1..4");
        s.rank = static_cast<int>(dims.size());
        for (size_t i = 0; i < dims.size(); ++i) {
            if (dims[i] <= 0) throw ShapeError("extent must be positive");
            s.d[i] = dims[i];
        }
        return s;
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= d[i];
        return n;
    }
    int64_t operator[](int i) const { return d[i]; }
    bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "[";
        for (int i = 0; i < rank; ++i) s += std::to_string(d[i]) + (i + 1 < rank ? "," : "");
        return s + "]";
    }
    std::vector<int64_t> dims() const { return std::vector<int64_t>(d.begin(), d.begin() + rank); }
};

// Row-major float32 tensor. Plain value type; autodiff bookkeeping lives in
// Graph, this only carries the requires_grad marker for leaves.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f, bool requires_grad = false)
        : shape_(s), data_(static_cast<size_t>(s.numel()), fill), requires_grad_(requires_grad) {}
    Tensor(Shape s, std::vector<float> data, bool requires_grad = false)
        : shape_(s), data_(std::move(data)), requires_grad_(requires_grad) {
        if (static_cast<int64_t>(data_.size()) != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }

    static Tensor scalar(float v) { return Tensor(Shape{1}, {v}); }

    static Tensor randn(Shape s, Rng& rng, float std_dev = 1.0f, bool requires_grad = false) {
        Tensor t(s, 0.0f, requires_grad);
        for (auto& v : t.data_) v = rng.normal() * std_dev;
        return t;
    }
    static Tensor uniform(Shape s, Rng& rng, float lo, float hi, bool requires_grad = false) {
        Tensor t(s, 0.0f, requires_grad);
        for (auto& v : t.data_) v = rng.uniform(lo, hi);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }
    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool b) { requires_grad_ = b; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    float& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_.d[1] + j)]; }
    float at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_.d[1] + j)]; }

    float item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
        return data_[0];
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(Shape s) const {
        if (s.numel() != numel()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
        Tensor t = *this;
        t.shape_ = s;
        return t;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    Shape shape_{};
    std::vector<float> data_{};
    bool requires_grad_ = false;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shapes " + a.shape().str() + " vs " + b.shape().str());
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace hyperlora
