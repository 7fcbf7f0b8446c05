#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sslpdl/error.hpp"

namespace sslpdl::nn {

// Dense (channel, row, col) feature map.
template <class T>
struct Tensor {
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
        : c(c_), h(h_), w(w_), data(c_ * h_ * w_, fill) {}

    std::size_t plane() const noexcept { return h * w; }
    std::size_t size() const noexcept { return data.size(); }
    T& at(std::size_t k, std::size_t r, std::size_t q) { return data[(k * h + r) * w + q]; }
    T at(std::size_t k, std::size_t r, std::size_t q) const { return data[(k * h + r) * w + q]; }
    T* channel(std::size_t k) { return data.data() + k * plane(); }
    const T* channel(std::size_t k) const { return data.data() + k * plane(); }

    bool same_shape(const Tensor& o) const noexcept { return c == o.c && h == o.h && w == o.w; }
    bool operator==(const Tensor&) const = default;
};

template <class T>
inline void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ArgumentError("tensor: shape mismatch in add");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

enum class ParamKind { weight, bias, norm_gain, norm_bias, offset_weight, offset_bias, pos_embed };

struct ParamInfo {
    std::string name;
    std::vector<std::size_t> shape;
    ParamKind kind = ParamKind::weight;
    std::size_t fan_in = 1;

    std::size_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }
};

// Learnable parameters in declaration order.
template <class T>
struct ParamStore {
    std::vector<ParamInfo> info;
    std::vector<std::vector<T>> values;
    std::vector<bool> trainable;

    std::size_t add(std::string name, std::vector<std::size_t> shape, ParamKind kind, std::size_t fan_in = 1) {
        ParamInfo pi{std::move(name), std::move(shape), kind, fan_in};
        values.emplace_back(pi.numel(), T(0));
        info.push_back(std::move(pi));
        trainable.push_back(true);
        return info.size() - 1;
    }

    std::size_t size() const noexcept { return info.size(); }
    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }
    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < info.size(); ++i)
            if (info[i].name == name) return i;
        throw ArgumentError("params: no parameter named " + name);
    }
    const T* ptr(std::size_t i) const { return values[i].data(); }
};

// Gradient buffers mirroring a ParamStore.
template <class T>
struct Grads {
    std::vector<std::vector<T>> values;

    Grads() = default;
    template <class U>
    explicit Grads(const ParamStore<U>& p) {
        for (const auto& v : p.values) values.emplace_back(v.size(), T(0));
    }
    void zero() {
        for (auto& v : values) std::fill(v.begin(), v.end(), T(0));
    }
    void scale(T s) {
        for (auto& v : values)
            for (auto& x : v) x *= s;
    }
    T* ptr(std::size_t i) { return values[i].data(); }
};

} // namespace sslpdl::nn
