#pragma once

#include "errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace ssdg {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<Mat<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

// Learning-rate group of a parameter: the encoder and the classifier head are
// optimized with separate base learning rates.
enum class ParamGroup { backbone, classifier };

template <typename T>
struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
    ParamGroup group = ParamGroup::backbone;
    bool weight_decay = true;

    std::size_t numel() const { return values.size(); }

    // View as rows x cols where rows = shape[0] and cols = product of the rest.
    MatMap<T> matrix() {
        return MatMap<T>(values.data(), shape.front(), static_cast<Eigen::Index>(values.size()) / shape.front());
    }
    ConstMatMap<T> matrix() const {
        return ConstMatMap<T>(values.data(), shape.front(), static_cast<Eigen::Index>(values.size()) / shape.front());
    }
};

// Ordered collection of named dense arrays. Models, gradients, optimizer
// moments and EMA teachers all share this layout so element-wise updates are
// plain index loops.
template <typename T>
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<int> shape, ParamGroup group, bool weight_decay, T fill = T(0)) {
        const auto count = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
        entries_.push_back(NamedTensor<T>{std::move(name), std::move(shape), std::vector<T>(count, fill), group,
                                          weight_decay});
        return entries_.size() - 1;
    }

    std::size_t size() const { return entries_.size(); }
    NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
    const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return i;
        throw ModelError("unknown parameter " + name);
    }

    // Same names and shapes, values reset to zero.
    ParamSet zeros_like() const {
        ParamSet out = *this;
        for (auto& e : out.entries_) std::fill(e.values.begin(), e.values.end(), T(0));
        return out;
    }

    void set_zero() {
        for (auto& e : entries_) std::fill(e.values.begin(), e.values.end(), T(0));
    }

    bool same_layout(const ParamSet& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape)
                return false;
        return true;
    }

    std::size_t total_numel() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.numel();
        return n;
    }

    // Order-sensitive FNV-1a over the raw bytes of every value; used as a
    // cheap checksum in determinism tests and checkpoint metadata.
    std::uint64_t checksum() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& e : entries_) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(e.values.data());
            for (std::size_t i = 0; i < e.values.size() * sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    bool operator==(const ParamSet& other) const {
        if (!same_layout(other)) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].values != other.entries_[i].values) return false;
        return true;
    }

private:
    std::vector<NamedTensor<T>> entries_;
};

} // namespace ssdg
