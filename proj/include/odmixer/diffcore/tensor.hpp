#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odmixer/errors.hpp"

namespace odmixer::diffcore {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

/// Dense row-major array. Rank 0 (empty shape) holds a single scalar.
template <typename T>
class Tensor {
public:
    Tensor() : data_(1, T{}) {}

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape))
    {
        for (auto s : shape_)
            if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        for (auto s : shape_)
            if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
        if (shape_size(shape_) != data_.size())
            throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                                 " values");
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx)
    {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    const T& at(Idx... idx) const
    {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    T item() const
    {
        if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const
    {
        if (shape_size(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const
    {
        if (idx.size() != shape_.size())
            throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor " + shape_str(shape_));
        std::size_t off = 0;
        std::size_t axis = 0;
        for (auto i : idx) {
            if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_str(shape_));
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Learnable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { std::fill(grad.storage().begin(), grad.storage().end(), T{}); }
};

/// Named parameters, iterated in sorted-name order.
template <typename T>
class ParameterSet {
public:
    Parameter<T>& add(const std::string& name, Tensor<T> value)
    {
        auto [it, inserted] = params_.try_emplace(name, name, std::move(value));
        if (!inserted) throw StateError("duplicate parameter name: " + name);
        return it->second;
    }

    Parameter<T>& at(const std::string& name)
    {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    const Parameter<T>& at(const std::string& name) const
    {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grad()
    {
        for (auto& [_, p] : params_) p.zero_grad();
    }

    std::size_t count() const
    {
        std::size_t total = 0;
        for (const auto& [_, p] : params_) total += p.value.size();
        return total;
    }

    std::size_t size() const noexcept { return params_.size(); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    template <typename U>
    ParameterSet<U> cast() const
    {
        ParameterSet<U> out;
        for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
        return out;
    }

private:
    std::map<std::string, Parameter<T>> params_;
};

} // namespace odmixer::diffcore
