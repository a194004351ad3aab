// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gaitssl/autodiff.hpp"

namespace gaitssl {

template <typename T>
struct NamedArray {
    std::string name;
    ad::Shape shape;
    std::vector<T> values;

    std::size_t size() const noexcept { return values.size(); }
    bool operator==(const NamedArray&) const = default;
};

/// Ordered collection of named arrays. Iteration order is insertion order and
/// is part of every serialized format.
template <typename T>
class ParamSet {
public:
    NamedArray<T>& add(std::string name, ad::Shape shape, std::vector<T> values);
    NamedArray<T>& add_zeros(std::string name, ad::Shape shape);

    bool contains(std::string_view name) const;
    NamedArray<T>& at(std::string_view name);
    const NamedArray<T>& at(std::string_view name) const;

    std::vector<NamedArray<T>>& arrays() noexcept { return arrays_; }
    const std::vector<NamedArray<T>>& arrays() const noexcept { return arrays_; }
    std::size_t count() const noexcept { return arrays_.size(); }
    std::size_t total_size() const;

    /// Same names and shapes, zero values.
    ParamSet zeros_like() const;

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& a : arrays_) {
            out.add(a.name, a.shape, std::vector<U>(a.values.begin(), a.values.end()));
        }
        return out;
    }

    bool operator==(const ParamSet& other) const { return arrays_ == other.arrays_; }

private:
    std::vector<NamedArray<T>> arrays_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Name of the first array holding a non-finite value, or empty.
template <typename T>
std::string first_non_finite(const ParamSet<T>& params);

}  // namespace gaitssl
