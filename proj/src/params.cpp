// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/params.hpp"

#include <cmath>
#include <stdexcept>

namespace gaitssl {

template <typename T>
NamedArray<T>& ParamSet<T>::add(std::string name, ad::Shape shape, std::vector<T> values) {
    if (ad::numel(shape) != values.size()) {
        throw std::invalid_argument("array '" + name + "': " + std::to_string(values.size()) +
                                    " values for shape " + ad::shape_string(shape));
    }
    if (index_.count(name)) {
        throw std::invalid_argument("duplicate array name '" + name + "'");
    }
    index_.emplace(name, arrays_.size());
    arrays_.push_back({std::move(name), std::move(shape), std::move(values)});
    return arrays_.back();
}

template <typename T>
NamedArray<T>& ParamSet<T>::add_zeros(std::string name, ad::Shape shape) {
    const auto n = ad::numel(shape);
    return add(std::move(name), std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
    return index_.find(name) != index_.end();
}

template <typename T>
NamedArray<T>& ParamSet<T>::at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no array named '" + std::string(name) + "'");
    return arrays_[it->second];
}

template <typename T>
const NamedArray<T>& ParamSet<T>::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no array named '" + std::string(name) + "'");
    return arrays_[it->second];
}

template <typename T>
std::size_t ParamSet<T>::total_size() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.size();
    return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
    ParamSet out;
    for (const auto& a : arrays_) out.add_zeros(a.name, a.shape);
    return out;
}

template <typename T>
std::string first_non_finite(const ParamSet<T>& params) {
    for (const auto& a : params.arrays()) {
        for (T v : a.values) {
            if (!std::isfinite(v)) return a.name;
        }
    }
    return {};
}

template class ParamSet<float>;
template class ParamSet<double>;
template std::string first_non_finite(const ParamSet<float>&);
template std::string first_non_finite(const ParamSet<double>&);

}  // namespace gaitssl
