#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cureg/geometry.hpp"

namespace cureg {

/// Scalar grid with physical geometry. Data is z-major: index = (z * ny + y) * nx + x.
template <int Rank>
struct Image {
    GridSpec spec;
    std::vector<float> data;

    Image() { spec.rank = Rank; }
    explicit Image(GridSpec s, float fill = 0.0f) : spec(std::move(s)), data(spec.size(), fill) {
        if (spec.rank != Rank) throw std::invalid_argument("Image: grid rank mismatch");
    }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z = 0) const {
        return (z * spec.ny() + y) * spec.nx() + x;
    }
    float& at(std::size_t x, std::size_t y, std::size_t z = 0) { return data[index(x, y, z)]; }
    float at(std::size_t x, std::size_t y, std::size_t z = 0) const { return data[index(x, y, z)]; }

    void validate() const {
        spec.validate();
        if (spec.rank != Rank) throw std::invalid_argument("Image: grid rank mismatch");
        if (data.size() != spec.size())
            throw std::invalid_argument("Image: data length " + std::to_string(data.size()) +
                                        " does not match grid size " + std::to_string(spec.size()));
        for (float v : data)
            if (!std::isfinite(v)) throw std::invalid_argument("Image: non-finite value");
    }
};

using Volume = Image<3>;
using Frame = Image<2>;

}  // namespace cureg
