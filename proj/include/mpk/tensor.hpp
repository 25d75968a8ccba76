#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mpk/errors.hpp"
#include "mpk/types.hpp"

namespace mpk {

// Dense f64 tensor, row-major. Used for heatmap stacks, logit blocks and
// loss gradients, and as the in-memory form of the MPT1 file format.
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> d) : dims(std::move(d)) {
        data.assign(element_count(), 0.0);
    }

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    std::size_t rank() const { return dims.size(); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    double& at(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * dims[1] + j]; }

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * dims[1] + j) * dims[2] + k];
    }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    static Tensor from_matrix(const MatX& m);
    static Tensor from_points(const Points3& p);
    static Tensor from_points(const Points2& p);
    static Tensor from_vector(const VecX& v);
    MatX to_matrix() const;    // rank-2 only
    VecX to_vector() const;    // rank-1 only
    Points3 to_points3() const;
};

// MPT1 tensor file format: magic "MPT1", u32 rank, u32 dims[rank],
// f64 payload row-major, all little-endian.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

}  // namespace mpk
