#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepg/error.hpp"

namespace sepg {

std::string shape_str(const std::vector<int64_t>& shape);

// Dense real-valued array with an explicit shape. Feature maps are rank 4
// (batch, channels, height, width), token matrices rank 3 (batch, tokens,
// channels); intermediate views may take any rank up to 6. Values are stored
// contiguously in row-major order. Instances are immutable once handed to the
// graph; mutation is reserved for construction and optimizer updates.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor scalar(double v);

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const;
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Row-major flat index helpers for the common ranks.
    int64_t index2(int64_t i, int64_t j) const { return i * shape_[1] + j; }
    int64_t index3(int64_t i, int64_t j, int64_t k) const {
        return (i * shape_[1] + j) * shape_[2] + k;
    }
    int64_t index4(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }
    double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(index2(i, j))]; }
    double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(index2(i, j))]; }
    double& at3(int64_t i, int64_t j, int64_t k) { return data_[static_cast<size_t>(index3(i, j, k))]; }
    double at3(int64_t i, int64_t j, int64_t k) const { return data_[static_cast<size_t>(index3(i, j, k))]; }
    double& at4(int64_t i, int64_t j, int64_t k, int64_t l) { return data_[static_cast<size_t>(index4(i, j, k, l))]; }
    double at4(int64_t i, int64_t j, int64_t k, int64_t l) const { return data_[static_cast<size_t>(index4(i, j, k, l))]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    double item() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

} // namespace sepg
