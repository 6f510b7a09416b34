#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace concrete {

/// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Tensor: data size does not match shape");
        }
    }

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(1, n, std::move(v));
    }
    static Tensor row(std::initializer_list<double> v) { return row(std::vector<double>(v)); }
    static Tensor column(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(n, 1, std::move(v));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    const std::vector<double>& vector() const noexcept { return data_; }

    double item() const {
        if (data_.size() != 1) {
            throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        }
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_string() const {
        return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace concrete
