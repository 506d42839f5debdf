// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace akt::num {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. Vectors are 1 x n (rows) or n x 1
// (columns); scalars are 1 x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row(std::span<const double> values);
    static Tensor column(std::span<const double> values);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> row_view(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double item() const;
    bool all_finite() const noexcept;
    void fill(double v);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_str(const Tensor& t);

// out = a * b (a: m x k, b: k x n); accumulates when `accumulate` is set.
void gemm(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
// out = a * b^T (a: m x k, b: n x k).
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
// out = a^T * b (a: k x m, b: k x n).
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);

}  // namespace akt::num
