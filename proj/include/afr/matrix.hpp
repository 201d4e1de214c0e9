#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "afr/error.hpp"

namespace afr {

// Dense row-major matrix of doubles. Rows are contiguous so per-example
// loops can take a span over a row.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw InvalidInput("matrix data length does not match rows x cols");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out = a * b^T, a is n x k, b is m x k, result n x m.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw InvalidInput("matmul_nt: inner dimensions do not match");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto bj = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += ai[k] * bj[k];
            out(i, j) = acc;
        }
    }
    return out;
}

// out = a^T * b, a is n x k, b is n x m, result k x m.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw InvalidInput("matmul_tn: inner dimensions do not match");
    Matrix out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        auto bi = b.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = ai[k];
            if (aik == 0.0) continue;
            auto ok = out.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ok[j] += aik * bi[j];
        }
    }
    return out;
}

// out = a * b, a is n x k, b is k x m.
inline Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw InvalidInput("matmul_nn: inner dimensions do not match");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        auto oi = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = ai[k];
            if (aik == 0.0) continue;
            auto bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
        }
    }
    return out;
}

// out = x * w^T + bias broadcast over rows; x is n x d, w is c x d, bias c.
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
    if (bias.size() != w.rows())
        throw InvalidInput("affine: bias length does not match output dimension");
    Matrix out = matmul_nt(x, w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto oi = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) oi[j] += bias[j];
    }
    return out;
}

}  // namespace afr
