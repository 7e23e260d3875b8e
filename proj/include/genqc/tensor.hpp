#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "genqc/rng.hpp"

namespace genqc {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Dense row-major N-d tensor of doubles. Data is shared between copies;
/// the convention throughout is that a tensor is filled once on creation
/// and treated as immutable afterwards, so sharing is safe.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(compute_numel(shape_), 0.0)) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.data()) x = stddev * rng.normal();
        return t;
    }

    static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values) {
        if (compute_numel(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("tensor shape/value count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    bool empty() const { return !data_; }

    std::vector<double>& data() { return *data_; }
    const std::vector<double>& data() const { return *data_; }
    double* ptr() { return data_->data(); }
    const double* ptr() const { return data_->data(); }

    double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return (*data_)[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(int64_t i, int64_t j) const { return (*data_)[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return (*data_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return (*data_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    /// Deep copy with its own storage.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    /// Same storage, new shape (numel must match).
    Tensor reshaped(std::vector<int64_t> shape) const {
        if (compute_numel(shape) != numel()) throw std::invalid_argument("reshape numel mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    /// View the tensor as a (rows, cols) row-major matrix.
    MatMap mat(int64_t rows, int64_t cols) {
        assert(rows * cols == numel());
        return MatMap(ptr(), rows, cols);
    }
    ConstMatMap mat(int64_t rows, int64_t cols) const {
        assert(rows * cols == numel());
        return ConstMatMap(ptr(), rows, cols);
    }

    /// 2-d tensors as matrices; 3-d (a,b,c) flattened to (a*b, c).
    MatMap mat2d() { return mat(numel() / last_dim(), last_dim()); }
    ConstMatMap mat2d() const { return mat(numel() / last_dim(), last_dim()); }

    VecMap vec() { return VecMap(ptr(), numel()); }
    ConstVecMap vec() const { return ConstVecMap(ptr(), numel()); }

    int64_t last_dim() const { return shape_.back(); }

    static int64_t compute_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t s : shape) {
            if (s < 0) throw std::invalid_argument("negative tensor dimension");
            n *= s;
        }
        return n;
    }

  private:
    std::vector<int64_t> shape_;
    std::shared_ptr<std::vector<double>> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace genqc
