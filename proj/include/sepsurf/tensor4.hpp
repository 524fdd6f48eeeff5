#pragma once

#include "sepsurf/errors.hpp"

#include <cstddef>
#include <vector>

namespace sepsurf {

// Dense rank-4 tensor with row-major layout; used for 4D smoother output and
// full (non-separable) covariances C[i,j,i',j'].
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int n1, int n2, int n3, int n4)
        : n1_(n1), n2_(n2), n3_(n3), n4_(n4),
          data_(static_cast<std::size_t>(n1) * n2 * n3 * n4, 0.0) {
        if (n1 < 1 || n2 < 1 || n3 < 1 || n4 < 1) throw DataError("tensor dims must be positive");
    }

    int n1() const { return n1_; }
    int n2() const { return n2_; }
    int n3() const { return n3_; }
    int n4() const { return n4_; }

    double& operator()(int i, int j, int k, int l) { return data_[index(i, j, k, l)]; }
    double operator()(int i, int j, int k, int l) const { return data_[index(i, j, k, l)]; }

    const std::vector<double>& flat() const { return data_; }
    std::vector<double>& flat() { return data_; }

    bool same_shape(const Tensor4& o) const {
        return n1_ == o.n1_ && n2_ == o.n2_ && n3_ == o.n3_ && n4_ == o.n4_;
    }

private:
    std::size_t index(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * n2_ + j) * n3_ + k) * n4_ + l;
    }

    int n1_ = 0, n2_ = 0, n3_ = 0, n4_ = 0;
    std::vector<double> data_;
};

// A full covariance is a d1 x d2 x d1 x d2 tensor, symmetric under
// (i,j) <-> (i',j').
using FullCovariance = Tensor4;

} // namespace sepsurf
