#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fkgen/errors.hpp"

namespace fkgen {

// Small dense row-major matrix. Oracle state spaces are tiny (d <= ~32), so
// a plain vector plus index arithmetic is all we need.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, fill) {}

    static Mat identity(int d) {
        Mat m(d, d);
        for (int i = 0; i < d; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

    std::span<const double> row(int i) const {
        return {a_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)};
    }

    Mat operator*(const Mat& rhs) const {
        Mat out(rows_, rhs.cols_);
        for (int i = 0; i < rows_; ++i) {
            for (int k = 0; k < cols_; ++k) {
                const double a = (*this)(i, k);
                if (a == 0.0) continue;
                for (int j = 0; j < rhs.cols_; ++j) out(i, j) += a * rhs(k, j);
            }
        }
        return out;
    }

    // M f  (action on a column vector / function)
    std::vector<double> apply(std::span<const double> f) const {
        std::vector<double> out(rows_, 0.0);
        for (int i = 0; i < rows_; ++i) {
            double s = 0.0;
            for (int j = 0; j < cols_; ++j) s += (*this)(i, j) * f[j];
            out[i] = s;
        }
        return out;
    }

    // mu M  (action on a row vector / measure)
    std::vector<double> apply_left(std::span<const double> mu) const {
        std::vector<double> out(cols_, 0.0);
        for (int i = 0; i < rows_; ++i) {
            const double m = mu[i];
            if (m == 0.0) continue;
            for (int j = 0; j < cols_; ++j) out[j] += m * (*this)(i, j);
        }
        return out;
    }

    std::vector<double> row_sums() const {
        std::vector<double> out(rows_, 0.0);
        for (int i = 0; i < rows_; ++i) {
            double s = 0.0;
            for (int j = 0; j < cols_; ++j) s += (*this)(i, j);
            out[i] = s;
        }
        return out;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> a_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double vec_sum(std::span<const double> v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s;
}

inline void normalize_in_place(std::vector<double>& v) {
    const double s = vec_sum(v);
    if (s <= 0.0) throw ModelContractError("cannot normalize a vector with non-positive mass");
    for (double& x : v) x /= s;
}

// Dobrushin contraction coefficient of a row-stochastic matrix: half the
// maximum L1 distance between rows (equivalent to the osc-sup definition on
// finite spaces).
inline double dobrushin_beta(const Mat& m) {
    double beta = 0.0;
    for (int i = 0; i < m.rows(); ++i) {
        for (int k = i + 1; k < m.rows(); ++k) {
            double l1 = 0.0;
            for (int j = 0; j < m.cols(); ++j) l1 += std::abs(m(i, j) - m(k, j));
            beta = std::max(beta, 0.5 * l1);
        }
    }
    return beta;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

}  // namespace fkgen
