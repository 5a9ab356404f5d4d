#pragma once

#include <Eigen/Dense>

#include "epm/error.hpp"

namespace epm::optim {

/// Low-rank update factors for a d x k projection: B is d x r, A is r x k.
struct LoraFactors {
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
    double alpha = 1.0;

    Eigen::Index rank() const { return a.rows(); }
};

/// (alpha / r) * B * A
inline Eigen::MatrixXd lora_delta(const LoraFactors& f)
{
    if (f.rank() < 1) throw shape_error("LoRA rank must be at least 1");
    if (f.b.cols() != f.rank()) throw shape_error("B must have r columns");
    return (f.alpha / static_cast<double>(f.rank())) * (f.b * f.a);
}

/// W' = W + (alpha / r) * B * A
inline Eigen::MatrixXd lora_apply(const Eigen::MatrixXd& w, const LoraFactors& f)
{
    if (f.b.rows() != w.rows() || f.a.cols() != w.cols())
        throw shape_error("LoRA factors do not conform to a " + std::to_string(w.rows()) + "x" +
                          std::to_string(w.cols()) + " weight");
    return w + lora_delta(f);
}

}  // namespace epm::optim
