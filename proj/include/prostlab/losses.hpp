#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "prostlab/tensor.hpp"

namespace prostlab {

inline constexpr double kLossEps = 1e-7;  // clamp for log arguments

// -t*log(y) - (1-t)*log(1-y) with y clamped to [eps, 1-eps].
template <typename T>
double bce(T y, T t) {
    const double yc = std::clamp(static_cast<double>(y), kLossEps, 1.0 - kLossEps);
    const double td = static_cast<double>(t);
    return -td * std::log(yc) - (1.0 - td) * std::log(1.0 - yc);
}

template <typename T>
double bce_mean(const TensorND<T>& y, const TensorND<T>& t) {
    if (!y.same_dims(t)) throw std::invalid_argument("bce_mean: extent mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += bce(y[i], t[i]);
    return acc / static_cast<double>(y.size());
}

// Cross-entropy from logits with max subtraction:
// -z[t] + log(sum_j exp(z[j])).
template <typename T>
double ce(const T* logits, std::size_t k, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= k)
        throw std::invalid_argument("ce: target out of range");
    double mx = logits[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits[j]) - mx);
    return -(static_cast<double>(logits[static_cast<std::size_t>(target)]) - mx) + std::log(denom);
}

// Batched mean over rows of (N, K) logits.
template <typename T>
double ce_mean(const TensorND<T>& logits, const std::vector<int>& targets) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (targets.size() != n) throw std::invalid_argument("ce_mean: target count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += ce(logits.data() + i * k, k, targets[i]);
    return acc / static_cast<double>(n);
}

// (2 * sum Y.M) / (sum Y^2 + sum M^2); both-empty defined as 1.
template <typename T, typename U>
double soft_dice(const TensorND<T>& y, const TensorND<U>& m) {
    if (y.size() != m.size()) throw std::invalid_argument("soft_dice: extent mismatch");
    double inter = 0.0, denom = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double yi = static_cast<double>(y[i]), mi = static_cast<double>(m[i]);
        inter += yi * mi;
        denom += yi * yi + mi * mi;
    }
    if (denom == 0.0) return 1.0;
    return 2.0 * inter / denom;
}

template <typename T, typename U>
double dice_loss(const TensorND<T>& y, const TensorND<U>& m) {
    return 1.0 - soft_dice(y, m);
}

// 1.5 * voxelwise mean BCE + dice loss.
template <typename T, typename U>
double combined_loss(const TensorND<T>& y, const TensorND<U>& m) {
    if (y.size() != m.size()) throw std::invalid_argument("combined_loss: extent mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += bce(y[i], static_cast<double>(m[i]));
    return 1.5 * acc / static_cast<double>(y.size()) + dice_loss(y, m);
}

// 2TP / (2TP + FN + FP) on binary masks; the empty/empty case is 1.
double binary_dice(const TensorU8& pred, const TensorU8& target);

// ---------------------------------------------------------------------------
// Gradients (w.r.t. probabilities y unless stated otherwise). Each returns
// the loss value and accumulates nothing: dy is overwritten.
// ---------------------------------------------------------------------------

template <typename T>
double bce_mean_grad(const TensorND<T>& y, const TensorND<T>& t, TensorND<T>& dy) {
    dy = TensorND<T>(y.dims());
    const double inv_n = 1.0 / static_cast<double>(y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double yc = std::clamp(static_cast<double>(y[i]), kLossEps, 1.0 - kLossEps);
        const double td = static_cast<double>(t[i]);
        acc += -td * std::log(yc) - (1.0 - td) * std::log(1.0 - yc);
        dy[i] = static_cast<T>((-td / yc + (1.0 - td) / (1.0 - yc)) * inv_n);
    }
    return acc * inv_n;
}

// Loss and gradient w.r.t. the logits of (N, K) rows: softmax - onehot.
template <typename T>
double ce_mean_grad(const TensorND<T>& logits, const std::vector<int>& targets,
                    TensorND<T>& dlogits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    dlogits = TensorND<T>(logits.dims());
    const double inv_n = 1.0 / static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* z = logits.data() + i * k;
        double mx = z[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - mx);
        acc += -(static_cast<double>(z[static_cast<std::size_t>(targets[i])]) - mx) + std::log(denom);
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(z[j]) - mx) / denom;
            const double onehot = static_cast<std::size_t>(targets[i]) == j ? 1.0 : 0.0;
            dlogits.data()[i * k + j] = static_cast<T>((p - onehot) * inv_n);
        }
    }
    return acc * inv_n;
}

template <typename T, typename U>
double dice_loss_grad(const TensorND<T>& y, const TensorND<U>& m, TensorND<T>& dy) {
    if (y.size() != m.size()) throw std::invalid_argument("dice_loss_grad: extent mismatch");
    dy = TensorND<T>(y.dims());
    double inter = 0.0, denom = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double yi = static_cast<double>(y[i]), mi = static_cast<double>(m[i]);
        inter += yi * mi;
        denom += yi * yi + mi * mi;
    }
    if (denom == 0.0) {
        dy.fill(T{0});
        return 0.0;
    }
    // d(1 - 2A/B)/dy_i = -2 (m_i B - 2 A y_i) / B^2
    const double b2 = denom * denom;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double yi = static_cast<double>(y[i]), mi = static_cast<double>(m[i]);
        dy[i] = static_cast<T>(-2.0 * (mi * denom - 2.0 * inter * yi) / b2);
    }
    return 1.0 - 2.0 * inter / denom;
}

template <typename T, typename U>
double combined_loss_grad(const TensorND<T>& y, const TensorND<U>& m, TensorND<T>& dy) {
    TensorND<T> d_dice;
    const double dice_part = dice_loss_grad(y, m, d_dice);
    dy = TensorND<T>(y.dims());
    const double inv_n = 1.0 / static_cast<double>(y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double yc = std::clamp(static_cast<double>(y[i]), kLossEps, 1.0 - kLossEps);
        const double td = static_cast<double>(m[i]);
        acc += -td * std::log(yc) - (1.0 - td) * std::log(1.0 - yc);
        dy[i] = static_cast<T>(1.5 * (-td / yc + (1.0 - td) / (1.0 - yc)) * inv_n + d_dice[i]);
    }
    return 1.5 * acc * inv_n + dice_part;
}

}  // namespace prostlab
