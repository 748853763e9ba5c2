#pragma once

#include "qdgs/image.hpp"
#include "qdgs/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <span>

namespace qdgs {

inline constexpr int kClassifierSide = 32;
inline constexpr int kClassifierInput = kClassifierSide * kClassifierSide * 3;

/// Resizes to 32×32 and flattens interleaved RGB as ink, 1 − value, so the white background is zero.
Vector classifier_input(const ImageBuffer& image);

/// Two-layer perceptron: input → hidden (ReLU) → class logits. Columns of a
/// batch matrix are samples.
class Classifier {
public:
    struct Gradients {
        Matrix W1, W2;
        Vector b1, b2;
    };

    Classifier() = default;
    /// He-normal weights, zero biases.
    Classifier(int inputs, int hidden, int classes, std::uint64_t seed);

    int inputs() const { return static_cast<int>(W1_.cols()); }
    int hidden() const { return static_cast<int>(W1_.rows()); }
    int classes() const { return static_cast<int>(W2_.rows()); }

    Matrix logits(const Matrix& X) const;
    std::vector<int> predict(const Matrix& X) const;
    /// Mean softmax cross-entropy over the columns of X.
    double loss(const Matrix& X, std::span<const int> labels) const;
    /// Loss and its gradient with respect to every parameter.
    double backward(const Matrix& X, std::span<const int> labels, Gradients& grads) const;
    void apply(const Gradients& grads, double lr);

    const Matrix& W1() const { return W1_; }
    const Matrix& W2() const { return W2_; }
    const Vector& b1() const { return b1_; }
    const Vector& b2() const { return b2_; }
    Matrix& W1() { return W1_; }
    Matrix& W2() { return W2_; }
    Vector& b1() { return b1_; }
    Vector& b2() { return b2_; }

    bool operator==(const Classifier& o) const;

    nlohmann::json to_json() const;
    static Classifier from_json(const nlohmann::json& j);

private:
    Matrix W1_, W2_;
    Vector b1_, b2_;
};

} // namespace qdgs
