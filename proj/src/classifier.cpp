#include "qdgs/classifier.hpp"

#include "qdgs/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace qdgs {

Vector classifier_input(const ImageBuffer& image)
{
    const ImageBuffer small = (image.width == kClassifierSide && image.height == kClassifierSide)
                                  ? image
                                  : resize_box(image, kClassifierSide, kClassifierSide);
    Vector x(kClassifierInput);
    for (int i = 0; i < kClassifierInput; ++i)
        x[i] = 1.0 - small.rgb[static_cast<std::size_t>(i)];
    return x;
}

Classifier::Classifier(int inputs, int hidden, int classes, std::uint64_t seed)
{
    if (inputs < 1 || hidden < 1 || classes < 2)
        throw ConfigError("classifier needs inputs, hidden units and at least two classes");
    Rng rng(seed);
    std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / inputs));
    std::normal_distribution<double> n2(0.0, std::sqrt(2.0 / hidden));
    W1_ = Matrix(hidden, inputs);
    for (Eigen::Index c = 0; c < W1_.cols(); ++c)
        for (Eigen::Index r = 0; r < W1_.rows(); ++r)
            W1_(r, c) = n1(rng);
    W2_ = Matrix(classes, hidden);
    for (Eigen::Index c = 0; c < W2_.cols(); ++c)
        for (Eigen::Index r = 0; r < W2_.rows(); ++r)
            W2_(r, c) = n2(rng);
    b1_ = Vector::Zero(hidden);
    b2_ = Vector::Zero(classes);
}

Matrix Classifier::logits(const Matrix& X) const
{
    if (X.rows() != W1_.cols())
        throw ConfigError("classifier input has " + std::to_string(X.rows()) + " features, expected "
                          + std::to_string(W1_.cols()));
    const Matrix H = ((W1_ * X).colwise() + b1_).cwiseMax(0.0);
    return (W2_ * H).colwise() + b2_;
}

std::vector<int> Classifier::predict(const Matrix& X) const
{
    const Matrix Z = logits(X);
    std::vector<int> out(static_cast<std::size_t>(Z.cols()));
    for (Eigen::Index c = 0; c < Z.cols(); ++c) {
        Eigen::Index best = 0;
        Z.col(c).maxCoeff(&best);
        out[static_cast<std::size_t>(c)] = static_cast<int>(best);
    }
    return out;
}

namespace {

// Column-wise softmax probabilities and the mean cross-entropy.
double softmax_xent(const Matrix& Z, std::span<const int> labels, Matrix& P)
{
    if (static_cast<std::size_t>(Z.cols()) != labels.size())
        throw ConfigError("one label per sample required");
    P.resize(Z.rows(), Z.cols());
    double total = 0.0;
    for (Eigen::Index c = 0; c < Z.cols(); ++c) {
        const int y = labels[static_cast<std::size_t>(c)];
        if (y < 0 || y >= Z.rows())
            throw ConfigError("label out of range");
        const double zmax = Z.col(c).maxCoeff();
        const Vector e = (Z.col(c).array() - zmax).exp();
        const double s = e.sum();
        P.col(c) = e / s;
        total += std::log(s) + zmax - Z(y, c);
    }
    return Z.cols() > 0 ? total / static_cast<double>(Z.cols()) : 0.0;
}

} // namespace

double Classifier::loss(const Matrix& X, std::span<const int> labels) const
{
    Matrix P;
    return softmax_xent(logits(X), labels, P);
}

double Classifier::backward(const Matrix& X, std::span<const int> labels, Gradients& g) const
{
    if (X.rows() != W1_.cols())
        throw ConfigError("classifier input dimension mismatch");
    const Matrix H = ((W1_ * X).colwise() + b1_).cwiseMax(0.0);
    const Matrix Z = (W2_ * H).colwise() + b2_;
    Matrix P;
    const double value = softmax_xent(Z, labels, P);

    const double inv_b = X.cols() > 0 ? 1.0 / static_cast<double>(X.cols()) : 0.0;
    Matrix dZ = P;
    for (Eigen::Index c = 0; c < dZ.cols(); ++c)
        dZ(labels[static_cast<std::size_t>(c)], c) -= 1.0;
    dZ *= inv_b;

    g.W2 = dZ * H.transpose();
    g.b2 = dZ.rowwise().sum();
    const Matrix dH = (W2_.transpose() * dZ).cwiseProduct((H.array() > 0.0).cast<double>().matrix());
    g.W1 = dH * X.transpose();
    g.b1 = dH.rowwise().sum();
    return value;
}

void Classifier::apply(const Gradients& g, double lr)
{
    if (lr == 0.0)
        return;
    W1_ -= lr * g.W1;
    b1_ -= lr * g.b1;
    W2_ -= lr * g.W2;
    b2_ -= lr * g.b2;
}

bool Classifier::operator==(const Classifier& o) const
{
    return W1_ == o.W1_ && W2_ == o.W2_ && b1_ == o.b1_ && b2_ == o.b2_;
}

namespace {

nlohmann::json matrix_json(const Matrix& m)
{
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
        throw ConfigError("model matrix has inconsistent shape");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return m;
}

} // namespace

nlohmann::json Classifier::to_json() const
{
    return {{"W1", matrix_json(W1_)}, {"b1", matrix_json(b1_)}, {"W2", matrix_json(W2_)}, {"b2", matrix_json(b2_)}};
}

Classifier Classifier::from_json(const nlohmann::json& j)
{
    Classifier c;
    try {
        c.W1_ = matrix_from_json(j.at("W1"));
        c.b1_ = matrix_from_json(j.at("b1"));
        c.W2_ = matrix_from_json(j.at("W2"));
        c.b2_ = matrix_from_json(j.at("b2"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model: ") + e.what());
    }
    if (c.b1_.size() != c.W1_.rows() || c.W2_.cols() != c.W1_.rows() || c.b2_.size() != c.W2_.rows())
        throw ConfigError("model layer shapes do not chain");
    return c;
}

} // namespace qdgs
