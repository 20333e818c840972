#pragma once

#include "aifcmab/common.hpp"
#include "aifcmab/rng.hpp"

#include <Eigen/Cholesky>

#include <memory>
#include <utility>
#include <vector>

namespace aifcmab {

// Per-option feature vector x in R^C (PCA-reduced context).
struct ContextVector {
    VectorXd values;

    explicit ContextVector(VectorXd v) : values(std::move(v)) {
        require(values.size() >= 1, "ContextVector: dimension must be >= 1");
        require(all_finite(values), "ContextVector: entries must be finite");
    }

    int dim() const { return static_cast<int>(values.size()); }
};

// Categorical outcome label, one-based: index in {1, ..., F}.
// One-based values appear in data files and user-facing configs; use
// array_index() at array boundaries.
struct OutcomeLabel {
    int index;

    explicit OutcomeLabel(int idx) : index(idx) {
        require(idx >= 1, detail::cat("OutcomeLabel: index must be >= 1, got ", idx));
    }

    int array_index() const { return index - 1; }
    friend bool operator==(OutcomeLabel a, OutcomeLabel b) { return a.index == b.index; }
    friend bool operator!=(OutcomeLabel a, OutcomeLabel b) { return a.index != b.index; }
};

// Linear parameter block of one option: per-class weight rows plus biases.
// Flattened layout is class-major, weights before bias within a class:
//   [w_1 (C entries), b_1, w_2, b_2, ..., w_F, b_F],  d = (C+1)*F.
// Every module uses this single layout.
class SoftmaxParams {
public:
    SoftmaxParams(MatrixXd weights, VectorXd biases)
        : weights_(std::move(weights)), biases_(std::move(biases)) {
        require(weights_.rows() == biases_.size(),
                detail::cat("SoftmaxParams: weights rows (", weights_.rows(),
                            ") must match biases length (", biases_.size(), ")"));
        require(weights_.rows() >= 1, "SoftmaxParams: need at least one class");
        require(weights_.cols() >= 1, "SoftmaxParams: need at least one context feature");
        require(all_finite(weights_) && all_finite(biases_),
                "SoftmaxParams: entries must be finite");
    }

    static SoftmaxParams zeros(int n_classes, int context_dim) {
        return SoftmaxParams(MatrixXd::Zero(n_classes, context_dim), VectorXd::Zero(n_classes));
    }

    int n_classes() const { return static_cast<int>(weights_.rows()); }
    int context_dim() const { return static_cast<int>(weights_.cols()); }
    int flat_dim() const { return (context_dim() + 1) * n_classes(); }

    const MatrixXd& weights() const { return weights_; }
    const VectorXd& biases() const { return biases_; }

    VectorXd flatten() const {
        const int c = context_dim();
        VectorXd flat(flat_dim());
        for (int f = 0; f < n_classes(); ++f) {
            flat.segment(f * (c + 1), c) = weights_.row(f).transpose();
            flat[f * (c + 1) + c] = biases_[f];
        }
        return flat;
    }

    static SoftmaxParams unflatten(const VectorXd& flat, int n_classes, int context_dim) {
        require(flat.size() == static_cast<Eigen::Index>((context_dim + 1) * n_classes),
                detail::cat("SoftmaxParams::unflatten: flat length ", flat.size(),
                            " does not match (C+1)*F = ", (context_dim + 1) * n_classes));
        MatrixXd w(n_classes, context_dim);
        VectorXd b(n_classes);
        for (int f = 0; f < n_classes; ++f) {
            w.row(f) = flat.segment(f * (context_dim + 1), context_dim).transpose();
            b[f] = flat[f * (context_dim + 1) + context_dim];
        }
        return SoftmaxParams(std::move(w), std::move(b));
    }

private:
    MatrixXd weights_;  // F x C
    VectorXd biases_;   // F
};

// Strictly positive probability vector over the F outcome labels.
class PriorPreference {
public:
    explicit PriorPreference(VectorXd probs) : probs_(std::move(probs)) {
        require(probs_.size() >= 1, "PriorPreference: empty vector");
        require(probs_.minCoeff() > 0.0, "PriorPreference: entries must be strictly positive");
        require(std::abs(probs_.sum() - 1.0) <= 1e-9,
                detail::cat("PriorPreference: entries must sum to 1 within 1e-9, got ",
                            probs_.sum()));
    }

    // mass on the preferred label, (1 - mass)/(F - 1) on each other label.
    static PriorPreference concentrated(int n_labels, OutcomeLabel preferred, double mass) {
        require(n_labels >= 1, "PriorPreference: need at least one label");
        require(preferred.index <= n_labels, "PriorPreference: preferred label out of range");
        require(mass > 0.0 && mass < 1.0, "PriorPreference: mass must lie in (0,1)");
        require(n_labels > 1 || mass == 1.0, "PriorPreference: single label requires mass 1");
        VectorXd p = VectorXd::Constant(n_labels, (1.0 - mass) / (n_labels - 1));
        p[preferred.array_index()] = mass;
        return PriorPreference(std::move(p));
    }

    static PriorPreference uniform(int n_labels) {
        return PriorPreference(VectorXd::Constant(n_labels, 1.0 / n_labels));
    }

    const VectorXd& probs() const { return probs_; }
    int n_labels() const { return static_cast<int>(probs_.size()); }

private:
    VectorXd probs_;
};

// Gaussian over a flattened SoftmaxParams. Covariance is symmetrized on
// construction and must be positive definite (Cholesky is taken eagerly;
// the factor, log-determinant and inverse are cached for reuse).
class GaussianBelief {
public:
    GaussianBelief(VectorXd mean, MatrixXd covariance)
        : mean_(std::move(mean)), cov_(std::move(covariance)) {
        require(cov_.rows() == cov_.cols(),
                detail::cat("GaussianBelief: covariance must be square, got ", cov_.rows(), "x",
                            cov_.cols()));
        require(mean_.size() == cov_.rows(),
                detail::cat("GaussianBelief: mean length ", mean_.size(),
                            " does not match covariance dimension ", cov_.rows()));
        require(all_finite(mean_) && all_finite(cov_), "GaussianBelief: entries must be finite");
        cov_ = ((cov_ + cov_.transpose()) * 0.5).eval();
        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success)
            throw std::runtime_error(detail::cat(
                "GaussianBelief: covariance is not positive definite (dimension ", dim(), ")"));
        log_det_cov_ = 0.0;
        for (int i = 0; i < dim(); ++i)
            log_det_cov_ += 2.0 * std::log(llt_.matrixLLT()(i, i));
    }

    static GaussianBelief isotropic(VectorXd mean, double variance) {
        const Eigen::Index d = mean.size();
        require(variance > 0.0, "GaussianBelief: variance must be positive");
        return GaussianBelief(std::move(mean), MatrixXd::Identity(d, d) * variance);
    }

    int dim() const { return static_cast<int>(mean_.size()); }
    const VectorXd& mean() const { return mean_; }
    const MatrixXd& covariance() const { return cov_; }
    const Eigen::LLT<MatrixXd>& cov_llt() const { return llt_; }
    double log_det_cov() const { return log_det_cov_; }

    // Inverse covariance; computed on first use and cached. Materialization
    // is not synchronized: share a belief across threads only after priming
    // it (or avoid precision()) -- the simulation harness owns one belief
    // per run task, so this never races there.
    const MatrixXd& precision() const {
        if (!precision_) {
            precision_ = std::make_unique<MatrixXd>(
                llt_.solve(MatrixXd::Identity(dim(), dim())));
            *precision_ = ((*precision_ + precision_->transpose()) * 0.5).eval();
        }
        return *precision_;
    }

    // Normalized log N(theta; mean, cov).
    double log_density(const VectorXd& theta) const {
        require(theta.size() == mean_.size(),
                detail::cat("GaussianBelief::log_density: point dimension ", theta.size(),
                            " does not match belief dimension ", mean_.size()));
        const VectorXd diff = theta - mean_;
        const VectorXd w = llt_.matrixL().solve(diff);
        return -0.5 * (dim() * std::log(2.0 * std::numbers::pi) + log_det_cov_ + w.squaredNorm());
    }

    // mean + L * z with z standard normal; one draw per call.
    VectorXd sample(RngStream& rng) const {
        VectorXd z(dim());
        for (int i = 0; i < dim(); ++i)
            z[i] = rng.normal();
        return mean_ + llt_.matrixL() * z;
    }

    GaussianBelief(const GaussianBelief& other)
        : mean_(other.mean_), cov_(other.cov_), llt_(other.llt_),
          log_det_cov_(other.log_det_cov_) {
        if (other.precision_)
            precision_ = std::make_unique<MatrixXd>(*other.precision_);
    }
    GaussianBelief& operator=(const GaussianBelief& other) {
        if (this != &other) {
            mean_ = other.mean_;
            cov_ = other.cov_;
            llt_ = other.llt_;
            log_det_cov_ = other.log_det_cov_;
            precision_ = other.precision_ ? std::make_unique<MatrixXd>(*other.precision_) : nullptr;
        }
        return *this;
    }
    GaussianBelief(GaussianBelief&&) = default;
    GaussianBelief& operator=(GaussianBelief&&) = default;

private:
    VectorXd mean_;
    MatrixXd cov_;
    Eigen::LLT<MatrixXd> llt_;
    double log_det_cov_ = 0.0;
    mutable std::unique_ptr<MatrixXd> precision_;
};

// Beliefs are shared immutably between agent-state snapshots; copying a
// state copies pointers, updating an option swaps one pointer.
using BeliefPtr = std::shared_ptr<const GaussianBelief>;
using BeliefList = std::vector<BeliefPtr>;

}  // namespace aifcmab
