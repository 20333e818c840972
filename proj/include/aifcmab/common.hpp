#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace aifcmab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Thrown on configuration / input-file problems (CLI exit code 1).
// Everything else surfaces as std::invalid_argument (contract violations)
// or std::runtime_error (numeric / IO failures, CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Parts>
std::string cat(Parts&&... parts) {
    std::ostringstream oss;
    (oss << ... << parts);
    return oss.str();
}

}  // namespace detail

inline void require(bool cond, const std::string& msg) {
    if (!cond)
        throw std::invalid_argument(msg);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

// log(sum_i exp(v_i)) with max subtraction; safe for entries up to +-700.
inline double log_sum_exp(const VectorXd& v) {
    require(v.size() > 0, "log_sum_exp: empty vector");
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx))
        return mx;  // all -inf, or a non-finite entry dominates
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        s += std::exp(v[i] - mx);
    return mx + std::log(s);
}

// exp(v - logsumexp(v)); entries positive, sum 1 up to rounding.
inline VectorXd stable_softmax(const VectorXd& logits) {
    const double lse = log_sum_exp(logits);
    VectorXd p(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        p[i] = std::exp(logits[i] - lse);
    return p;
}

// Decimal text with 17 significant digits round-trips IEEE doubles exactly.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

// FNV-1a 64-bit; used for output manifests (change detection, not crypto).
class Fnv1a64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ull;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return hash_; }
    std::string hex() const {
        char buf[20];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
        return std::string(buf);
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace aifcmab
