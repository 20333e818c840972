#pragma once

#include "aifcmab/environment.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace aifcmab {

struct TableRow {
    long line_no = 0;
    int option_id = 0;
    VectorXd features;  // raw, pre-PCA
    int label = 0;      // one-based
};

struct MaskedRow {
    long line_no = 0;
    std::string reason;
};

struct IngestSchema {
    char delimiter = ',';
    int expected_features = 0;  // 0 = infer from the header
    int n_labels = 0;           // 0 = infer as the maximum valid label
};

// Tabular training data grouped by option. Rows that failed validation are
// kept on the mask with a per-row reason and excluded from all computation.
class LabeledContextTable {
public:
    LabeledContextTable(std::vector<std::vector<TableRow>> groups, std::vector<int> option_ids,
                        int n_labels, int raw_dim, std::vector<MaskedRow> masked)
        : groups_(std::move(groups)), option_ids_(std::move(option_ids)), n_labels_(n_labels),
          raw_dim_(raw_dim), masked_(std::move(masked)) {
        require(!groups_.empty(), "LabeledContextTable: no options");
        require(groups_.size() == option_ids_.size(), "LabeledContextTable: id/group mismatch");
        require(n_labels_ >= 1, "LabeledContextTable: need at least one label");
    }

    int n_options() const { return static_cast<int>(groups_.size()); }
    int n_labels() const { return n_labels_; }
    int raw_dim() const { return raw_dim_; }
    const std::vector<TableRow>& rows(int k) const { return groups_.at(k); }
    const std::vector<int>& option_ids() const { return option_ids_; }
    const std::vector<MaskedRow>& masked() const { return masked_; }
    long total_valid() const {
        long n = 0;
        for (const auto& g : groups_)
            n += static_cast<long>(g.size());
        return n;
    }

private:
    std::vector<std::vector<TableRow>> groups_;
    std::vector<int> option_ids_;
    int n_labels_;
    int raw_dim_;
    std::vector<MaskedRow> masked_;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, delim))
        out.push_back(field);
    if (!line.empty() && line.back() == delim)
        out.emplace_back();
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
            ++pos;
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_int(const std::string& s, int& out) {
    try {
        std::size_t pos = 0;
        out = std::stoi(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
            ++pos;
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

// Delimiter-separated text with header `option,<features...>,label`.
// Rows failing numeric parse or label range are masked, not fatal; an
// inconsistent field count is a hard error naming the line.
inline LabeledContextTable ingest_table(std::istream& is, const IngestSchema& schema = {}) {
    std::string line;
    long line_no = 0;
    if (!std::getline(is, line))
        throw ConfigError("ingest_table: empty input, expected a header row");
    ++line_no;
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    const auto header = detail::split_fields(line, schema.delimiter);
    if (header.size() < 3 || header.front() != "option" || header.back() != "label")
        throw ConfigError(
            "ingest_table: header must be 'option,<feat...>,label', got '" + line + "'");
    const int n_feat = static_cast<int>(header.size()) - 2;
    if (schema.expected_features > 0 && n_feat != schema.expected_features)
        throw ConfigError(detail::cat("ingest_table: header has ", n_feat,
                                      " feature columns, schema expects ",
                                      schema.expected_features));

    std::map<int, std::vector<TableRow>> by_option;
    std::vector<MaskedRow> masked;
    int max_label = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto fields = detail::split_fields(line, schema.delimiter);
        if (static_cast<int>(fields.size()) != n_feat + 2)
            throw ConfigError(detail::cat("ingest_table: line ", line_no, " has ",
                                          fields.size(), " fields, expected ", n_feat + 2));
        TableRow row;
        row.line_no = line_no;
        if (!detail::parse_int(fields[0], row.option_id)) {
            masked.push_back({line_no, "option id not an integer"});
            continue;
        }
        row.features.resize(n_feat);
        bool ok = true;
        for (int c = 0; c < n_feat && ok; ++c) {
            double v = 0.0;
            if (!detail::parse_double(fields[c + 1], v) || !std::isfinite(v)) {
                masked.push_back({line_no, detail::cat("feature ", c + 1, " not numeric")});
                ok = false;
            }
            row.features[c] = v;
        }
        if (!ok)
            continue;
        if (!detail::parse_int(fields.back(), row.label)) {
            masked.push_back({line_no, "label not an integer"});
            continue;
        }
        if (row.label < 1 || (schema.n_labels > 0 && row.label > schema.n_labels)) {
            masked.push_back({line_no, "label out of range"});
            continue;
        }
        max_label = std::max(max_label, row.label);
        by_option[row.option_id].push_back(std::move(row));
    }
    if (by_option.empty())
        throw ConfigError("ingest_table: no valid data rows");

    std::vector<std::vector<TableRow>> groups;
    std::vector<int> ids;
    for (auto& [id, rows] : by_option) {
        ids.push_back(id);
        groups.push_back(std::move(rows));
    }
    const int F = schema.n_labels > 0 ? schema.n_labels : max_label;
    return LabeledContextTable(std::move(groups), std::move(ids), F, n_feat,
                               std::move(masked));
}

inline LabeledContextTable ingest_table(const std::string& path, const IngestSchema& schema = {}) {
    std::ifstream is(path);
    if (!is)
        throw ConfigError("ingest_table: cannot open " + path);
    return ingest_table(is, schema);
}

// Valid rows back to the ingestion format (17 significant digits).
inline void write_table(const LabeledContextTable& table, std::ostream& os) {
    os << "option";
    for (int c = 1; c <= table.raw_dim(); ++c)
        os << ",feat_" << c;
    os << ",label\n";
    for (int k = 0; k < table.n_options(); ++k)
        for (const auto& row : table.rows(k)) {
            os << table.option_ids()[k];
            for (int c = 0; c < table.raw_dim(); ++c)
                os << "," << fmt17(row.features[c]);
            os << "," << row.label << "\n";
        }
}

inline void write_mask_report(const LabeledContextTable& table, std::ostream& os) {
    os << "masked_rows " << table.masked().size() << "\n";
    for (const auto& m : table.masked())
        os << "line " << m.line_no << ": " << m.reason << "\n";
}

// Principal components of the pooled (all options) raw features.
struct PcaModel {
    VectorXd mean;                // length C_raw
    MatrixXd components;          // C_raw x n_components, orthonormal columns
    VectorXd explained_variance;  // full spectrum, descending, length C_raw
    int effective_rank = 0;       // eigenvalues above the rank tolerance

    VectorXd cumulative_explained_ratio() const {
        const double total = explained_variance.sum();
        VectorXd out(explained_variance.size());
        double acc = 0.0;
        for (Eigen::Index i = 0; i < explained_variance.size(); ++i) {
            acc += explained_variance[i];
            out[i] = total > 0.0 ? acc / total : 1.0;
        }
        return out;
    }
};

// Mean-centered eigendecomposition of the pooled covariance; components
// sorted by descending eigenvalue, sign set so each component's first
// nonzero coordinate is positive. Rank deficiency below n_components keeps
// the zero-variance tail components (effective_rank reports the cutoff).
inline PcaModel pca_fit(const LabeledContextTable& table, int n_components) {
    const long n = table.total_valid();
    const int c_raw = table.raw_dim();
    require(n_components >= 1 && n_components <= c_raw,
            detail::cat("pca_fit: n_components must lie in [1, ", c_raw, "], got ",
                        n_components));
    require(n >= c_raw, detail::cat("pca_fit: need at least C_raw=", c_raw, " rows, got ", n));

    MatrixXd data(n, c_raw);
    long r = 0;
    for (int k = 0; k < table.n_options(); ++k)
        for (const auto& row : table.rows(k))
            data.row(r++) = row.features.transpose();

    PcaModel model;
    model.mean = data.colwise().mean();
    data.rowwise() -= model.mean.transpose();
    const MatrixXd cov = (data.transpose() * data) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("pca_fit: eigendecomposition failed");

    // ascending from Eigen; reverse to descending
    model.explained_variance.resize(c_raw);
    MatrixXd all_components(c_raw, c_raw);
    for (int i = 0; i < c_raw; ++i) {
        model.explained_variance[i] = std::max(0.0, es.eigenvalues()[c_raw - 1 - i]);
        all_components.col(i) = es.eigenvectors().col(c_raw - 1 - i);
    }
    for (int i = 0; i < c_raw; ++i) {
        for (int j = 0; j < c_raw; ++j) {
            if (std::abs(all_components(j, i)) > 1e-12) {
                if (all_components(j, i) < 0.0)
                    all_components.col(i) = -all_components.col(i);
                break;
            }
        }
    }
    const double tol = model.explained_variance[0] * 1e-12;
    model.effective_rank = 0;
    for (int i = 0; i < c_raw; ++i)
        if (model.explained_variance[i] > tol)
            ++model.effective_rank;
    model.components = all_components.leftCols(n_components);
    return model;
}

// (x_raw - mean) projected onto the retained components.
inline ContextVector pca_transform(const PcaModel& model, const VectorXd& x_raw) {
    require(x_raw.size() == model.mean.size(),
            detail::cat("pca_transform: input dimension ", x_raw.size(),
                        " does not match model dimension ", model.mean.size()));
    return ContextVector(model.components.transpose() * (x_raw - model.mean));
}

// Per-option PCA-reduced training rows.
struct OptionDataset {
    std::vector<ContextVector> contexts;
    std::vector<OutcomeLabel> labels;
};

inline std::vector<OptionDataset> transform_table(const LabeledContextTable& table,
                                                  const PcaModel& model) {
    std::vector<OptionDataset> out(table.n_options());
    for (int k = 0; k < table.n_options(); ++k) {
        out[k].contexts.reserve(table.rows(k).size());
        out[k].labels.reserve(table.rows(k).size());
        for (const auto& row : table.rows(k)) {
            out[k].contexts.push_back(pca_transform(model, row.features));
            out[k].labels.emplace_back(row.label);
        }
    }
    return out;
}

struct SplitSpec {
    double train_frac = 0.8;
    std::uint64_t seed = 0;
};

struct TrainOptions {
    double learning_rate = 1e-2;
    int epochs = 200;
    int batch = 0;  // 0 = full batch (deterministic default)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct TrainReport {
    std::vector<double> test_accuracy;           // per option, at the best epoch
    std::vector<MatrixXd> confusion;             // per option, F x F, rows = true label
    std::vector<VectorXd> bias_values;           // per option, learned biases
    std::vector<std::vector<double>> loss_history;  // per option, full-train loss per epoch
    std::uint64_t split_seed = 0;
};

struct TrainedModel {
    std::vector<SoftmaxParams> params;
    TrainReport report;
};

namespace detail {

inline constexpr std::uint64_t kSplitTag = 0x71;
inline constexpr std::uint64_t kBatchTag = 0x72;

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> test;
};

inline SplitIndices split_indices(int n, double train_frac, std::uint64_t seed, int option) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i)
        idx[i] = i;
    RngStream rng = keyed_stream(seed, {kSplitTag, std::uint64_t(option)});
    for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    int n_train = static_cast<int>(train_frac * n);
    n_train = std::clamp(n_train, 1, n - 1);
    SplitIndices out;
    out.train.assign(idx.begin(), idx.begin() + n_train);
    out.test.assign(idx.begin() + n_train, idx.end());
    return out;
}

// mean cross-entropy and its gradient over the given rows
inline double ce_loss_and_grad(const SoftmaxParams& theta, const OptionDataset& data,
                               const std::vector<int>& rows, VectorXd* grad) {
    const int F = theta.n_classes(), C = theta.context_dim(), c1 = C + 1;
    if (grad)
        grad->setZero();
    double loss = 0.0;
    for (int i : rows) {
        const VectorXd logp = log_softmax_likelihood(theta, data.contexts[i]);
        loss -= logp[data.labels[i].array_index()];
        if (grad) {
            const VectorXd p = logp.array().exp();
            for (int f = 0; f < F; ++f) {
                const double coeff = p[f] - (f == data.labels[i].array_index() ? 1.0 : 0.0);
                grad->segment(f * c1, C) += coeff * data.contexts[i].values;
                (*grad)[f * c1 + C] += coeff;
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    if (grad)
        *grad *= inv_n;
    return loss * inv_n;
}

inline double accuracy(const SoftmaxParams& theta, const OptionDataset& data,
                       const std::vector<int>& rows) {
    long correct = 0;
    for (int i : rows) {
        Eigen::Index pred = 0;
        softmax_likelihood(theta, data.contexts[i]).maxCoeff(&pred);
        if (static_cast<int>(pred) == data.labels[i].array_index())
            ++correct;
    }
    return rows.empty() ? 0.0 : static_cast<double>(correct) / rows.size();
}

}  // namespace detail

// Per-option multinomial logistic regression by Adam on mean cross-entropy.
// Deterministic given the split seed; returns the best-epoch parameters by
// held-out accuracy.
inline TrainedModel train_softmax(const std::vector<OptionDataset>& data, int n_labels,
                                  const SplitSpec& split, const TrainOptions& opts = {}) {
    require(!data.empty(), "train_softmax: no options");
    require(split.train_frac > 0.0 && split.train_frac < 1.0,
            "train_softmax: train_frac must lie in (0,1)");
    require(opts.learning_rate > 0.0 && opts.epochs >= 1, "train_softmax: bad optimizer options");
    const int K = static_cast<int>(data.size());
    const int C = data[0].contexts.empty() ? 0 : data[0].contexts[0].dim();
    require(C >= 1, "train_softmax: empty dataset");
    const int d = (C + 1) * n_labels;

    TrainedModel out;
    out.report.split_seed = split.seed;
    out.report.test_accuracy.resize(K);
    out.report.confusion.resize(K);
    out.report.bias_values.resize(K);
    out.report.loss_history.resize(K);

    for (int k = 0; k < K; ++k) {
        const int n = static_cast<int>(data[k].contexts.size());
        require(n >= 5 * n_labels, detail::cat("train_softmax: option ", k, " has ", n,
                                               " rows, need at least 5*F = ", 5 * n_labels));
        for (const auto& lbl : data[k].labels)
            require(lbl.index <= n_labels,
                    detail::cat("train_softmax: option ", k, " label ", lbl.index,
                                " exceeds F=", n_labels));
        const auto idx = detail::split_indices(n, split.train_frac, split.seed, k);

        VectorXd theta_flat = VectorXd::Zero(d);
        VectorXd m = VectorXd::Zero(d), v = VectorXd::Zero(d), grad(d);
        VectorXd best_flat = theta_flat;
        double best_acc = -1.0;
        long adam_t = 0;

        const int batch = opts.batch > 0 ? std::min(opts.batch, static_cast<int>(idx.train.size()))
                                         : static_cast<int>(idx.train.size());
        std::vector<int> order = idx.train;

        for (int epoch = 0; epoch < opts.epochs; ++epoch) {
            if (opts.batch > 0) {
                RngStream rng = keyed_stream(split.seed,
                                             {detail::kBatchTag, std::uint64_t(k),
                                              std::uint64_t(epoch)});
                for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
                    std::swap(order[i], order[rng.uniform_int(i + 1)]);
            }
            for (std::size_t start = 0; start < order.size(); start += batch) {
                const std::vector<int> rows(
                    order.begin() + start,
                    order.begin() + std::min(order.size(), start + batch));
                const SoftmaxParams theta = SoftmaxParams::unflatten(theta_flat, n_labels, C);
                detail::ce_loss_and_grad(theta, data[k], rows, &grad);
                ++adam_t;
                m = opts.beta1 * m + (1.0 - opts.beta1) * grad;
                v = opts.beta2 * v + (1.0 - opts.beta2) * grad.cwiseProduct(grad);
                const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(adam_t));
                const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(adam_t));
                theta_flat -= (opts.learning_rate / bc1) *
                              (m.array() / ((v.array() / bc2).sqrt() + opts.adam_eps)).matrix();
            }
            const SoftmaxParams theta = SoftmaxParams::unflatten(theta_flat, n_labels, C);
            const double loss = detail::ce_loss_and_grad(theta, data[k], idx.train, nullptr);
            if (!std::isfinite(loss))
                throw std::runtime_error(detail::cat("train_softmax: non-finite loss at epoch ",
                                                     epoch, " for option ", k));
            out.report.loss_history[k].push_back(loss);
            const double acc = detail::accuracy(theta, data[k], idx.test);
            if (acc > best_acc) {
                best_acc = acc;
                best_flat = theta_flat;
            }
        }

        const SoftmaxParams best = SoftmaxParams::unflatten(best_flat, n_labels, C);
        out.report.test_accuracy[k] = best_acc;
        out.report.bias_values[k] = best.biases();
        MatrixXd confusion = MatrixXd::Zero(n_labels, n_labels);
        for (int i : idx.test) {
            Eigen::Index pred = 0;
            softmax_likelihood(best, data[k].contexts[i]).maxCoeff(&pred);
            confusion(data[k].labels[i].array_index(), pred) += 1.0;
        }
        out.report.confusion[k] = std::move(confusion);
        out.params.push_back(best);
    }
    return out;
}

struct PoolPolicy {
    long max_per_option = 0;  // 0 = keep every row
};

// Environment whose context pools are the (PCA-reduced) training rows and
// whose ground truth is the trained parameters; psi is the pool-averaged
// likelihood under those parameters.
inline Environment build_environment_from_training(const std::vector<SoftmaxParams>& params,
                                                   const std::vector<OptionDataset>& data,
                                                   const PoolPolicy& policy = {}) {
    require(params.size() == data.size(),
            detail::cat("build_environment_from_training: ", params.size(), " parameter sets vs ",
                        data.size(), " option datasets"));
    std::vector<std::vector<ContextVector>> pools;
    for (std::size_t k = 0; k < data.size(); ++k) {
        const auto& contexts = data[k].contexts;
        require(!contexts.empty(),
                detail::cat("build_environment_from_training: option ", k, " pool empty"));
        std::vector<ContextVector> pool;
        if (policy.max_per_option > 0 &&
            static_cast<long>(contexts.size()) > policy.max_per_option) {
            const double stride =
                static_cast<double>(contexts.size()) / static_cast<double>(policy.max_per_option);
            for (long i = 0; i < policy.max_per_option; ++i)
                pool.push_back(contexts[static_cast<std::size_t>(i * stride)]);
        } else {
            pool = contexts;
        }
        pools.push_back(std::move(pool));
    }
    return Environment(std::vector<SoftmaxParams>(params), std::move(pools), 0);
}

}  // namespace aifcmab
