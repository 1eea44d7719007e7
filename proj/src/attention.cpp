#include "extravar/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace extravar::attn {

namespace {

inline bool attendable(const std::vector<uint8_t>* mask, int cols, int r, int c) {
    return mask == nullptr || (*mask)[static_cast<size_t>(r) * cols + c] != 0;
}

int attendable_count(const std::vector<uint8_t>* mask, int cols, int r) {
    if (mask == nullptr)
        return cols;
    int n = 0;
    for (int c = 0; c < cols; ++c)
        if ((*mask)[static_cast<size_t>(r) * cols + c] != 0)
            ++n;
    return n;
}

// softmax of alpha * s_row over attendable entries into p_row (others 0)
void softmax_row(const double* s_row, double alpha, const std::vector<uint8_t>* mask,
                 int cols, int r, double* p_row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c)
        if (attendable(mask, cols, r, c))
            mx = std::max(mx, alpha * s_row[c]);
    if (mx == -std::numeric_limits<double>::infinity())
        throw std::invalid_argument("attention row has no attendable entries");
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
        if (attendable(mask, cols, r, c)) {
            double e = std::exp(alpha * s_row[c] - mx);
            p_row[c] = e;
            z += e;
        } else {
            p_row[c] = 0.0;
        }
    }
    for (int c = 0; c < cols; ++c)
        p_row[c] /= z;
}

// variance of s_row under the distribution p_row, attendable entries only
double row_variance(const double* s_row, const double* p_row,
                    const std::vector<uint8_t>* mask, int cols, int r) {
    double mean = 0.0;
    for (int c = 0; c < cols; ++c)
        if (attendable(mask, cols, r, c))
            mean += p_row[c] * s_row[c];
    double var = 0.0;
    for (int c = 0; c < cols; ++c)
        if (attendable(mask, cols, r, c)) {
            double d = s_row[c] - mean;
            var += p_row[c] * d * d;
        }
    return var;
}

void check_mask(const Matrix& s, const std::vector<uint8_t>* mask) {
    if (mask != nullptr && mask->size() != s.data.size())
        throw std::invalid_argument("mask size does not match logits shape");
}

} // namespace

void HeadTensors::validate() const {
    if (q.rows < 1 || k.rows < 1)
        throw std::invalid_argument("attention needs at least one query and one key");
    if (q.cols != k.cols)
        throw std::invalid_argument("query/key widths differ");
    if (v.rows != k.rows)
        throw std::invalid_argument("value row count must match key row count");
    if (mask) {
        if (mask->size() != static_cast<size_t>(q.rows) * k.rows)
            throw std::invalid_argument("mask size must be N_q * N_k");
        for (int r = 0; r < q.rows; ++r) {
            bool any = false;
            for (int c = 0; c < k.rows; ++c)
                any = any || (*mask)[static_cast<size_t>(r) * k.rows + c] != 0;
            if (!any)
                throw std::invalid_argument("mask leaves a query row with nothing to attend to");
        }
    }
}

Matrix logits(const HeadTensors& head) {
    head.validate();
    Matrix s = matmul_nt(head.q, head.k);
    const double inv = 1.0 / std::sqrt(static_cast<double>(head.q.cols));
    for (double& x : s.data)
        x *= inv;
    if (head.mask) {
        const std::vector<uint8_t>& m = *head.mask;
        for (size_t i = 0; i < s.data.size(); ++i)
            if (m[i] == 0)
                s.data[i] = kMaskedLogit;
    }
    return s;
}

Matrix scaled_attention(const Matrix& s, double alpha, const std::vector<uint8_t>* mask) {
    if (!(alpha > 0.0))
        throw std::invalid_argument("alpha must be positive");
    check_mask(s, mask);
    Matrix p(s.rows, s.cols);
    for (int r = 0; r < s.rows; ++r)
        softmax_row(s.row(r), alpha, mask, s.cols, r, p.row(r));
    return p;
}

Matrix scaled_attention_rows(const Matrix& s, const std::vector<double>& alpha,
                             const std::vector<uint8_t>* mask) {
    if (static_cast<int>(alpha.size()) != s.rows)
        throw std::invalid_argument("need one alpha per query row");
    check_mask(s, mask);
    Matrix p(s.rows, s.cols);
    for (int r = 0; r < s.rows; ++r) {
        if (!(alpha[r] > 0.0))
            throw std::invalid_argument("alpha must be positive");
        softmax_row(s.row(r), alpha[r], mask, s.cols, r, p.row(r));
    }
    return p;
}

double normalized_entropy(const Matrix& p) {
    if (p.cols < 2)
        throw std::invalid_argument("normalized entropy needs N_k >= 2");
    if (p.rows < 1)
        throw std::invalid_argument("normalized entropy needs at least one row");
    double acc = 0.0;
    for (double x : p.data)
        if (x > 0.0)
            acc += x * std::log(x);
    return -acc / (p.rows * std::log(static_cast<double>(p.cols)));
}

double rowwise_normalized_entropy(const Matrix& p, const std::vector<uint8_t>* mask) {
    check_mask(p, mask);
    if (p.rows < 1)
        throw std::invalid_argument("normalized entropy needs at least one row");
    double acc = 0.0;
    for (int r = 0; r < p.rows; ++r) {
        int count = attendable_count(mask, p.cols, r);
        if (count < 1)
            throw std::invalid_argument("attention row has no attendable entries");
        if (count == 1) {
            acc += 1.0; // uniform over a single-entry support
            continue;
        }
        double h = 0.0;
        const double* pr = p.row(r);
        for (int c = 0; c < p.cols; ++c)
            if (pr[c] > 0.0)
                h += pr[c] * std::log(pr[c]);
        acc += -h / std::log(static_cast<double>(count));
    }
    return acc / p.rows;
}

double global_variance(const Matrix& s, const std::vector<uint8_t>* mask) {
    check_mask(s, mask);
    if (s.rows < 1 || s.cols < 1)
        throw std::invalid_argument("variance needs a non-empty logit matrix");
    std::vector<double> p_row(s.cols);
    double acc = 0.0;
    for (int r = 0; r < s.rows; ++r) {
        softmax_row(s.row(r), 1.0, mask, s.cols, r, p_row.data());
        acc += row_variance(s.row(r), p_row.data(), mask, s.cols, r);
    }
    return acc / s.rows;
}

double entropy_slope(const Matrix& s, double alpha, const std::vector<uint8_t>* mask) {
    if (!(alpha > 0.0))
        throw std::invalid_argument("alpha must be positive");
    check_mask(s, mask);
    if (s.rows < 1 || s.cols < 2)
        throw std::invalid_argument("entropy slope needs N_k >= 2");
    std::vector<double> p_row(s.cols);
    double acc = 0.0;
    for (int r = 0; r < s.rows; ++r) {
        int count = attendable_count(mask, s.cols, r);
        if (count < 2)
            continue; // single-support rows have constant (unit) entropy
        softmax_row(s.row(r), alpha, mask, s.cols, r, p_row.data());
        acc += row_variance(s.row(r), p_row.data(), mask, s.cols, r) /
               std::log(static_cast<double>(count));
    }
    return -alpha * acc / s.rows;
}

double closed_form_alpha(double h_current, double h_ref, double v_g, int n_k) {
    return 1.0 + (h_current - h_ref) * std::log(static_cast<double>(n_k)) / v_g;
}

void CalibrationPolicy::validate() const {
    if (!(tau_h > 0.0) || !(tau_h < 1.0))
        throw std::invalid_argument("tau_h must lie in (0, 1)");
    if (!(epsilon > 0.0))
        throw std::invalid_argument("epsilon must be positive");
    if (!(alpha_min > 0.0) || alpha_min > 1.0 || alpha_max < 1.0)
        throw std::invalid_argument("alpha clamp must bracket 1");
    if (active_after_step < 0)
        throw std::invalid_argument("active_after_step must be >= 0");
}

double gated_alpha(const AttentionStats& stats, std::optional<double> h_ref,
                   int n_k, const CalibrationPolicy& policy, int step) {
    policy.validate();
    if (step <= policy.active_after_step)
        return 1.0;
    if (!h_ref.has_value() || !(*h_ref < policy.tau_h))
        return 1.0;
    if (!(stats.variance >= policy.epsilon))
        return 1.0;
    if (n_k < 2)
        return 1.0;
    double a = closed_form_alpha(stats.entropy, *h_ref, stats.variance, n_k);
    return std::clamp(a, policy.alpha_min, policy.alpha_max);
}

Matrix attend(const HeadTensors& head, double alpha) {
    Matrix s = logits(head);
    const std::vector<uint8_t>* mask = head.mask ? &*head.mask : nullptr;
    Matrix p = scaled_attention(s, alpha, mask);
    return matmul(p, head.v);
}

Matrix concat_heads_project(const std::vector<Matrix>& head_outputs, const Matrix& w_out) {
    if (head_outputs.empty())
        throw std::invalid_argument("no head outputs to concatenate");
    int rows = head_outputs[0].rows;
    int total = 0;
    for (const Matrix& h : head_outputs) {
        if (h.rows != rows)
            throw std::invalid_argument("head outputs disagree on row count");
        total += h.cols;
    }
    Matrix cat(rows, total);
    int off = 0;
    for (const Matrix& h : head_outputs) {
        for (int r = 0; r < rows; ++r)
            std::copy(h.row(r), h.row(r) + h.cols, cat.row(r) + off);
        off += h.cols;
    }
    return matmul(cat, w_out);
}

} // namespace extravar::attn
