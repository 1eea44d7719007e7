#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "extravar/matrix.hpp"

namespace extravar::attn {

// Logit value standing in for -inf at masked positions (applied before any
// temperature scaling; exp underflows to exactly zero under every alpha the
// calibrator can produce).
constexpr double kMaskedLogit = -1e9;

// One attention head's tensors.  mask, when present, flags attendable
// entries with 1 (row-major N_q x N_k); every query row must be able to
// attend somewhere.
struct HeadTensors {
    Matrix q; // N_q x d
    Matrix k; // N_k x d
    Matrix v; // N_k x d_v
    std::optional<std::vector<uint8_t>> mask;
    void validate() const;
};

// S = Q K^T / sqrt(d), masked entries set to kMaskedLogit
Matrix logits(const HeadTensors& head);

// Row softmax of alpha * S, stabilized by the row max over attendable
// entries.  Masked entries come out exactly 0.  alpha must be positive.
Matrix scaled_attention(const Matrix& s, double alpha,
                        const std::vector<uint8_t>* mask = nullptr);

// Same, with one alpha per query row (used by block-causal replays where
// rows belonging to different scale steps carry different temperatures).
Matrix scaled_attention_rows(const Matrix& s, const std::vector<double>& alpha,
                             const std::vector<uint8_t>* mask = nullptr);

// H(P) = -(1 / (N_q ln N_k)) * sum_ij P_ij ln P_ij, with 0 ln 0 = 0.
// Dense form; requires N_k >= 2.
double normalized_entropy(const Matrix& p);

// Mask-aware variant: each row is normalized by the log of its own
// attendable count.  A row with a single attendable entry is the uniform
// distribution over its support and counts as entropy 1.
double rowwise_normalized_entropy(const Matrix& p,
                                  const std::vector<uint8_t>* mask = nullptr);

// V_g = mean over rows of Var_{P_i(1)}(S_i) over attendable entries
double global_variance(const Matrix& s, const std::vector<uint8_t>* mask = nullptr);

// dH/dalpha = -(alpha / N_q) * sum_i Var_{P_i(alpha)}(S_i) / ln(count_i);
// always <= 0.  Dense rows use count_i = N_k, matching the closed form.
double entropy_slope(const Matrix& s, double alpha,
                     const std::vector<uint8_t>* mask = nullptr);

// First-order calibration: alpha = 1 + (H_current - H_ref) * ln(N_k) / V_g
double closed_form_alpha(double h_current, double h_ref, double v_g, int n_k);

struct AttentionStats {
    double entropy = 1.0;  // H at alpha = 1
    double variance = 0.0; // V_g at alpha = 1
    double alpha = 1.0;    // temperature the stats were taken at
};

struct CalibrationPolicy {
    double tau_h = 0.3;        // reference-entropy gate
    double epsilon = 1e-8;     // variance floor
    int active_after_step = 9; // calibrate only for steps beyond this (k_h)
    double alpha_min = 0.5;
    double alpha_max = 4.0;
    void validate() const;
};

// alpha = clamped closed form iff step > active_after_step, a reference is
// present with H_ref < tau_h, and variance >= epsilon; otherwise exactly 1.
double gated_alpha(const AttentionStats& stats, std::optional<double> h_ref,
                   int n_k, const CalibrationPolicy& policy, int step);

// P(alpha) V for one head
Matrix attend(const HeadTensors& head, double alpha);

// Concatenate per-head outputs column-wise and apply the output projection.
Matrix concat_heads_project(const std::vector<Matrix>& head_outputs, const Matrix& w_out);

} // namespace extravar::attn
