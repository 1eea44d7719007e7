#include "extravar/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <stdexcept>
#include <string>

#include "extravar/entropy_ref.hpp"
#include "extravar/errors.hpp"
#include "extravar/io.hpp"
#include "extravar/rng.hpp"

namespace extravar::model {

namespace {

constexpr double kPosNoiseScale = 0.5;
constexpr double kRmsEps = 1e-6;

struct Weights {
    Matrix embed; // vocab x d_model
    Matrix start; // 1 x d_model, the step-1 input token
    std::vector<Matrix> wq, wk, wv, wo; // per layer, d_model x d_model
    std::vector<Matrix> w1, w2;         // d_model x hidden, hidden x d_model
    Matrix w_out; // d_model x vocab
};

Matrix gaussian_matrix(uint64_t seed, const std::string& name, int r, int c, double scale) {
    Rng rng = named_stream(seed, name);
    Matrix m(r, c);
    for (double& x : m.data)
        x = scale * rng.next_gaussian();
    return m;
}

Weights build_weights(const ModelConfig& cfg) {
    const int dm = cfg.heads * cfg.head_dim;
    const int hidden = 2 * dm;
    const double proj = 1.0 / std::sqrt(static_cast<double>(dm));
    Weights w;
    w.embed = gaussian_matrix(cfg.seed, "emb", cfg.vocab_size, dm, 1.0);
    w.start = gaussian_matrix(cfg.seed, "start", 1, dm, 1.0);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string suffix = "/" + std::to_string(l);
        w.wq.push_back(gaussian_matrix(cfg.seed, "wq" + suffix, dm, dm, proj));
        w.wk.push_back(gaussian_matrix(cfg.seed, "wk" + suffix, dm, dm, proj));
        w.wv.push_back(gaussian_matrix(cfg.seed, "wv" + suffix, dm, dm, proj));
        w.wo.push_back(gaussian_matrix(cfg.seed, "wo" + suffix, dm, dm, proj));
        w.w1.push_back(gaussian_matrix(cfg.seed, "w1" + suffix, dm, hidden, proj));
        w.w2.push_back(gaussian_matrix(cfg.seed, "w2" + suffix, hidden, dm,
                                       1.0 / std::sqrt(static_cast<double>(hidden))));
        // Spread the heads across attention sharpness: head h's logits scale
        // like qk_gain * 3^h, so one run exercises both dispersed and
        // concentrated entropy regimes.
        for (int h = 0; h < cfg.heads; ++h) {
            const double g = std::sqrt(cfg.qk_gain * std::pow(3.0, h));
            for (int r = 0; r < dm; ++r)
                for (int c = h * cfg.head_dim; c < (h + 1) * cfg.head_dim; ++c) {
                    w.wq[l].at(r, c) *= g;
                    w.wk[l].at(r, c) *= g;
                }
        }
    }
    w.w_out = gaussian_matrix(cfg.seed, "head_out", dm, cfg.vocab_size, proj);
    return w;
}

Matrix rmsnorm(const Matrix& x) {
    Matrix out = x;
    for (int r = 0; r < x.rows; ++r) {
        const double* in = x.row(r);
        double ms = 0.0;
        for (int c = 0; c < x.cols; ++c)
            ms += in[c] * in[c];
        const double inv = 1.0 / std::sqrt(ms / x.cols + kRmsEps);
        double* o = out.row(r);
        for (int c = 0; c < x.cols; ++c)
            o[c] = in[c] * inv;
    }
    return out;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}

void add_in_place(Matrix& x, const Matrix& y) {
    for (size_t i = 0; i < x.data.size(); ++i)
        x.data[i] += y.data[i];
}

Matrix mlp(const Matrix& x, const Matrix& w1, const Matrix& w2) {
    Matrix h = matmul(rmsnorm(x), w1);
    for (double& v : h.data)
        v = gelu(v);
    return matmul(h, w2);
}

// columns [head*d, (head+1)*d) of x * w
Matrix project_head(const Matrix& x, const Matrix& w, int head, int d) {
    Matrix out(x.rows, d);
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* o = out.row(r);
        for (int k = 0; k < x.cols; ++k) {
            const double xv = xr[k];
            const double* wr = w.row(k) + head * d;
            for (int c = 0; c < d; ++c)
                o[c] += xv * wr[c];
        }
    }
    return out;
}

Matrix build_inputs(const ModelConfig& cfg, const Weights& w, int salt, int step,
                    int h, int wd, const std::vector<int>* prev, int ph, int pw) {
    const int dm = cfg.heads * cfg.head_dim;
    Matrix x(h * wd, dm);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            double* row = x.row(i * wd + j);
            const double* src;
            if (step == 1) {
                src = w.start.row(0);
            } else {
                // nearest-neighbor source cell in the previous (coarser) map
                int si = std::min(ph - 1, static_cast<int>((i + 0.5) * ph / h));
                int sj = std::min(pw - 1, static_cast<int>((j + 0.5) * pw / wd));
                src = w.embed.row((*prev)[si * pw + sj]);
            }
            std::copy(src, src + dm, row);
            Rng noise = named_stream(cfg.seed, "pos/" + std::to_string(salt) + "/" +
                                                   std::to_string(step) + "/" +
                                                   std::to_string(i) + "/" + std::to_string(j));
            for (int c = 0; c < dm; ++c)
                row[c] += kPosNoiseScale * noise.next_gaussian();
        }
    }
    return x;
}

// one rotation angle per feature pair for every token of a step
Matrix build_angles(const std::vector<std::pair<double, double>>& pos,
                    const std::vector<std::vector<double>>& freqs,
                    rope::AxisMode mode, int finest_side) {
    const int n = static_cast<int>(pos.size());
    if (mode == rope::AxisMode::one_d) {
        const std::vector<double>& f = freqs[0];
        Matrix a(n, static_cast<int>(f.size()));
        for (int r = 0; r < n; ++r) {
            // raster index on the finest grid; fractional for coarse maps
            const double idx = pos[r].first * finest_side + pos[r].second;
            for (size_t j = 0; j < f.size(); ++j)
                a.at(r, static_cast<int>(j)) = idx * f[j];
        }
        return a;
    }
    const std::vector<double>& fh = freqs[0];
    const std::vector<double>& fw = freqs[1];
    Matrix a(n, static_cast<int>(fh.size() + fw.size()));
    for (int r = 0; r < n; ++r) {
        for (size_t j = 0; j < fh.size(); ++j)
            a.at(r, static_cast<int>(j)) = pos[r].first * fh[j];
        for (size_t j = 0; j < fw.size(); ++j)
            a.at(r, static_cast<int>(fh.size() + j)) = pos[r].second * fw[j];
    }
    return a;
}

void zero_band_pairs(Matrix& rows, const std::vector<rope::Band>& pair_bands, rope::Band band) {
    for (int r = 0; r < rows.rows; ++r) {
        double* v = rows.row(r);
        for (size_t p = 0; p < pair_bands.size(); ++p)
            if (pair_bands[p] == band) {
                v[2 * p] = 0.0;
                v[2 * p + 1] = 0.0;
            }
    }
}

// concatenate two row blocks
Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.rows == 0)
        return b;
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

double mean_row_variance(const Matrix& s, const Matrix& p, int col_limit) {
    double acc = 0.0;
    for (int r = 0; r < s.rows; ++r) {
        const double* sr = s.row(r);
        const double* pr = p.row(r);
        double mean = 0.0;
        for (int c = 0; c < col_limit; ++c)
            mean += pr[c] * sr[c];
        double var = 0.0;
        for (int c = 0; c < col_limit; ++c) {
            const double d = sr[c] - mean;
            var += pr[c] * d * d;
        }
        acc += var;
    }
    return acc / s.rows;
}

struct HeadOut {
    Matrix out;   // block rows x d
    Matrix k_rot; // rotated (and possibly zeroed) keys of this step
    Matrix v_new;
    Matrix attn; // retained probability map, optional
    double alpha = 1.0;
    double h1 = 1.0;
    double vg = 0.0;
    std::array<double, 4> band_sums{};
    std::array<long, 4> band_counts{};
};

void accumulate_band_norms(const Matrix& q, const std::vector<rope::Band>& pair_bands,
                           std::array<double, 4>& sums, std::array<long, 4>& counts) {
    for (int r = 0; r < q.rows; ++r) {
        const double* v = q.row(r);
        for (size_t p = 0; p < pair_bands.size(); ++p) {
            const int b = static_cast<int>(pair_bands[p]);
            const double x = v[2 * p], y = v[2 * p + 1];
            sums[b] += std::sqrt(x * x + y * y);
            counts[b] += 1;
        }
    }
}

std::optional<double> ref_lookup(const refstore::ReferenceEntropyStore* ref,
                                 int layer, int head, int step) {
    if (ref == nullptr)
        return std::nullopt;
    return ref->lookup(layer, head, step);
}

HeadOut run_head_cached(const ModelConfig& cfg, const GenerationPlan& plan,
                        const Weights& w, int layer, int head, const Matrix& normed,
                        const Matrix& angles, const Matrix& cache_k, const Matrix& cache_v,
                        const std::vector<rope::Band>& pair_bands, int step) {
    const int d = cfg.head_dim;
    HeadOut ho;
    Matrix q = rope::apply_rope(project_head(normed, w.wq[layer], head, d), angles);
    ho.k_rot = rope::apply_rope(project_head(normed, w.wk[layer], head, d), angles);
    ho.v_new = project_head(normed, w.wv[layer], head, d);
    if (plan.intervention && plan.intervention->kind == probe::InterventionKind::zero_qk_features &&
        plan.intervention->covers_step(step)) {
        zero_band_pairs(q, pair_bands, plan.intervention->band);
        zero_band_pairs(ho.k_rot, pair_bands, plan.intervention->band);
    }
    accumulate_band_norms(q, pair_bands, ho.band_sums, ho.band_counts);

    Matrix k_all = vstack(cache_k, ho.k_rot);
    Matrix v_all = vstack(cache_v, ho.v_new);
    Matrix s = matmul_nt(q, k_all);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : s.data)
        x *= inv;

    Matrix p1 = attn::scaled_attention(s, 1.0);
    ho.h1 = attn::rowwise_normalized_entropy(p1);
    ho.vg = mean_row_variance(s, p1, s.cols);
    ho.alpha = 1.0;
    if (plan.calibrate) {
        attn::AttentionStats stats{ho.h1, ho.vg, 1.0};
        ho.alpha = attn::gated_alpha(stats, ref_lookup(plan.reference, layer, head, step),
                                     k_all.rows, plan.policy, step);
    }
    Matrix p = ho.alpha == 1.0 ? std::move(p1) : attn::scaled_attention(s, ho.alpha);
    ho.out = matmul(p, v_all);
    if (plan.retain_attention)
        ho.attn = std::move(p);
    return ho;
}

// Per-layer KV cache; rows accumulate across steps in generation order.
struct LayerCache {
    std::vector<Matrix> k; // per head
    std::vector<Matrix> v;
};

int block_end(const std::vector<std::pair<int, int>>& sched, int step) {
    int end = 0;
    for (int b = 1; b <= step; ++b)
        end += sched[b - 1].first * sched[b - 1].second;
    return end;
}

} // namespace

std::vector<std::pair<int, int>> build_scale_schedule(int side, int steps) {
    if (steps < 1)
        throw std::invalid_argument("schedule needs at least one step");
    if (side < steps)
        throw std::invalid_argument("side must be >= step count for a strictly increasing schedule");
    std::vector<int> sides(steps);
    if (steps == 1) {
        sides[0] = side;
    } else {
        for (int i = 0; i < steps; ++i)
            sides[i] = static_cast<int>(std::lround(
                std::exp(std::log(static_cast<double>(side)) * i / (steps - 1))));
        sides[0] = std::max(sides[0], 1);
        for (int i = 1; i < steps; ++i)
            sides[i] = std::max(sides[i], sides[i - 1] + 1);
        sides[steps - 1] = side;
        for (int i = steps - 2; i >= 0; --i)
            sides[i] = std::min(sides[i], sides[i + 1] - 1);
    }
    std::vector<std::pair<int, int>> out;
    out.reserve(steps);
    for (int s : sides)
        out.emplace_back(s, s);
    return out;
}

std::vector<std::pair<double, double>> positions_for_step(int h, int w, int finest_side) {
    if (h < 1 || w < 1 || finest_side < h || finest_side < w)
        throw std::invalid_argument("map must fit inside the finest grid");
    std::vector<std::pair<double, double>> pos;
    pos.reserve(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            pos.emplace_back((i + 0.5) * finest_side / h - 0.5,
                             (j + 0.5) * finest_side / w - 0.5);
    return pos;
}

void ModelConfig::validate() {
    if (layers < 1 || heads < 1 || vocab_size < 2)
        throw std::invalid_argument("model needs layers >= 1, heads >= 1, vocab >= 2");
    if (head_dim < 2 || head_dim % 2 != 0)
        throw std::invalid_argument("head_dim must be even and >= 2");
    if (steps < 1 || train_side < steps)
        throw std::invalid_argument("need 1 <= steps <= train_side");
    if (qk_gain < 0.0)
        throw std::invalid_argument("qk_gain must be >= 0");
    if (scale_schedule.empty())
        scale_schedule = build_scale_schedule(train_side, steps);
    if (static_cast<int>(scale_schedule.size()) != steps)
        throw std::invalid_argument("scale_schedule length must equal steps");
    for (size_t i = 0; i < scale_schedule.size(); ++i) {
        auto [h, w] = scale_schedule[i];
        if (h != w || h < 1)
            throw std::invalid_argument("scale maps must be square");
        if (i > 0 && h <= scale_schedule[i - 1].first)
            throw std::invalid_argument("scale sides must be strictly increasing");
    }
    if (scale_schedule.back().first != train_side)
        throw std::invalid_argument("schedule must end at the training side");
}

std::string config_hash_hex(const ModelConfig& cfg, const rope::RopeConfig& rope_cfg) {
    std::string canon;
    canon += "layers=" + std::to_string(cfg.layers);
    canon += ";heads=" + std::to_string(cfg.heads);
    canon += ";head_dim=" + std::to_string(cfg.head_dim);
    canon += ";vocab=" + std::to_string(cfg.vocab_size);
    canon += ";train_side=" + std::to_string(cfg.train_side);
    canon += ";steps=" + std::to_string(cfg.steps);
    canon += ";seed=" + std::to_string(cfg.seed);
    canon += ";qk_gain=" + format_double(cfg.qk_gain);
    canon += ";base=" + format_double(rope_cfg.base);
    canon += ";axis=";
    canon += rope_cfg.axis_mode == rope::AxisMode::one_d ? "one_d" : "two_d_axial";
    return hash_hex(canon);
}

bool reference_matches(const refstore::ReferenceEntropyStore& store,
                       const ModelConfig& cfg, const rope::RopeConfig& rope_cfg) {
    return store.config_hash == config_hash_hex(cfg, rope_cfg) &&
           store.train_side == cfg.train_side;
}

std::vector<rope::Band> row_pair_bands(const std::vector<rope::FrequencyTable>& banded) {
    std::vector<rope::Band> bands;
    for (const rope::FrequencyTable& t : banded) {
        if (!t.bands_assigned)
            throw std::invalid_argument("row_pair_bands needs banded tables");
        for (const rope::PairEntry& e : t.pairs)
            bands.push_back(e.band);
    }
    return bands;
}

namespace {

struct RunContext {
    const ModelConfig* cfg;
    const GenerationPlan* plan;
    const Weights* weights;
    std::vector<std::pair<int, int>> sched; // generation schedule at target side
    std::vector<std::vector<std::vector<double>>> step_freqs; // [step][axis][pair]
    std::vector<rope::Band> pair_bands;
};

// validates the plan against the model and precomputes per-step frequencies
RunContext prepare_run(const ModelConfig& cfg, const GenerationPlan& plan, const Weights& w) {
    plan.rope.validate();
    plan.schedule.validate();
    plan.policy.validate();
    plan.remap.validate();
    if (plan.rope.head_dim != cfg.head_dim)
        throw ConfigError("plan head_dim disagrees with the model");
    if (plan.rope.train_side != cfg.train_side)
        throw ConfigError("plan train_side disagrees with the model");
    if (plan.schedule.total_steps != cfg.steps)
        throw ConfigError("stage schedule step count disagrees with the model");
    const bool uses_ratio = plan.remap.kind != rope::RemapKind::identity &&
                            plan.remap.kind != rope::RemapKind::nope;
    if (uses_ratio && plan.remap.ratio != plan.rope.ratio())
        throw ConfigError("remap ratio disagrees with target/train sides");
    if (plan.calibrate && plan.reference == nullptr)
        throw MissingArtifactError("calibration requires a reference entropy store");

    RunContext ctx;
    ctx.cfg = &cfg;
    ctx.plan = &plan;
    ctx.weights = &w;
    std::vector<rope::FrequencyTable> tables = rope::banded_tables(plan.rope);
    ctx.pair_bands = row_pair_bands(tables);

    if (plan.intervention) {
        plan.intervention->validate(cfg.steps);
        bool band_present = false;
        for (rope::Band b : ctx.pair_bands)
            band_present = band_present || b == plan.intervention->band;
        if (!band_present)
            throw ConfigError(std::string("intervention band '") +
                              rope::band_name(plan.intervention->band) +
                              "' is empty under this configuration");
    }

    ctx.sched = build_scale_schedule(plan.rope.target_side, cfg.steps);
    ctx.step_freqs.resize(cfg.steps);
    for (int k = 1; k <= cfg.steps; ++k) {
        for (const rope::FrequencyTable& t : tables) {
            std::vector<double> f = rope::remap_frequencies(t, plan.remap, k);
            if (plan.intervention)
                probe::apply_to_frequencies(*plan.intervention, t, k, f);
            ctx.step_freqs[k - 1].push_back(std::move(f));
        }
    }
    return ctx;
}

std::vector<int> greedy_tokens(const Matrix& logits) {
    std::vector<int> tokens(logits.rows);
    for (int r = 0; r < logits.rows; ++r) {
        const double* row = logits.row(r);
        int best = 0;
        for (int c = 1; c < logits.cols; ++c)
            if (row[c] > row[best])
                best = c;
        tokens[r] = best;
    }
    return tokens;
}

StepTrace run_step_cached(const RunContext& ctx, int step, const std::vector<int>* prev,
                          std::vector<LayerCache>& caches) {
    const ModelConfig& cfg = *ctx.cfg;
    const GenerationPlan& plan = *ctx.plan;
    const Weights& w = *ctx.weights;
    const auto [h, wd] = ctx.sched[step - 1];
    const int prev_h = step > 1 ? ctx.sched[step - 2].first : 0;
    const int prev_w = step > 1 ? ctx.sched[step - 2].second : 0;

    StepTrace st;
    st.step = step;
    st.height = h;
    st.width = wd;
    st.omega = rope::stage_weight(step, plan.schedule);
    st.freqs = ctx.step_freqs[step - 1];
    st.cache_rows_before = caches[0].k[0].rows;
    st.key_count = st.cache_rows_before + h * wd;

    Matrix x = build_inputs(cfg, w, plan.noise_salt, step, h, wd, prev, prev_h, prev_w);
    Matrix angles = build_angles(positions_for_step(h, wd, plan.rope.target_side),
                                 ctx.step_freqs[step - 1], plan.rope.axis_mode,
                                 plan.rope.target_side);

    std::array<double, 4> band_sums{};
    std::array<long, 4> band_counts{};
    for (int l = 0; l < cfg.layers; ++l) {
        Matrix normed = rmsnorm(x);
        std::vector<HeadOut> outs(cfg.heads);
        auto run_one = [&](int head) {
            return run_head_cached(cfg, plan, w, l, head, normed, angles,
                                   caches[l].k[head], caches[l].v[head],
                                   ctx.pair_bands, step);
        };
        if (cfg.parallel_heads) {
            std::vector<std::future<HeadOut>> futs;
            for (int head = 0; head < cfg.heads; ++head)
                futs.push_back(std::async(std::launch::async, run_one, head));
            for (int head = 0; head < cfg.heads; ++head)
                outs[head] = futs[head].get();
        } else {
            for (int head = 0; head < cfg.heads; ++head)
                outs[head] = run_one(head);
        }
        std::vector<Matrix> head_outputs;
        for (int head = 0; head < cfg.heads; ++head) {
            HeadOut& ho = outs[head];
            head_outputs.push_back(std::move(ho.out));
            caches[l].k[head] = vstack(caches[l].k[head], ho.k_rot);
            caches[l].v[head] = vstack(caches[l].v[head], ho.v_new);
            for (int b = 0; b < 4; ++b) {
                band_sums[b] += ho.band_sums[b];
                band_counts[b] += ho.band_counts[b];
            }
            HeadTrace ht;
            ht.layer = l;
            ht.head = head;
            ht.alpha = ho.alpha;
            ht.entropy = ho.h1;
            ht.variance = ho.vg;
            st.heads.push_back(ht);
            if (plan.retain_attention)
                st.attention.push_back(std::move(ho.attn));
        }
        add_in_place(x, attn::concat_heads_project(head_outputs, w.wo[l]));
        add_in_place(x, mlp(x, w.w1[l], w.w2[l]));
    }
    for (int b = 0; b < 4; ++b)
        st.band_norms[b] = band_counts[b] > 0 ? band_sums[b] / band_counts[b] : 0.0;

    st.logits = matmul(rmsnorm(x), w.w_out);
    st.tokens = greedy_tokens(st.logits);
    return st;
}

// Cache-free oracle: replay steps 1..step from scratch under a block-causal
// mask and read off the final block.  Row blocks keep their own rotation
// frequencies and their own calibrated temperature.
StepTrace run_step_uncached(const RunContext& ctx, int step,
                            const std::vector<std::vector<int>>& maps) {
    const ModelConfig& cfg = *ctx.cfg;
    const GenerationPlan& plan = *ctx.plan;
    const Weights& w = *ctx.weights;
    const auto [h, wd] = ctx.sched[step - 1];
    const int d = cfg.head_dim;

    StepTrace st;
    st.step = step;
    st.height = h;
    st.width = wd;
    st.omega = rope::stage_weight(step, plan.schedule);
    st.freqs = ctx.step_freqs[step - 1];
    st.cache_rows_before = block_end(ctx.sched, step - 1);
    st.key_count = block_end(ctx.sched, step);

    const int n_tot = block_end(ctx.sched, step);
    std::vector<int> row_block(n_tot);
    std::vector<int> block_ends(step);
    Matrix x(0, 0);
    Matrix angles(0, 0);
    {
        std::vector<Matrix> xs, as;
        int row = 0;
        for (int b = 1; b <= step; ++b) {
            const auto [bh, bw] = ctx.sched[b - 1];
            const int pbh = b > 1 ? ctx.sched[b - 2].first : 0;
            const int pbw = b > 1 ? ctx.sched[b - 2].second : 0;
            const std::vector<int>* prev = b > 1 ? &maps[b - 2] : nullptr;
            xs.push_back(build_inputs(cfg, w, plan.noise_salt, b, bh, bw, prev, pbh, pbw));
            as.push_back(build_angles(positions_for_step(bh, bw, plan.rope.target_side),
                                      ctx.step_freqs[b - 1], plan.rope.axis_mode,
                                      plan.rope.target_side));
            block_ends[b - 1] = row + bh * bw;
            for (int r = 0; r < bh * bw; ++r)
                row_block[row++] = b;
        }
        x = xs[0];
        angles = as[0];
        for (int b = 1; b < step; ++b) {
            x = vstack(x, xs[b]);
            angles = vstack(angles, as[b]);
        }
    }

    // block-causal mask: row in block b attends to columns in blocks <= b
    std::vector<uint8_t> mask(static_cast<size_t>(n_tot) * n_tot, 0);
    for (int r = 0; r < n_tot; ++r) {
        const int limit = block_ends[row_block[r] - 1];
        for (int c = 0; c < limit; ++c)
            mask[static_cast<size_t>(r) * n_tot + c] = 1;
    }

    std::array<double, 4> band_sums{};
    std::array<long, 4> band_counts{};
    const int cur_begin = st.cache_rows_before;
    for (int l = 0; l < cfg.layers; ++l) {
        Matrix normed = rmsnorm(x);
        std::vector<Matrix> head_outputs;
        for (int head = 0; head < cfg.heads; ++head) {
            Matrix q = rope::apply_rope(project_head(normed, w.wq[l], head, d), angles);
            Matrix kk = rope::apply_rope(project_head(normed, w.wk[l], head, d), angles);
            Matrix v = project_head(normed, w.wv[l], head, d);
            if (plan.intervention &&
                plan.intervention->kind == probe::InterventionKind::zero_qk_features) {
                for (int b = 1; b <= step; ++b)
                    if (plan.intervention->covers_step(b)) {
                        const int lo = b > 1 ? block_ends[b - 2] : 0;
                        // zero the band pairs of just this block's rows
                        for (int r = lo; r < block_ends[b - 1]; ++r) {
                            double* qr = q.row(r);
                            double* kr = kk.row(r);
                            for (size_t p = 0; p < ctx.pair_bands.size(); ++p)
                                if (ctx.pair_bands[p] == plan.intervention->band) {
                                    qr[2 * p] = qr[2 * p + 1] = 0.0;
                                    kr[2 * p] = kr[2 * p + 1] = 0.0;
                                }
                        }
                    }
            }
            {
                // band norms measured on the current block only
                Matrix cur(h * wd, q.cols);
                for (int r = 0; r < h * wd; ++r)
                    std::copy(q.row(cur_begin + r), q.row(cur_begin + r) + q.cols, cur.row(r));
                accumulate_band_norms(cur, ctx.pair_bands, band_sums, band_counts);
            }
            Matrix s = matmul_nt(q, kk);
            const double inv = 1.0 / std::sqrt(static_cast<double>(d));
            for (double& sv : s.data)
                sv *= inv;
            Matrix p1 = attn::scaled_attention(s, 1.0, &mask);
            // per-block stats and temperature, as each block saw at its own step
            std::vector<double> row_alpha(n_tot, 1.0);
            for (int b = 1; b <= step; ++b) {
                const int lo = b > 1 ? block_ends[b - 2] : 0;
                const int hi_row = block_ends[b - 1];
                const int keys = block_ends[b - 1];
                Matrix sb(hi_row - lo, keys);
                Matrix pb(hi_row - lo, keys);
                for (int r = lo; r < hi_row; ++r) {
                    std::copy(s.row(r), s.row(r) + keys, sb.row(r - lo));
                    std::copy(p1.row(r), p1.row(r) + keys, pb.row(r - lo));
                }
                const double h1 = attn::rowwise_normalized_entropy(pb);
                const double vg = mean_row_variance(sb, pb, keys);
                double alpha = 1.0;
                if (plan.calibrate) {
                    attn::AttentionStats stats{h1, vg, 1.0};
                    alpha = attn::gated_alpha(stats, ref_lookup(plan.reference, l, head, b),
                                              keys, plan.policy, b);
                }
                for (int r = lo; r < hi_row; ++r)
                    row_alpha[r] = alpha;
                if (b == step) {
                    HeadTrace ht;
                    ht.layer = l;
                    ht.head = head;
                    ht.alpha = alpha;
                    ht.entropy = h1;
                    ht.variance = vg;
                    st.heads.push_back(ht);
                }
            }
            Matrix p = attn::scaled_attention_rows(s, row_alpha, &mask);
            if (plan.retain_attention) {
                Matrix cur(h * wd, st.key_count);
                for (int r = 0; r < h * wd; ++r)
                    std::copy(p.row(cur_begin + r), p.row(cur_begin + r) + st.key_count,
                              cur.row(r));
                st.attention.push_back(std::move(cur));
            }
            head_outputs.push_back(matmul(p, v));
        }
        add_in_place(x, attn::concat_heads_project(head_outputs, w.wo[l]));
        add_in_place(x, mlp(x, w.w1[l], w.w2[l]));
    }
    for (int b = 0; b < 4; ++b)
        st.band_norms[b] = band_counts[b] > 0 ? band_sums[b] / band_counts[b] : 0.0;

    Matrix final_norm = rmsnorm(x);
    Matrix cur(h * wd, final_norm.cols);
    for (int r = 0; r < h * wd; ++r)
        std::copy(final_norm.row(cur_begin + r), final_norm.row(cur_begin + r) + final_norm.cols,
                  cur.row(r));
    st.logits = matmul(cur, w.w_out);
    st.tokens = greedy_tokens(st.logits);
    return st;
}

} // namespace

GenerationResult generate(ModelConfig cfg, const GenerationPlan& plan, bool use_cache) {
    cfg.validate();
    Weights w = build_weights(cfg);
    RunContext ctx = prepare_run(cfg, plan, w);
    if (plan.reference != nullptr && !reference_matches(*plan.reference, cfg, plan.rope))
        std::fprintf(stderr,
                     "warning: reference store was captured under a different "
                     "configuration (store hash %s)\n",
                     plan.reference->config_hash.c_str());

    GenerationResult res;
    std::vector<LayerCache> caches(cfg.layers);
    for (LayerCache& c : caches) {
        c.k.assign(cfg.heads, Matrix(0, cfg.head_dim));
        c.v.assign(cfg.heads, Matrix(0, cfg.head_dim));
    }
    for (int k = 1; k <= cfg.steps; ++k) {
        StepTrace st = use_cache
                           ? run_step_cached(ctx, k, k > 1 ? &res.maps[k - 2] : nullptr, caches)
                           : run_step_uncached(ctx, k, res.maps);
        res.maps.push_back(st.tokens);
        res.trace.steps.push_back(std::move(st));
    }
    return res;
}

refstore::ReferenceEntropyStore capture_reference(ModelConfig cfg,
                                                  const rope::RopeConfig& rope_cfg,
                                                  const rope::StageSchedule& sched,
                                                  int samples) {
    cfg.validate();
    if (samples < 1)
        throw ConfigError("sample count must be >= 1");
    if (rope_cfg.target_side != cfg.train_side)
        throw ConfigError("reference capture must run at the training side");

    refstore::ReferenceEntropyStore store;
    store.config_hash = config_hash_hex(cfg, rope_cfg);
    store.train_side = cfg.train_side;
    store.seed = cfg.seed;
    store.samples = samples;

    for (int s = 0; s < samples; ++s) {
        GenerationPlan plan;
        plan.rope = rope_cfg;
        plan.remap = rope::RemapRule::identity();
        plan.schedule = sched;
        plan.noise_salt = s;
        GenerationResult res = generate(cfg, plan);
        for (const StepTrace& st : res.trace.steps)
            for (const HeadTrace& ht : st.heads)
                store.entries[refstore::Key{ht.layer, ht.head, st.step}] += ht.entropy;
    }
    if (samples > 1)
        for (auto& [key, val] : store.entries)
            val /= samples;
    return store;
}

} // namespace extravar::model
