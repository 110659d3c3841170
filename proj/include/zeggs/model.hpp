#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zeggs/motion.hpp"
#include "zeggs/rng.hpp"
#include "zeggs/tensor.hpp"

namespace zeggs::model {

struct ModelConfig {
    int joints = 75;
    int d_speech = 64;  // speech embedding width per frame
    int d_embed = 64;   // style embedding width

    int speech_channels = 64;
    int speech_kernel1 = 3;
    int speech_kernel2 = 31;

    int style_channels = 512;  // width of the style conv stack and attention
    int style_kernel = 3;
    int attention_heads = 4;
    double attention_dropout = 0.1;
    int fft_channels = 64;  // bottleneck width of the FFT-block conv pair

    int gru_hidden = 1024;
    int init_hidden = 1024;
    double dropout = 0.2;

    int style_width() const { return 15 * joints + 6; }       // D_a
    int pose_width() const { return 15 * joints + 13; }       // D_y
    int prediction_width() const { return 15 * joints + 6; }  // D_y - 7
    int decoder_input_width() const { return prediction_width() + 2 + d_speech + d_embed; }

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

template <typename T>
struct SpeechEncoder {
    tc::Tensor<T> conv1_k, conv1_b, conv2_k, conv2_b, out_w, out_b;

    void build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng);
    // feats: [T, 81] normalized speech features.
    tc::Tensor<T> forward(tc::Tape<T>& tape, const tc::Tensor<T>& feats, const ModelConfig& cfg,
                          bool training, RngStream& rng) const;
};

template <typename T>
struct StyleEncoder {
    tc::Tensor<T> conv1_k, conv1_b, ln1_g, ln1_b;
    tc::Tensor<T> conv2_k, conv2_b, ln2_g, ln2_b;
    tc::AttentionParams<T> attn;
    tc::Tensor<T> ln_attn_g, ln_attn_b;
    tc::Tensor<T> fft1_k, fft1_b, fft2_k, fft2_b, ln_fft_g, ln_fft_b;
    tc::Tensor<T> out_w, out_b;

    void build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng);
    // a: [M, D_a] normalized style features -> (mu, logvar), each [1, D_e].
    // zero_posenc is a probe switch that suppresses the positional encoding.
    std::pair<tc::Tensor<T>, tc::Tensor<T>> forward(tc::Tape<T>& tape, const tc::Tensor<T>& a,
                                                    const ModelConfig& cfg, bool training,
                                                    RngStream& rng, bool zero_posenc = false) const;
};

template <typename T>
struct HiddenStateInitializer {
    tc::Tensor<T> l1_w, l1_b, l2_w, l2_b, l3_w, l3_b;
    tc::Tensor<T> h1_w, h1_b, h2_w, h2_b;

    void build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng);
    // input: [1, D_y + 2 + D_e] (normalized pose state, root-space facing, e)
    std::pair<tc::Tensor<T>, tc::Tensor<T>> forward(tc::Tape<T>& tape,
                                                    const tc::Tensor<T>& input) const;
};

template <typename T>
struct RecurrentDecoder {
    tc::GruCellParams<T> gru1, gru2;
    tc::Tensor<T> head_w, head_b;

    void build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng);
};

// State carried across autoregressive steps. All members live on the tape of
// the rollout that produced them.
template <typename T>
struct DecodeState {
    tc::Tensor<T> h1, h2;       // [1, gru_hidden]
    tc::Tensor<T> pose_part;    // [1, D_y - 7], denormalized
    tc::Tensor<T> root_pos;     // [1, 3]
    tc::Tensor<T> root_yaw;     // [1, 1] accumulated yaw angle
};

template <typename T>
struct Rollout {
    tc::Tensor<T> pose_part;  // [T, D_y - 7] denormalized predictions
    tc::Tensor<T> root_pos;   // [T, 3]
    tc::Tensor<T> root_yaw;   // [T, 1]
};

template <typename T>
class GestureModel {
public:
    ModelConfig cfg;
    NormalizationStats stats;
    tc::ParameterSet<T> params;

    SpeechEncoder<T> speech;
    StyleEncoder<T> style;
    HiddenStateInitializer<T> initializer;
    RecurrentDecoder<T> decoder;

    GestureModel(const ModelConfig& cfg, const NormalizationStats& stats, std::uint64_t seed);

    // Copies parameter values (not gradients) from a model with identical shape.
    void copy_values_from(const GestureModel& other);

    // ---- feature plumbing ----
    tc::Tensor<T> to_tensor(const FeatureMatrix& m) const;
    tc::Tensor<T> normalized_speech(const FeatureMatrix& raw) const;
    tc::Tensor<T> normalized_style(const FeatureMatrix& raw) const;

    // ---- network stages ----
    tc::Tensor<T> speech_encode(tc::Tape<T>& tape, const tc::Tensor<T>& normalized_feats,
                                bool training, RngStream& rng) const;
    std::pair<tc::Tensor<T>, tc::Tensor<T>> style_encode(tc::Tape<T>& tape,
                                                         const tc::Tensor<T>& normalized_a,
                                                         bool training, RngStream& rng,
                                                         bool zero_posenc = false) const;
    // mu + sigma * eps with sigma = exp(0.5 * logvar); deterministic -> mu.
    tc::Tensor<T> sample_embedding(tc::Tape<T>& tape, const tc::Tensor<T>& mu,
                                   const tc::Tensor<T>& logvar, bool deterministic,
                                   RngStream& rng) const;

    DecodeState<T> initial_state(tc::Tape<T>& tape, const std::vector<double>& init_pose_state,
                                 const geom::Vec2& facing, const tc::Tensor<T>& e) const;
    DecodeState<T> decode_step(tc::Tape<T>& tape, const DecodeState<T>& state,
                               const tc::Tensor<T>& s_t, const tc::Tensor<T>& e,
                               const geom::Vec2& facing, double dt) const;

    Rollout<T> rollout(tc::Tape<T>& tape, const tc::Tensor<T>& speech_embeddings,
                       const tc::Tensor<T>& e, const std::vector<double>& init_pose_state,
                       const geom::Vec2& facing, int frames, double fps) const;

    // Full inference: raw speech features + style window -> pose states [T, D_y].
    FeatureMatrix generate(const FeatureMatrix& raw_speech, const FeatureMatrix& raw_style,
                           const std::vector<double>& init_pose_state, const geom::Vec2& facing,
                           int frames, double fps, bool deterministic, RngStream& rng) const;

    // Inference conditioned on an explicit style embedding vector.
    FeatureMatrix generate_with_embedding(const FeatureMatrix& raw_speech,
                                          const std::vector<double>& embedding,
                                          const std::vector<double>& init_pose_state,
                                          const geom::Vec2& facing, int frames, double fps) const;

    // Rollout tensors -> pose-state rows (assembles r_p and unit-quaternion r_r).
    FeatureMatrix rollout_to_pose_states(const Rollout<T>& r) const;

    // ---- normalization constants (leaves shared across tapes) ----
    tc::Tensor<T> dec_in_mean, dec_in_inv_std;    // [1, D_y - 5]
    tc::Tensor<T> dec_out_mean, dec_out_std;      // [1, D_y - 7]
    tc::Tensor<T> pose_mean_t, pose_inv_std_t;    // [1, D_y]

    std::int64_t parameter_count() const { return params.total_size(); }
    std::int64_t parameter_count_with_prefix(const std::string& prefix) const;

private:
    void build_stat_tensors();
};

struct KlResult {
    double value = 0;
};

// D_KL(N(mu, sigma^2) || N(0, I)) with sigma = exp(0.5 * logvar).
template <typename T>
tc::Tensor<T> kl_loss(tc::Tape<T>& tape, const tc::Tensor<T>& mu, const tc::Tensor<T>& logvar);

// total = recon + beta * kl
template <typename T>
tc::Tensor<T> elbo_loss(tc::Tape<T>& tape, const tc::Tensor<T>& recon, const tc::Tensor<T>& kl,
                        T beta);

struct LossWeights {
    double p = 1, r = 1, vp = 1, vr = 1, dp = 1, dr = 1, f = 1;
};

struct LossTerms {
    double p = 0, r = 0, vp = 0, vr = 0, dp = 0, dr = 0, f = 0;
    double recon = 0, kl = 0, beta = 0, total = 0;
};

// Precomputed target-side quantities for the reconstruction loss.
struct LossTargets {
    FeatureMatrix pose_states;  // [T, D_y]
    geom::Vec2 facing;
};

template <typename T>
struct ReconLoss {
    tc::Tensor<T> total;
    LossTerms terms;  // per-term values (beta/kl filled by the caller)
};

// Mean-absolute-error reconstruction terms over local quantities plus their
// forward-kinematics world-space counterparts, finite-difference velocity
// terms, and the ground-projected facing direction.
template <typename T>
ReconLoss<T> reconstruction_loss(tc::Tape<T>& tape, const GestureModel<T>& model,
                                 const Rollout<T>& pred, const LossTargets& target,
                                 const Skeleton& skeleton, const LossWeights& weights, double fps);

}  // namespace zeggs::model
