#include "zeggs/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace zeggs::model {

using nlohmann::json;
using tc::Tape;
using tc::Tensor;

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) fail(Errc::config, std::string("model config: ") + name + " must be positive");
    };
    positive(joints, "joints");
    positive(d_speech, "d_speech");
    positive(d_embed, "d_embed");
    positive(speech_channels, "speech_channels");
    positive(style_channels, "style_channels");
    positive(fft_channels, "fft_channels");
    positive(gru_hidden, "gru_hidden");
    positive(init_hidden, "init_hidden");
    if (speech_kernel1 % 2 == 0 || speech_kernel2 % 2 == 0 || style_kernel % 2 == 0)
        fail(Errc::config, "model config: convolution kernels must be odd");
    if (attention_heads <= 0 || style_channels % attention_heads != 0)
        fail(Errc::config, "model config: style_channels must divide evenly into attention_heads");
    if ((2 * d_embed) % attention_heads != 0)
        fail(Errc::config, "model config: 2*d_embed must divide evenly into attention_heads");
    if (dropout < 0 || dropout >= 1 || attention_dropout < 0 || attention_dropout >= 1)
        fail(Errc::config, "model config: dropout rates must be in [0,1)");
}

std::string ModelConfig::to_json() const {
    json j;
    j["joints"] = joints;
    j["d_speech"] = d_speech;
    j["d_embed"] = d_embed;
    j["speech_channels"] = speech_channels;
    j["speech_kernel1"] = speech_kernel1;
    j["speech_kernel2"] = speech_kernel2;
    j["style_channels"] = style_channels;
    j["style_kernel"] = style_kernel;
    j["attention_heads"] = attention_heads;
    j["attention_dropout"] = attention_dropout;
    j["fft_channels"] = fft_channels;
    j["gru_hidden"] = gru_hidden;
    j["init_hidden"] = init_hidden;
    j["dropout"] = dropout;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("model config JSON: ") + e.what());
    }
    ModelConfig c;
    std::set<std::string> known = {"joints",        "d_speech",       "d_embed",
                                   "speech_channels", "speech_kernel1", "speech_kernel2",
                                   "style_channels",  "style_kernel",   "attention_heads",
                                   "attention_dropout", "fft_channels", "gru_hidden",
                                   "init_hidden",     "dropout"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            fail(Errc::config, "model config: unknown field \"" + it.key() + "\"");
    c.joints = j.value("joints", c.joints);
    c.d_speech = j.value("d_speech", c.d_speech);
    c.d_embed = j.value("d_embed", c.d_embed);
    c.speech_channels = j.value("speech_channels", c.speech_channels);
    c.speech_kernel1 = j.value("speech_kernel1", c.speech_kernel1);
    c.speech_kernel2 = j.value("speech_kernel2", c.speech_kernel2);
    c.style_channels = j.value("style_channels", c.style_channels);
    c.style_kernel = j.value("style_kernel", c.style_kernel);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.attention_dropout = j.value("attention_dropout", c.attention_dropout);
    c.fft_channels = j.value("fft_channels", c.fft_channels);
    c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
    c.init_hidden = j.value("init_hidden", c.init_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.validate();
    return c;
}

namespace {

template <typename T>
Tensor<T> init_weight(tc::ParameterSet<T>& params, const std::string& name, std::vector<int> shape,
                      int fan_in, RngStream& rng) {
    return params.add(name, tc::init_uniform_fanin<T>(std::move(shape), fan_in, rng));
}

template <typename T>
Tensor<T> init_zeros(tc::ParameterSet<T>& params, const std::string& name, std::vector<int> shape) {
    return params.add(name, Tensor<T>::zeros(std::move(shape)));
}

template <typename T>
Tensor<T> init_ones(tc::ParameterSet<T>& params, const std::string& name, std::vector<int> shape) {
    return params.add(name, Tensor<T>::full(std::move(shape), T(1)));
}

// Sinusoidal positional encoding rows for a sequence of length m, width d.
template <typename T>
Tensor<T> positional_encoding(int m, int d) {
    Tensor<T> pe = Tensor<T>::zeros({m, d});
    auto& v = pe.value();
    for (int pos = 0; pos < m; ++pos)
        for (int i = 0; i < d; ++i) {
            double expo = double(2 * (i / 2)) / double(d);
            double angle = double(pos) / std::pow(10000.0, expo);
            v[std::size_t(pos) * d + i] = T((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

}  // namespace

// ---------------------------------------------------------------------------
// SpeechEncoder

template <typename T>
void SpeechEncoder<T>::build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng) {
    int ch = cfg.speech_channels;
    conv1_k = init_weight(params, "speech.conv1.w", {cfg.speech_kernel1, 81, ch},
                          cfg.speech_kernel1 * 81, rng);
    conv1_b = init_zeros(params, "speech.conv1.b", {ch});
    conv2_k = init_weight(params, "speech.conv2.w", {cfg.speech_kernel2, ch, ch},
                          cfg.speech_kernel2 * ch, rng);
    conv2_b = init_zeros(params, "speech.conv2.b", {ch});
    out_w = init_weight(params, "speech.out.w", {ch, cfg.d_speech}, ch, rng);
    out_b = init_zeros(params, "speech.out.b", {cfg.d_speech});
}

template <typename T>
Tensor<T> SpeechEncoder<T>::forward(Tape<T>& tape, const Tensor<T>& feats, const ModelConfig& cfg,
                                    bool training, RngStream& rng) const {
    if (feats.rank() != 2 || feats.dim(1) != 81)
        fail(Errc::shape, "speech encoder expects [T,81] input, got " +
                              tc::shape_str(feats.shape()));
    T rate = T(cfg.dropout);
    Tensor<T> x = tape.conv1d(feats, conv1_k, conv1_b);
    x = tape.elu(tape.dropout(x, rate, training, rng));
    x = tape.conv1d(x, conv2_k, conv2_b);
    x = tape.elu(tape.dropout(x, rate, training, rng));
    return tape.linear(x, out_w, out_b);
}

// ---------------------------------------------------------------------------
// StyleEncoder

template <typename T>
void StyleEncoder<T>::build(tc::ParameterSet<T>& params, const ModelConfig& cfg, RngStream& rng) {
    int da = cfg.style_width();
    int ch = cfg.style_channels;
    int k = cfg.style_kernel;
    conv1_k = init_weight(params, "style.conv1.w", {k, da, ch}, k * da, rng);
    conv1_b = init_zeros(params, "style.conv1.b", {ch});
    ln1_g = init_ones(params, "style.ln1.g", {ch});
    ln1_b = init_zeros(params, "style.ln1.b", {ch});
    conv2_k = init_weight(params, "style.conv2.w", {k, ch, ch}, k * ch, rng);
    conv2_b = init_zeros(params, "style.conv2.b", {ch});
    ln2_g = init_ones(params, "style.ln2.g", {ch});
    ln2_b = init_zeros(params, "style.ln2.b", {ch});

    attn.wq = init_weight(params, "style.attn.wq", {ch, ch}, ch, rng);
    attn.bq = init_zeros(params, "style.attn.bq", {ch});
    attn.wk = init_weight(params, "style.attn.wk", {ch, ch}, ch, rng);
    attn.bk = init_zeros(params, "style.attn.bk", {ch});
    attn.wv = init_weight(params, "style.attn.wv", {ch, ch}, ch, rng);
    attn.bv = init_zeros(params, "style.attn.bv", {ch});
    attn.wo = init_weight(params, "style.attn.wo", {ch, ch}, ch, rng);
    attn.bo = init_zeros(params, "style.attn.bo", {ch});
    ln_attn_g = init_ones(params, "style.ln_attn.g", {ch});
    ln_attn_b = init_zeros(params, "style.ln_attn.b", {ch});

    fft1_k = init_weight(params, "style.fft1.w", {k, ch, cfg.fft_channels}, k * ch, rng);
    fft1_b = init_zeros(params, "style.fft1.b", {cfg.fft_channels});
    fft2_k = init_weight(params, "style.fft2.w", {k, cfg.fft_channels, ch}, k * cfg.fft_channels, rng);
    fft2_b = init_zeros(params, "style.fft2.b", {ch});
    ln_fft_g = init_ones(params, "style.ln_fft.g", {ch});
    ln_fft_b = init_zeros(params, "style.ln_fft.b", {ch});

    out_w = init_weight(params, "style.out.w", {ch, 2 * cfg.d_embed}, ch, rng);
    out_b = init_zeros(params, "style.out.b", {2 * cfg.d_embed});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> StyleEncoder<T>::forward(Tape<T>& tape, const Tensor<T>& a,
                                                         const ModelConfig& cfg, bool training,
                                                         RngStream& rng, bool zero_posenc) const {
    if (a.rank() != 2 || a.dim(1) != cfg.style_width())
        fail(Errc::shape, "style encoder expects [M," + std::to_string(cfg.style_width()) +
                              "] input, got " + tc::shape_str(a.shape()));
    if (a.dim(0) < 1) fail(Errc::shape, "style encoder: empty sequence");
    T rate = T(cfg.dropout);
    // Replicate padding keeps constant sequences exactly length-invariant.
    Tensor<T> x = tape.conv1d(a, conv1_k, conv1_b, tc::PadMode::replicate);
    x = tape.layer_norm(tape.relu(tape.dropout(x, rate, training, rng)), ln1_g, ln1_b);
    x = tape.conv1d(x, conv2_k, conv2_b, tc::PadMode::replicate);
    x = tape.layer_norm(tape.relu(tape.dropout(x, rate, training, rng)), ln2_g, ln2_b);

    if (!zero_posenc) x = tape.add(x, positional_encoding<T>(x.dim(0), x.dim(1)));

    Tensor<T> att = tape.self_attention(x, attn, cfg.attention_heads, T(cfg.attention_dropout),
                                        training, rng);
    x = tape.layer_norm(tape.add(x, att), ln_attn_g, ln_attn_b);
    Tensor<T> ff = tape.conv1d(tape.relu(tape.conv1d(x, fft1_k, fft1_b, tc::PadMode::replicate)),
                               fft2_k, fft2_b, tc::PadMode::replicate);
    x = tape.layer_norm(tape.add(x, ff), ln_fft_g, ln_fft_b);

    Tensor<T> pooled = tape.mean_rows(tape.linear(x, out_w, out_b));  // [1, 2*D_e]
    Tensor<T> mu = tape.slice_cols(pooled, 0, cfg.d_embed);
    Tensor<T> logvar = tape.slice_cols(pooled, cfg.d_embed, cfg.d_embed);
    return {mu, logvar};
}

// ---------------------------------------------------------------------------
// HiddenStateInitializer

template <typename T>
void HiddenStateInitializer<T>::build(tc::ParameterSet<T>& params, const ModelConfig& cfg,
                                      RngStream& rng) {
    int in = cfg.pose_width() + 2 + cfg.d_embed;
    int h = cfg.init_hidden;
    l1_w = init_weight(params, "init.l1.w", {in, h}, in, rng);
    l1_b = init_zeros(params, "init.l1.b", {h});
    l2_w = init_weight(params, "init.l2.w", {h, h}, h, rng);
    l2_b = init_zeros(params, "init.l2.b", {h});
    l3_w = init_weight(params, "init.l3.w", {h, h}, h, rng);
    l3_b = init_zeros(params, "init.l3.b", {h});
    h1_w = init_weight(params, "init.h1.w", {h, cfg.gru_hidden}, h, rng);
    h1_b = init_zeros(params, "init.h1.b", {cfg.gru_hidden});
    h2_w = init_weight(params, "init.h2.w", {h, cfg.gru_hidden}, h, rng);
    h2_b = init_zeros(params, "init.h2.b", {cfg.gru_hidden});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> HiddenStateInitializer<T>::forward(Tape<T>& tape,
                                                                   const Tensor<T>& input) const {
    Tensor<T> x = tape.elu(tape.linear(input, l1_w, l1_b));
    x = tape.elu(tape.linear(x, l2_w, l2_b));
    x = tape.elu(tape.linear(x, l3_w, l3_b));
    return {tape.linear(x, h1_w, h1_b), tape.linear(x, h2_w, h2_b)};
}

// ---------------------------------------------------------------------------
// RecurrentDecoder

template <typename T>
void RecurrentDecoder<T>::build(tc::ParameterSet<T>& params, const ModelConfig& cfg,
                                RngStream& rng) {
    int in = cfg.decoder_input_width();
    int h = cfg.gru_hidden;
    gru1.hidden = h;
    gru1.w_ih = init_weight(params, "decoder.gru1.w_ih", {in, 3 * h}, in, rng);
    gru1.w_hh = init_weight(params, "decoder.gru1.w_hh", {h, 3 * h}, h, rng);
    gru1.b_ih = init_zeros(params, "decoder.gru1.b_ih", {3 * h});
    gru1.b_hh = init_zeros(params, "decoder.gru1.b_hh", {3 * h});
    gru2.hidden = h;
    gru2.w_ih = init_weight(params, "decoder.gru2.w_ih", {h, 3 * h}, h, rng);
    gru2.w_hh = init_weight(params, "decoder.gru2.w_hh", {h, 3 * h}, h, rng);
    gru2.b_ih = init_zeros(params, "decoder.gru2.b_ih", {3 * h});
    gru2.b_hh = init_zeros(params, "decoder.gru2.b_hh", {3 * h});
    head_w = init_weight(params, "decoder.head.w", {h, cfg.prediction_width()}, h, rng);
    head_b = init_zeros(params, "decoder.head.b", {cfg.prediction_width()});
}

// ---------------------------------------------------------------------------
// GestureModel

template <typename T>
GestureModel<T>::GestureModel(const ModelConfig& c, const NormalizationStats& s, std::uint64_t seed)
    : cfg(c), stats(s) {
    cfg.validate();
    RngStream rng = RngStream::derive(seed, {kRngInit});
    speech.build(params, cfg, rng);
    style.build(params, cfg, rng);
    initializer.build(params, cfg, rng);
    decoder.build(params, cfg, rng);
    build_stat_tensors();
}

template <typename T>
void GestureModel<T>::build_stat_tensors() {
    int dy = cfg.pose_width();
    int dp = cfg.prediction_width();
    auto ensure = [&](const FeatureStats& fs, int width) {
        if (fs.width() == width) return fs;
        FeatureStats out;
        out.mean.assign(std::size_t(width), 0.0);
        out.stdev.assign(std::size_t(width), 1.0);
        return out;
    };
    FeatureStats pose = ensure(stats.pose, dy);
    stats.pose = pose;
    stats.style = ensure(stats.style, cfg.style_width());
    stats.speech = ensure(stats.speech, 81);

    auto cols = motion::pose_prediction_columns(cfg.joints);
    std::vector<T> in_mu, in_inv, out_mu, out_sd, pm, pis;
    for (int c : cols) {
        out_mu.push_back(T(pose.mean[std::size_t(c)]));
        out_sd.push_back(T(pose.stdev[std::size_t(c)]));
        in_mu.push_back(T(pose.mean[std::size_t(c)]));
        in_inv.push_back(T(1.0 / pose.stdev[std::size_t(c)]));
    }
    // root-space facing passes through unnormalized
    in_mu.push_back(T(0));
    in_mu.push_back(T(0));
    in_inv.push_back(T(1));
    in_inv.push_back(T(1));
    for (int c = 0; c < dy; ++c) {
        pm.push_back(T(pose.mean[std::size_t(c)]));
        pis.push_back(T(1.0 / pose.stdev[std::size_t(c)]));
    }
    dec_in_mean = Tensor<T>::from({1, dp + 2}, std::move(in_mu));
    dec_in_inv_std = Tensor<T>::from({1, dp + 2}, std::move(in_inv));
    dec_out_mean = Tensor<T>::from({1, dp}, std::move(out_mu));
    dec_out_std = Tensor<T>::from({1, dp}, std::move(out_sd));
    pose_mean_t = Tensor<T>::from({1, dy}, std::move(pm));
    pose_inv_std_t = Tensor<T>::from({1, dy}, std::move(pis));
}

template <typename T>
void GestureModel<T>::copy_values_from(const GestureModel& other) {
    const auto& src = other.params.items();
    const auto& dst = params.items();
    if (src.size() != dst.size()) fail(Errc::state, "copy_values_from: parameter count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name || src[i].tensor.size() != dst[i].tensor.size())
            fail(Errc::state, "copy_values_from: parameter layout mismatch at " + src[i].name);
        dst[i].tensor.value() = src[i].tensor.value();
    }
}

template <typename T>
Tensor<T> GestureModel<T>::to_tensor(const FeatureMatrix& m) const {
    std::vector<T> data(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) data[i] = T(m.data[i]);
    return Tensor<T>::from({m.rows, m.cols}, std::move(data));
}

template <typename T>
Tensor<T> GestureModel<T>::normalized_speech(const FeatureMatrix& raw) const {
    FeatureMatrix m = raw;
    motion::normalize_rows(m, stats.speech);
    return to_tensor(m);
}

template <typename T>
Tensor<T> GestureModel<T>::normalized_style(const FeatureMatrix& raw) const {
    FeatureMatrix m = raw;
    motion::normalize_rows(m, stats.style);
    return to_tensor(m);
}

template <typename T>
Tensor<T> GestureModel<T>::speech_encode(Tape<T>& tape, const Tensor<T>& normalized_feats,
                                         bool training, RngStream& rng) const {
    return speech.forward(tape, normalized_feats, cfg, training, rng);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> GestureModel<T>::style_encode(Tape<T>& tape,
                                                              const Tensor<T>& normalized_a,
                                                              bool training, RngStream& rng,
                                                              bool zero_posenc) const {
    return style.forward(tape, normalized_a, cfg, training, rng, zero_posenc);
}

template <typename T>
Tensor<T> GestureModel<T>::sample_embedding(Tape<T>& tape, const Tensor<T>& mu,
                                            const Tensor<T>& logvar, bool deterministic,
                                            RngStream& rng) const {
    if (deterministic) return mu;
    std::vector<T> eps(static_cast<std::size_t>(mu.size()));
    for (auto& v : eps) v = T(rng.normal());
    Tensor<T> noise = Tensor<T>::from({1, int(mu.size())}, std::move(eps));
    Tensor<T> sigma = tape.exp(tape.scale(logvar, T(0.5)));
    return tape.add(mu, tape.mul(sigma, noise));
}

namespace {

// Root-space expression of a world-space ground direction, on the tape:
// R_y(-yaw) applied to (fx, fz).
template <typename T>
Tensor<T> facing_in_root(Tape<T>& tape, const Tensor<T>& yaw, const geom::Vec2& facing) {
    Tensor<T> c = tape.cos(yaw);
    Tensor<T> s = tape.sin(yaw);
    Tensor<T> vx = tape.sub(tape.scale(c, T(facing.x)), tape.scale(s, T(facing.z)));
    Tensor<T> vz = tape.add(tape.scale(s, T(facing.x)), tape.scale(c, T(facing.z)));
    return tape.concat_cols({vx, vz});
}

}  // namespace

template <typename T>
DecodeState<T> GestureModel<T>::initial_state(Tape<T>& tape,
                                              const std::vector<double>& init_pose_state,
                                              const geom::Vec2& facing, const Tensor<T>& e) const {
    int dy = cfg.pose_width();
    if (int(init_pose_state.size()) != dy)
        fail(Errc::shape, "initial pose state must have width " + std::to_string(dy));
    int j = cfg.joints;

    std::vector<T> pose_row(init_pose_state.size());
    for (std::size_t i = 0; i < init_pose_state.size(); ++i) pose_row[i] = T(init_pose_state[i]);
    Tensor<T> pose = Tensor<T>::from({1, dy}, std::move(pose_row));
    Tensor<T> pose_norm = tape.mul(tape.sub(pose, pose_mean_t), pose_inv_std_t);

    // Initial root from the pose state's r_p / r_r entries.
    geom::Quat q{init_pose_state[std::size_t(15 * j + 3)], init_pose_state[std::size_t(15 * j + 4)],
                 init_pose_state[std::size_t(15 * j + 5)], init_pose_state[std::size_t(15 * j + 6)]};
    double yaw0 = 2.0 * std::atan2(q.y, q.w);
    Tensor<T> yaw = Tensor<T>::from({1, 1}, {T(yaw0)});
    Tensor<T> facing_rs = facing_in_root(tape, yaw, facing);

    auto [h1, h2] = initializer.forward(tape, tape.concat_cols({pose_norm, facing_rs, e}));

    DecodeState<T> st;
    st.h1 = h1;
    st.h2 = h2;
    // Previous pose part: prediction columns of the initial pose state.
    auto cols = motion::pose_prediction_columns(j);
    std::vector<T> part(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i)
        part[i] = T(init_pose_state[std::size_t(cols[i])]);
    st.pose_part = Tensor<T>::from({1, int(cols.size())}, std::move(part));
    st.root_pos = Tensor<T>::from(
        {1, 3}, {T(init_pose_state[std::size_t(15 * j)]), T(init_pose_state[std::size_t(15 * j + 1)]),
                 T(init_pose_state[std::size_t(15 * j + 2)])});
    st.root_yaw = yaw;
    return st;
}

template <typename T>
DecodeState<T> GestureModel<T>::decode_step(Tape<T>& tape, const DecodeState<T>& state,
                                            const Tensor<T>& s_t, const Tensor<T>& e,
                                            const geom::Vec2& facing, double dt) const {
    int j = cfg.joints;
    Tensor<T> facing_rs = facing_in_root(tape, state.root_yaw, facing);
    Tensor<T> in_vec = tape.concat_cols({state.pose_part, facing_rs});
    Tensor<T> in_norm = tape.mul(tape.sub(in_vec, dec_in_mean), dec_in_inv_std);
    Tensor<T> gru_in = tape.concat_cols({in_norm, s_t, e});

    Tensor<T> h1 = tape.gru_cell(gru_in, state.h1, decoder.gru1);
    Tensor<T> h2 = tape.gru_cell(h1, state.h2, decoder.gru2);
    Tensor<T> pred_norm = tape.linear(h2, decoder.head_w, decoder.head_b);
    Tensor<T> pred = tape.add(tape.mul(pred_norm, dec_out_std), dec_out_mean);

    // Update the root transform from the predicted root velocities.
    Tensor<T> vp = tape.slice_cols(pred, 15 * j, 3);
    Tensor<T> vr = tape.slice_cols(pred, 15 * j + 3, 3);
    Tensor<T> c = tape.cos(state.root_yaw);
    Tensor<T> s = tape.sin(state.root_yaw);
    Tensor<T> vpx = tape.slice_cols(vp, 0, 1);
    Tensor<T> vpy = tape.slice_cols(vp, 1, 1);
    Tensor<T> vpz = tape.slice_cols(vp, 2, 1);
    // world velocity = R_y(yaw) * vp
    Tensor<T> wx = tape.add(tape.mul(c, vpx), tape.mul(s, vpz));
    Tensor<T> wz = tape.sub(tape.mul(c, vpz), tape.mul(s, vpx));
    Tensor<T> delta = tape.scale(tape.concat_cols({wx, vpy, wz}), T(dt));
    Tensor<T> root_pos = tape.add(state.root_pos, delta);

    // Yaw component of exp(vr * dt): 2 * atan2(sin(a/2) * vr_y * dt / a, cos(a/2)).
    Tensor<T> s2dt2 = tape.scale(tape.row_sum(tape.mul(vr, vr)), T(dt * dt));
    Tensor<T> alpha = tape.sqrt_eps(s2dt2, T(1e-24));
    Tensor<T> half = tape.scale(alpha, T(0.5));
    Tensor<T> inv_alpha = tape.rsqrt_eps(s2dt2, T(1e-24));
    Tensor<T> vry_dt = tape.scale(tape.slice_cols(vr, 1, 1), T(dt));
    Tensor<T> qy = tape.mul(tape.sin(half), tape.mul(vry_dt, inv_alpha));
    Tensor<T> inc = tape.scale(tape.atan2(qy, tape.cos(half)), T(2));
    Tensor<T> root_yaw = tape.add(state.root_yaw, inc);

    DecodeState<T> next;
    next.h1 = h1;
    next.h2 = h2;
    next.pose_part = pred;
    next.root_pos = root_pos;
    next.root_yaw = root_yaw;
    return next;
}

template <typename T>
Rollout<T> GestureModel<T>::rollout(Tape<T>& tape, const Tensor<T>& speech_embeddings,
                                    const Tensor<T>& e, const std::vector<double>& init_pose_state,
                                    const geom::Vec2& facing, int frames, double fps) const {
    if (speech_embeddings.dim(0) < frames)
        fail(Errc::shape, "rollout: speech sequence shorter than requested frames (" +
                              std::to_string(speech_embeddings.dim(0)) + " < " +
                              std::to_string(frames) + ")");
    if (frames < 1) fail(Errc::shape, "rollout: needs at least one frame");
    DecodeState<T> state = initial_state(tape, init_pose_state, facing, e);
    std::vector<Tensor<T>> pose_rows, pos_rows, yaw_rows;
    pose_rows.reserve(std::size_t(frames));
    pos_rows.reserve(std::size_t(frames));
    yaw_rows.reserve(std::size_t(frames));
    double dt = 1.0 / fps;
    for (int t = 0; t < frames; ++t) {
        Tensor<T> s_t = tape.slice_rows(speech_embeddings, t, 1);
        state = decode_step(tape, state, s_t, e, facing, dt);
        pose_rows.push_back(state.pose_part);
        pos_rows.push_back(state.root_pos);
        yaw_rows.push_back(state.root_yaw);
    }
    Rollout<T> r;
    r.pose_part = tape.stack_rows(pose_rows);
    r.root_pos = tape.stack_rows(pos_rows);
    r.root_yaw = tape.stack_rows(yaw_rows);
    return r;
}

template <typename T>
FeatureMatrix GestureModel<T>::rollout_to_pose_states(const Rollout<T>& r) const {
    int j = cfg.joints;
    int t = r.pose_part.dim(0);
    int dy = cfg.pose_width();
    FeatureMatrix out(t, dy);
    const auto& part = r.pose_part.value();
    const auto& pos = r.root_pos.value();
    const auto& yaw = r.root_yaw.value();
    int dp = cfg.prediction_width();
    for (int f = 0; f < t; ++f) {
        double* row = out.row(f);
        const T* p = part.data() + std::size_t(f) * dp;
        for (int c = 0; c < 15 * j; ++c) row[c] = double(p[c]);
        row[15 * j + 0] = double(pos[std::size_t(f) * 3 + 0]);
        row[15 * j + 1] = double(pos[std::size_t(f) * 3 + 1]);
        row[15 * j + 2] = double(pos[std::size_t(f) * 3 + 2]);
        double half = double(yaw[std::size_t(f)]) / 2.0;
        geom::Quat q{std::cos(half), 0, std::sin(half), 0};
        q = q.canonicalized();
        row[15 * j + 3] = q.w;
        row[15 * j + 4] = q.x;
        row[15 * j + 5] = q.y;
        row[15 * j + 6] = q.z;
        for (int c = 0; c < 6; ++c) row[15 * j + 7 + c] = double(p[15 * j + c]);
    }
    return out;
}

template <typename T>
FeatureMatrix GestureModel<T>::generate(const FeatureMatrix& raw_speech,
                                        const FeatureMatrix& raw_style,
                                        const std::vector<double>& init_pose_state,
                                        const geom::Vec2& facing, int frames, double fps,
                                        bool deterministic, RngStream& rng) const {
    if (raw_speech.rows < frames)
        fail(Errc::shape, "generate: speech too short for requested frames");
    Tape<T> tape(/*grad_enabled=*/false);
    RngStream unused(0);
    Tensor<T> s = speech_encode(tape, normalized_speech(raw_speech), false, unused);
    auto [mu, logvar] = style_encode(tape, normalized_style(raw_style), false, unused);
    Tensor<T> e = sample_embedding(tape, mu, logvar, deterministic, rng);
    Rollout<T> r = rollout(tape, s, e, init_pose_state, facing, frames, fps);
    return rollout_to_pose_states(r);
}

template <typename T>
FeatureMatrix GestureModel<T>::generate_with_embedding(const FeatureMatrix& raw_speech,
                                                       const std::vector<double>& embedding,
                                                       const std::vector<double>& init_pose_state,
                                                       const geom::Vec2& facing, int frames,
                                                       double fps) const {
    if (int(embedding.size()) != cfg.d_embed)
        fail(Errc::shape, "style embedding must have width " + std::to_string(cfg.d_embed));
    if (raw_speech.rows < frames)
        fail(Errc::shape, "generate: speech too short for requested frames");
    Tape<T> tape(/*grad_enabled=*/false);
    RngStream unused(0);
    Tensor<T> s = speech_encode(tape, normalized_speech(raw_speech), false, unused);
    std::vector<T> ev(embedding.size());
    for (std::size_t i = 0; i < embedding.size(); ++i) ev[i] = T(embedding[i]);
    Tensor<T> e = Tensor<T>::from({1, cfg.d_embed}, std::move(ev));
    Rollout<T> r = rollout(tape, s, e, init_pose_state, facing, frames, fps);
    return rollout_to_pose_states(r);
}

template <typename T>
std::int64_t GestureModel<T>::parameter_count_with_prefix(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& p : params.items())
        if (p.name.rfind(prefix, 0) == 0) n += p.tensor.size();
    return n;
}

// ---------------------------------------------------------------------------
// KL / ELBO

template <typename T>
Tensor<T> kl_loss(Tape<T>& tape, const Tensor<T>& mu, const Tensor<T>& logvar) {
    // 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
    Tensor<T> term = tape.sub(tape.add(tape.exp(logvar), tape.mul(mu, mu)),
                              tape.add_scalar(logvar, T(1)));
    return tape.scale(tape.sum_all(term), T(0.5));
}

template <typename T>
Tensor<T> elbo_loss(Tape<T>& tape, const Tensor<T>& recon, const Tensor<T>& kl, T beta) {
    return tape.add(recon, tape.scale(kl, beta));
}

// ---------------------------------------------------------------------------

template struct SpeechEncoder<float>;
template struct SpeechEncoder<double>;
template struct StyleEncoder<float>;
template struct StyleEncoder<double>;
template struct HiddenStateInitializer<float>;
template struct HiddenStateInitializer<double>;
template struct RecurrentDecoder<float>;
template struct RecurrentDecoder<double>;
template class GestureModel<float>;
template class GestureModel<double>;
template Tensor<float> kl_loss<float>(Tape<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> kl_loss<double>(Tape<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> elbo_loss<float>(Tape<float>&, const Tensor<float>&, const Tensor<float>&,
                                        float);
template Tensor<double> elbo_loss<double>(Tape<double>&, const Tensor<double>&,
                                          const Tensor<double>&, double);

}  // namespace zeggs::model
