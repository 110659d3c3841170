#include <cmath>

#include "zeggs/train.hpp"

namespace zeggs::train {

void TrainingConfig::validate() const {
    if (lr < 0) fail(Errc::config, "train config: lr must be non-negative");
    if (lr_decay <= 0 || lr_decay > 1) fail(Errc::config, "train config: lr_decay must be in (0,1]");
    if (lr_decay_every <= 0) fail(Errc::config, "train config: lr_decay_every must be positive");
    if (batch_size < 1) fail(Errc::config, "train config: batch_size must be positive");
    if (max_iters < 1) fail(Errc::config, "train config: max_iters must be positive");
    if (target_frames < 2) fail(Errc::config, "train config: target_frames must be at least 2");
    if (!(256 <= style_min && style_min <= style_max))
        fail(Errc::config, "train config: need 256 <= style_min <= style_max");
    if (target_frames > style_min)
        fail(Errc::config, "train config: target_frames must not exceed style_min");
    if (speed_aug < 0 || speed_aug >= 0.5) fail(Errc::config, "train config: speed_aug must be in [0,0.5)");
    if (kl_width <= 0) fail(Errc::config, "train config: kl_width must be positive");
    if (grad_clip <= 0) fail(Errc::config, "train config: grad_clip must be positive");
}

double lr_at(const TrainingConfig& cfg, std::int64_t iter) {
    return cfg.lr * std::pow(cfg.lr_decay, double(iter / cfg.lr_decay_every));
}

double kl_weight_at(const TrainingConfig& cfg, std::int64_t iter) {
    return 1.0 / (1.0 + std::exp(-(double(iter) - cfg.kl_center) / cfg.kl_width));
}

template <typename T>
void RAdam<T>::init(const tc::ParameterSet<T>& params) {
    slots.clear();
    slots.reserve(params.count());
    for (const auto& p : params.items()) {
        Slot s;
        s.m.assign(std::size_t(p.tensor.size()), T(0));
        s.v.assign(std::size_t(p.tensor.size()), T(0));
        slots.push_back(std::move(s));
    }
    step_count = 0;
}

template <typename T>
double RAdam<T>::rho_at(std::int64_t t, double beta2) {
    double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    double b2t = std::pow(beta2, double(t));
    return rho_inf - 2.0 * double(t) * b2t / (1.0 - b2t);
}

template <typename T>
bool RAdam<T>::step(tc::ParameterSet<T>& params, double lr) {
    if (slots.size() != params.count()) fail(Errc::state, "optimizer not initialized for this model");
    for (const auto& p : params.items())
        for (T g : p.tensor.grad())
            if (!std::isfinite(double(g))) return false;

    std::int64_t t = step_count + 1;
    double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    double rho_t = rho_at(t, beta2);
    double m_corr = 1.0 - std::pow(beta1, double(t));
    double v_corr = 1.0 - std::pow(beta2, double(t));
    bool rectified = rho_t > 4.0;
    double r_t = 1.0;
    if (rectified)
        r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                        ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

    const auto& items = params.items();
    for (std::size_t pi = 0; pi < items.size(); ++pi) {
        auto& slot = slots[pi];
        auto& values = items[pi].tensor.value();
        const auto& grads = items[pi].tensor.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            double g = double(grads[i]);
            double m = beta1 * double(slot.m[i]) + (1.0 - beta1) * g;
            double v = beta2 * double(slot.v[i]) + (1.0 - beta2) * g * g;
            slot.m[i] = T(m);
            slot.v[i] = T(v);
            double m_hat = m / m_corr;
            double update;
            if (rectified) {
                double v_hat = std::sqrt(v / v_corr);
                update = lr * r_t * m_hat / (v_hat + eps);
            } else {
                // Un-adapted momentum update while the variance estimate is
                // untrustworthy (rho_t <= 4).
                update = lr * m_hat;
            }
            values[i] = T(double(values[i]) - update);
        }
    }
    step_count = t;
    return true;
}

template class RAdam<float>;
template class RAdam<double>;

}  // namespace zeggs::train
