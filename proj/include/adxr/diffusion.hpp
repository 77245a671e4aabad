#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adxr/rng.hpp"
#include "adxr/tensor.hpp"

namespace adxr {

enum class ScheduleKind { linear };

// Variance schedule for the forward process. alpha_bar is the running product
// of (1 - beta_t); it is strictly decreasing and stays positive.
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double beta_at(std::size_t t) const {  // t in [1, T]
        check(t >= 1 && t <= T, "NoiseSchedule: t out of range");
        return beta[t - 1];
    }
    double alpha_at(std::size_t t) const {
        check(t >= 1 && t <= T, "NoiseSchedule: t out of range");
        return alpha[t - 1];
    }
    double alpha_bar_at(std::size_t t) const {
        check(t >= 1 && t <= T, "NoiseSchedule: t out of range");
        return alpha_bar[t - 1];
    }
};

inline NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end,
                                   ScheduleKind kind = ScheduleKind::linear) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    (void)kind;  // only linear for now
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    if (T == 1) {
        s.beta[0] = beta_end;
    } else {
        for (std::size_t i = 0; i < T; ++i)
            s.beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                         static_cast<double>(T - 1);
    }
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

// Closed-form forward process: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
// Linear in both inputs; records on the tape when either requires grad.
template <typename S>
Tensor<S> q_sample(const Tensor<S>& z0, std::size_t t, const Tensor<S>& eps,
                   const NoiseSchedule& sched) {
    check(eps.shape() == z0.shape(), "q_sample: eps shape must match z0");
    const double ab = sched.alpha_bar_at(t);
    return add(scale(z0, static_cast<S>(std::sqrt(ab))),
               scale(eps, static_cast<S>(std::sqrt(1.0 - ab))));
}

// One ancestral reverse step:
//   z_{t-1} = (z_t - (beta_t / sqrt(1-abar_t)) eps_hat) / sqrt(alpha_t)
//             + sqrt(beta_t) * noise
// noise must be all-zeros at t=1. Not recorded on the tape.
template <typename S>
Tensor<S> ddpm_step(const Tensor<S>& z_t, const Tensor<S>& eps_hat, std::size_t t,
                    const NoiseSchedule& sched, const Tensor<S>& noise) {
    check(eps_hat.shape() == z_t.shape() && noise.shape() == z_t.shape(),
          "ddpm_step: shape mismatch");
    const double beta = sched.beta_at(t);
    const double ab = sched.alpha_bar_at(t);
    if (t == 1) {
        for (std::size_t i = 0; i < noise.size(); ++i)
            check(noise.data()[i] == S(0), "ddpm_step: noise must be zero at t=1");
    }
    const S c_eps = static_cast<S>(beta / std::sqrt(1.0 - ab));
    const S inv_sqrt_alpha = static_cast<S>(1.0 / std::sqrt(sched.alpha_at(t)));
    const S sigma = static_cast<S>(std::sqrt(beta));
    Tensor<S> out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] =
            (z_t.data()[i] - c_eps * eps_hat.data()[i]) * inv_sqrt_alpha + sigma * noise.data()[i];
    return out;
}

// eps-prediction objective for one sample: MSE between injected and predicted
// noise. The denoiser callable carries its conditioning; gradient flows into
// whatever the callable touches.
template <typename S>
Tensor<S> eps_loss(const std::function<Tensor<S>(const Tensor<S>&, std::size_t)>& denoiser,
                   const Tensor<S>& z0, std::size_t t, const Tensor<S>& eps,
                   const NoiseSchedule& sched) {
    Tensor<S> z_t = q_sample(z0, t, eps, sched);
    Tensor<S> eps_hat = denoiser(z_t, t);
    check(eps_hat.shape() == eps.shape(), "eps_loss: denoiser output shape mismatch");
    return mse_loss(eps_hat, eps);
}

// Full ancestral chain from seeded standard-normal z_T. Deterministic given
// (seed, stream, denoiser, schedule). Raises NumericError naming the step if
// the latent leaves the finite range.
template <typename S>
Tensor<S> sample(const std::function<Tensor<S>(const Tensor<S>&, std::size_t)>& denoiser,
                 const Shape& latent_shape, const NoiseSchedule& sched, std::uint64_t seed,
                 std::uint64_t stream = 0) {
    Rng rng = Rng::derive(seed, stream);
    Tensor<S> z = Tensor<S>::randn(latent_shape, rng);
    for (std::size_t t = sched.T; t >= 1; --t) {
        Tensor<S> eps_hat = denoiser(z, t);
        Tensor<S> noise = t > 1 ? Tensor<S>::randn(latent_shape, rng) : Tensor<S>::zeros(latent_shape);
        z = ddpm_step(z, eps_hat, t, sched, noise);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (!std::isfinite(static_cast<double>(z.data()[i])))
                throw NumericError("sample: non-finite latent at step t=" + std::to_string(t));
    }
    return z;
}

}  // namespace adxr
