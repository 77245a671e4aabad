#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "adxr/tensor.hpp"

namespace adxr {

// Glob-style match with '*' wildcards (e.g. "ldm.F.*.xmod.*").
inline bool glob_match(const std::string& pattern, const std::string& name) {
    std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Named parameter table with per-name freeze flags and AdamW moment buffers.
// Frozen parameters carry requires_grad=false, so no gradient is ever recorded
// for them, and the optimizer skips them entirely: their bits never change.
template <typename S>
class ParamStore {
public:
    struct Param {
        Tensor<S> tensor;
        bool trainable = true;
        std::vector<S> m, v;  // exist iff trainable and stepped
    };

    Tensor<S> create(const std::string& name, Tensor<S> init) {
        check(params_.find(name) == params_.end(), "ParamStore: duplicate name " + name);
        init.set_requires_grad(true);
        params_[name] = Param{init, true, {}, {}};
        return init;
    }

    // Registers a buffer that is never trained (e.g. latent scales).
    Tensor<S> create_buffer(const std::string& name, Tensor<S> init) {
        check(params_.find(name) == params_.end(), "ParamStore: duplicate name " + name);
        init.set_requires_grad(false);
        params_[name] = Param{init, false, {}, {}};
        return init;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor<S> get(const std::string& name) const {
        auto it = params_.find(name);
        check(it != params_.end(), "ParamStore: unknown name " + name);
        return it->second.tensor;
    }

    bool trainable(const std::string& name) const {
        auto it = params_.find(name);
        check(it != params_.end(), "ParamStore: unknown name " + name);
        return it->second.trainable;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [k, _] : params_) out.push_back(k);
        return out;
    }

    std::size_t count() const { return params_.size(); }

    std::size_t num_trainable() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_)
            if (p.trainable) ++n;
        return n;
    }

    // Marks exactly the parameters matching any pattern as trainable and
    // freezes everything else. Every pattern must match at least one name.
    void apply_freeze_mask(const std::vector<std::string>& patterns) {
        for (const auto& pat : patterns) {
            bool hit = false;
            for (const auto& [name, _] : params_)
                if (glob_match(pat, name)) {
                    hit = true;
                    break;
                }
            if (!hit) throw ConfigError("freeze mask pattern matches no parameter: " + pat);
        }
        for (auto& [name, p] : params_) {
            bool t = false;
            for (const auto& pat : patterns)
                if (glob_match(pat, name)) {
                    t = true;
                    break;
                }
            set_trainable_one(p, t);
        }
    }

    void set_all_trainable() {
        for (auto& [_, p] : params_) set_trainable_one(p, true);
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [k, p] : params_)
            if (p.trainable) out.push_back(k);
        return out;
    }

    void zero_grads() {
        for (auto& [_, p] : params_) p.tensor.zero_grad();
    }

    std::int64_t step_count() const { return step_; }
    void reset_step_count() { step_ = 0; }

    // Decoupled weight decay AdamW. Parameters with no recorded gradient this
    // step see a zero gradient (decay still applies). Frozen parameters are
    // untouched, moments and all.
    void adamw_step(const AdamConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (auto& [name, p] : params_) {
            if (!p.trainable) continue;
            const std::size_t n = p.tensor.size();
            if (p.tensor.has_grad())
                check(p.tensor.grad().size() == n,
                      "adamw_step: gradient/parameter shape mismatch for " + name);
            if (p.m.empty()) {
                p.m.assign(n, S(0));
                p.v.assign(n, S(0));
            }
            const S* g = p.tensor.has_grad() ? p.tensor.grad().data() : nullptr;
            S* w = p.tensor.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = g ? static_cast<double>(g[i]) : 0.0;
                double m = cfg.beta1 * static_cast<double>(p.m[i]) + (1.0 - cfg.beta1) * gi;
                double v = cfg.beta2 * static_cast<double>(p.v[i]) + (1.0 - cfg.beta2) * gi * gi;
                p.m[i] = static_cast<S>(m);
                p.v[i] = static_cast<S>(v);
                const double mh = m / bc1;
                const double vh = v / bc2;
                double wi = static_cast<double>(w[i]);
                wi -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * wi);
                w[i] = static_cast<S>(wi);
            }
        }
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [name, p] : params_) fn(name, p);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [name, p] : params_) fn(name, p);
    }

private:
    void set_trainable_one(Param& p, bool t) {
        p.trainable = t;
        p.tensor.set_requires_grad(t);
        if (!t) {
            p.m.clear();
            p.v.clear();
            p.tensor.zero_grad();
        }
    }

    std::map<std::string, Param> params_;  // ordered: iteration is deterministic
    std::int64_t step_ = 0;
};

}  // namespace adxr
