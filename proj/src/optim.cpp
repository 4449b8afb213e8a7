#include "morig/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace morig {

Parameter& ParamSet::add(const std::string& name, Tensor init, bool trainable) {
    if (params_.count(name))
        throw std::invalid_argument("ParamSet: duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(init);
    p->trainable = trainable;
    p->zero_grad();
    Parameter& ref = *p;
    params_[name] = std::move(p);
    return ref;
}

Parameter* ParamSet::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

const Parameter* ParamSet::find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

Parameter& ParamSet::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
    return *p;
}

std::vector<Parameter*> ParamSet::all() {
    std::vector<Parameter*> out;
    for (auto& [k, v] : params_) out.push_back(v.get());
    return out;
}

std::vector<const Parameter*> ParamSet::all() const {
    std::vector<const Parameter*> out;
    for (auto& [k, v] : params_) out.push_back(v.get());
    return out;
}

int64_t ParamSet::total_values() const {
    int64_t n = 0;
    for (auto& [k, v] : params_) n += v->value.numel();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& [k, v] : params_) v->zero_grad();
}

bool Adam::step(ParamSet& params, std::string* diagnostics) {
    for (Parameter* p : params.all()) {
        if (!p->trainable) continue;
        for (double g : p->grad)
            if (!std::isfinite(g)) {
                if (diagnostics)
                    *diagnostics = "non-finite gradient in parameter '" + p->name + "'";
                return false;
            }
    }
    step_ += 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (Parameter* p : params.all()) {
        if (!p->trainable) continue;
        Moments& mo = state_[p->name];
        size_t n = size_t(p->value.numel());
        if (mo.m.size() != n) {
            mo.m.assign(n, 0.0);
            mo.v.assign(n, 0.0);
        }
        std::vector<double> next(n);
        const auto& val = *p->value.data;
        for (size_t i = 0; i < n; ++i) {
            double g = i < p->grad.size() ? p->grad[i] : 0.0;
            mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
            mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
            double mh = mo.m[i] / bc1;
            double vh = mo.v[i] / bc2;
            next[i] = val[i] - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
        p->value = Tensor(p->value.shape, std::move(next));
    }
    return true;
}

GradCheckReport grad_check(ParamSet& params, const std::function<Tensor()>& loss_fn,
                           double tolerance, int probes, uint64_t seed, double h) {
    GradCheckReport report;
    // analytic pass
    params.zero_grad();
    {
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
    }
    std::map<std::string, std::vector<double>> analytic;
    for (Parameter* p : params.all()) analytic[p->name] = p->grad;

    auto eval = [&]() {
        Tape tape;
        return loss_fn().scalar();
    };

    Rng rng(Rng::mix(seed ^ 0x9d389d3946af2a1cull));
    for (Parameter* p : params.all()) {
        if (!p->trainable) continue;
        GradCheckEntry entry;
        entry.name = p->name;
        int64_t n = p->value.numel();
        const auto& g = analytic[p->name];
        for (int k = 0; k < probes; ++k) {
            int64_t i = rng.uniform_int(n);
            std::vector<double> bumped = *p->value.data;
            double orig = bumped[size_t(i)];
            Tensor saved = p->value;
            bumped[size_t(i)] = orig + h;
            p->value = Tensor(saved.shape, bumped);
            double fp = eval();
            bumped[size_t(i)] = orig - h;
            p->value = Tensor(saved.shape, bumped);
            double fm = eval();
            p->value = saved;
            double fd = (fp - fm) / (2.0 * h);
            double an = i < int64_t(g.size()) ? g[size_t(i)] : 0.0;
            double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
            double rel = std::fabs(fd - an) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.ok = entry.max_rel_err < tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.ok = report.ok && entry.ok;
        report.entries.push_back(entry);
    }
    return report;
}

} // namespace morig
