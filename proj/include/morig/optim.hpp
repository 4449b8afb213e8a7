#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "morig/tensor.hpp"

namespace morig {

// Owns the named parameters of one or more models. Iteration order is the
// sorted name order everywhere (optimizer, checkpoints, gradient checks) so
// runs replay bit-exactly.
class ParamSet {
  public:
    Parameter& add(const std::string& name, Tensor init, bool trainable = true);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    size_t size() const { return params_.size(); }
    int64_t total_values() const;
    void zero_grad();

  private:
    std::map<std::string, std::unique_ptr<Parameter>> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a ParamSet. step() refuses to apply non-finite gradients and
// reports which parameter was bad.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Returns false (and fills `diagnostics`) if any trainable gradient is
    // non-finite; in that case no parameter is modified.
    bool step(ParamSet& params, std::string* diagnostics = nullptr);

    int64_t step_count() const { return step_; }
    AdamConfig& config() { return cfg_; }

    // Moment buffers keyed by parameter name (for checkpoint/resume).
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments>& state() { return state_; }
    void set_step_count(int64_t s) { step_ = s; }

  private:
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

// ---- finite-difference gradient checking -----------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool ok = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool ok = true;
};

// Compares analytic gradients of `loss_fn` (which must build its graph from
// the given ParamSet on the active tape) against central differences at
// `probes` randomly chosen entries per parameter. Failures are reported, not
// thrown.
GradCheckReport grad_check(ParamSet& params, const std::function<Tensor()>& loss_fn,
                           double tolerance = 1e-4, int probes = 5, uint64_t seed = 7,
                           double h = 1e-5);

} // namespace morig
