#include "optim.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace digl {

Tensor& add_parameter(ParameterStore& store, const std::string& path, Tensor t) {
  t.requires_grad = true;
  auto [it, inserted] = store.emplace(path, std::move(t));
  if (!inserted) throw UsageError("parameter store: duplicate path '" + path + "'");
  return it->second;
}

void init_fan_in(Tensor& t, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values) v = dist(rng);
}

void adam_step(ParameterStore& store, AdamState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [path, p] : store) {
    if (p.grad.size() != p.values.size()) {
      throw UsageError("adam_step: missing gradient for parameter '" + path + "'");
    }
    AdamState::Slot& slot = state.slots[path];
    if (slot.m.size() != p.values.size()) {
      slot.m.assign(p.values.size(), 0.0);
      slot.v.assign(p.values.size(), 0.0);
    }
    for (size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.grad[i] + state.weight_decay * p.values[i];
      slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g;
      slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p.zero_grad();
  }
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

namespace {

double rel_err(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff < 1e-8) return 0.0;  // below central-difference roundoff
  return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

double eval_loss(ParameterStore& store, const std::function<Var(Tape&)>& loss_fn) {
  (void)store;
  Tape tape;
  Var loss = loss_fn(tape);
  return tape.scalar_value(loss);
}

}  // namespace

GradCheckReport finite_diff_check(ParameterStore& store,
                                  const std::function<Var(Tape&)>& loss_fn, double step,
                                  double tolerance, uint64_t subsample_seed) {
  const double base0 = eval_loss(store, loss_fn);
  const double base1 = eval_loss(store, loss_fn);
  if (!(base0 == base1)) {
    throw ValidationError("finite_diff_check: loss_fn is not deterministic (" +
                          std::to_string(base0) + " vs " + std::to_string(base1) + ")");
  }

  // analytic pass
  for (auto& [path, p] : store) p.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }

  std::mt19937_64 rng(mix_seed(subsample_seed, 0xfdc));
  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& [path, p] : store) {
    if (p.grad.size() != p.values.size()) {
      throw ValidationError("finite_diff_check: no gradient recorded for '" + path + "'");
    }
    const int64_t n = p.numel();
    std::vector<int64_t> idx;
    if (n <= 200) {
      idx.resize(n);
      for (int64_t i = 0; i < n; ++i) idx[i] = i;
    } else {
      idx.resize(200);
      std::uniform_int_distribution<int64_t> dist(0, n - 1);
      for (auto& i : idx) i = dist(rng);
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }
    GradCheckEntry entry;
    entry.path = path;
    for (int64_t i : idx) {
      const double keep = p.values[i];
      p.values[i] = keep + step;
      const double up = eval_loss(store, loss_fn);
      p.values[i] = keep - step;
      const double down = eval_loss(store, loss_fn);
      p.values[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err(p.grad[i], numeric));
      entry.checked += 1;
    }
    entry.pass = entry.max_rel_err < tolerance;
    report.all_pass = report.all_pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace digl
