#include "invjoint/optim.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "invjoint/errors.hpp"

namespace invjoint {

double OptimizerState::learning_rate() const {
    validate();
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

void OptimizerState::validate() const {
    if (!(base_lr > 0)) throw ContractError("base_lr must be positive");
    if (!(weight_decay >= 0)) throw ContractError("weight_decay must be non-negative");
    if (!(momentum >= 0 && momentum < 1)) throw ContractError("momentum must lie in [0,1)");
    if (total_epochs <= 0) throw ContractError("total_epochs must be positive");
    if (epoch < 0 || epoch > total_epochs) throw ContractError("epoch outside [0, total_epochs]");
}

Sgd::Sgd(std::vector<ParamGroup> groups) : groups_(std::move(groups)) {
    std::unordered_set<const void*> seen;
    for (const auto& g : groups_)
        for (const auto& p : g.parameters) {
            if (!p.requires_grad()) throw ContractError("parameter in group '" + g.name + "' does not require grad");
            if (!seen.insert(p.id()).second)
                throw ContractError("parameter appears in more than one group ('" + g.name + "')");
        }
    velocity_.resize(groups_.size());
    for (std::size_t i = 0; i < groups_.size(); ++i) velocity_[i].resize(groups_[i].parameters.size());
}

ParamGroup& Sgd::group(const std::string& name) {
    for (auto& g : groups_)
        if (g.name == name) return g;
    throw ContractError("no parameter group named '" + name + "'");
}

void Sgd::step(const OptimizerState& state) { sgd_step(groups_, state, velocity_); }

void Sgd::zero_grad() {
    for (auto& g : groups_)
        for (auto& p : g.parameters) p.zero_grad();
}

void Sgd::set_momentum_buffers(std::vector<std::vector<std::vector<double>>> buffers) {
    if (buffers.size() != groups_.size()) throw ContractError("momentum buffer group count mismatch");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (buffers[g].size() != groups_[g].parameters.size())
            throw ContractError("momentum buffer count mismatch in group '" + groups_[g].name + "'");
        for (std::size_t i = 0; i < buffers[g].size(); ++i)
            if (!buffers[g][i].empty() && buffers[g][i].size() != groups_[g].parameters[i].numel())
                throw ContractError("momentum buffer size mismatch in group '" + groups_[g].name + "'");
    }
    velocity_ = std::move(buffers);
}

void sgd_step(std::vector<ParamGroup>& groups, const OptimizerState& state,
              std::vector<std::vector<std::vector<double>>>& velocity) {
    const double lr = state.learning_rate();
    velocity.resize(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        auto& group = groups[gi];
        if (group.frozen) continue;
        for (const auto& p : group.parameters)
            if (!p.has_grad())
                throw ContractError("missing gradient for a parameter of unfrozen group '" + group.name + "'");
        velocity[gi].resize(group.parameters.size());
        for (std::size_t pi = 0; pi < group.parameters.size(); ++pi) {
            auto& param = group.parameters[pi];
            auto values = param.mutable_data();
            auto grad = param.grad();
            auto& v = velocity[gi][pi];
            if (v.empty()) v.assign(values.size(), 0.0);
            for (std::size_t k = 0; k < values.size(); ++k) {
                v[k] = state.momentum * v[k] + grad[k];
                values[k] -= lr * v[k] + lr * state.weight_decay * values[k];
            }
        }
    }
}

}  // namespace invjoint
