#pragma once

#include <string>
#include <vector>

#include "invjoint/tensor.hpp"

namespace invjoint {

// Parameters that are updated together. A frozen group is never touched by a
// step, whatever its gradients hold.
struct ParamGroup {
    std::string name;
    std::vector<Tensor> parameters;
    bool frozen = false;
};

struct OptimizerState {
    double base_lr = 0.01;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    int epoch = 0;
    int total_epochs = 50;

    // Cosine annealing to zero: lr(t) = 0.5 * base_lr * (1 + cos(pi * t / T)).
    double learning_rate() const;
    void validate() const;
};

// SGD with heavy-ball momentum and decoupled weight decay:
//   v <- momentum * v + grad
//   p <- p - lr * v - lr * weight_decay * p
class Sgd {
public:
    explicit Sgd(std::vector<ParamGroup> groups);

    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }
    ParamGroup& group(const std::string& name);

    // Throws ContractError if a parameter of a non-frozen group has no gradient.
    void step(const OptimizerState& state);
    void zero_grad();

    // Momentum buffers indexed [group][parameter]; empty until first update.
    const std::vector<std::vector<std::vector<double>>>& momentum_buffers() const { return velocity_; }
    void set_momentum_buffers(std::vector<std::vector<std::vector<double>>> buffers);

private:
    std::vector<ParamGroup> groups_;
    std::vector<std::vector<std::vector<double>>> velocity_;
};

// Free-function form over externally owned groups and buffers.
void sgd_step(std::vector<ParamGroup>& groups, const OptimizerState& state,
              std::vector<std::vector<std::vector<double>>>& velocity);

}  // namespace invjoint
