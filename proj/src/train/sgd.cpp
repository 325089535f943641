#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::train {

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0) throw ConfigError("SGD hyperparameters must be non-negative");
    for (const Tensor& p : params_) {
        if (!p.is_leaf()) throw ContractError("SGD parameters must be leaf tensors");
        velocity_.emplace_back(p.numel(), 0.0);
    }
}

void Sgd::set_velocities(std::vector<std::vector<double>> v) {
    if (v.size() != params_.size()) throw ContractError("velocity count does not match parameter count");
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i].size() != params_[i].numel()) throw ContractError("velocity size does not match parameter size");
    velocity_ = std::move(v);
}

void Sgd::set_lr(double lr) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    lr_ = lr;
}

void Sgd::set_momentum(double momentum) {
    if (!(momentum >= 0.0)) throw ConfigError("momentum must be non-negative");
    momentum_ = momentum;
}

void Sgd::step() {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!params_[i].has_grad()) throw ContractError("SGD step: parameter " + std::to_string(i) + " has no gradient");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        std::vector<double>& vel = velocity_[i];
        dispatch(p.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto data = p.template mutable_data<T>();
            const auto grad = p.template grad_data<T>();
            for (std::size_t j = 0; j < data.size(); ++j) {
                vel[j] = momentum_ * vel[j] + static_cast<double>(grad[j]) + weight_decay_ * static_cast<double>(data[j]);
                data[j] = static_cast<T>(static_cast<double>(data[j]) - lr_ * vel[j]);
            }
        });
        p.zero_grad();
    }
}

}  // namespace sdtn::train
