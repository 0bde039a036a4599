#pragma once

// Few-shot model: a fully connected backbone (theta), one linear output head
// per hierarchy level (phi^h), and a square linear transform (omega) that can
// be inserted between backbone features and the head.

#include "hml/array.hpp"
#include "hml/autodiff.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hml {

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;  // empty: features are the raw input
    Activation activation = Activation::relu;
    // Output dim of each head; key is the level id 1..H.
    std::map<int, std::size_t> head_dims;

    std::size_t feature_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
    void validate() const;
};

// weight is fan_in x fan_out, bias 1 x fan_out.
struct Dense {
    Array weight;
    Array bias;

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }
    std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct ModelParams {
    Architecture arch;
    std::vector<Dense> backbone;
    std::map<int, Dense> heads;
    Dense transform;
    // Whether the transform sits between features and head at adaptation
    // and test time. Set once a model has been trained with it.
    bool transform_enabled = false;

    const Dense& head(int level) const;
    std::size_t parameter_count() const;
};

// Closed-form count from layer shapes alone.
std::size_t parameter_count(const Architecture& arch);

bool bitwise_equal(const Dense& a, const Dense& b) noexcept;
bool bitwise_equal(const ModelParams& a, const ModelParams& b) noexcept;

// Deterministic in (arch, seed). Weights ~ N(0, 1/fan_in), biases zero,
// transform exactly identity.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

// Fresh head for `level`: weights ~ N(0, (init_scale)^2 / fan_in), zero bias.
// Backbone and transform are copied untouched.
ModelParams replace_head(const ModelParams& params, int level, std::size_t new_output_dim, double init_scale,
                         std::uint64_t seed);

// Differentiable views of the parameters.
struct DenseVar {
    ad::Var weight;
    ad::Var bias;
};

DenseVar as_params(const Dense& d);
DenseVar as_constants(const Dense& d);
Dense values(const DenseVar& d);

// The trainable pieces used for one forward pass.
struct Network {
    std::vector<DenseVar> backbone;
    DenseVar head;
    std::optional<DenseVar> transform;  // set: features pass through it
    Activation activation = Activation::relu;

    std::vector<ad::Var> backbone_vars() const;
    std::vector<ad::Var> head_vars() const { return {head.weight, head.bias}; }
};

ad::Var features(const Network& net, const ad::Var& x);
ad::Var forward(const Network& net, const ad::Var& x);

// Value-level forward: logits or regression outputs for head `level`.
Array forward(const ModelParams& params, int level, const Array& x, bool use_transform);
// Backbone (and, when requested, transform) output features.
Array feature_values(const ModelParams& params, const Array& x, bool use_transform);

}  // namespace hml
