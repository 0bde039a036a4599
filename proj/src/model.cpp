#include "hml/model.hpp"

#include "hml/error.hpp"
#include "hml/rng.hpp"

#include <cmath>
#include <random>

namespace hml {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ValidationError("unknown activation '" + s + "' (expected tanh or relu)");
}

void Architecture::validate() const {
    if (input_dim == 0) throw ValidationError("architecture: input_dim must be positive");
    for (auto h : hidden)
        if (h == 0) throw ValidationError("architecture: hidden widths must be positive");
    if (head_dims.empty()) throw ValidationError("architecture: at least one head is required");
    int expected = 1;
    for (const auto& [level, dim] : head_dims) {
        if (level != expected++) throw ValidationError("architecture: head levels must be 1..H without gaps");
        if (dim == 0) throw ValidationError("architecture: head output dims must be positive");
    }
}

const Dense& ModelParams::head(int level) const {
    const auto it = heads.find(level);
    if (it == heads.end()) throw ValidationError("model: no head at level " + std::to_string(level));
    return it->second;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = transform.parameter_count();
    for (const auto& d : backbone) n += d.parameter_count();
    for (const auto& [_, d] : heads) n += d.parameter_count();
    return n;
}

std::size_t parameter_count(const Architecture& arch) {
    std::size_t n = 0;
    std::size_t in = arch.input_dim;
    for (auto h : arch.hidden) {
        n += in * h + h;
        in = h;
    }
    for (const auto& [_, dim] : arch.head_dims) n += in * dim + dim;
    n += in * in + in;
    return n;
}

bool bitwise_equal(const Dense& a, const Dense& b) noexcept {
    return bitwise_equal(a.weight, b.weight) && bitwise_equal(a.bias, b.bias);
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) noexcept {
    if (a.backbone.size() != b.backbone.size() || a.heads.size() != b.heads.size()) return false;
    for (std::size_t i = 0; i < a.backbone.size(); ++i)
        if (!bitwise_equal(a.backbone[i], b.backbone[i])) return false;
    for (const auto& [level, d] : a.heads) {
        const auto it = b.heads.find(level);
        if (it == b.heads.end() || !bitwise_equal(d, it->second)) return false;
    }
    return a.transform_enabled == b.transform_enabled && bitwise_equal(a.transform, b.transform);
}

namespace {

Dense random_dense(std::size_t in, std::size_t out, double scale, Engine& rng) {
    Dense d{Array(in, out), Array(1, out)};
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = scale / std::sqrt(static_cast<double>(in));
    for (double& w : d.weight.data()) w = sd * normal(rng);
    return d;
}

}  // namespace

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    Engine rng = make_engine(seed, "init");
    std::size_t in = arch.input_dim;
    for (auto h : arch.hidden) {
        p.backbone.push_back(random_dense(in, h, 1.0, rng));
        in = h;
    }
    for (const auto& [level, dim] : arch.head_dims) p.heads.emplace(level, random_dense(in, dim, 1.0, rng));
    p.transform = Dense{Array::identity(in), Array(1, in)};
    return p;
}

ModelParams replace_head(const ModelParams& params, int level, std::size_t new_output_dim, double init_scale,
                         std::uint64_t seed) {
    if (new_output_dim == 0) throw ValidationError("replace_head: output dim must be positive");
    if (!params.heads.contains(level)) throw ValidationError("replace_head: no head at level " + std::to_string(level));
    ModelParams out = params;
    Engine rng = make_engine(seed, "head", static_cast<std::uint64_t>(level));
    out.heads[level] = random_dense(params.arch.feature_dim(), new_output_dim, init_scale, rng);
    out.arch.head_dims[level] = new_output_dim;
    return out;
}

DenseVar as_params(const Dense& d) { return {ad::Var::param(d.weight), ad::Var::param(d.bias)}; }
DenseVar as_constants(const Dense& d) { return {ad::Var::constant(d.weight), ad::Var::constant(d.bias)}; }
Dense values(const DenseVar& d) { return {d.weight.value(), d.bias.value()}; }

std::vector<ad::Var> Network::backbone_vars() const {
    std::vector<ad::Var> out;
    for (const auto& d : backbone) {
        out.push_back(d.weight);
        out.push_back(d.bias);
    }
    return out;
}

ad::Var features(const Network& net, const ad::Var& x) {
    ad::Var h = x;
    for (const auto& layer : net.backbone) {
        h = ad::add_bias(ad::matmul(h, layer.weight), layer.bias);
        h = net.activation == Activation::tanh ? ad::tanh(h) : ad::relu(h);
    }
    if (net.transform) h = ad::add_bias(ad::matmul(h, net.transform->weight), net.transform->bias);
    return h;
}

ad::Var forward(const Network& net, const ad::Var& x) {
    const ad::Var f = features(net, x);
    if (f.cols() != net.head.weight.rows())
        throw ShapeError("forward: head expects " + std::to_string(net.head.weight.rows()) + " features, got " +
                         f.value().shape_string());
    return ad::add_bias(ad::matmul(f, net.head.weight), net.head.bias);
}

namespace {

Network constant_network(const ModelParams& params, const Dense* head, bool use_transform) {
    Network net;
    net.activation = params.arch.activation;
    for (const auto& d : params.backbone) net.backbone.push_back(as_constants(d));
    if (head) net.head = as_constants(*head);
    if (use_transform) net.transform = as_constants(params.transform);
    return net;
}

void check_input(const ModelParams& params, const Array& x) {
    if (x.cols() != params.arch.input_dim)
        throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(params.arch.input_dim));
}

}  // namespace

Array forward(const ModelParams& params, int level, const Array& x, bool use_transform) {
    check_input(params, x);
    const Dense& head = params.head(level);
    ad::NoGradGuard no_grad;
    return forward(constant_network(params, &head, use_transform), ad::Var::constant(x)).value();
}

Array feature_values(const ModelParams& params, const Array& x, bool use_transform) {
    check_input(params, x);
    ad::NoGradGuard no_grad;
    return features(constant_network(params, nullptr, use_transform), ad::Var::constant(x)).value();
}

}  // namespace hml
