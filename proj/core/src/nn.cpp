#include "volwmc/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"

namespace volwmc::nn {

Activation parse_activation(std::string_view name)
{
    if (name == "elu") return Activation::Elu;
    if (name == "linear") return Activation::Linear;
    if (name == "softmax") return Activation::Softmax;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

const char* to_string(Activation a)
{
    switch (a) {
    case Activation::Elu: return "elu";
    case Activation::Linear: return "linear";
    case Activation::Softmax: return "softmax";
    }
    return "?";
}

LossHead parse_loss_head(std::string_view name)
{
    if (name == "mse") return LossHead::Mse;
    if (name == "vae") return LossHead::VaeElbo;
    if (name == "wd" || name == "weight-decoder") return LossHead::WeightDecoder;
    throw ConfigError("unregistered loss head '" + std::string(name) + "'");
}

const char* to_string(LossHead head)
{
    switch (head) {
    case LossHead::Mse: return "mse";
    case LossHead::VaeElbo: return "vae";
    case LossHead::WeightDecoder: return "wd";
    }
    return "?";
}

double elu(double x)
{
    return x >= 0.0 ? x : std::expm1(x);
}

namespace {

void apply_activation(Activation a, Eigen::MatrixXd& m)
{
    switch (a) {
    case Activation::Linear:
        break;
    case Activation::Elu:
        m = m.unaryExpr([](double x) { return elu(x); });
        break;
    case Activation::Softmax:
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            auto col = m.col(c);
            const double mx = col.maxCoeff();
            col = (col.array() - mx).exp().matrix();
            col /= col.sum();
        }
        break;
    }
}

} // namespace

void Gradients::set_zero()
{
    for (auto& w : weights) w.setZero();
    for (auto& b : bias) b.setZero();
}

Eigen::VectorXd Gradients::flat() const
{
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + bias[l].size();
    Eigen::VectorXd out(n);
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
            out.segment(k, weights[l].cols()) = weights[l].row(r).transpose();
            k += weights[l].cols();
        }
        out.segment(k, bias[l].size()) = bias[l];
        k += bias[l].size();
    }
    return out;
}

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers))
{
    if (layers_.empty()) throw ConfigError("network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.bias.size() != layer.outputs()) throw ConfigError("bias length does not match layer width");
        if (l > 0 && layer.inputs() != layers_[l - 1].outputs()) {
            throw ConfigError("layer " + std::to_string(l) + " input width does not match previous layer");
        }
        if (layer.activation == Activation::Softmax && l + 1 != layers_.size()) {
            throw ConfigError("softmax is only allowed as the final activation");
        }
    }
}

DenseNet DenseNet::glorot(const std::vector<std::size_t>& sizes, const std::vector<Activation>& activations,
                          std::uint64_t seed)
{
    if (sizes.size() < 2 || activations.size() + 1 != sizes.size()) {
        throw ConfigError("glorot: need one activation per layer transition");
    }
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(sizes[l]);
        const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        Rng rng = make_stream(seed, l);
        std::uniform_real_distribution<double> u(-limit, limit);
        Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out), activations[l]};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = u(rng);
        }
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_size() const
{
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().inputs());
}

std::size_t DenseNet::output_size() const
{
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().outputs());
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& input) const
{
    return forward_batch(input);
}

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& inputs) const
{
    if (static_cast<std::size_t>(inputs.rows()) != input_size()) {
        throw ConfigError("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                          std::to_string(input_size()));
    }
    Eigen::MatrixXd a = inputs;
    for (const auto& layer : layers_) {
        Eigen::MatrixXd z = layer.weights * a;
        z.colwise() += layer.bias;
        apply_activation(layer.activation, z);
        a = std::move(z);
    }
    return a;
}

Tape DenseNet::forward_tape(const Eigen::MatrixXd& inputs) const
{
    if (static_cast<std::size_t>(inputs.rows()) != input_size()) {
        throw ConfigError("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                          std::to_string(input_size()));
    }
    Tape tape;
    tape.outputs.reserve(layers_.size() + 1);
    tape.pre_activations.reserve(layers_.size());
    tape.outputs.push_back(inputs);
    for (const auto& layer : layers_) {
        Eigen::MatrixXd z = layer.weights * tape.outputs.back();
        z.colwise() += layer.bias;
        tape.pre_activations.push_back(z);
        apply_activation(layer.activation, z);
        tape.outputs.push_back(std::move(z));
    }
    return tape;
}

Eigen::MatrixXd DenseNet::backward(const Tape& tape, const Eigen::MatrixXd& output_grad, Gradients& grads) const
{
    if (tape.outputs.size() != layers_.size() + 1) throw ConfigError("tape does not belong to this network");
    if (output_grad.rows() != tape.outputs.back().rows() || output_grad.cols() != tape.outputs.back().cols()) {
        throw ConfigError("output gradient shape does not match the forward batch");
    }
    if (grads.weights.size() != layers_.size()) grads = zero_gradients();

    Eigen::MatrixXd delta = output_grad;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        const auto& out = tape.outputs[l + 1];
        switch (layer.activation) {
        case Activation::Linear:
            break;
        case Activation::Elu:
            // elu'(z) = 1 for z >= 0, exp(z) = elu(z) + 1 otherwise.
            delta.array() *= (tape.pre_activations[l].array() >= 0.0).select(1.0, out.array() + 1.0);
            break;
        case Activation::Softmax:
            for (Eigen::Index c = 0; c < delta.cols(); ++c) {
                const double dot = out.col(c).dot(delta.col(c));
                delta.col(c) = (out.col(c).array() * (delta.col(c).array() - dot)).matrix();
            }
            break;
        }
        grads.weights[l].noalias() += delta * tape.outputs[l].transpose();
        grads.bias[l] += delta.rowwise().sum();
        delta = layer.weights.transpose() * delta;
    }
    return delta;
}

Gradients DenseNet::zero_gradients() const
{
    Gradients g;
    for (const auto& layer : layers_) {
        g.weights.push_back(Eigen::MatrixXd::Zero(layer.outputs(), layer.inputs()));
        g.bias.push_back(Eigen::VectorXd::Zero(layer.outputs()));
    }
    return g;
}

std::size_t DenseNet::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
    return n;
}

Eigen::VectorXd DenseNet::parameters() const
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& layer : layers_) {
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            out.segment(k, layer.weights.cols()) = layer.weights.row(r).transpose();
            k += layer.weights.cols();
        }
        out.segment(k, layer.bias.size()) = layer.bias;
        k += layer.bias.size();
    }
    return out;
}

void DenseNet::set_parameters(const Eigen::VectorXd& flat)
{
    if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
        throw ConfigError("parameter vector has wrong length");
    }
    Eigen::Index k = 0;
    for (auto& layer : layers_) {
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            layer.weights.row(r) = flat.segment(k, layer.weights.cols()).transpose();
            k += layer.weights.cols();
        }
        layer.bias = flat.segment(k, layer.bias.size());
        k += layer.bias.size();
    }
}

double mse_loss(const DenseNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, Gradients* grads)
{
    if (inputs.cols() != targets.cols() || static_cast<std::size_t>(targets.rows()) != net.output_size()) {
        throw ConfigError("mse: target batch shape does not match network");
    }
    const double n = static_cast<double>(targets.size());
    if (grads == nullptr) return (net.forward_batch(inputs) - targets).squaredNorm() / n;
    const Tape tape = net.forward_tape(inputs);
    const Eigen::MatrixXd residual = tape.outputs.back() - targets;
    net.backward(tape, (2.0 / n) * residual, *grads);
    return residual.squaredNorm() / n;
}

Adam::Adam(std::size_t n_parameters, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_parameters))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_parameters)))
{
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad)
{
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw ConfigError("adam: parameter/gradient shape mismatch");
    }
    ++step_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

} // namespace volwmc::nn

namespace volwmc::detail {

json dense_to_json(const nn::DenseNet& net)
{
    json layers = json::array();
    for (const auto& layer : net.layers()) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(layer.weights.size()));
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) w.push_back(layer.weights(r, c));
        }
        layers.push_back({{"rows", layer.weights.rows()},
                          {"cols", layer.weights.cols()},
                          {"weights", std::move(w)},
                          {"bias", std::vector<double>(layer.bias.begin(), layer.bias.end())},
                          {"activation", nn::to_string(layer.activation)}});
    }
    return {{"version", nn::checkpoint_version}, {"layers", std::move(layers)}};
}

nn::DenseNet dense_from_json(const json& doc)
{
    const std::string where = "dense checkpoint";
    const int version = required<int>(doc, "version", where);
    if (version != nn::checkpoint_version) {
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(nn::checkpoint_version) + ")");
    }
    const json& jl = doc.at("layers");
    if (!jl.is_array() || jl.empty()) throw CorruptFileError(where + ": 'layers' must be a non-empty array");
    std::vector<nn::Layer> layers;
    for (const auto& item : jl) {
        const auto rows = required<Eigen::Index>(item, "rows", where);
        const auto cols = required<Eigen::Index>(item, "cols", where);
        const auto w = required<std::vector<double>>(item, "weights", where);
        const auto b = required<std::vector<double>>(item, "bias", where);
        const auto act = required<std::string>(item, "activation", where);
        if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
            static_cast<Eigen::Index>(b.size()) != rows) {
            throw CorruptFileError(where + ": parameter array sizes do not match layer shape");
        }
        nn::Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows), nn::Activation::Linear};
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) layer.weights(r, c) = w[static_cast<std::size_t>(r * cols + c)];
            layer.bias(r) = b[static_cast<std::size_t>(r)];
        }
        try {
            layer.activation = nn::parse_activation(act);
        } catch (const ConfigError& e) {
            throw CorruptFileError(where + ": " + e.what());
        }
        layers.push_back(std::move(layer));
    }
    try {
        return nn::DenseNet(std::move(layers));
    } catch (const ConfigError& e) {
        throw CorruptFileError(where + ": " + e.what());
    }
}

} // namespace volwmc::detail

namespace volwmc::nn {

std::string to_json_string(const DenseNet& net)
{
    return detail::dense_to_json(net).dump();
}

DenseNet from_json_string(const std::string& text)
{
    detail::json doc;
    try {
        doc = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw CorruptFileError(std::string("corrupt checkpoint: ") + e.what());
    }
    return detail::dense_from_json(doc);
}

void save_checkpoint(const DenseNet& net, const std::filesystem::path& path)
{
    detail::write_json_file(detail::dense_to_json(net), path);
}

DenseNet load_checkpoint(const std::filesystem::path& path)
{
    return detail::dense_from_json(detail::read_json_file(path));
}

} // namespace volwmc::nn
