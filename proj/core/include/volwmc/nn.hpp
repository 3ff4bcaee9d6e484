#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace volwmc::nn {

enum class Activation { Elu, Linear, Softmax };

Activation parse_activation(std::string_view name);
const char* to_string(Activation a);

struct Layer {
    Eigen::MatrixXd weights; // out x in
    Eigen::VectorXd bias;    // out
    Activation activation = Activation::Linear;

    Eigen::Index inputs() const { return weights.cols(); }
    Eigen::Index outputs() const { return weights.rows(); }
};

// Per-layer parameter gradients, shaped like the network.
struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> bias;

    void set_zero();
    Eigen::VectorXd flat() const;
};

// Values recorded by a forward pass and consumed by backward().
struct Tape {
    std::vector<Eigen::MatrixXd> outputs;        // outputs[0] is the input batch
    std::vector<Eigen::MatrixXd> pre_activations;
};

// Fully connected network evaluated column-wise: a batch is a matrix whose
// columns are samples.
class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<Layer> layers);

    // Glorot-uniform weights, zero biases. activations.size() == sizes.size() - 1.
    static DenseNet glorot(const std::vector<std::size_t>& sizes,
                           const std::vector<Activation>& activations, std::uint64_t seed);

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& mutable_layers() { return layers_; }
    std::size_t input_size() const;
    std::size_t output_size() const;

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;
    Tape forward_tape(const Eigen::MatrixXd& inputs) const;

    // Reverse pass for a loss whose gradient w.r.t. the network outputs is
    // `output_grad` (same shape as the output batch). Parameter gradients are
    // summed over the batch and added into `grads`; the return value is the
    // gradient w.r.t. the inputs.
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& output_grad, Gradients& grads) const;

    Gradients zero_gradients() const;

    std::size_t parameter_count() const;
    // Layer by layer: row-major weights, then bias.
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& flat);

private:
    std::vector<Layer> layers_;
};

double elu(double x);

// Loss heads with analytic gradients in this library.
enum class LossHead { Mse, VaeElbo, WeightDecoder };
LossHead parse_loss_head(std::string_view name);
const char* to_string(LossHead head);

// Mean squared error over every output element of the batch; accumulates the
// parameter gradient into `grads` when non-null.
double mse_loss(const DenseNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                Gradients* grads = nullptr);

// Adam with bias correction over a flat parameter vector.
class Adam {
public:
    Adam(std::size_t n_parameters, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

    std::size_t steps() const { return step_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    const Eigen::VectorXd& first_moment() const { return m_; }
    const Eigen::VectorXd& second_moment() const { return v_; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t step_ = 0;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
};

inline constexpr int checkpoint_version = 1;

void save_checkpoint(const DenseNet& net, const std::filesystem::path& path);
DenseNet load_checkpoint(const std::filesystem::path& path);

// Serialized form `{version, layers:[{rows,cols,weights,bias,activation}]}`.
std::string to_json_string(const DenseNet& net);
DenseNet from_json_string(const std::string& text);

} // namespace volwmc::nn
