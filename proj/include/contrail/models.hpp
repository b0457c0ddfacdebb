#pragma once

#include "contrail/autodiff.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace contrail::models {

enum class Architecture { UnetTiny, UpernetMini };

std::string to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelConfig {
    Architecture architecture = Architecture::UnetTiny;
    int in_channels = 6;
    int base_width = 8;
    // Encoder stages of the UNet. The UPerNet backbone always has 3.
    int depth = 3;
    int num_classes = 2;

    int downsample_factor() const noexcept;
    // Throws BadConfig.
    void validate() const;
    void validate_input(int height, int width) const;
};

template <class T>
struct Parameter {
    std::string name;
    ad::Tensor<T> tensor;
};

template <class T>
class Model {
public:
    virtual ~Model() = default;

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;

    // [N,in_channels,H,W] -> logits [N,num_classes,H,W].
    ad::Tensor<T> forward(ad::Tape<T>& tape, const ad::Tensor<T>& input) const;

    void zero_grad();

protected:
    explicit Model(ModelConfig config) : config_(config) {}

    virtual ad::Tensor<T> forward_impl(ad::Tape<T>& tape, const ad::Tensor<T>& input) const = 0;

    ad::Tensor<T> add_parameter(std::string name, ad::Shape shape, std::vector<T> values);

private:
    ModelConfig config_;
    std::vector<Parameter<T>> params_;
};

// Deterministic He-uniform initialization (bound sqrt(6 / fan_in)) from `seed`;
// biases and norm offsets start at 0, norm gains at 1.
template <class T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config, std::uint64_t seed);

// Softmax contrail-class probability [N,H,W] for a batch [N,C,H,W], computed
// without recording a tape.
ad::Tensor<float> predict_probability(const Model<float>& model, const ad::Tensor<float>& batch);

} // namespace contrail::models
