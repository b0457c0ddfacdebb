#include "contrail/models.hpp"

#include "contrail/error.hpp"
#include "contrail/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

namespace contrail::models {

std::string to_string(Architecture arch) {
    return arch == Architecture::UnetTiny ? "unet_tiny" : "upernet_mini";
}

Architecture parse_architecture(std::string_view name) {
    if (name == "unet_tiny") return Architecture::UnetTiny;
    if (name == "upernet_mini") return Architecture::UpernetMini;
    throw Error(Errc::BadConfig, "unknown architecture '" + std::string(name) + "'");
}

int ModelConfig::downsample_factor() const noexcept {
    return architecture == Architecture::UnetTiny ? (1 << depth) : 8;
}

void ModelConfig::validate() const {
    if (in_channels < 1) throw Error(Errc::BadConfig, "in_channels must be >= 1");
    if (base_width < 4) throw Error(Errc::BadConfig, "base_width must be >= 4");
    if (depth < 2 || depth > 4) throw Error(Errc::BadConfig, "depth must be in 2..4");
    if (num_classes != 2) throw Error(Errc::BadConfig, "num_classes must be 2");
}

void ModelConfig::validate_input(int height, int width) const {
    const int f = downsample_factor();
    if (height <= 0 || width <= 0 || height % f != 0 || width % f != 0)
        throw Error(Errc::BadConfig, "input " + std::to_string(height) + "x" + std::to_string(width) +
                                         " is not divisible by " + std::to_string(f));
}

template <class T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <class T>
ad::Tensor<T> Model<T>::forward(ad::Tape<T>& tape, const ad::Tensor<T>& input) const {
    if (input.rank() != 4 || input.dim(1) != config_.in_channels)
        throw Error(Errc::ShapeMismatch, "model input must be [N," + std::to_string(config_.in_channels) +
                                             ",H,W], got " + ad::to_string(input.shape()));
    config_.validate_input(input.dim(2), input.dim(3));
    return forward_impl(tape, input);
}

template <class T>
void Model<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <class T>
ad::Tensor<T> Model<T>::add_parameter(std::string name, ad::Shape shape, std::vector<T> values) {
    auto t = ad::Tensor<T>::from(std::move(shape), std::move(values), true);
    params_.push_back({std::move(name), t});
    return t;
}

namespace {

// Hands out parameters in construction order from a single seeded stream.
template <class T>
class Initializer {
public:
    Initializer(std::uint64_t seed, std::function<ad::Tensor<T>(std::string, ad::Shape, std::vector<T>)> sink)
        : rng_(seed), sink_(std::move(sink)) {}

    ad::Tensor<T> he_uniform(const std::string& name, ad::Shape shape, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        std::vector<T> v(ad::numel(shape));
        for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
        return sink_(name, std::move(shape), std::move(v));
    }
    ad::Tensor<T> constant(const std::string& name, ad::Shape shape, T value) {
        std::vector<T> v(ad::numel(shape), value);
        return sink_(name, std::move(shape), std::move(v));
    }

private:
    Rng rng_;
    std::function<ad::Tensor<T>(std::string, ad::Shape, std::vector<T>)> sink_;
};

template <class T>
struct Conv {
    ad::Tensor<T> weight;
    ad::Tensor<T> bias;
    ad::Conv2dOptions options;

    static Conv make(Initializer<T>& init, const std::string& name, int cin, int cout, int k,
                     ad::Conv2dOptions options = {}) {
        const int cin_g = cin / options.groups;
        Conv c;
        c.weight = init.he_uniform(name + ".weight", {cout, cin_g, k, k}, cin_g * k * k);
        c.bias = init.constant(name + ".bias", {cout}, T(0));
        c.options = options;
        return c;
    }

    ad::Tensor<T> operator()(ad::Tape<T>& tape, const ad::Tensor<T>& x) const {
        return ad::conv2d(tape, x, weight, bias, options);
    }
};

template <class T>
struct Norm {
    ad::Tensor<T> gain;
    ad::Tensor<T> offset;

    static Norm make(Initializer<T>& init, const std::string& name, int channels) {
        return {init.constant(name + ".gain", {channels}, T(1)),
                init.constant(name + ".offset", {channels}, T(0))};
    }

    ad::Tensor<T> operator()(ad::Tape<T>& tape, const ad::Tensor<T>& x) const {
        return ad::channel_norm(tape, x, gain, offset);
    }
};

template <class T>
struct DoubleConv {
    Conv<T> first, second;

    static DoubleConv make(Initializer<T>& init, const std::string& name, int cin, int cout) {
        return {Conv<T>::make(init, name + ".conv1", cin, cout, 3, {1, 1, 1}),
                Conv<T>::make(init, name + ".conv2", cout, cout, 3, {1, 1, 1})};
    }

    ad::Tensor<T> operator()(ad::Tape<T>& tape, const ad::Tensor<T>& x) const {
        return ad::relu(tape, second(tape, ad::relu(tape, first(tape, x))));
    }
};

// Encoder of double-conv + 2x2 max-pool stages, bilinear-upsampling decoder
// with skip concatenation, 1x1 class head.
template <class T>
class UnetTiny final : public Model<T> {
public:
    UnetTiny(const ModelConfig& cfg, std::uint64_t seed) : Model<T>(cfg) {
        Initializer<T> init(seed, [this](std::string n, ad::Shape s, std::vector<T> v) {
            return this->add_parameter(std::move(n), std::move(s), std::move(v));
        });
        const int w = cfg.base_width;
        int cin = cfg.in_channels;
        for (int l = 0; l < cfg.depth; ++l) {
            encoder_.push_back(DoubleConv<T>::make(init, "enc" + std::to_string(l), cin, w << l));
            cin = w << l;
        }
        bottleneck_ = DoubleConv<T>::make(init, "bottleneck", cin, w << cfg.depth);
        for (int l = cfg.depth - 1; l >= 0; --l) {
            decoder_.push_back(
                DoubleConv<T>::make(init, "dec" + std::to_string(l), (w << (l + 1)) + (w << l), w << l));
        }
        head_ = Conv<T>::make(init, "head", w, cfg.num_classes, 1);
    }

private:
    ad::Tensor<T> forward_impl(ad::Tape<T>& tape, const ad::Tensor<T>& input) const override {
        std::vector<ad::Tensor<T>> skips;
        ad::Tensor<T> x = input;
        for (const auto& stage : encoder_) {
            x = stage(tape, x);
            skips.push_back(x);
            x = ad::max_pool2d(tape, x, 2, 2);
        }
        x = bottleneck_(tape, x);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            x = ad::upsample_bilinear(tape, x, 2);
            x = ad::concat(tape, {x, skips[skips.size() - 1 - i]}, 1);
            x = decoder_[i](tape, x);
        }
        return head_(tape, x);
    }

    std::vector<DoubleConv<T>> encoder_;
    DoubleConv<T> bottleneck_;
    std::vector<DoubleConv<T>> decoder_;
    Conv<T> head_;
};

// Depthwise 7x7 -> channel norm -> 1x1 expand 4x -> GELU -> 1x1 project, residual.
template <class T>
struct ConvNextBlock {
    Conv<T> depthwise;
    Norm<T> norm;
    Conv<T> expand, project;

    static ConvNextBlock make(Initializer<T>& init, const std::string& name, int dim) {
        return {Conv<T>::make(init, name + ".dwconv", dim, dim, 7, {1, 3, dim}),
                Norm<T>::make(init, name + ".norm", dim),
                Conv<T>::make(init, name + ".pwconv1", dim, 4 * dim, 1),
                Conv<T>::make(init, name + ".pwconv2", 4 * dim, dim, 1)};
    }

    ad::Tensor<T> operator()(ad::Tape<T>& tape, const ad::Tensor<T>& x) const {
        auto y = norm(tape, depthwise(tape, x));
        y = project(tape, ad::gelu(tape, expand(tape, y)));
        return ad::add(tape, x, y);
    }
};

// Three-stage ConvNeXt-style backbone (strides 2, 4, 8), pyramid pooling on
// the deepest stage, FPN top-down fusion, head at stride 2 upsampled to input size.
template <class T>
class UpernetMini final : public Model<T> {
public:
    static constexpr std::array<int, 4> kPoolBins{1, 2, 3, 6};

    UpernetMini(const ModelConfig& cfg, std::uint64_t seed) : Model<T>(cfg) {
        Initializer<T> init(seed, [this](std::string n, ad::Shape s, std::vector<T> v) {
            return this->add_parameter(std::move(n), std::move(s), std::move(v));
        });
        const int c = cfg.base_width;
        stem_ = Conv<T>::make(init, "stem", cfg.in_channels, c, 2, {2, 0, 1});
        stem_norm_ = Norm<T>::make(init, "stem.norm", c);
        stage1_ = ConvNextBlock<T>::make(init, "stage1", c);
        down2_norm_ = Norm<T>::make(init, "down2.norm", c);
        down2_ = Conv<T>::make(init, "down2", c, 2 * c, 2, {2, 0, 1});
        stage2_ = ConvNextBlock<T>::make(init, "stage2", 2 * c);
        down3_norm_ = Norm<T>::make(init, "down3.norm", 2 * c);
        down3_ = Conv<T>::make(init, "down3", 2 * c, 4 * c, 2, {2, 0, 1});
        stage3_ = ConvNextBlock<T>::make(init, "stage3", 4 * c);
        for (int bin : kPoolBins)
            ppm_.push_back(Conv<T>::make(init, "ppm.bin" + std::to_string(bin), 4 * c, c, 1));
        ppm_fuse_ = Conv<T>::make(init, "ppm.fuse", 4 * c + static_cast<int>(kPoolBins.size()) * c, c, 3,
                                  {1, 1, 1});
        lateral1_ = Conv<T>::make(init, "fpn.lateral1", c, c, 1);
        lateral2_ = Conv<T>::make(init, "fpn.lateral2", 2 * c, c, 1);
        smooth1_ = Conv<T>::make(init, "fpn.smooth1", c, c, 3, {1, 1, 1});
        smooth2_ = Conv<T>::make(init, "fpn.smooth2", c, c, 3, {1, 1, 1});
        fuse_ = Conv<T>::make(init, "fpn.fuse", 3 * c, c, 3, {1, 1, 1});
        head_ = Conv<T>::make(init, "head", c, cfg.num_classes, 1);
    }

private:
    ad::Tensor<T> forward_impl(ad::Tape<T>& tape, const ad::Tensor<T>& input) const override {
        auto f1 = stage1_(tape, stem_norm_(tape, stem_(tape, input)));
        auto f2 = stage2_(tape, down2_(tape, down2_norm_(tape, f1)));
        auto f3 = stage3_(tape, down3_(tape, down3_norm_(tape, f2)));

        const int h3 = f3.dim(2), w3 = f3.dim(3);
        std::vector<ad::Tensor<T>> pyramid{f3};
        for (std::size_t i = 0; i < kPoolBins.size(); ++i) {
            auto pooled = ad::adaptive_avg_pool(tape, f3, kPoolBins[i], kPoolBins[i]);
            auto branch = ad::relu(tape, ppm_[i](tape, pooled));
            pyramid.push_back(ad::resize_bilinear(tape, branch, h3, w3));
        }
        auto p3 = ad::relu(tape, ppm_fuse_(tape, ad::concat(tape, pyramid, 1)));

        auto p2 = ad::add(tape, ad::relu(tape, lateral2_(tape, f2)), ad::upsample_bilinear(tape, p3, 2));
        auto p1 = ad::add(tape, ad::relu(tape, lateral1_(tape, f1)), ad::upsample_bilinear(tape, p2, 2));
        auto o1 = ad::relu(tape, smooth1_(tape, p1));
        auto o2 = ad::relu(tape, smooth2_(tape, p2));

        auto fused = ad::concat(tape, {o1, ad::upsample_bilinear(tape, o2, 2), ad::upsample_bilinear(tape, p3, 4)}, 1);
        auto x = ad::relu(tape, fuse_(tape, fused));
        return ad::upsample_bilinear(tape, head_(tape, x), 2);
    }

    Conv<T> stem_;
    Norm<T> stem_norm_;
    ConvNextBlock<T> stage1_;
    Norm<T> down2_norm_;
    Conv<T> down2_;
    ConvNextBlock<T> stage2_;
    Norm<T> down3_norm_;
    Conv<T> down3_;
    ConvNextBlock<T> stage3_;
    std::vector<Conv<T>> ppm_;
    Conv<T> ppm_fuse_;
    Conv<T> lateral1_, lateral2_, smooth1_, smooth2_, fuse_, head_;
};

} // namespace

template <class T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    if (config.architecture == Architecture::UnetTiny) return std::make_unique<UnetTiny<T>>(config, seed);
    return std::make_unique<UpernetMini<T>>(config, seed);
}

ad::Tensor<float> predict_probability(const Model<float>& model, const ad::Tensor<float>& batch) {
    ad::Tape<float> tape(ad::Tape<float>::Mode::Inference);
    const auto probs = ad::softmax(tape, model.forward(tape, batch), 1);
    const int n = probs.dim(0), h = probs.dim(2), w = probs.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    std::vector<float> out(static_cast<std::size_t>(n) * hw);
    const auto src = probs.values();
    for (int s = 0; s < n; ++s)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((2 * static_cast<std::size_t>(s) + 1) * hw),
                    hw, out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s) * hw));
    return ad::Tensor<float>::from({n, h, w}, std::move(out));
}

template class Model<float>;
template class Model<double>;
template std::unique_ptr<Model<float>> build_model<float>(const ModelConfig&, std::uint64_t);
template std::unique_ptr<Model<double>> build_model<double>(const ModelConfig&, std::uint64_t);

} // namespace contrail::models
