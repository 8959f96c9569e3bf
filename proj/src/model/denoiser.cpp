#include "diffood/model.hpp"

#include <cmath>
#include <numeric>

#include "diffood/ops.hpp"

namespace diffood {

ModelConfig ModelConfig::base_analog(std::size_t vocab_size, std::size_t n) {
    ModelConfig c;
    c.d = 64;
    c.layers = 2;
    c.heads = 4;
    c.vocab_size = vocab_size;
    c.n = n;
    c.size_tag = "base-analog";
    return c;
}

ModelConfig ModelConfig::large_analog(std::size_t vocab_size, std::size_t n) {
    ModelConfig c;
    c.d = 128;
    c.layers = 4;
    c.heads = 8;
    c.vocab_size = vocab_size;
    c.n = n;
    c.size_tag = "large-analog";
    return c;
}

ModelConfig ModelConfig::for_size_tag(const std::string& tag, std::size_t vocab_size, std::size_t n) {
    if (tag == "base-analog") return base_analog(vocab_size, n);
    if (tag == "large-analog") return large_analog(vocab_size, n);
    throw std::invalid_argument("unknown size tag '" + tag + "'");
}

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) throw std::invalid_argument("model: d must be divisible by heads");
    if (d % 2 != 0) throw std::invalid_argument("model: d must be even for the timestep embedding");
    if (layers < 1) throw std::invalid_argument("model: layers must be >= 1");
    if (ffn_mult < 1) throw std::invalid_argument("model: ffn_mult must be >= 1");
    if (n < 2) throw std::invalid_argument("model: n must be >= 2");
    if (!(embed_std > 0.0)) throw std::invalid_argument("model: embed_std must be > 0");
    if (vocab_size <= text::kNumSpecial) throw std::invalid_argument("model: vocab_size too small");
}

std::vector<double> mean_pool_weights(std::span<const text::TokenSequence> batch) {
    std::vector<double> w;
    for (const auto& s : batch) {
        if (s.length == 0) throw text::DataError("hidden_repr: empty sentence");
        for (std::size_t i = 0; i < s.ids.size(); ++i) w.push_back(i < s.length ? 1.0 / double(s.length) : 0.0);
    }
    return w;
}

template <typename T>
BasicDenoiser<T>::BasicDenoiser(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.d;
    constexpr double kStd = 0.02;
    embed_ = add_param("embed", {config_.vocab_size, d}, config_.embed_std, 0.0, rng);
    pos_ = add_param("pos", {config_.n, d}, kStd, 0.0, rng);
    in_proj_ = add_linear("in_proj", d, d, rng);
    time_proj_ = add_linear("time_proj", d, d, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        Block b;
        b.ln1_g = add_param(p + "ln1.g", {d}, 0.0, 1.0, rng);
        b.ln1_b = add_param(p + "ln1.b", {d}, 0.0, 0.0, rng);
        b.q = add_linear(p + "attn.q", d, d, rng);
        b.k = add_linear(p + "attn.k", d, d, rng);
        b.v = add_linear(p + "attn.v", d, d, rng);
        b.o = add_linear(p + "attn.o", d, d, rng);
        b.ln2_g = add_param(p + "ln2.g", {d}, 0.0, 1.0, rng);
        b.ln2_b = add_param(p + "ln2.b", {d}, 0.0, 0.0, rng);
        b.ff1 = add_linear(p + "ffn.1", d, d * config_.ffn_mult, rng);
        b.ff2 = add_linear(p + "ffn.2", d * config_.ffn_mult, d, rng);
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = add_param("lnf.g", {d}, 0.0, 1.0, rng);
    lnf_b_ = add_param("lnf.b", {d}, 0.0, 0.0, rng);
    out_proj_ = add_linear("out_proj", d, d, rng);
    mask_vec_ = add_param("mlm.mask", {d}, kStd, 0.0, rng);
    mlm_bias_ = add_param("mlm.bias", {config_.vocab_size}, 0.0, 0.0, rng);
    mlm_proj_ = add_linear("mlm.proj", d, d, rng);
    if (config_.num_classes > 0) cls_ = add_linear("cls", d, config_.num_classes, rng);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::add_param(const std::string& name, Shape shape, double stddev, double fill,
                                           Rng& rng) {
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(stddev > 0.0 ? stddev * rng.normal() : fill);
    TensorT t(std::move(shape), std::move(values), true);
    params_.push_back({name, t});
    return t;
}

template <typename T>
typename BasicDenoiser<T>::Linear BasicDenoiser<T>::add_linear(const std::string& name, std::size_t in,
                                                               std::size_t out, Rng& rng) {
    Linear l;
    l.w = add_param(name + ".w", {in, out}, 0.02, 0.0, rng);
    l.b = add_param(name + ".b", {out}, 0.0, 0.0, rng);
    return l;
}

template <typename T>
std::vector<BasicTensor<T>> BasicDenoiser<T>::parameter_tensors() const {
    std::vector<TensorT> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

template <typename T>
std::size_t BasicDenoiser<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <typename T>
void BasicDenoiser<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::apply(const Linear& layer, const TensorT& x) const {
    return ops::add(ops::matmul(x, layer.w), layer.b);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::timestep_features(std::span<const int> t) const {
    const std::size_t d = config_.d;
    const std::size_t half = d / 2;
    std::vector<T> feats(t.size() * d);
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
            const double arg = double(t[b]) * freq;
            feats[b * d + i] = static_cast<T>(std::cos(arg));
            feats[b * d + half + i] = static_cast<T>(std::sin(arg));
        }
    }
    return TensorT({t.size(), d}, std::move(feats));
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::encode(const TensorT& x, std::span<const int> t) const {
    const std::size_t d = config_.d;
    const std::size_t n = config_.n;
    if (x.rank() != 3 || x.dim(1) != n || x.dim(2) != d) {
        throw ShapeError("denoiser", x.shape(), Shape{0, n, d}, "expected [B, n, d]");
    }
    const std::size_t batch = x.dim(0);
    if (t.size() != batch) throw ShapeError("denoiser", x.shape(), Shape{t.size()}, "one timestep per batch row");
    const std::size_t heads = config_.heads;
    const std::size_t dh = d / heads;
    const double attn_scale = 1.0 / std::sqrt(double(dh));

    TensorT h = apply(in_proj_, x);
    h = ops::add(h, pos_);
    const TensorT temb = apply(time_proj_, timestep_features(t));
    h = ops::add(h, ops::broadcast_rows(temb, n));

    auto split_heads = [&](const TensorT& v) {
        return ops::permute(ops::reshape(v, {batch, n, heads, dh}), {0, 2, 1, 3});
    };
    for (const Block& blk : blocks_) {
        const TensorT a = ops::layer_norm(h, blk.ln1_g, blk.ln1_b);
        const TensorT q = split_heads(apply(blk.q, a));
        const TensorT k = split_heads(apply(blk.k, a));
        const TensorT v = split_heads(apply(blk.v, a));
        const TensorT scores = ops::scale(ops::matmul(q, ops::transpose(k, 2, 3)), attn_scale);
        const TensorT ctx = ops::matmul(ops::softmax(scores, 3), v);
        const TensorT merged = ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {batch, n, d});
        h = ops::add(h, apply(blk.o, merged));
        const TensorT f = ops::layer_norm(h, blk.ln2_g, blk.ln2_b);
        h = ops::add(h, apply(blk.ff2, ops::gelu(apply(blk.ff1, f))));
    }
    return ops::layer_norm(h, lnf_g_, lnf_b_);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::denoise(const TensorT& x_t, std::span<const int> t) const {
    return apply(out_proj_, encode(x_t, t));
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::rounding_logits(const TensorT& x0_hat) const {
    const std::size_t d = config_.d;
    if (x0_hat.shape().back() != d) throw ShapeError("rounding_logits", x0_hat.shape(), embed_.shape());
    const TensorT flat = ops::reshape(x0_hat, {x0_hat.numel() / d, d});
    return ops::matmul(flat, ops::transpose(embed_, 0, 1));
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::embed(std::span<const text::TokenSequence> batch) const {
    std::vector<std::int32_t> ids;
    ids.reserve(batch.size() * config_.n);
    for (const auto& s : batch) {
        if (s.ids.size() != config_.n) {
            throw ShapeError("embed", Shape{s.ids.size()}, Shape{config_.n}, "sequence not padded to model n");
        }
        ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    }
    return ops::reshape(ops::embedding(embed_, ids), {batch.size(), config_.n, config_.d});
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::hidden_repr(std::span<const text::TokenSequence> batch) const {
    const auto weights = mean_pool_weights(batch);
    const std::vector<int> t(batch.size(), 0);
    return ops::pool(encode(embed(batch), t), weights);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::mlm_logits(std::span<const text::TokenSequence> batch,
                                            std::span<const std::size_t> masked) const {
    if (masked.empty()) throw std::invalid_argument("mlm: no masked positions");
    const std::size_t n = config_.n;
    const std::size_t d = config_.d;
    std::vector<std::uint8_t> flags(batch.size() * n, 0);
    for (auto m : masked) {
        if (m >= flags.size()) throw ShapeError("mlm", Shape{flags.size()}, Shape{m}, "masked position out of range");
        flags[m] = 1;
    }
    const TensorT clean = ops::reshape(embed(batch), {batch.size() * n, d});
    const TensorT input = ops::reshape(ops::replace_rows(clean, flags, mask_vec_), {batch.size(), n, d});
    const std::vector<int> t(batch.size(), 0);
    const TensorT hidden = ops::reshape(encode(input, t), {batch.size() * n, d});
    const TensorT picked = apply(mlm_proj_, ops::select_rows(hidden, masked));
    return ops::add(ops::matmul(picked, ops::transpose(embed_, 0, 1)), mlm_bias_);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::classifier_logits(std::span<const text::TokenSequence> batch) const {
    if (!has_classifier()) throw std::logic_error("classify: model has no classifier head");
    return apply(cls_, hidden_repr(batch));
}

template <typename T>
template <typename U>
void BasicDenoiser<T>::copy_from(const BasicDenoiser<U>& other) {
    if (!(other.config() == config_)) throw std::invalid_argument("copy_from: model configs differ");
    const auto& src = other.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto dst = params_[i].tensor.data_mut();
        auto s = src[i].tensor.data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(s[j]);
    }
}

template <typename T>
template <typename U>
BasicDenoiser<U> BasicDenoiser<T>::cast() const {
    BasicDenoiser<U> out(config_, 0);
    out.copy_from(*this);
    return out;
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;
template BasicDenoiser<double> BasicDenoiser<float>::cast<double>() const;
template BasicDenoiser<float> BasicDenoiser<double>::cast<float>() const;
template BasicDenoiser<float> BasicDenoiser<float>::cast<float>() const;
template void BasicDenoiser<float>::copy_from(const BasicDenoiser<float>&);
template void BasicDenoiser<float>::copy_from(const BasicDenoiser<double>&);
template void BasicDenoiser<double>::copy_from(const BasicDenoiser<float>&);

}  // namespace diffood
