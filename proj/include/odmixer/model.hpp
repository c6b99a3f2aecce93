#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odmixer/binary_io.hpp"
#include "odmixer/diffcore.hpp"

namespace odmixer {

using diffcore::Activation;
using diffcore::ParameterSet;
using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

/// Component switches. Every flag on is the full model.
struct Ablation {
    bool omp = true;          // estimate unfinished orders for the current-day input
    bool cm = true;           // channel mixer
    bool om = true;           // origin mixer
    bool dm = true;           // destination mixer
    bool mm = true;           // multi-view mixer as a whole
    bool btl = true;          // bidirectional trend learner
    bool prev_branch = true;  // previous-day branch (implies btl)

    std::uint32_t bits() const
    {
        return (omp ? 1u : 0u) | (cm ? 2u : 0u) | (om ? 4u : 0u) | (dm ? 8u : 0u) | (mm ? 16u : 0u) |
               (btl ? 32u : 0u) | (prev_branch ? 64u : 0u);
    }
    static Ablation from_bits(std::uint32_t b)
    {
        return {(b & 1u) != 0, (b & 2u) != 0, (b & 4u) != 0, (b & 8u) != 0,
                (b & 16u) != 0, (b & 32u) != 0, (b & 64u) != 0};
    }

    bool origin_active() const { return mm && om; }
    bool des_active() const { return mm && dm; }
    bool btl_active() const { return btl && prev_branch; }

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// Named ablation variants: full, no_omp, no_cm, no_om, no_dm, no_mm, no_btl, no_pb.
inline const std::vector<std::pair<std::string, Ablation>>& ablation_variants()
{
    static const std::vector<std::pair<std::string, Ablation>> variants = [] {
        std::vector<std::pair<std::string, Ablation>> v;
        v.emplace_back("full", Ablation{});
        Ablation a;
        a = {}; a.omp = false; v.emplace_back("no_omp", a);
        a = {}; a.cm = false; v.emplace_back("no_cm", a);
        a = {}; a.om = false; v.emplace_back("no_om", a);
        a = {}; a.dm = false; v.emplace_back("no_dm", a);
        a = {}; a.mm = false; v.emplace_back("no_mm", a);
        a = {}; a.btl = false; v.emplace_back("no_btl", a);
        a = {}; a.prev_branch = false; a.btl = false; v.emplace_back("no_pb", a);
        return v;
    }();
    return variants;
}

struct ModelConfig {
    std::size_t n = 10;
    std::size_t horizon = 4;  // input intervals T
    std::size_t d = 16;
    std::size_t layers = 5;
    Activation activation = Activation::gelu;
    Ablation ablation;

    std::size_t hidden() const { return 2 * d; }

    void validate() const
    {
        if (n < 2 || horizon < 1 || d < 1 || layers < 1)
            throw ConfigError("model config needs n >= 2, horizon >= 1, d >= 1, layers >= 1");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// d*T + L*(4d^2 + 8dn + 4d) + 8d^2 + d + 1.
inline std::size_t expected_param_count(const ModelConfig& c)
{
    const std::size_t d = c.d, n = c.n;
    return d * c.horizon + c.layers * (4 * d * d + 4 * 2 * d * n + 4 * d) + 2 * (2 * d * d + 2 * d * d) + (d + 1);
}

namespace names {
inline std::string block(std::size_t l, const char* leaf) { return "block" + std::to_string(l) + "." + leaf; }
} // namespace names

/// Dual-branch mixer network. One parameter set serves both branches.
/// Feature tensors have shape [..., n, n, d] with origin, destination, channel
/// as the last three axes; any leading axes are treated as a batch.
template <typename T>
class ODMixer {
public:
    ODMixer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
    {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const std::size_t d = cfg_.d, n = cfg_.n, h = cfg_.hidden();
        add_weight("embed.weight", d, cfg_.horizon, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            add_weight(names::block(l, "channel.fc1"), h, d, rng);
            add_weight(names::block(l, "channel.fc2"), d, h, rng);
            add_norm(names::block(l, "channel.norm"), d);
            add_weight(names::block(l, "origin.fc1"), h, n, rng);
            add_weight(names::block(l, "origin.fc2"), n, h, rng);
            add_weight(names::block(l, "des.fc1"), h, n, rng);
            add_weight(names::block(l, "des.fc2"), n, h, rng);
            add_norm(names::block(l, "fusion.norm"), d);
        }
        for (const char* half : {"btl.prev", "btl.cur"}) {
            add_weight(std::string(half) + ".conv", d, 2 * d, rng);
            add_weight(std::string(half) + ".gate", d, d, rng);
            add_weight(std::string(half) + ".proj", d, d, rng);
        }
        add_weight("head.weight", 1, d, rng);
        const T bound = T(1) / std::sqrt(T(d));
        std::uniform_real_distribution<T> u(-bound, bound);
        params_.add("head.bias", Tensor<T>(Shape{1}, std::vector<T>{u(rng)}));
    }

    /// Adopts existing weights; names and shapes must match what `cfg` builds.
    ODMixer(ModelConfig cfg, ParameterSet<T> params) : ODMixer(cfg, 0)
    {
        if (params.size() != params_.size()) throw DataError("parameter set does not match model config");
        for (auto& [name, p] : params_) {
            if (!params.contains(name)) throw DataError("missing parameter " + name);
            const auto& src = params.at(name).value;
            if (src.shape() != p.value.shape())
                throw DataError("parameter " + name + " has shape " + diffcore::shape_str(src.shape()) + ", expected " +
                                diffcore::shape_str(p.value.shape()));
            p.value = src;
        }
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }

    template <typename U>
    ODMixer<U> cast() const
    {
        return ODMixer<U>(cfg_, params_.template cast<U>());
    }

    Var<T> p(Tape<T>& tape, const std::string& name) { return tape.leaf(params_.at(name)); }

    /// [..., n, n, T] -> [..., n, n, d]
    Var<T> embed(Tape<T>& tape, Var<T> window)
    {
        check_trailing(tape.value(window), cfg_.horizon, "embed");
        return diffcore::linear(window, p(tape, "embed.weight"));
    }

    Var<T> channel_mixer(Tape<T>& tape, Var<T> h, std::size_t l)
    {
        check_trailing(tape.value(h), cfg_.d, "channel_mixer");
        auto inner = activate(diffcore::linear(h, p(tape, names::block(l, "channel.fc1"))));
        auto mixed = diffcore::add(h, diffcore::linear(inner, p(tape, names::block(l, "channel.fc2"))));
        return diffcore::layer_norm(mixed, p(tape, names::block(l, "channel.norm.gamma")),
                                    p(tape, names::block(l, "channel.norm.beta")), kNormEps);
    }

    /// Mixes along destinations for every (origin, channel) row.
    Var<T> origin_mixer(Tape<T>& tape, Var<T> h, std::size_t l)
    {
        check_trailing(tape.value(h), cfg_.d, "origin_mixer");
        const std::size_t r = tape.value(h).rank();
        auto rows = diffcore::permute(h, swap_last_two(r));  // [..., o, c, j]
        auto out = mix_rows(tape, rows, names::block(l, "origin.fc1"), names::block(l, "origin.fc2"));
        return diffcore::permute(out, swap_last_two(r));
    }

    /// Mixes along origins for every (destination, channel) row.
    Var<T> des_mixer(Tape<T>& tape, Var<T> h, std::size_t l)
    {
        check_trailing(tape.value(h), cfg_.d, "des_mixer");
        const std::size_t r = tape.value(h).rank();
        auto perm = lead_axes(r);
        perm.insert(perm.end(), {r - 2, r - 1, r - 3});  // [..., j, c, o]
        auto rows = diffcore::permute(h, perm);
        auto out = mix_rows(tape, rows, names::block(l, "des.fc1"), names::block(l, "des.fc2"));
        auto back = lead_axes(r);
        back.insert(back.end(), {r - 1, r - 3, r - 2});
        return diffcore::permute(out, back);
    }

    Var<T> odim_block(Tape<T>& tape, Var<T> h, std::size_t l)
    {
        const auto& ab = cfg_.ablation;
        Var<T> hc = ab.cm ? channel_mixer(tape, h, l) : h;
        Var<T> fused = hc;
        if (ab.origin_active()) fused = diffcore::add(fused, origin_mixer(tape, hc, l));
        if (ab.des_active()) fused = diffcore::add(fused, des_mixer(tape, hc, l));
        return diffcore::layer_norm(fused, p(tape, names::block(l, "fusion.norm.gamma")),
                                    p(tape, names::block(l, "fusion.norm.beta")), kNormEps);
    }

    Var<T> odim_stack(Tape<T>& tape, Var<T> h)
    {
        for (std::size_t l = 0; l < cfg_.layers; ++l) h = odim_block(tape, h, l);
        return h;
    }

    /// One half of the trend learner: updates `self` using the pair (self, other).
    Var<T> btl_half(Tape<T>& tape, Var<T> self, Var<T> other, const std::string& half)
    {
        auto hf = diffcore::linear(diffcore::concat_last_axis<T>({self, other}), p(tape, half + ".conv"));
        auto gate = diffcore::sigmoid(diffcore::linear(hf, p(tape, half + ".gate")));
        auto proj = diffcore::linear(self, p(tape, half + ".proj"));
        return diffcore::add(diffcore::hadamard(gate, proj), self);
    }

    std::pair<Var<T>, Var<T>> btl(Tape<T>& tape, Var<T> h_prev, Var<T> h_cur)
    {
        if (tape.value(h_prev).shape() != tape.value(h_cur).shape())
            throw DimensionError("btl: branch features differ in shape");
        if (!cfg_.ablation.btl_active()) return {h_prev, h_cur};
        auto prev = btl_half(tape, h_prev, h_cur, "btl.prev");
        auto cur = btl_half(tape, h_cur, h_prev, "btl.cur");
        return {prev, cur};
    }

    /// [..., n, n, d] -> [..., n, n]
    Var<T> output_head(Tape<T>& tape, Var<T> h)
    {
        check_trailing(tape.value(h), cfg_.d, "output_head");
        auto y = diffcore::linear(h, p(tape, "head.weight"), std::optional<Var<T>>(p(tape, "head.bias")));
        Shape s = tape.value(y).shape();
        s.pop_back();
        return diffcore::reshape(y, s);
    }

    struct Prediction {
        std::optional<Var<T>> prev;
        Var<T> cur;
    };

    /// Both inputs are [..., n, n, T]. Without the previous-day branch only
    /// `cur` is produced and `prev_window` is ignored.
    Prediction forward(Tape<T>& tape, Var<T> prev_window, Var<T> cur_window)
    {
        check_window(tape.value(cur_window));
        auto h_cur = odim_stack(tape, embed(tape, cur_window));
        if (!cfg_.ablation.prev_branch) return {std::nullopt, output_head(tape, h_cur)};
        check_window(tape.value(prev_window));
        if (tape.value(prev_window).shape() != tape.value(cur_window).shape())
            throw DimensionError("forward: branch inputs differ in shape");
        auto h_prev = odim_stack(tape, embed(tape, prev_window));
        auto [t_prev, t_cur] = btl(tape, h_prev, h_cur);
        return {output_head(tape, t_prev), output_head(tape, t_cur)};
    }

    static constexpr T kNormEps = T(1e-5);

private:
    Var<T> activate(Var<T> x) { return diffcore::activate(x, cfg_.activation); }

    Var<T> mix_rows(Tape<T>& tape, Var<T> rows, const std::string& fc1, const std::string& fc2)
    {
        return diffcore::linear(activate(diffcore::linear(rows, p(tape, fc1))), p(tape, fc2));
    }

    static std::vector<std::size_t> lead_axes(std::size_t rank)
    {
        std::vector<std::size_t> v(rank - 3);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
        return v;
    }

    static std::vector<std::size_t> swap_last_two(std::size_t rank)
    {
        auto v = lead_axes(rank);
        v.insert(v.end(), {rank - 3, rank - 1, rank - 2});
        return v;
    }

    void check_trailing(const Tensor<T>& x, std::size_t last, const char* op) const
    {
        const auto& s = x.shape();
        if (s.size() < 3 || s[s.size() - 3] != cfg_.n || s[s.size() - 2] != cfg_.n || s.back() != last)
            throw DimensionError(std::string(op) + ": expected [..., " + std::to_string(cfg_.n) + ", " +
                                 std::to_string(cfg_.n) + ", " + std::to_string(last) + "], got " +
                                 diffcore::shape_str(s));
    }

    void check_window(const Tensor<T>& x) const { check_trailing(x, cfg_.horizon, "forward"); }

    void add_weight(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng)
    {
        const T bound = T(1) / std::sqrt(T(cols));
        std::uniform_real_distribution<T> u(-bound, bound);
        Tensor<T> w(Shape{rows, cols});
        for (auto& v : w.storage()) v = u(rng);
        params_.add(name, std::move(w));
    }

    void add_norm(const std::string& prefix, std::size_t d)
    {
        params_.add(prefix + ".gamma", Tensor<T>(Shape{d}, T(1)));
        params_.add(prefix + ".beta", Tensor<T>(Shape{d}, T(0)));
    }

    ModelConfig cfg_;
    ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// ODMX1 checkpoints: magic, version, n, T, d, L, activation, ablation bits,
// parameter count, then per parameter in sorted-name order: name length,
// name bytes, rank, dims, LE float32 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const ODMixer<float>& model, std::ostream& os)
{
    const auto& c = model.config();
    binary::write_bytes(os, "ODMX1");
    binary::write_u32(os, kCheckpointVersion);
    for (std::size_t v : {c.n, c.horizon, c.d, c.layers}) binary::write_u32(os, static_cast<std::uint32_t>(v));
    binary::write_u32(os, static_cast<std::uint32_t>(c.activation));
    binary::write_u32(os, c.ablation.bits());
    binary::write_u32(os, static_cast<std::uint32_t>(model.params().size()));
    for (const auto& [name, p] : model.params()) {
        binary::write_u32(os, static_cast<std::uint32_t>(name.size()));
        binary::write_bytes(os, name);
        binary::write_u32(os, static_cast<std::uint32_t>(p.value.rank()));
        for (auto s : p.value.shape()) binary::write_u32(os, static_cast<std::uint32_t>(s));
        for (float v : p.value.data()) binary::write_f32(os, v);
    }
}

inline ODMixer<float> read_checkpoint(std::istream& is)
{
    binary::expect_magic(is, "ODMX1");
    const auto version = binary::read_u32(is);
    if (version != kCheckpointVersion) throw DataError("unsupported ODMX version " + std::to_string(version));
    ModelConfig c;
    c.n = binary::read_u32(is);
    c.horizon = binary::read_u32(is);
    c.d = binary::read_u32(is);
    c.layers = binary::read_u32(is);
    const auto act = binary::read_u32(is);
    if (act > static_cast<std::uint32_t>(Activation::relu)) throw DataError("unknown activation in checkpoint");
    c.activation = static_cast<Activation>(act);
    c.ablation = Ablation::from_bits(binary::read_u32(is));
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    const auto count = binary::read_u32(is);
    ParameterSet<float> params;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = binary::read_u32(is);
        if (len > 4096) throw DataError("implausible parameter name length");
        std::string name = binary::read_bytes(is, len);
        const auto rank = binary::read_u32(is);
        if (rank > 8) throw DataError("implausible parameter rank");
        Shape shape(rank);
        for (auto& s : shape) s = binary::read_u32(is);
        const std::size_t size = diffcore::shape_size(shape);
        if (size > (std::size_t{1} << 28)) throw DataError("implausible parameter size");
        std::vector<float> values(size);
        for (auto& v : values) v = binary::read_f32(is);
        params.add(name, Tensor<float>(shape, std::move(values)));
    }
    return ODMixer<float>(c, std::move(params));
}

inline void save_checkpoint(const ODMixer<float>& model, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_checkpoint(model, os);
    if (!os) throw DataError("write failed: " + path.string());
}

inline ODMixer<float> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    return read_checkpoint(is);
}

} // namespace odmixer
