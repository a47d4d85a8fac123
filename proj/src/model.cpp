#include "deforest/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "deforest/autodiff.hpp"
#include "deforest/common.hpp"
#include "deforest/rng.hpp"

namespace deforest {

namespace {

int gate_inter_channels(int skip_channels) { return std::max(skip_channels / 2, 1); }

void append_conv(std::vector<std::pair<std::string, std::vector<int>>>& spec,
                 const std::string& prefix, int cout, int cin, int k) {
    spec.emplace_back(prefix + ".w", std::vector<int>{cout, cin, k, k});
    spec.emplace_back(prefix + ".b", std::vector<int>{cout});
}

void append_norm(std::vector<std::pair<std::string, std::vector<int>>>& spec,
                 const std::string& prefix, int c) {
    spec.emplace_back(prefix + ".gamma", std::vector<int>{c});
    spec.emplace_back(prefix + ".beta", std::vector<int>{c});
}

} // namespace

std::vector<std::pair<std::string, std::vector<int>>> parameter_spec(const ModelConfig& config) {
    if (config.depth < 1) fail("model: depth must be >= 1, got ", config.depth);
    if (config.base_filters < 1) fail("model: base_filters must be >= 1, got ", config.base_filters);
    if (config.in_channels < 1) fail("model: in_channels must be >= 1, got ", config.in_channels);

    std::vector<std::pair<std::string, std::vector<int>>> spec;
    const int d = config.depth;
    const auto filters = [&](int level) { return config.base_filters << level; };

    int prev = config.in_channels;
    for (int i = 0; i < d; ++i) {
        const std::string p = cat("enc", i);
        append_conv(spec, p + ".conv1", filters(i), prev, 3);
        append_norm(spec, p + ".norm1", filters(i));
        append_conv(spec, p + ".conv2", filters(i), filters(i), 3);
        append_norm(spec, p + ".norm2", filters(i));
        prev = filters(i);
    }

    append_conv(spec, "bottleneck.conv1", filters(d), prev, 3);
    append_norm(spec, "bottleneck.norm1", filters(d));
    append_conv(spec, "bottleneck.conv2", filters(d), filters(d), 3);
    append_norm(spec, "bottleneck.norm2", filters(d));

    for (int i = d - 1; i >= 0; --i) {
        const std::string p = cat("dec", i);
        const int fx = filters(i);      // skip connection channels
        const int fg = filters(i + 1);  // gating signal channels
        const int fi = gate_inter_channels(fx);
        append_conv(spec, p + ".up", fx, fg, 3);
        append_norm(spec, p + ".upnorm", fx);
        spec.emplace_back(p + ".gate.theta_x.w", std::vector<int>{fi, fx});
        spec.emplace_back(p + ".gate.theta_g.w", std::vector<int>{fi, fg});
        spec.emplace_back(p + ".gate.theta_g.b", std::vector<int>{fi});
        spec.emplace_back(p + ".gate.psi.w", std::vector<int>{1, fi});
        spec.emplace_back(p + ".gate.psi.b", std::vector<int>{1});
        append_conv(spec, p + ".conv1", fx, 2 * fx, 3);
        append_norm(spec, p + ".norm1", fx);
        append_conv(spec, p + ".conv2", fx, fx, 3);
        append_norm(spec, p + ".norm2", fx);
    }

    spec.emplace_back("head.w", std::vector<int>{1, config.base_filters});
    spec.emplace_back("head.b", std::vector<int>{1});
    return spec;
}

Tensor& ModelParams::find(const std::string& name) {
    for (auto& [n, t] : params)
        if (n == name) return t;
    fail("model: no parameter named '", name, "'");
}

const Tensor& ModelParams::find(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    fail("model: no parameter named '", name, "'");
}

std::int64_t ModelParams::total_weights() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

ModelParams build_attention_unet(const ModelConfig& config, std::uint64_t seed) {
    ModelParams mp;
    mp.config = config;
    mp.seed = seed;
    RngStream rng(seed);

    for (const auto& [name, shape] : parameter_spec(config)) {
        Tensor t = Tensor::zeros(shape);
        const bool is_weight = name.ends_with(".w");
        const bool is_gamma = name.ends_with(".gamma");
        if (is_weight) {
            // fan-in = product of all dims but the first (output) one
            std::int64_t fan_in = 1;
            for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.data) v = rng.uniform(-bound, bound);
        } else if (is_gamma) {
            for (double& v : t.data) v = 1.0;
        }
        // biases and betas stay zero
        mp.params.emplace_back(name, std::move(t));
    }
    return mp;
}

namespace {

struct NodeMap {
    std::map<std::string, ad::Node*> m;
    ad::Node* operator()(const std::string& name) const {
        const auto it = m.find(name);
        if (it == m.end()) fail("model: no parameter node '", name, "'");
        return it->second;
    }
};

NodeMap make_param_nodes(ad::Graph& g, const ModelParams& params, bool needs_grad) {
    NodeMap nodes;
    for (const auto& [name, t] : params.params) nodes.m[name] = g.leaf(t, needs_grad);
    return nodes;
}

ad::Node* conv_norm_relu(ad::Graph& g, ad::Node* x, const NodeMap& p, const std::string& conv,
                         const std::string& norm) {
    ad::Node* y = g.conv2d(x, p(conv + ".w"), p(conv + ".b"));
    y = g.channel_norm(y, p(norm + ".gamma"), p(norm + ".beta"));
    return g.relu(y);
}

struct GateNodes {
    ad::Node* theta_x_w;
    ad::Node* theta_g_w;
    ad::Node* theta_g_b;
    ad::Node* psi_w;
    ad::Node* psi_b;
};

// Returns the gated skip tensor; *alpha_out receives the upsampled
// attention map node when requested.
ad::Node* gate_forward(ad::Graph& g, ad::Node* x, ad::Node* gating, const GateNodes& gn,
                       ad::Node** alpha_out = nullptr) {
    if (gating->v().dim(1) * 2 != x->v().dim(1) || gating->v().dim(2) * 2 != x->v().dim(2))
        fail("attention_gate: gating signal must be half of x spatially; x is ",
             x->v().dim(1), "x", x->v().dim(2), ", g is ", gating->v().dim(1), "x",
             gating->v().dim(2));
    ad::Node* xm = g.conv1x1_s2(x, gn.theta_x_w);
    ad::Node* gm = g.conv1x1(gating, gn.theta_g_w, gn.theta_g_b);
    ad::Node* s = g.relu(g.add(xm, gm));
    ad::Node* psi = g.conv1x1(s, gn.psi_w, gn.psi_b);
    ad::Node* alpha = g.upsample2(g.sigmoid(psi));
    if (alpha_out) *alpha_out = alpha;
    return g.gate_mul(x, alpha);
}

ad::Node* unet_forward(ad::Graph& g, const ModelConfig& config, const NodeMap& p,
                       ad::Node* image) {
    const int c = image->v().dim(0), h = image->v().dim(1), w = image->v().dim(2);
    if (c != config.in_channels)
        fail("forward: expected ", config.in_channels, " channels, got ", c);
    const int div = 1 << config.depth;
    if (h % div != 0 || w % div != 0)
        fail("forward: spatial dims ", h, "x", w, " not divisible by 2^depth = ", div);

    std::vector<ad::Node*> skips;
    ad::Node* cur = image;
    for (int i = 0; i < config.depth; ++i) {
        const std::string e = cat("enc", i);
        cur = conv_norm_relu(g, cur, p, e + ".conv1", e + ".norm1");
        cur = conv_norm_relu(g, cur, p, e + ".conv2", e + ".norm2");
        skips.push_back(cur);
        cur = g.maxpool2(cur);
    }
    cur = conv_norm_relu(g, cur, p, "bottleneck.conv1", "bottleneck.norm1");
    cur = conv_norm_relu(g, cur, p, "bottleneck.conv2", "bottleneck.norm2");

    for (int i = config.depth - 1; i >= 0; --i) {
        const std::string d = cat("dec", i);
        ad::Node* gating = cur; // coarse signal, half the skip's resolution
        ad::Node* up = g.conv2d(g.upsample2(cur), p(d + ".up.w"), p(d + ".up.b"));
        up = g.relu(g.channel_norm(up, p(d + ".upnorm.gamma"), p(d + ".upnorm.beta")));
        const GateNodes gn{p(d + ".gate.theta_x.w"), p(d + ".gate.theta_g.w"),
                           p(d + ".gate.theta_g.b"), p(d + ".gate.psi.w"), p(d + ".gate.psi.b")};
        ad::Node* gated = gate_forward(g, skips[static_cast<size_t>(i)], gating, gn);
        cur = g.concat_c(up, gated);
        cur = conv_norm_relu(g, cur, p, d + ".conv1", d + ".norm1");
        cur = conv_norm_relu(g, cur, p, d + ".conv2", d + ".norm2");
    }

    return g.sigmoid(g.conv1x1(cur, p("head.w"), p("head.b")));
}

} // namespace

Grid forward(const ModelParams& params, const Tensor& image) {
    if (image.rank() != 3) fail("forward: image must be (C,H,W)");
    ad::Graph g;
    const NodeMap p = make_param_nodes(g, params, /*needs_grad=*/false);
    ad::Node* image_node = g.leaf(image, false);
    ad::Node* out = unet_forward(g, params.config, p, image_node);
    return grid_from_plane(out->v());
}

GateResult attention_gate(const Tensor& x, const Tensor& g_signal, const GateParams& params) {
    ad::Graph g;
    ad::Node* xn = g.leaf(x, false);
    ad::Node* gn = g.leaf(g_signal, false);
    const GateNodes nodes{g.leaf(params.theta_x_w, false), g.leaf(params.theta_g_w, false),
                          g.leaf(params.theta_g_b, false), g.leaf(params.psi_w, false),
                          g.leaf(params.psi_b, false)};
    ad::Node* alpha = nullptr;
    ad::Node* gated = gate_forward(g, xn, gn, nodes, &alpha);
    GateResult result;
    result.gated = gated->v();
    result.alpha = grid_from_plane(alpha->v());
    return result;
}

GradResult forward_with_gradients(const ModelParams& params, const Tensor& image,
                                  const Grid& label, const LossConfig& loss_config) {
    if (image.rank() != 3) fail("forward_with_gradients: image must be (C,H,W)");
    if (label.h != image.dim(1) || label.w != image.dim(2))
        fail("forward_with_gradients: label ", label.h, "x", label.w, " vs image ",
             image.dim(1), "x", image.dim(2));
    double bad = 0.0;
    if (!is_binary(label, &bad))
        fail("forward_with_gradients: label is not binary (value ", bad, ")");

    ad::Graph g;
    const NodeMap p = make_param_nodes(g, params, /*needs_grad=*/true);
    ad::Node* image_node = g.leaf(image, false);
    ad::Node* out = unet_forward(g, params.config, p, image_node);
    ad::Node* loss = g.combined_loss(out, label, loss_config);
    g.backward(loss);

    GradResult result;
    result.loss = loss->v().data[0];
    result.grads.reserve(params.params.size());
    for (const auto& [name, t] : params.params) {
        ad::Node* n = p(name);
        Tensor grad = n->grad.data.empty() ? Tensor::zeros(t.shape) : n->grad;
        result.grads.emplace_back(name, std::move(grad));
    }
    return result;
}

namespace {

constexpr char kCkptMagic[8] = {'D', 'F', 'O', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) fail("checkpoint: truncated file: ", path.string());
    return v;
}

} // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("checkpoint: cannot open for writing: ", path.string());
    out.write(kCkptMagic, 8);
    write_pod(out, kCkptVersion);
    write_pod(out, static_cast<std::uint8_t>(params.config.sensor == Sensor::Landsat8 ? 0 : 1));
    write_pod(out, static_cast<std::int32_t>(params.config.in_channels));
    write_pod(out, static_cast<std::int32_t>(params.config.depth));
    write_pod(out, static_cast<std::int32_t>(params.config.base_filters));
    write_pod(out, static_cast<std::uint64_t>(params.seed));
    write_pod(out, static_cast<std::uint64_t>(params.params.size()));
    for (const auto& [name, t] : params.params) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) write_pod(out, static_cast<std::int32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) fail("checkpoint: write failed: ", path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("checkpoint: cannot open: ", path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
        fail("checkpoint: bad magic (not a checkpoint): ", path.string());
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCkptVersion)
        fail("checkpoint: version mismatch: file has ", version, ", expected ", kCkptVersion);

    ModelParams mp;
    const auto sensor_tag = read_pod<std::uint8_t>(in, path);
    if (sensor_tag > 1) fail("checkpoint: bad sensor tag ", int(sensor_tag));
    mp.config.sensor = sensor_tag == 0 ? Sensor::Landsat8 : Sensor::Sentinel1;
    mp.config.in_channels = read_pod<std::int32_t>(in, path);
    mp.config.depth = read_pod<std::int32_t>(in, path);
    mp.config.base_filters = read_pod<std::int32_t>(in, path);
    mp.seed = read_pod<std::uint64_t>(in, path);
    const auto count = read_pod<std::uint64_t>(in, path);

    const auto expected = parameter_spec(mp.config);
    if (count != expected.size())
        fail("checkpoint: corrupt file: ", count, " parameters, expected ", expected.size());

    for (size_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = read_pod<std::uint32_t>(in, path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = read_pod<std::int32_t>(in, path);
        if (!in || name != expected[i].first || shape != expected[i].second)
            fail("checkpoint: corrupt file: parameter ", i, " is '", name,
                 "', expected '", expected[i].first, "'");
        Tensor t = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) fail("checkpoint: truncated file: ", path.string());
        mp.params.emplace_back(std::move(name), std::move(t));
    }
    return mp;
}

} // namespace deforest
