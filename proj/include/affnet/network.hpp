#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "affnet/ami.hpp"
#include "affnet/image.hpp"
#include "affnet/layers.hpp"
#include "affnet/rng.hpp"
#include "affnet/tensor.hpp"

namespace affnet {

// The model family: a four-branch multi-scale front end (one conv per
// kernel size), a per-branch reduction block (two parallel stride-2 convs
// summed, then a refining stride-2 conv), channel concat, batch norm, a
// three-conv trunk, and a classifier head that taps the trunk at two depths.
// The ablation variants reconfigure kernels or the head.
enum class Variant {
  kAffectiveNet,  // reference configuration
  kKS1,           // reduction kernels 5/7
  kKS2,           // reduction kernels 7/11
  kLFC,           // the two width-32 FC taps chained serially off the deep map
  kWoMFL,         // head removed; single FC from the deep map
  kAll3x3,        // all four branch kernels 3x3
  kAll1x1,        // per-branch refine conv 1x1
};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kAffectiveNet: return "affectivenet";
    case Variant::kKS1: return "ks1";
    case Variant::kKS2: return "ks2";
    case Variant::kLFC: return "lfc";
    case Variant::kWoMFL: return "womfl";
    case Variant::kAll3x3: return "all3x3";
    case Variant::kAll1x1: return "all1x1";
  }
  return "affectivenet";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kAffectiveNet, Variant::kKS1, Variant::kKS2,
                    Variant::kLFC, Variant::kWoMFL, Variant::kAll3x3,
                    Variant::kAll1x1}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown variant: " + name);
}

inline const std::array<Variant, 7>& all_variants() {
  static const std::array<Variant, 7> v = {
      Variant::kWoMFL, Variant::kLFC,         Variant::kAll3x3,
      Variant::kAll1x1, Variant::kAffectiveNet, Variant::kKS1,
      Variant::kKS2};
  return v;
}

enum class HeadKind { kTwoTap, kSerial, kDirect };

struct NetworkSpec {
  Variant variant = Variant::kAffectiveNet;
  int input_height = 112;
  int input_width = 112;
  std::array<int, 4> branch_kernels = {3, 5, 7, 11};
  std::array<int, 2> pair_kernels = {3, 5};  // the two parallel reduce convs
  int refine_kernel = 3;
  int class_count = 4;
  // Divides every feature depth (floor, min 1) while keeping the topology.
  int depth_divisor = 1;
  std::uint64_t seed = 0;

  // Base feature depths of the reference configuration.
  static constexpr int kBranchDepth = 16;
  static constexpr int kPairDepth = 32;
  static constexpr int kRefineDepth = 64;
  static constexpr int kMidDepth = 184;
  static constexpr int kDownDepth = 128;
  static constexpr int kDeepDepth = 196;
  static constexpr int kTapWidth = 32;

  int scaled(int depth) const { return std::max(1, depth / depth_divisor); }
  int branch_depth() const { return scaled(kBranchDepth); }
  int pair_depth() const { return scaled(kPairDepth); }
  int refine_depth() const { return scaled(kRefineDepth); }
  int merged_depth() const { return 4 * refine_depth(); }
  int mid_depth() const { return scaled(kMidDepth); }
  int down_depth() const { return scaled(kDownDepth); }
  int deep_depth() const { return scaled(kDeepDepth); }
  int tap_width() const { return scaled(kTapWidth); }

  HeadKind head() const {
    if (variant == Variant::kLFC) return HeadKind::kSerial;
    if (variant == Variant::kWoMFL) return HeadKind::kDirect;
    return HeadKind::kTwoTap;
  }
};

inline NetworkSpec make_spec(Variant variant) {
  NetworkSpec spec;
  spec.variant = variant;
  switch (variant) {
    case Variant::kKS1: spec.pair_kernels = {5, 7}; break;
    case Variant::kKS2: spec.pair_kernels = {7, 11}; break;
    case Variant::kAll3x3: spec.branch_kernels = {3, 3, 3, 3}; break;
    case Variant::kAll1x1: spec.refine_kernel = 1; break;
    default: break;
  }
  return spec;
}

inline void validate(const NetworkSpec& spec) {
  detail::require(spec.input_height >= 8 && spec.input_width >= 8,
                  "input size must be at least 8 x 8");
  for (int k : spec.branch_kernels)
    detail::require(k >= 1 && k % 2 == 1, "branch kernels must be odd");
  for (int k : spec.pair_kernels)
    detail::require(k >= 1 && k % 2 == 1, "pair kernels must be odd");
  detail::require(spec.refine_kernel >= 1 && spec.refine_kernel % 2 == 1,
                  "refine kernel must be odd");
  detail::require(spec.class_count >= 2, "class count must be >= 2");
  detail::require(spec.depth_divisor >= 1, "depth divisor must be >= 1");
}

inline void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  j = nlohmann::json{
      {"variant", variant_name(spec.variant)},
      {"input_size", {spec.input_height, spec.input_width}},
      {"kernels",
       {{"branch", spec.branch_kernels},
        {"pair", spec.pair_kernels},
        {"refine", spec.refine_kernel}}},
      {"class_count", spec.class_count},
      {"depth_divisor", spec.depth_divisor},
      {"seed", spec.seed}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec = make_spec(parse_variant(j.at("variant").get<std::string>()));
  if (j.contains("input_size")) {
    spec.input_height = j["input_size"].at(0).get<int>();
    spec.input_width = j["input_size"].at(1).get<int>();
  }
  if (j.contains("kernels")) {
    const auto& k = j["kernels"];
    if (k.contains("branch"))
      spec.branch_kernels = k["branch"].get<std::array<int, 4>>();
    if (k.contains("pair"))
      spec.pair_kernels = k["pair"].get<std::array<int, 2>>();
    if (k.contains("refine")) spec.refine_kernel = k["refine"];
  }
  if (j.contains("class_count")) spec.class_count = j["class_count"];
  if (j.contains("depth_divisor")) spec.depth_divisor = j["depth_divisor"];
  if (j.contains("seed")) spec.seed = j["seed"];
  validate(spec);
}

// ---------------------------------------------------------------------------
// Built network.
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  NetworkSpec spec;
  std::array<nn::ConvLayer<T>, 4> branch;
  std::array<nn::ConvLayer<T>, 4> reduce_a;
  std::array<nn::ConvLayer<T>, 4> reduce_b;
  std::array<nn::ConvLayer<T>, 4> refine;
  nn::BatchNorm<T> merge_bn;
  nn::ConvLayer<T> trunk_mid;   // -> mid map
  nn::ConvLayer<T> trunk_down;  // -> down map
  nn::ConvLayer<T> trunk_deep;  // -> deep map
  nn::FCLayer<T> tap_mid;       // two-tap head only
  nn::FCLayer<T> tap_deep;      // two-tap and serial heads
  nn::FCLayer<T> chain;         // serial head only
  nn::BatchNorm<T> head_bn;     // two-tap and serial heads
  nn::FCLayer<T> classifier;

  struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
    bool trainable;
  };

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> refs;
    auto conv = [&refs](const std::string& name, nn::ConvLayer<T>& layer) {
      refs.push_back({name + ".kernel", &layer.kernel, true});
      refs.push_back({name + ".bias", &layer.bias, true});
    };
    auto fclayer = [&refs](const std::string& name, nn::FCLayer<T>& layer) {
      refs.push_back({name + ".weights", &layer.weights, true});
      refs.push_back({name + ".bias", &layer.bias, true});
    };
    auto bn = [&refs](const std::string& name, nn::BatchNorm<T>& layer) {
      refs.push_back({name + ".scale", &layer.scale, true});
      refs.push_back({name + ".shift", &layer.shift, true});
      refs.push_back({name + ".running_mean", &layer.running_mean, false});
      refs.push_back({name + ".running_var", &layer.running_var, false});
    };
    for (int b = 0; b < 4; ++b) {
      std::string base = "branch" + std::to_string(b + 1);
      conv(base, branch[b]);
      conv(base + ".reduce_a", reduce_a[b]);
      conv(base + ".reduce_b", reduce_b[b]);
      conv(base + ".refine", refine[b]);
    }
    bn("merge_bn", merge_bn);
    conv("trunk_mid", trunk_mid);
    conv("trunk_down", trunk_down);
    conv("trunk_deep", trunk_deep);
    const HeadKind head = spec.head();
    if (head == HeadKind::kTwoTap) fclayer("tap_mid", tap_mid);
    if (head != HeadKind::kDirect) fclayer("tap_deep", tap_deep);
    if (head == HeadKind::kSerial) fclayer("chain", chain);
    if (head != HeadKind::kDirect) bn("head_bn", head_bn);
    fclayer("classifier", classifier);
    return refs;
  }

  long long trainable_count() const {
    long long total = 0;
    auto& self = const_cast<Network&>(*this);
    for (const auto& ref : self.parameters())
      if (ref.trainable) total += static_cast<long long>(ref.tensor->size());
    return total;
  }
};

// Spatial extent after each stage; every strided conv halves by ceiling.
struct ShapeChain {
  std::pair<int, int> branch, pair, refined, mid, down, deep;
};

inline ShapeChain shape_chain(const NetworkSpec& spec) {
  auto halve = [](std::pair<int, int> s) {
    return std::pair<int, int>{(s.first + 1) / 2, (s.second + 1) / 2};
  };
  ShapeChain c;
  c.branch = {spec.input_height, spec.input_width};
  c.pair = halve(c.branch);
  c.refined = halve(c.pair);
  c.mid = halve(c.refined);
  c.down = halve(c.mid);
  c.deep = halve(c.down);
  return c;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec) {
  validate(spec);
  Network<T> net;
  net.spec = spec;
  // Each layer draws from its own name-derived stream so that variants
  // leave untouched layers bit-identical for a given seed.
  auto layer_rng = [&spec](const std::string& name) {
    return Rng(mix_seed(spec.seed, hash_name(name.c_str())));
  };
  for (int b = 0; b < 4; ++b) {
    std::string base = "branch" + std::to_string(b + 1);
    Rng r0 = layer_rng(base);
    net.branch[b] =
        nn::make_conv<T>(spec.branch_kernels[b], 1, 3, spec.branch_depth(), r0);
    Rng ra = layer_rng(base + ".reduce_a");
    net.reduce_a[b] = nn::make_conv<T>(spec.pair_kernels[0], 2,
                                       spec.branch_depth(), spec.pair_depth(), ra);
    Rng rb = layer_rng(base + ".reduce_b");
    net.reduce_b[b] = nn::make_conv<T>(spec.pair_kernels[1], 2,
                                       spec.branch_depth(), spec.pair_depth(), rb);
    Rng rr = layer_rng(base + ".refine");
    net.refine[b] = nn::make_conv<T>(spec.refine_kernel, 2, spec.pair_depth(),
                                     spec.refine_depth(), rr);
  }
  net.merge_bn = nn::make_batchnorm<T>(spec.merged_depth());
  {
    Rng r = layer_rng("trunk_mid");
    net.trunk_mid =
        nn::make_conv<T>(3, 2, spec.merged_depth(), spec.mid_depth(), r);
  }
  {
    Rng r = layer_rng("trunk_down");
    net.trunk_down = nn::make_conv<T>(3, 2, spec.mid_depth(), spec.down_depth(), r);
  }
  {
    Rng r = layer_rng("trunk_deep");
    net.trunk_deep =
        nn::make_conv<T>(3, 2, spec.down_depth(), spec.deep_depth(), r);
  }

  const ShapeChain chain = shape_chain(spec);
  const int mid_flat = chain.mid.first * chain.mid.second * spec.mid_depth();
  const int deep_flat = chain.deep.first * chain.deep.second * spec.deep_depth();
  const HeadKind head = spec.head();
  if (head == HeadKind::kTwoTap) {
    Rng rm = layer_rng("tap_mid");
    net.tap_mid = nn::make_fc<T>(mid_flat, spec.tap_width(), rm);
    Rng rd = layer_rng("tap_deep");
    net.tap_deep = nn::make_fc<T>(deep_flat, spec.tap_width(), rd);
    net.head_bn = nn::make_batchnorm<T>(2 * spec.tap_width());
    Rng rc = layer_rng("classifier");
    net.classifier = nn::make_fc<T>(2 * spec.tap_width(), spec.class_count, rc);
  } else if (head == HeadKind::kSerial) {
    Rng rd = layer_rng("tap_deep");
    net.tap_deep = nn::make_fc<T>(deep_flat, spec.tap_width(), rd);
    Rng rc2 = layer_rng("chain");
    net.chain = nn::make_fc<T>(spec.tap_width(), spec.tap_width(), rc2);
    net.head_bn = nn::make_batchnorm<T>(spec.tap_width());
    Rng rc = layer_rng("classifier");
    net.classifier = nn::make_fc<T>(spec.tap_width(), spec.class_count, rc);
  } else {
    Rng rc = layer_rng("classifier");
    net.classifier = nn::make_fc<T>(deep_flat, spec.class_count, rc);
  }

  return net;
}

template <typename T>
Network<T> zeros_like(const Network<T>& net) {
  Network<T> twin = net;
  for (auto& ref : twin.parameters()) ref.tensor->fill(T(0));
  return twin;
}

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------

namespace netdetail {

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  const auto& first = *parts.front();
  std::size_t channels = 0;
  for (const auto* p : parts) channels += p->dim(p->rank() - 1);
  std::vector<std::size_t> shape = first.shape();
  shape.back() = channels;
  Tensor<T> out(shape);
  const std::size_t rows = out.size() / channels;
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t c = p->dim(p->rank() - 1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < c; ++i)
        out[r * channels + offset + i] = (*p)[r * c + i];
    offset += c;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& merged,
                                      const std::vector<std::size_t>& sizes) {
  const std::size_t channels = merged.dim(merged.rank() - 1);
  const std::size_t rows = merged.size() / channels;
  std::vector<Tensor<T>> parts;
  std::size_t offset = 0;
  for (std::size_t c : sizes) {
    std::vector<std::size_t> shape = merged.shape();
    shape.back() = c;
    Tensor<T> part(shape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < c; ++i)
        part[r * c + i] = merged[r * channels + offset + i];
    offset += c;
    parts.push_back(std::move(part));
  }
  return parts;
}

template <typename T>
void add_inplace(Tensor<T>& target, const Tensor<T>& other) {
  detail::require(target.same_shape(other), "tensor sum: shape mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] += other[i];
}

}  // namespace netdetail

template <typename T>
struct ForwardCache {
  Tensor<T> input;
  std::array<Tensor<T>, 4> branch_pre, branch_act;
  std::array<Tensor<T>, 4> reduce_a_pre, reduce_a_act;
  std::array<Tensor<T>, 4> reduce_b_pre, reduce_b_act;
  std::array<Tensor<T>, 4> pair_sum;
  std::array<Tensor<T>, 4> refine_pre, refine_act;
  Tensor<T> merged;
  nn::BatchNormCache<T> merge_bn_cache;
  Tensor<T> merge_bn_out;
  Tensor<T> mid_pre, mid_act;
  Tensor<T> down_pre, down_act;
  Tensor<T> deep_pre, deep_act;
  Tensor<T> tap_mid_pre, tap_mid_act;
  Tensor<T> tap_deep_pre, tap_deep_act;
  Tensor<T> chain_pre, chain_act;
  Tensor<T> head_cat;
  nn::BatchNormCache<T> head_bn_cache;
  Tensor<T> head_bn_out;
  Tensor<T> logits;
};

// Train mode uses batch statistics in the batch-norm layers and updates
// their running estimates; pass a cache to enable backward().
template <typename T>
Tensor<T> forward_logits(Network<T>& net, const Tensor<T>& batch, nn::Mode mode,
                         ForwardCache<T>* cache = nullptr) {
  detail::require(batch.rank() == 4 && batch.dim(3) == 3,
                  "network input must be [N, H, W, 3]");
  detail::require(
      batch.dim(1) == static_cast<std::size_t>(net.spec.input_height) &&
          batch.dim(2) == static_cast<std::size_t>(net.spec.input_width),
      "network input spatial size does not match spec");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.input = batch;

  std::vector<const Tensor<T>*> refined;
  for (int b = 0; b < 4; ++b) {
    c.branch_pre[b] = nn::conv2d(batch, net.branch[b]);
    c.branch_act[b] = nn::relu(c.branch_pre[b]);
    c.reduce_a_pre[b] = nn::conv2d(c.branch_act[b], net.reduce_a[b]);
    c.reduce_a_act[b] = nn::relu(c.reduce_a_pre[b]);
    c.reduce_b_pre[b] = nn::conv2d(c.branch_act[b], net.reduce_b[b]);
    c.reduce_b_act[b] = nn::relu(c.reduce_b_pre[b]);
    c.pair_sum[b] = c.reduce_a_act[b];
    netdetail::add_inplace(c.pair_sum[b], c.reduce_b_act[b]);
    c.refine_pre[b] = nn::conv2d(c.pair_sum[b], net.refine[b]);
    c.refine_act[b] = nn::relu(c.refine_pre[b]);
    refined.push_back(&c.refine_act[b]);
  }
  c.merged = netdetail::concat_channels(refined);
  c.merge_bn_out = nn::batchnorm(c.merged, net.merge_bn, mode,
                                 cache ? &c.merge_bn_cache : nullptr);
  c.mid_pre = nn::conv2d(c.merge_bn_out, net.trunk_mid);
  c.mid_act = nn::relu(c.mid_pre);
  c.down_pre = nn::conv2d(c.mid_act, net.trunk_down);
  c.down_act = nn::relu(c.down_pre);
  c.deep_pre = nn::conv2d(c.down_act, net.trunk_deep);
  c.deep_act = nn::relu(c.deep_pre);

  const HeadKind head = net.spec.head();
  if (head == HeadKind::kTwoTap) {
    c.tap_mid_pre = nn::fc(c.mid_act, net.tap_mid);
    c.tap_mid_act = nn::relu(c.tap_mid_pre);
    c.tap_deep_pre = nn::fc(c.deep_act, net.tap_deep);
    c.tap_deep_act = nn::relu(c.tap_deep_pre);
    c.head_cat =
        netdetail::concat_channels<T>({&c.tap_mid_act, &c.tap_deep_act});
    c.head_bn_out = nn::batchnorm(c.head_cat, net.head_bn, mode,
                                  cache ? &c.head_bn_cache : nullptr);
    c.logits = nn::fc(c.head_bn_out, net.classifier);
  } else if (head == HeadKind::kSerial) {
    c.tap_deep_pre = nn::fc(c.deep_act, net.tap_deep);
    c.tap_deep_act = nn::relu(c.tap_deep_pre);
    c.chain_pre = nn::fc(c.tap_deep_act, net.chain);
    c.chain_act = nn::relu(c.chain_pre);
    c.head_bn_out = nn::batchnorm(c.chain_act, net.head_bn, mode,
                                  cache ? &c.head_bn_cache : nullptr);
    c.logits = nn::fc(c.head_bn_out, net.classifier);
  } else {
    c.logits = nn::fc(c.deep_act, net.classifier);
  }
  return c.logits;
}

// Inference on a shared, immutable network.
template <typename T>
Tensor<T> forward_logits(const Network<T>& net, const Tensor<T>& batch) {
  // Infer mode never writes to the network.
  return forward_logits(const_cast<Network<T>&>(net), batch, nn::Mode::kInfer);
}

// Class probabilities, rows summing to one.
template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& batch,
                  nn::Mode mode = nn::Mode::kInfer) {
  return nn::softmax(forward_logits(net, batch, mode));
}

template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
  return nn::softmax(forward_logits(net, batch));
}

// Gradients for every trainable parameter, returned as a zeroed twin of the
// network with gradient values in the parameter slots.
template <typename T>
Network<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                    const Tensor<T>& grad_logits) {
  Network<T> grads = zeros_like(net);
  const HeadKind head = net.spec.head();

  Tensor<T> g_mid_from_tap;   // empty unless two-tap head
  Tensor<T> g_deep;           // gradient wrt the deep activation map

  if (head == HeadKind::kTwoTap) {
    nn::FCGrads<T> g_cls =
        nn::fc_backward(grad_logits, cache.head_bn_out, net.classifier);
    grads.classifier.weights = std::move(g_cls.weights);
    grads.classifier.bias = std::move(g_cls.bias);
    nn::BatchNormGrads<T> g_bn =
        nn::batchnorm_backward(g_cls.input, net.head_bn, cache.head_bn_cache);
    grads.head_bn.scale = std::move(g_bn.scale);
    grads.head_bn.shift = std::move(g_bn.shift);
    const std::size_t w = static_cast<std::size_t>(net.spec.tap_width());
    std::vector<Tensor<T>> taps =
        netdetail::split_channels(g_bn.input, {w, w});
    Tensor<T> g_tap_mid_pre = nn::relu_backward(taps[0], cache.tap_mid_pre);
    nn::FCGrads<T> g_tap_mid =
        nn::fc_backward(g_tap_mid_pre, cache.mid_act, net.tap_mid);
    grads.tap_mid.weights = std::move(g_tap_mid.weights);
    grads.tap_mid.bias = std::move(g_tap_mid.bias);
    g_mid_from_tap = std::move(g_tap_mid.input);
    Tensor<T> g_tap_deep_pre = nn::relu_backward(taps[1], cache.tap_deep_pre);
    nn::FCGrads<T> g_tap_deep =
        nn::fc_backward(g_tap_deep_pre, cache.deep_act, net.tap_deep);
    grads.tap_deep.weights = std::move(g_tap_deep.weights);
    grads.tap_deep.bias = std::move(g_tap_deep.bias);
    g_deep = std::move(g_tap_deep.input);
  } else if (head == HeadKind::kSerial) {
    nn::FCGrads<T> g_cls =
        nn::fc_backward(grad_logits, cache.head_bn_out, net.classifier);
    grads.classifier.weights = std::move(g_cls.weights);
    grads.classifier.bias = std::move(g_cls.bias);
    nn::BatchNormGrads<T> g_bn =
        nn::batchnorm_backward(g_cls.input, net.head_bn, cache.head_bn_cache);
    grads.head_bn.scale = std::move(g_bn.scale);
    grads.head_bn.shift = std::move(g_bn.shift);
    Tensor<T> g_chain_pre = nn::relu_backward(g_bn.input, cache.chain_pre);
    nn::FCGrads<T> g_chain =
        nn::fc_backward(g_chain_pre, cache.tap_deep_act, net.chain);
    grads.chain.weights = std::move(g_chain.weights);
    grads.chain.bias = std::move(g_chain.bias);
    Tensor<T> g_tap_pre = nn::relu_backward(g_chain.input, cache.tap_deep_pre);
    nn::FCGrads<T> g_tap =
        nn::fc_backward(g_tap_pre, cache.deep_act, net.tap_deep);
    grads.tap_deep.weights = std::move(g_tap.weights);
    grads.tap_deep.bias = std::move(g_tap.bias);
    g_deep = std::move(g_tap.input);
  } else {
    nn::FCGrads<T> g_cls =
        nn::fc_backward(grad_logits, cache.deep_act, net.classifier);
    grads.classifier.weights = std::move(g_cls.weights);
    grads.classifier.bias = std::move(g_cls.bias);
    g_deep = std::move(g_cls.input);
  }

  // Trunk.
  Tensor<T> g_deep_pre = nn::relu_backward(g_deep, cache.deep_pre);
  nn::ConvGrads<T> g_trunk_deep =
      nn::conv2d_backward(g_deep_pre, cache.down_act, net.trunk_deep);
  grads.trunk_deep.kernel = std::move(g_trunk_deep.kernel);
  grads.trunk_deep.bias = std::move(g_trunk_deep.bias);
  Tensor<T> g_down_pre =
      nn::relu_backward(g_trunk_deep.input, cache.down_pre);
  nn::ConvGrads<T> g_trunk_down =
      nn::conv2d_backward(g_down_pre, cache.mid_act, net.trunk_down);
  grads.trunk_down.kernel = std::move(g_trunk_down.kernel);
  grads.trunk_down.bias = std::move(g_trunk_down.bias);
  Tensor<T> g_mid_act = std::move(g_trunk_down.input);
  if (!g_mid_from_tap.empty()) netdetail::add_inplace(g_mid_act, g_mid_from_tap);
  Tensor<T> g_mid_pre = nn::relu_backward(g_mid_act, cache.mid_pre);
  nn::ConvGrads<T> g_trunk_mid =
      nn::conv2d_backward(g_mid_pre, cache.merge_bn_out, net.trunk_mid);
  grads.trunk_mid.kernel = std::move(g_trunk_mid.kernel);
  grads.trunk_mid.bias = std::move(g_trunk_mid.bias);
  nn::BatchNormGrads<T> g_merge_bn = nn::batchnorm_backward(
      g_trunk_mid.input, net.merge_bn, cache.merge_bn_cache);
  grads.merge_bn.scale = std::move(g_merge_bn.scale);
  grads.merge_bn.shift = std::move(g_merge_bn.shift);

  // Branches.
  const std::size_t rc = static_cast<std::size_t>(net.spec.refine_depth());
  std::vector<Tensor<T>> g_refined =
      netdetail::split_channels(g_merge_bn.input, {rc, rc, rc, rc});
  for (int b = 0; b < 4; ++b) {
    Tensor<T> g_refine_pre =
        nn::relu_backward(g_refined[b], cache.refine_pre[b]);
    nn::ConvGrads<T> g_refine =
        nn::conv2d_backward(g_refine_pre, cache.pair_sum[b], net.refine[b]);
    grads.refine[b].kernel = std::move(g_refine.kernel);
    grads.refine[b].bias = std::move(g_refine.bias);
    // The pair sum fans the gradient out to both reduce convs.
    Tensor<T> g_a_pre =
        nn::relu_backward(g_refine.input, cache.reduce_a_pre[b]);
    nn::ConvGrads<T> g_a =
        nn::conv2d_backward(g_a_pre, cache.branch_act[b], net.reduce_a[b]);
    grads.reduce_a[b].kernel = std::move(g_a.kernel);
    grads.reduce_a[b].bias = std::move(g_a.bias);
    Tensor<T> g_b_pre =
        nn::relu_backward(g_refine.input, cache.reduce_b_pre[b]);
    nn::ConvGrads<T> g_bgrad =
        nn::conv2d_backward(g_b_pre, cache.branch_act[b], net.reduce_b[b]);
    grads.reduce_b[b].kernel = std::move(g_bgrad.kernel);
    grads.reduce_b[b].bias = std::move(g_bgrad.bias);
    Tensor<T> g_branch_act = std::move(g_a.input);
    netdetail::add_inplace(g_branch_act, g_bgrad.input);
    Tensor<T> g_branch_pre =
        nn::relu_backward(g_branch_act, cache.branch_pre[b]);
    nn::ConvGrads<T> g_branch = nn::conv2d_backward(
        g_branch_pre, cache.input, net.branch[b], /*need_input_grad=*/false);
    grads.branch[b].kernel = std::move(g_branch.kernel);
    grads.branch[b].bias = std::move(g_branch.bias);
  }
  return grads;
}

template <typename T>
void apply_sgd(Network<T>& net, Network<T>& grads, T learning_rate) {
  auto params = net.parameters();
  auto gparams = grads.parameters();
  detail::require(params.size() == gparams.size(),
                  "apply_sgd: parameter lists differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].trainable)
      nn::sgd_step(*params[i].tensor, *gparams[i].tensor, learning_rate);
}

// ---------------------------------------------------------------------------
// Parameter accounting. count_params reads the built tensors; param_ledger
// recomputes every layer from the spec alone so the two can cross-check.
// ---------------------------------------------------------------------------

template <typename T>
std::pair<long long, long long> count_params(const Network<T>& net) {
  long long total = net.trainable_count();
  return {total, 4 * total};  // float32 storage
}

struct LedgerRow {
  std::string layer;
  long long count = 0;
};

struct ParamLedger {
  std::vector<LedgerRow> rows;
  long long total = 0;
  long long bytes = 0;
};

inline ParamLedger param_ledger(const NetworkSpec& spec) {
  validate(spec);
  auto conv_count = [](int k, int cin, int cout) {
    return static_cast<long long>(k) * k * cin * cout + cout;
  };
  auto fc_count = [](long long din, long long dout) { return din * dout + dout; };
  auto bn_count = [](int c) { return 2LL * c; };
  auto ceil_half = [](int v) { return (v + 1) / 2; };

  ParamLedger ledger;
  auto add = [&ledger](const std::string& name, long long count) {
    ledger.rows.push_back({name, count});
    ledger.total += count;
  };

  for (int b = 0; b < 4; ++b) {
    std::string base = "branch" + std::to_string(b + 1);
    add(base, conv_count(spec.branch_kernels[b], 3, spec.branch_depth()));
    add(base + ".reduce_a",
        conv_count(spec.pair_kernels[0], spec.branch_depth(), spec.pair_depth()));
    add(base + ".reduce_b",
        conv_count(spec.pair_kernels[1], spec.branch_depth(), spec.pair_depth()));
    add(base + ".refine",
        conv_count(spec.refine_kernel, spec.pair_depth(), spec.refine_depth()));
  }
  add("merge_bn", bn_count(spec.merged_depth()));
  add("trunk_mid", conv_count(3, spec.merged_depth(), spec.mid_depth()));
  add("trunk_down", conv_count(3, spec.mid_depth(), spec.down_depth()));
  add("trunk_deep", conv_count(3, spec.down_depth(), spec.deep_depth()));

  int h = spec.input_height, w = spec.input_width;
  h = ceil_half(h); w = ceil_half(w);  // reduce pair
  h = ceil_half(h); w = ceil_half(w);  // refine
  h = ceil_half(h); w = ceil_half(w);  // trunk_mid
  const long long mid_flat = static_cast<long long>(h) * w * spec.mid_depth();
  h = ceil_half(h); w = ceil_half(w);  // trunk_down
  h = ceil_half(h); w = ceil_half(w);  // trunk_deep
  const long long deep_flat = static_cast<long long>(h) * w * spec.deep_depth();

  switch (spec.head()) {
    case HeadKind::kTwoTap:
      add("tap_mid", fc_count(mid_flat, spec.tap_width()));
      add("tap_deep", fc_count(deep_flat, spec.tap_width()));
      add("head_bn", bn_count(2 * spec.tap_width()));
      add("classifier", fc_count(2 * spec.tap_width(), spec.class_count));
      break;
    case HeadKind::kSerial:
      add("tap_deep", fc_count(deep_flat, spec.tap_width()));
      add("chain", fc_count(spec.tap_width(), spec.tap_width()));
      add("head_bn", bn_count(spec.tap_width()));
      add("classifier", fc_count(spec.tap_width(), spec.class_count));
      break;
    case HeadKind::kDirect:
      add("classifier", fc_count(deep_flat, spec.class_count));
      break;
  }
  ledger.bytes = 4 * ledger.total;
  return ledger;
}

// ---------------------------------------------------------------------------
// Activation export: per-channel min-max normalized grayscale PNGs for the
// named spatial maps.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> collect_activations(
    const Network<T>& net, const Tensor<T>& batch) {
  ForwardCache<T> cache;
  forward_logits(const_cast<Network<T>&>(net), batch, nn::Mode::kInfer, &cache);
  std::vector<std::pair<std::string, Tensor<T>>> named;
  for (int b = 0; b < 4; ++b) {
    std::string base = "branch" + std::to_string(b + 1);
    named.emplace_back(base, cache.branch_act[b]);
    named.emplace_back(base + ".reduce_a", cache.reduce_a_act[b]);
    named.emplace_back(base + ".reduce_b", cache.reduce_b_act[b]);
    named.emplace_back(base + ".refine", cache.refine_act[b]);
  }
  named.emplace_back("merged", cache.merged);
  named.emplace_back("merged.bn", cache.merge_bn_out);
  named.emplace_back("trunk_mid", cache.mid_act);
  named.emplace_back("trunk_down", cache.down_act);
  named.emplace_back("trunk_deep", cache.deep_act);
  return named;
}

template <typename T>
int export_activations(const Network<T>& net, const Tensor<T>& image,
                       const std::vector<std::string>& layer_names,
                       const std::filesystem::path& out_dir) {
  detail::require(image.rank() == 3 || image.rank() == 4,
                  "activation export input must be an image or a 1-batch");
  Tensor<T> batch = image;
  if (image.rank() == 3) {
    batch = Tensor<T>({1, image.dim(0), image.dim(1), image.dim(2)},
                      std::vector<T>(image.data(), image.data() + image.size()));
  }
  auto named = collect_activations(net, batch);
  std::filesystem::create_directories(out_dir);
  int written = 0;
  for (const std::string& request : layer_names) {
    const Tensor<T>* map = nullptr;
    for (const auto& [name, tensor] : named)
      if (name == request) map = &tensor;
    detail::require(map != nullptr, "unknown layer name: " + request);
    const std::size_t h = map->dim(1), w = map->dim(2), cs = map->dim(3);
    std::string stem = request;
    for (char& ch : stem)
      if (ch == '.') ch = '_';
    for (std::size_t c = 0; c < cs; ++c) {
      Tensor<double> channel({h, w, 1});
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          channel[y * w + x] = static_cast<double>(map->at4(0, y, x, c));
      img::Image8 png = ami::normalize_for_export(channel);
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_c%03zu.png", c);
      img::write_png(out_dir / (stem + suffix), png);
      ++written;
    }
  }
  return written;
}

}  // namespace affnet
