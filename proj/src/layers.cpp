#include "peftseg/layers.hpp"

#include <cmath>

#include "peftseg/errors.hpp"
#include "peftseg/kernels.hpp"
#include "peftseg/ops.hpp"

namespace peftseg {

Activation activation_from_name(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "' (expected gelu, relu or identity)");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::gelu:
      return "gelu";
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
  }
  return "?";
}

Tensor apply_activation(Activation a, const Tensor& x) {
  switch (a) {
    case Activation::gelu:
      return ops::gelu(x);
    case Activation::relu:
      return ops::relu(x);
    case Activation::identity:
      return x;
  }
  return x;
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, weight, bias); }

Linear make_linear(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, bool bias,
                   bool trainable, SeedDomain domain, Init weight_init) {
  Linear l;
  l.weight = store.create(prefix + ".weight", {out, in}, weight_init, trainable, domain);
  if (bias) l.bias = store.create(prefix + ".bias", {out}, Init::zeros(), trainable, domain);
  return l;
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }

LayerNorm make_layer_norm(ParameterStore& store, const std::string& prefix, std::int64_t dim, bool trainable,
                          SeedDomain domain, double eps) {
  LayerNorm n;
  n.gamma = store.create(prefix + ".weight", {dim}, Init::ones(), trainable, domain);
  n.beta = store.create(prefix + ".bias", {dim}, Init::zeros(), trainable, domain);
  n.eps = eps;
  return n;
}

Tensor LinearWithLoRA::forward(const Tensor& x) const {
  const auto d = weight.dim(0);
  const auto k = weight.dim(1);
  if (x.dim(-1) != k)
    throw ShapeError("lora_forward: input axis -1 has size " + std::to_string(x.dim(-1)) + ", expected k=" +
                     std::to_string(k) + " from W0 [d,k]=" + shape_str(weight.shape()));
  // Frozen path and low-rank path are computed independently, then summed.
  Tensor h = ops::linear(x, weight, bias);
  for (const auto& u : updates) {
    if (u.a.dim(1) != k || u.b.dim(1) != u.a.dim(0) || u.row_offset + u.b.dim(0) > d)
      throw ShapeError("lora_forward: update '" + u.name + "' A " + shape_str(u.a.shape()) + " / B " +
                       shape_str(u.b.shape()) + " inconsistent with W0 " + shape_str(weight.shape()));
    Tensor low = ops::linear(ops::linear(x, u.a), u.b);
    h = ops::add_into_slice_last(h, ops::scale(low, scale), u.row_offset);
  }
  return h;
}

Tensor lora_forward(const LinearWithLoRA& layer, const Tensor& x) { return layer.forward(x); }

Linear merge_lora(const LinearWithLoRA& layer) {
  const auto k = layer.weight.dim(1);
  std::vector<double> w(layer.weight.data().begin(), layer.weight.data().end());
  for (const auto& u : layer.updates) {
    const auto rows = u.b.dim(0);
    const auto r = u.a.dim(0);
    std::vector<double> ba(static_cast<std::size_t>(rows * k));
    kernels::gemm_nn(rows, k, r, u.b.data(), u.a.data(), ba);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < k; ++j)
        w[static_cast<std::size_t>((u.row_offset + i) * k + j)] += layer.scale * ba[static_cast<std::size_t>(i * k + j)];
  }
  Linear out;
  out.weight = Tensor::from_data(layer.weight.shape(), std::move(w));
  if (layer.bias.defined()) out.bias = layer.bias.detach();
  return out;
}

Tensor AdapterModule::branch(const Tensor& x) const {
  if (x.dim(-1) != down.in_features())
    throw ShapeError("adapter_forward: input axis -1 has size " + std::to_string(x.dim(-1)) + ", expected d=" +
                     std::to_string(down.in_features()));
  return ops::scale(up.forward(apply_activation(activation, down.forward(x))), scale);
}

Tensor AdapterModule::forward(const Tensor& x) const { return ops::add(x, branch(x)); }

Tensor adapter_forward(const AdapterModule& adapter, const Tensor& x) { return adapter.forward(x); }

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(apply_activation(activation, fc1.forward(x))); }

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads) {
  const auto b = q.dim(0), tq = q.dim(1), tk = k.dim(1), dim = q.dim(2);
  if (k.dim(2) != dim || v.dim(2) != dim || v.dim(1) != tk || dim % heads != 0)
    throw ShapeError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                     shape_str(v.shape()) + " with " + std::to_string(heads) + " heads");
  const auto hd = dim / heads;
  auto split = [&](const Tensor& t, std::int64_t len) {
    return ops::reshape(ops::permute(ops::reshape(t, {b, len, heads, hd}), {0, 2, 1, 3}), {b * heads, len, hd});
  };
  Tensor scores = ops::scale(ops::matmul_nt(split(q, tq), split(k, tk)), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor out = ops::matmul_nn(ops::softmax_last(scores), split(v, tk));
  return ops::reshape(ops::permute(ops::reshape(out, {b, heads, tq, hd}), {0, 2, 1, 3}), {b, tq, dim});
}

Tensor Attention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
  return out_proj.forward(multi_head_attention(q_proj.forward(q), k_proj.forward(k), v_proj.forward(v), heads));
}

Attention make_attention(ParameterStore& store, const std::string& prefix, std::int64_t embed_dim,
                         std::int64_t kv_dim, std::int64_t internal_dim, std::int64_t heads, bool trainable,
                         SeedDomain domain) {
  if (internal_dim % heads != 0)
    throw ConfigError(prefix + ": internal width " + std::to_string(internal_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  Attention a;
  // Default PyTorch-style fan-in bounds.
  const auto bound_q = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  const auto bound_kv = 1.0 / std::sqrt(static_cast<double>(kv_dim));
  const auto bound_o = 1.0 / std::sqrt(static_cast<double>(internal_dim));
  a.q_proj = make_linear(store, prefix + ".q_proj", embed_dim, internal_dim, true, trainable, domain, Init::uniform(bound_q));
  a.k_proj = make_linear(store, prefix + ".k_proj", kv_dim, internal_dim, true, trainable, domain, Init::uniform(bound_kv));
  a.v_proj = make_linear(store, prefix + ".v_proj", kv_dim, internal_dim, true, trainable, domain, Init::uniform(bound_kv));
  a.out_proj = make_linear(store, prefix + ".out_proj", internal_dim, embed_dim, true, trainable, domain, Init::uniform(bound_o));
  a.heads = heads;
  return a;
}

}  // namespace peftseg
