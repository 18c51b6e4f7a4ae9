#include "grokforget/model.hpp"

#include <cmath>

#include "grokforget/errors.hpp"
#include "grokforget/ops.hpp"

namespace gf::zoo {

std::string to_string(Family f) {
  switch (f) {
    case Family::mlp: return "mlp";
    case Family::transformer_lite: return "transformer_lite";
    case Family::cnn_lite: return "cnn_lite";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "mlp") return Family::mlp;
  if (s == "transformer_lite") return Family::transformer_lite;
  if (s == "cnn_lite") return Family::cnn_lite;
  throw ValidationError("unknown model family '" + s + "'");
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError("invalid model spec: " + msg);
}

ConvGeometry conv_geometry(const ModelSpec& s, int layer) {
  ConvGeometry g;
  g.in_channels = s.channels;
  g.height = s.height;
  g.width = s.width;
  for (int i = 0; i <= layer; ++i) {
    if (i > 0) {
      g.in_channels = g.out_channels;
      g.height = g.out_height();
      g.width = g.out_width();
    }
    g.out_channels = s.conv_channels[static_cast<std::size_t>(i)];
    g.kernel = 3;
    g.stride = i == 0 ? 1 : 2;
    g.padding = 1;
  }
  return g;
}

std::int64_t cnn_flat_width(const ModelSpec& s) {
  const auto g = conv_geometry(s, 2);
  return g.out_channels * g.out_height() * g.out_width();
}

}  // namespace

void ModelSpec::validate() const {
  switch (family) {
    case Family::mlp:
      require(layer_sizes.size() >= 2, "mlp needs at least input and output sizes");
      for (auto s : layer_sizes) require(s > 0, "mlp layer sizes must be positive");
      break;
    case Family::transformer_lite:
      require(vocab_size > 0 && seq_len > 0 && embed_dim > 0 && heads > 0, "transformer sizes must be positive");
      require(blocks >= 1, "transformer_lite needs at least one attention block");
      require(embed_dim % heads == 0, "embed_dim must be divisible by heads");
      require(mlp_dim >= 0, "mlp_dim must be non-negative");
      break;
    case Family::cnn_lite:
      require(channels > 0 && height > 0 && width > 0, "cnn input dims must be positive");
      require(conv_channels.size() == 3, "cnn_lite has exactly three conv layers");
      for (auto c : conv_channels) require(c > 0, "conv channels must be positive");
      require(hidden > 0, "cnn hidden width must be positive");
      require(classes > 0, "cnn_lite needs a classifier head");
      break;
  }
}

std::int64_t ModelSpec::num_classes() const {
  switch (family) {
    case Family::mlp: return layer_sizes.back();
    case Family::transformer_lite: return vocab_size;
    case Family::cnn_lite: return classes;
  }
  return 0;
}

std::int64_t ModelSpec::input_width() const {
  switch (family) {
    case Family::mlp: return layer_sizes.front();
    case Family::transformer_lite: return seq_len;
    case Family::cnn_lite: return channels * height * width;
  }
  return 0;
}

std::int64_t ModelSpec::representation_width() const {
  switch (family) {
    case Family::mlp: return layer_sizes[layer_sizes.size() - 2];
    case Family::transformer_lite: return embed_dim;
    case Family::cnn_lite: return hidden;
  }
  return 0;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  j["family"] = to_string(family);
  j["seed"] = seed;
  switch (family) {
    case Family::mlp:
      j["layer_sizes"] = layer_sizes;
      j["activation"] = "relu";
      break;
    case Family::transformer_lite:
      j["vocab_size"] = vocab_size;
      j["seq_len"] = seq_len;
      j["embed_dim"] = embed_dim;
      j["heads"] = heads;
      j["blocks"] = blocks;
      j["mlp_dim"] = resolved_mlp_dim();
      j["activation"] = "gelu";
      break;
    case Family::cnn_lite:
      j["channels"] = channels;
      j["height"] = height;
      j["width"] = width;
      j["conv_channels"] = conv_channels;
      j["hidden"] = hidden;
      j["classes"] = classes;
      j["activation"] = "relu";
      break;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  switch (s.family) {
    case Family::mlp:
      s.layer_sizes = j.at("layer_sizes").get<std::vector<std::int64_t>>();
      break;
    case Family::transformer_lite:
      s.vocab_size = j.at("vocab_size").get<std::int64_t>();
      s.seq_len = j.at("seq_len").get<std::int64_t>();
      s.embed_dim = j.at("embed_dim").get<std::int64_t>();
      s.heads = j.value("heads", std::int64_t{1});
      s.blocks = j.value("blocks", std::int64_t{1});
      s.mlp_dim = j.value("mlp_dim", std::int64_t{0});
      break;
    case Family::cnn_lite:
      s.channels = j.value("channels", std::int64_t{1});
      s.height = j.at("height").get<std::int64_t>();
      s.width = j.at("width").get<std::int64_t>();
      s.conv_channels = j.value("conv_channels", std::vector<std::int64_t>{8, 16, 16});
      s.hidden = j.value("hidden", std::int64_t{32});
      s.classes = j.at("classes").get<std::int64_t>();
      break;
  }
  s.validate();
  return s;
}

std::shared_ptr<const IndexMap> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  auto map = std::make_shared<IndexMap>();
  switch (spec.family) {
    case Family::mlp:
      for (std::size_t i = 0; i + 1 < spec.layer_sizes.size(); ++i) {
        const auto n = "fc" + std::to_string(i);
        map->append(n + ".weight", {spec.layer_sizes[i], spec.layer_sizes[i + 1]});
        map->append(n + ".bias", {spec.layer_sizes[i + 1]});
      }
      break;
    case Family::transformer_lite: {
      const auto d = spec.embed_dim;
      const auto m = spec.resolved_mlp_dim();
      map->append("tok_emb", {spec.vocab_size, d});
      map->append("pos_emb", {spec.seq_len, d});
      for (std::int64_t b = 0; b < spec.blocks; ++b) {
        const auto p = "block" + std::to_string(b) + ".";
        map->append(p + "ln1.gamma", {d});
        map->append(p + "ln1.beta", {d});
        map->append(p + "attn.qkv.weight", {d, 3 * d});
        map->append(p + "attn.qkv.bias", {3 * d});
        map->append(p + "attn.proj.weight", {d, d});
        map->append(p + "attn.proj.bias", {d});
        map->append(p + "ln2.gamma", {d});
        map->append(p + "ln2.beta", {d});
        map->append(p + "mlp.fc.weight", {d, m});
        map->append(p + "mlp.fc.bias", {m});
        map->append(p + "mlp.proj.weight", {m, d});
        map->append(p + "mlp.proj.bias", {d});
      }
      map->append("ln_f.gamma", {d});
      map->append("ln_f.beta", {d});
      map->append("head.weight", {d, spec.vocab_size});
      map->append("head.bias", {spec.vocab_size});
      break;
    }
    case Family::cnn_lite:
      for (int i = 0; i < 3; ++i) {
        const auto g = conv_geometry(spec, i);
        const auto n = "conv" + std::to_string(i);
        map->append(n + ".weight", {g.out_channels, g.in_channels * g.kernel * g.kernel});
        map->append(n + ".bias", {g.out_channels});
      }
      map->append("fc0.weight", {cnn_flat_width(spec), spec.hidden});
      map->append("fc0.bias", {spec.hidden});
      map->append("fc1.weight", {spec.hidden, spec.classes});
      map->append("fc1.bias", {spec.classes});
      break;
  }
  return map;
}

Params::Params(std::shared_ptr<const IndexMap> layout, std::vector<float> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_ || layout_->total() != static_cast<std::int64_t>(values_.size())) {
    throw ShapeError("Params: value count does not match layout");
  }
}

std::span<const float> Params::view(const std::string& name) const {
  const auto& e = layout_->find(name);
  return std::span<const float>(values_).subspan(static_cast<std::size_t>(e.offset), static_cast<std::size_t>(e.length));
}

std::span<float> Params::view(const std::string& name) {
  const auto& e = layout_->find(name);
  return std::span<float>(values_).subspan(static_cast<std::size_t>(e.offset), static_cast<std::size_t>(e.length));
}

Tensor Params::tensor(const std::string& name) const {
  const auto& e = layout_->find(name);
  const auto v = view(name);
  return Tensor(e.shape, std::vector<float>(v.begin(), v.end()));
}

Params build_model(const ModelSpec& spec, Rng rng) {
  auto layout = parameter_layout(spec);
  std::vector<float> values(static_cast<std::size_t>(layout->total()), 0.0f);
  auto fill_uniform = [&](const ParamEntry& e, std::int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < e.length; ++i) values[static_cast<std::size_t>(e.offset + i)] = static_cast<float>(rng.uniform(-bound, bound));
  };
  auto fill_const = [&](const ParamEntry& e, float v) {
    std::fill_n(values.begin() + e.offset, e.length, v);
  };
  auto fill_normal = [&](const ParamEntry& e, double std) {
    for (std::int64_t i = 0; i < e.length; ++i) values[static_cast<std::size_t>(e.offset + i)] = static_cast<float>(std * rng.normal());
  };
  // Fan-in of a weight is its first dim for [in, out] matrices, and the
  // patch size for conv kernels [out, patch]; biases share their weight's.
  std::int64_t last_fan_in = 1;
  for (const auto& e : layout->entries()) {
    const auto& n = e.name;
    if (n == "tok_emb" || n == "pos_emb") {
      fill_normal(e, 0.02);
    } else if (n.find("gamma") != std::string::npos) {
      fill_const(e, 1.0f);
    } else if (n.find("beta") != std::string::npos) {
      fill_const(e, 0.0f);
    } else if (n.ends_with(".weight")) {
      last_fan_in = n.starts_with("conv") ? e.shape[1] : e.shape[0];
      fill_uniform(e, last_fan_in);
    } else if (n.ends_with(".bias")) {
      fill_uniform(e, last_fan_in);
    } else {
      throw ContractError("no init rule for " + n);
    }
  }
  return Params(std::move(layout), std::move(values));
}

Var BoundParams::get(const std::string& name) const {
  const auto& entries = layout->entries();
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return vars[i];
  throw ValidationError("unknown parameter " + name);
}

BoundParams bind(Graph& g, const Params& params, bool requires_grad) {
  BoundParams b;
  b.layout = params.layout_ptr();
  b.vars.reserve(params.layout().entries().size());
  for (const auto& e : params.layout().entries()) {
    Tensor t = params.tensor(e.name);
    b.vars.push_back(requires_grad ? g.variable(std::move(t)) : g.constant(std::move(t)));
  }
  return b;
}

GradVector gradients(Graph& g, const BoundParams& bound) {
  std::vector<float> flat(static_cast<std::size_t>(bound.layout->total()), 0.0f);
  const auto& entries = bound.layout->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& v = bound.vars[i];
    if (!v.requires_grad()) continue;
    const auto& gt = g.grad(v.id);
    std::copy(gt.data().begin(), gt.data().end(), flat.begin() + entries[i].offset);
  }
  return GradVector(bound.layout, std::move(flat));
}

namespace {

Var linear(Var x, const BoundParams& p, const std::string& prefix) {
  return add_bias(matmul(x, p.get(prefix + ".weight")), p.get(prefix + ".bias"));
}

std::vector<std::int32_t> token_ids(const Tensor& tokens, std::int64_t vocab) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(tokens.numel()));
  for (std::int64_t i = 0; i < tokens.numel(); ++i) {
    const float t = tokens[i];
    if (t != std::floor(t) || t < 0 || t >= static_cast<float>(vocab)) {
      throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
    }
    ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(t);
  }
  return ids;
}

Var mlp_forward(const ModelSpec& s, const BoundParams& p, Var x, ForwardTrace* trace) {
  const auto layers = s.layer_sizes.size() - 1;
  if (trace) trace->penultimate = x.value();
  for (std::size_t i = 0; i < layers; ++i) {
    x = linear(x, p, "fc" + std::to_string(i));
    if (i + 1 < layers) {
      if (trace) trace->relu_preactivations.push_back(x.value());
      x = relu(x);
      if (trace) trace->penultimate = x.value();
    }
  }
  return x;
}

Var cnn_forward(const ModelSpec& s, const BoundParams& p, Var x, ForwardTrace* trace) {
  for (int i = 0; i < 3; ++i) {
    const auto n = "conv" + std::to_string(i);
    x = conv2d(x, p.get(n + ".weight"), p.get(n + ".bias"), conv_geometry(s, i));
    if (trace) trace->relu_preactivations.push_back(x.value());
    x = relu(x);
  }
  x = linear(x, p, "fc0");
  if (trace) trace->relu_preactivations.push_back(x.value());
  x = relu(x);
  if (trace) trace->penultimate = x.value();
  return linear(x, p, "fc1");
}

Var transformer_forward(const ModelSpec& s, const BoundParams& p, Var input, ForwardTrace* trace, bool all_positions) {
  const auto& in = input.value();
  const auto batch = in.dim(0);
  const auto seq = in.dim(1);
  if (seq > s.seq_len) throw ShapeError("sequence longer than seq_len");
  const auto ids = token_ids(in, s.vocab_size);
  std::vector<std::int32_t> pos(static_cast<std::size_t>(batch * seq));
  for (std::int64_t i = 0; i < batch * seq; ++i) pos[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i % seq);
  Var x = add(embedding(p.get("tok_emb"), ids), embedding(p.get("pos_emb"), pos));
  for (std::int64_t b = 0; b < s.blocks; ++b) {
    const auto pre = "block" + std::to_string(b) + ".";
    Var h = layer_norm(x, p.get(pre + "ln1.gamma"), p.get(pre + "ln1.beta"));
    h = linear(h, p, pre + "attn.qkv");
    h = causal_attention(h, batch, seq, s.heads);
    x = add(x, linear(h, p, pre + "attn.proj"));
    h = layer_norm(x, p.get(pre + "ln2.gamma"), p.get(pre + "ln2.beta"));
    h = gelu(linear(h, p, pre + "mlp.fc"));
    x = add(x, linear(h, p, pre + "mlp.proj"));
  }
  x = layer_norm(x, p.get("ln_f.gamma"), p.get("ln_f.beta"));
  if (!all_positions) {
    std::vector<std::int64_t> last(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) last[static_cast<std::size_t>(b)] = b * seq + seq - 1;
    x = select_rows(x, last);
  }
  if (trace) trace->penultimate = x.value();
  return linear(x, p, "head");
}

}  // namespace

Var forward_graph(const ModelSpec& spec, const BoundParams& params, Var input, ForwardTrace* trace, bool all_positions) {
  const auto& in = input.value();
  if (in.rank() != 2) throw ShapeError("model input must be [batch, features], got " + shape_str(in.shape()));
  if (spec.family != Family::transformer_lite && in.dim(1) != spec.input_width()) {
    throw ShapeError("model expects input width " + std::to_string(spec.input_width()) + ", got " + std::to_string(in.dim(1)));
  }
  Var out;
  switch (spec.family) {
    case Family::mlp: out = mlp_forward(spec, params, input, trace); break;
    case Family::cnn_lite: out = cnn_forward(spec, params, input, trace); break;
    case Family::transformer_lite: out = transformer_forward(spec, params, input, trace, all_positions); break;
  }
  return out;
}

namespace {

template <typename Fn>
Tensor chunked(const Tensor& inputs, Fn fn) {
  if (inputs.rank() != 2) throw ShapeError("inference input must be rank 2");
  const auto n = inputs.dim(0);
  std::vector<float> out;
  std::int64_t width = 0;
  std::int64_t rows_out = 0;
  for (std::int64_t start = 0; start < n; start += kEvalChunk) {
    const auto end = std::min(n, start + kEvalChunk);
    std::vector<std::int64_t> rows(static_cast<std::size_t>(end - start));
    for (std::int64_t i = start; i < end; ++i) rows[static_cast<std::size_t>(i - start)] = i;
    Tensor part = fn(start == 0 && end == n ? inputs : inputs.gather_rows(rows));
    width = part.dim(1);
    rows_out += part.dim(0);
    out.insert(out.end(), part.data().begin(), part.data().end());
  }
  return Tensor({rows_out, width}, std::move(out));
}

}  // namespace

Tensor forward(const ModelSpec& spec, const Params& params, const Tensor& batch) {
  return chunked(batch, [&](const Tensor& part) {
    Graph g;
    auto bound = bind(g, params, false);
    return forward_graph(spec, bound, g.constant(part)).value();
  });
}

Tensor forward_sequence(const ModelSpec& spec, const Params& params, const Tensor& tokens) {
  if (spec.family != Family::transformer_lite) throw UnsupportedFamilyError("forward_sequence needs transformer_lite");
  return chunked(tokens, [&](const Tensor& part) {
    Graph g;
    auto bound = bind(g, params, false);
    return forward_graph(spec, bound, g.constant(part), nullptr, true).value();
  });
}

Tensor penultimate_activations(const ModelSpec& spec, const Params& params, const Tensor& inputs) {
  if (inputs.rank() != 2 || inputs.dim(0) == 0) throw ValidationError("penultimate_activations: empty dataset");
  return chunked(inputs, [&](const Tensor& part) {
    Graph g;
    auto bound = bind(g, params, false);
    ForwardTrace trace;
    forward_graph(spec, bound, g.constant(part), &trace);
    return trace.penultimate;
  });
}

Tensor relu_preactivations(const ModelSpec& spec, const Params& params, const Tensor& inputs) {
  if (!spec.uses_relu()) throw UnsupportedFamilyError("family " + to_string(spec.family) + " has no ReLU layers");
  return chunked(inputs, [&](const Tensor& part) {
    Graph g;
    auto bound = bind(g, params, false);
    ForwardTrace trace;
    forward_graph(spec, bound, g.constant(part), &trace);
    const auto rows = part.dim(0);
    std::int64_t width = 0;
    for (const auto& t : trace.relu_preactivations) width += t.cols();
    Tensor out({rows, width});
    std::int64_t off = 0;
    for (const auto& t : trace.relu_preactivations) {
      const auto c = t.cols();
      for (std::int64_t r = 0; r < rows; ++r) std::copy_n(t.ptr() + r * c, c, out.ptr() + r * width + off);
      off += c;
    }
    return out;
  });
}

}  // namespace gf::zoo
