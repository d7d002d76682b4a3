#include "sgn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sgn/errors.hpp"
#include "sgn/kernels.hpp"

namespace sgn {

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias, double init_scale) {
  weight = &store.create_uniform(name + "/w", in, out, rng, init_scale);
  if (with_bias) bias = &store.create(name + "/b", 1, out);
}

Var Linear::operator()(Graph& g, Var x) const {
  if (x.cols() != in()) {
    throw ShapeError("linear " + weight->name + ": input " + x.value().shape_string() + " vs weight " +
                     weight->value.shape_string());
  }
  Var y = matmul(x, g.parameter(*weight));
  return bias ? add_row(y, g.parameter(*bias)) : y;
}

Matrix Linear::apply(const Matrix& x) const {
  Matrix y;
  kernels::gemm(x, false, weight->value, false, y);
  if (bias) {
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias->value[c];
  }
  return y;
}

Embedding::Embedding(ParameterStore& store, const std::string& name, std::size_t count, std::size_t width,
                     Rng& rng) {
  table = &store.create(name + "/table", count, width);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : table->value.values()) v = dist(rng);
}

Var Embedding::operator()(Graph& g, std::span<const std::size_t> ids) const {
  for (std::size_t id : ids)
    if (id >= count()) throw ShapeError("embedding " + table->name + ": id " + std::to_string(id) + " out of range");
  return gather_rows(g.parameter(*table), ids);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
  gain = &store.create(name + "/gain", 1, width);
  gain->value.fill(1.0);
  bias = &store.create(name + "/bias", 1, width);
}

Var LayerNorm::operator()(Graph& g, Var x) const { return layer_norm(x, g.parameter(*gain), g.parameter(*bias)); }

Matrix LayerNorm::apply(const Matrix& x) const {
  Matrix out;
  std::vector<double> inv;
  kernels::normalize_rows(x, 1e-5, out, inv);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = out(r, c) * gain->value[c] + bias->value[c];
  return out;
}

Var cumax(Var logits) { return cumsum_rows(softmax_rows(logits)); }

OrderedNeuronsCell::OrderedNeuronsCell(ParameterStore& store, const std::string& name, std::size_t input,
                                       std::size_t hidden, std::size_t chunk, Rng& rng)
    : input_(input), hidden_(hidden), chunk_(chunk) {
  if (chunk == 0 || hidden % chunk != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by chunk factor " +
                      std::to_string(chunk));
  }
  const std::size_t width = 4 * hidden + 2 * levels();
  wx = &store.create_uniform(name + "/wx", input, width, rng);
  wh = &store.create_uniform(name + "/wh", hidden, width, rng);
  b = &store.create(name + "/b", 1, width);
}

OnLstmOutput OrderedNeuronsCell::step(Graph& g, Var x, Var h, Var c) const {
  if (x.cols() != input_ || h.cols() != hidden_ || c.cols() != hidden_ || x.rows() != h.rows() ||
      h.rows() != c.rows()) {
    throw ShapeError("onlstm step: x " + x.value().shape_string() + ", h " + h.value().shape_string() + ", c " +
                     c.value().shape_string() + " for cell " + std::to_string(input_) + "->" +
                     std::to_string(hidden_));
  }
  const std::size_t L = levels(), H = hidden_;
  Var gates = add_row(add(matmul(x, g.parameter(*wx)), matmul(h, g.parameter(*wh))), g.parameter(*b));
  Var master_f = cumax(slice_cols(gates, 0, L));
  Var master_i = one_minus(cumax(slice_cols(gates, L, L)));
  Var f = sigmoid(slice_cols(gates, 2 * L, H));
  Var i = sigmoid(slice_cols(gates, 2 * L + H, H));
  Var o = sigmoid(slice_cols(gates, 2 * L + 2 * H, H));
  Var cand = tanh(slice_cols(gates, 2 * L + 3 * H, H));

  Var mf = repeat_cols(master_f, chunk_);
  Var mi = repeat_cols(master_i, chunk_);
  Var overlap = mul(mf, mi);
  Var f_hat = add(mul(f, overlap), sub(mf, overlap));
  Var i_hat = add(mul(i, overlap), sub(mi, overlap));
  Var c_next = add(mul(f_hat, c), mul(i_hat, cand));
  Var h_next = mul(o, tanh(c_next));
  return {h_next, c_next, master_f};
}

std::vector<double> syntactic_distance(std::span<const Matrix> trace, std::size_t row) {
  std::vector<double> out;
  out.reserve(trace.size());
  for (const Matrix& m : trace) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.cols(); ++k) s += m(row, k);
    out.push_back(static_cast<double>(m.cols()) - s);
  }
  return out;
}

OnLstmStack::OnLstmStack(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden,
                         std::size_t chunk, std::size_t layers, Rng& rng) {
  if (layers == 0) throw ConfigError("an ON-LSTM stack needs at least one layer");
  for (std::size_t l = 0; l < layers; ++l) {
    cells_.emplace_back(store, name + "/l" + std::to_string(l), l == 0 ? input : hidden, hidden, chunk, rng);
  }
}

StackRun OnLstmStack::run(Graph& g, std::span<const Var> inputs, std::span<const std::size_t> lengths) const {
  if (inputs.empty()) throw InputError("ON-LSTM stack run over an empty sequence");
  const std::size_t batch = inputs.front().rows();
  if (lengths.size() != batch) throw ShapeError("length list does not match the batch");
  const std::size_t H = hidden_size();
  std::vector<Var> h(layers()), c(layers());
  for (std::size_t l = 0; l < layers(); ++l) {
    h[l] = g.constant(Matrix(batch, H));
    c[l] = g.constant(Matrix(batch, H));
  }
  StackRun run;
  run.master_forget.resize(layers());
  std::vector<double> keep(batch);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    bool all = true;
    for (std::size_t r = 0; r < batch; ++r) {
      keep[r] = t < lengths[r] ? 1.0 : 0.0;
      all = all && keep[r] != 0.0;
    }
    Var x = inputs[t];
    for (std::size_t l = 0; l < layers(); ++l) {
      OnLstmOutput out = cells_[l].step(g, x, h[l], c[l]);
      if (all) {
        h[l] = out.h;
        c[l] = out.c;
      } else {
        h[l] = blend_rows(out.h, h[l], keep);
        c[l] = blend_rows(out.c, c[l], keep);
      }
      run.master_forget[l].push_back(out.master_forget);
      x = h[l];
    }
    run.outputs.push_back(x);
  }
  run.final_h = h;
  return run;
}

GruCell::GruCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden, Rng& rng)
    : gates_x_(store, name + "/gx", input, 2 * hidden, rng),
      gates_h_(store, name + "/gh", hidden, 2 * hidden, rng, false),
      cand_x_(store, name + "/cx", input, hidden, rng),
      cand_h_(store, name + "/ch", hidden, hidden, rng),
      hidden_(hidden) {}

Var GruCell::step(Graph& g, Var x, Var h) const {
  Var zr = sigmoid(add(gates_x_(g, x), gates_h_(g, h)));
  Var z = slice_cols(zr, 0, hidden_);
  Var r = slice_cols(zr, hidden_, hidden_);
  Var n = tanh(add(cand_x_(g, x), mul(r, cand_h_(g, h))));
  return add(n, mul(z, sub(h, n)));
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t width,
                                       std::size_t heads, Rng& rng)
    : q(store, name + "/q", width, width, rng),
      k(store, name + "/k", width, width, rng),
      v(store, name + "/v", width, width, rng),
      o(store, name + "/o", width, width, rng),
      heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

Var MultiHeadAttention::operator()(Graph& g, Var queries, Var keys_values, bool causal,
                                   std::vector<Matrix>* weights) const {
  return o(g, attention(q(g, queries), k(g, keys_values), v(g, keys_values), heads_, causal, weights));
}

TransformerDecoder::TransformerDecoder(ParameterStore& store, const std::string& name, DecoderConfig config,
                                       Rng& rng)
    : config_(config) {
  if (config_.vocab == 0) throw ConfigError("decoder vocabulary is empty");
  if (config_.ffn == 0) config_.ffn = 4 * config_.width;
  const std::size_t d = config_.width;
  tokens_ = Embedding(store, name + "/tok", config_.vocab, d, rng);
  positions_ = &store.create(name + "/pos", config_.max_positions, d);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : positions_->value.values()) v = dist(rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = name + "/layer" + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = LayerNorm(store, p + "/ln_self", d);
    layer.ln_cross = LayerNorm(store, p + "/ln_cross", d);
    layer.ln_ffn = LayerNorm(store, p + "/ln_ffn", d);
    layer.self_attn = MultiHeadAttention(store, p + "/self", d, config_.heads, rng);
    layer.cross_attn = MultiHeadAttention(store, p + "/cross", d, config_.heads, rng);
    layer.ffn_in = Linear(store, p + "/ffn_in", d, config_.ffn, rng);
    layer.ffn_out = Linear(store, p + "/ffn_out", config_.ffn, d, rng);
    layers_.push_back(layer);
  }
  final_norm_ = LayerNorm(store, name + "/ln_final", d);
  output_ = Linear(store, name + "/out", d, config_.vocab, rng);
}

Var TransformerDecoder::forward(Graph& g, std::span<const std::vector<std::size_t>> inputs,
                                std::span<const Var> memories,
                                std::vector<std::vector<Matrix>>* self_weights) const {
  if (inputs.size() != memories.size()) throw ShapeError("decoder: one memory per sequence is required");
  if (inputs.empty()) throw InputError("decoder: empty batch");
  std::vector<std::size_t> rows;
  for (const Var& m : memories) rows.push_back(m.rows());
  Var memory = memories.size() == 1 ? memories[0] : concat_rows(memories);
  return forward_packed(g, inputs, memory, rows, self_weights);
}

Var TransformerDecoder::forward_packed(Graph& g, std::span<const std::vector<std::size_t>> inputs, Var memory,
                                       std::span<const std::size_t> memory_rows,
                                       std::vector<std::vector<Matrix>>* self_weights) const {
  if (inputs.size() != memory_rows.size()) throw ShapeError("decoder: one memory per sequence is required");
  if (inputs.empty()) throw InputError("decoder: empty batch");
  if (memory.cols() != config_.width) {
    throw ShapeError("decoder: memory " + memory.value().shape_string() + " for width " +
                     std::to_string(config_.width));
  }
  std::vector<std::size_t> ids, pos, offsets, mem_offsets;
  std::size_t mem_total = 0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto& seq = inputs[s];
    if (seq.empty()) throw InputError("decoder: empty input sequence");
    if (seq.size() > config_.max_positions) {
      throw ShapeError("decoder: sequence of " + std::to_string(seq.size()) + " tokens exceeds " +
                       std::to_string(config_.max_positions) + " positions");
    }
    if (memory_rows[s] == 0) throw ShapeError("decoder: empty memory");
    offsets.push_back(ids.size());
    mem_offsets.push_back(mem_total);
    mem_total += memory_rows[s];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      ids.push_back(seq[t]);
      pos.push_back(t);
    }
  }
  if (mem_total != memory.rows()) throw ShapeError("decoder: memory row counts do not add up");
  offsets.push_back(ids.size());
  mem_offsets.push_back(mem_total);
  const std::size_t n_seq = inputs.size();

  Var x = add(tokens_(g, ids), gather_rows(g.parameter(*positions_), pos));
  std::vector<Var> parts(n_seq);
  for (const DecoderLayer& layer : layers_) {
    {
      Var a = layer.ln_self(g, x);
      Var q = layer.self_attn.q(g, a), k = layer.self_attn.k(g, a), v = layer.self_attn.v(g, a);
      for (std::size_t s = 0; s < n_seq; ++s) {
        const std::size_t len = offsets[s + 1] - offsets[s];
        std::vector<Matrix> w;
        parts[s] = n_seq == 1 ? attention(q, k, v, layer.self_attn.heads(), true, self_weights ? &w : nullptr)
                              : attention(slice_rows(q, offsets[s], len), slice_rows(k, offsets[s], len),
                                          slice_rows(v, offsets[s], len), layer.self_attn.heads(), true,
                                          self_weights ? &w : nullptr);
        if (self_weights) self_weights->push_back(std::move(w));
      }
      Var merged = n_seq == 1 ? parts[0] : concat_rows(parts);
      x = add(x, layer.self_attn.o(g, merged));
    }
    {
      Var a = layer.ln_cross(g, x);
      Var q = layer.cross_attn.q(g, a), k = layer.cross_attn.k(g, memory), v = layer.cross_attn.v(g, memory);
      for (std::size_t s = 0; s < n_seq; ++s) {
        const std::size_t len = offsets[s + 1] - offsets[s];
        const std::size_t mlen = mem_offsets[s + 1] - mem_offsets[s];
        parts[s] = n_seq == 1 ? attention(q, k, v, layer.cross_attn.heads(), false)
                              : attention(slice_rows(q, offsets[s], len), slice_rows(k, mem_offsets[s], mlen),
                                          slice_rows(v, mem_offsets[s], mlen), layer.cross_attn.heads(), false);
      }
      Var merged = n_seq == 1 ? parts[0] : concat_rows(parts);
      x = add(x, layer.cross_attn.o(g, merged));
    }
    {
      Var a = layer.ln_ffn(g, x);
      x = add(x, layer.ffn_out(g, relu(layer.ffn_in(g, a))));
    }
  }
  return output_(g, final_norm_(g, x));
}

Var TransformerDecoder::forward(Graph& g, const std::vector<std::size_t>& input, Var memory) const {
  return forward(g, std::span<const std::vector<std::size_t>>(&input, 1), std::span<const Var>(&memory, 1));
}

namespace {

// One query row against the first `count` rows of keys/values.
Matrix attend_row(const Matrix& q, const Matrix& keys, const Matrix& values, std::size_t count,
                  std::size_t heads) {
  const std::size_t d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(1, d);
  std::vector<double> w(count);
  for (std::size_t h = 0; h < heads; ++h) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < count; ++s) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dh; ++c) dot += q[h * dh + c] * keys(s, h * dh + c);
      w[s] = dot * scale;
      mx = std::max(mx, w[s]);
    }
    double z = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
      w[s] = std::exp(w[s] - mx);
      z += w[s];
    }
    for (std::size_t s = 0; s < count; ++s) {
      const double p = w[s] / z;
      for (std::size_t c = 0; c < dh; ++c) out[h * dh + c] += p * values(s, h * dh + c);
    }
  }
  return out;
}

void add_into(Matrix& x, const Matrix& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

}  // namespace

TransformerDecoder::Session::Session(const TransformerDecoder& decoder, const Matrix& memory) : dec_(&decoder) {
  const auto& cfg = decoder.config_;
  if (memory.rows() == 0 || memory.cols() != cfg.width) {
    throw ShapeError("decoder session: memory " + memory.shape_string() + " for width " + std::to_string(cfg.width));
  }
  for (const DecoderLayer& layer : decoder.layers_) {
    self_k_.emplace_back(cfg.max_positions, cfg.width);
    self_v_.emplace_back(cfg.max_positions, cfg.width);
    cross_k_.push_back(layer.cross_attn.k.apply(memory));
    cross_v_.push_back(layer.cross_attn.v.apply(memory));
  }
}

Matrix TransformerDecoder::Session::feed(std::size_t token) {
  const auto& cfg = dec_->config_;
  if (position_ >= cfg.max_positions) throw ShapeError("decoder session: position limit reached");
  if (token >= cfg.vocab) throw ShapeError("decoder session: token id out of range");
  Matrix x(1, cfg.width);
  for (std::size_t c = 0; c < cfg.width; ++c)
    x[c] = dec_->tokens_.table->value(token, c) + dec_->positions_->value(position_, c);
  for (std::size_t l = 0; l < dec_->layers_.size(); ++l) {
    const DecoderLayer& layer = dec_->layers_[l];
    {
      const Matrix a = layer.ln_self.apply(x);
      const Matrix q = layer.self_attn.q.apply(a);
      const Matrix k = layer.self_attn.k.apply(a);
      const Matrix v = layer.self_attn.v.apply(a);
      std::copy(k.values().begin(), k.values().end(), self_k_[l].row(position_).begin());
      std::copy(v.values().begin(), v.values().end(), self_v_[l].row(position_).begin());
      add_into(x, layer.self_attn.o.apply(attend_row(q, self_k_[l], self_v_[l], position_ + 1,
                                                     layer.self_attn.heads())));
    }
    {
      const Matrix q = layer.cross_attn.q.apply(layer.ln_cross.apply(x));
      add_into(x, layer.cross_attn.o.apply(
                      attend_row(q, cross_k_[l], cross_v_[l], cross_k_[l].rows(), layer.cross_attn.heads())));
    }
    {
      Matrix hidden = layer.ffn_in.apply(layer.ln_ffn.apply(x));
      for (double& v : hidden.values()) v = std::max(v, 0.0);
      add_into(x, layer.ffn_out.apply(hidden));
    }
  }
  ++position_;
  return dec_->output_.apply(dec_->final_norm_.apply(x));
}

}  // namespace sgn
