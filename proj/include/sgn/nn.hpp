#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sgn/autograd.hpp"
#include "sgn/ops.hpp"
#include "sgn/params.hpp"

namespace sgn {

// y = x W + b with W stored as in x out.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true, double init_scale = 1.0);

  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
  Var operator()(Graph& g, Var x) const;
  Matrix apply(const Matrix& x) const;  // tape-free
};

struct Embedding {
  Parameter* table = nullptr;

  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& name, std::size_t count, std::size_t width, Rng& rng);

  std::size_t width() const { return table->value.cols(); }
  std::size_t count() const { return table->value.rows(); }
  Var operator()(Graph& g, std::span<const std::size_t> ids) const;
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);

  Var operator()(Graph& g, Var x) const;
  Matrix apply(const Matrix& x) const;
};

// cumax(x) = cumsum(softmax(x)) along each row.
Var cumax(Var logits);

struct OnLstmOutput {
  Var h;
  Var c;
  Var master_forget;  // batch x levels, non-decreasing along each row
};

// Ordered-neurons LSTM cell. The hidden state is split into `levels`
// chunks; the master forget gate keeps the high levels and the master
// input gate writes the low levels.
class OrderedNeuronsCell {
 public:
  OrderedNeuronsCell() = default;
  OrderedNeuronsCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden,
                     std::size_t chunk, Rng& rng);

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }
  std::size_t levels() const { return hidden_ / chunk_; }
  std::size_t chunk() const { return chunk_; }

  OnLstmOutput step(Graph& g, Var x, Var h, Var c) const;

  Parameter* wx = nullptr;  // input x (4*hidden + 2*levels)
  Parameter* wh = nullptr;  // hidden x (4*hidden + 2*levels)
  Parameter* b = nullptr;   // 1 x (4*hidden + 2*levels)

 private:
  std::size_t input_ = 0, hidden_ = 0, chunk_ = 1;
};

// Distance per step: levels - sum of the master forget activations.
std::vector<double> syntactic_distance(std::span<const Matrix> trace, std::size_t row = 0);

struct StackRun {
  std::vector<Var> outputs;                        // top-layer h per step
  std::vector<Var> final_h;                        // per layer, state after each row's last step
  std::vector<std::vector<Var>> master_forget;     // [layer][step]
};

class OnLstmStack {
 public:
  OnLstmStack() = default;
  OnLstmStack(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden,
              std::size_t chunk, std::size_t layers, Rng& rng);

  std::size_t layers() const { return cells_.size(); }
  std::size_t hidden_size() const { return cells_.front().hidden_size(); }
  const OrderedNeuronsCell& cell(std::size_t i) const { return cells_[i]; }

  // inputs[t] is batch x input. Row r takes part in steps t < lengths[r];
  // afterwards its state is carried unchanged.
  StackRun run(Graph& g, std::span<const Var> inputs, std::span<const std::size_t> lengths) const;

 private:
  std::vector<OrderedNeuronsCell> cells_;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);

  std::size_t hidden_size() const { return hidden_; }
  Var step(Graph& g, Var x, Var h) const;

 private:
  Linear gates_x_, gates_h_;  // update and reset
  Linear cand_x_, cand_h_;
  std::size_t hidden_ = 0;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t width, std::size_t heads,
                     Rng& rng);

  std::size_t heads() const { return heads_; }
  Var operator()(Graph& g, Var queries, Var keys_values, bool causal, std::vector<Matrix>* weights = nullptr) const;

  Linear q, k, v, o;

 private:
  std::size_t heads_ = 1;
};

struct DecoderConfig {
  std::size_t vocab = 0;
  std::size_t width = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 0;          // 0 means 4 * width
  std::size_t max_positions = 151;
};

// Pre-norm decoder block: causal self-attention, cross-attention over the
// memory, position-wise feed-forward; each wrapped in a residual.
struct DecoderLayer {
  LayerNorm ln_self, ln_cross, ln_ffn;
  MultiHeadAttention self_attn, cross_attn;
  Linear ffn_in, ffn_out;
};

class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(ParameterStore& store, const std::string& name, DecoderConfig config, Rng& rng);

  const DecoderConfig& config() const { return config_; }
  std::vector<DecoderLayer>& layers() { return layers_; }
  const Embedding& token_embedding() const { return tokens_; }
  Parameter* positions() const { return positions_; }

  // Logits for several sequences at once, rows stacked in order.
  // memories[i] is the memory matrix (m_i x width) of sequence i.
  Var forward(Graph& g, std::span<const std::vector<std::size_t>> inputs, std::span<const Var> memories,
              std::vector<std::vector<Matrix>>* self_weights = nullptr) const;
  Var forward(Graph& g, const std::vector<std::size_t>& input, Var memory) const;
  // Same, with all memories stacked in one matrix; memory_rows[i] rows
  // belong to sequence i.
  Var forward_packed(Graph& g, std::span<const std::vector<std::size_t>> inputs, Var memory,
                     std::span<const std::size_t> memory_rows,
                     std::vector<std::vector<Matrix>>* self_weights = nullptr) const;

  // Incremental tape-free decoding with cached keys and values.
  class Session {
   public:
    Session(const TransformerDecoder& decoder, const Matrix& memory);
    // Feeds one token and returns the next-token logits (1 x vocab).
    Matrix feed(std::size_t token);
    std::size_t length() const { return position_; }

   private:
    const TransformerDecoder* dec_;
    std::vector<Matrix> self_k_, self_v_;     // per layer, rows appended
    std::vector<Matrix> cross_k_, cross_v_;   // per layer, fixed
    std::size_t position_ = 0;
  };

 private:
  DecoderConfig config_;
  Embedding tokens_;
  Parameter* positions_ = nullptr;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
  Linear output_;
};

}  // namespace sgn
