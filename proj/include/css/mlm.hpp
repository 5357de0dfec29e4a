#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "css/scoring_types.hpp"
#include "css/tokenizer.hpp"

namespace css {

// Parameters are stored as 32-bit floats (the checkpoint is bit-exact);
// all arithmetic runs in double so analytic gradients can be verified
// against central finite differences at tight tolerances.
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::RowVectorXd;

struct ModelConfig {
  int vocab_size = 0;
  int dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_dim = 256;
  int max_len = 64;
  uint64_t seed = 0;

  int head_dim() const { return dim / n_heads; }
  void check() const;  // throws on inconsistent settings
};

struct LayerParams {
  MatF wq, bq, wk, bk, wv, bv, wo, bo;  // projections [dim,dim], biases [1,dim]
  MatF ln1_g, ln1_b;                    // [1,dim]
  MatF w1, b1;                          // [dim,ff_dim], [1,ff_dim]
  MatF w2, b2;                          // [ff_dim,dim], [1,dim]
  MatF ln2_g, ln2_b;                    // [1,dim]
};

struct LayerGrads {
  MatD wq, bq, wk, bk, wv, bv, wo, bo;
  MatD ln1_g, ln1_b;
  MatD w1, b1, w2, b2;
  MatD ln2_g, ln2_b;
};

namespace detail {

// Single traversal definition shared by params and grads; keeps the
// checkpoint manifest, Adam state and gradient accumulation in one order.
template <typename Model, typename Fn>
void visit_tensors(Model& model, Fn&& fn) {
  fn("tok_emb", model.tok_emb);
  fn("pos_emb", model.pos_emb);
  fn("emb_ln_g", model.emb_ln_g);
  fn("emb_ln_b", model.emb_ln_b);
  for (size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    fn(prefix + "wq", layer.wq);
    fn(prefix + "bq", layer.bq);
    fn(prefix + "wk", layer.wk);
    fn(prefix + "bk", layer.bk);
    fn(prefix + "wv", layer.wv);
    fn(prefix + "bv", layer.bv);
    fn(prefix + "wo", layer.wo);
    fn(prefix + "bo", layer.bo);
    fn(prefix + "ln1_g", layer.ln1_g);
    fn(prefix + "ln1_b", layer.ln1_b);
    fn(prefix + "w1", layer.w1);
    fn(prefix + "b1", layer.b1);
    fn(prefix + "w2", layer.w2);
    fn(prefix + "b2", layer.b2);
    fn(prefix + "ln2_g", layer.ln2_g);
    fn(prefix + "ln2_b", layer.ln2_b);
  }
  fn("out_w", model.out_w);
  fn("out_b", model.out_b);
}

}  // namespace detail

struct ModelParams {
  ModelConfig config;
  MatF tok_emb;             // [vocab_size, dim]
  MatF pos_emb;             // [max_len, dim]
  MatF emb_ln_g, emb_ln_b;  // [1, dim]
  std::vector<LayerParams> layers;
  MatF out_w;               // [dim, vocab_size]
  MatF out_b;               // [1, vocab_size]

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    detail::visit_tensors(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    detail::visit_tensors(*this, fn);
  }
};

struct ModelGrads {
  MatD tok_emb, pos_emb, emb_ln_g, emb_ln_b;
  std::vector<LayerGrads> layers;
  MatD out_w, out_b;

  static ModelGrads zeros_like(const ModelParams& params);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    detail::visit_tensors(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    detail::visit_tensors(*this, fn);
  }
};

// Per-query activations kept for the backward pass.
struct LayerCache {
  MatD x_in, q, k, v;
  std::vector<MatD> att;  // per head, [L,L] softmax rows
  MatD ctx;
  MatD xhat1;
  VecD invstd1;
  MatD x_mid, h1, g1;
  MatD xhat2;
  VecD invstd2;
  MatD x_out;
};

struct ForwardCache {
  MatD xhat0;
  VecD invstd0;
  std::vector<LayerCache> layers;
  MatD x_final;
  MatD probs;  // [k, vocab] softmax at the mask positions
};

// Weight matrices ~ N(0, 0.02), biases and layer-norm offsets zero,
// layer-norm scales one. Same (config, seed) replays bit-identically.
ModelParams init_model(const ModelConfig& config);

// Allocates every tensor at its final shape, zero-filled; used by the
// checkpoint loader before the stored values are read in.
ModelParams init_model_shapes(const ModelConfig& config);

// Log-probability rows at the query's mask positions ([k, vocab_size]).
MatD forward_one(const ModelParams& params, const MaskedQuery& query,
                 ForwardCache* cache = nullptr);
std::vector<MatD> forward(const ModelParams& params,
                          const std::vector<MaskedQuery>& queries);

// upstream[m] = dLoss/d(log-prob of candidate_ids[m] at mask m).
void backward_one(const ModelParams& params, const MaskedQuery& query,
                  const ForwardCache& cache,
                  const std::vector<double>& upstream, ModelGrads& accum);
ModelGrads backward(const ModelParams& params,
                    const std::vector<MaskedQuery>& queries,
                    const std::vector<std::vector<double>>& upstream);

class MlmBackend : public ScorerBackend {
 public:
  explicit MlmBackend(const ModelParams& params) : params_(params) {}
  int vocab_size() const override { return params_.config.vocab_size; }
  std::vector<MatD> score(const std::vector<MaskedQuery>& queries) override {
    return forward(params_, queries);
  }

 private:
  const ModelParams& params_;
};

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
};

// Layout: "CSSR" magic, u32 LE format version, u64 LE metadata length,
// UTF-8 JSON metadata (config, vocab, tensor manifest), then the tensors
// as raw little-endian f32 in manifest order. Round-trips bitwise.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const Vocab& vocab);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace css
