#include "css/mlm.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "css/rng.hpp"

namespace css {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'C', 'S', 'S', 'R'};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779399461;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

MatD layer_norm_fwd(const MatD& x, const MatF& g, const MatF& b, MatD* xhat,
                    VecD* invstd) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  xhat->resize(rows, cols);
  invstd->resize(rows);
  MatD y(rows, cols);
  const VecD gd = g.row(0).cast<double>();
  const VecD bd = b.row(0).cast<double>();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    (*invstd)(r) = is;
    xhat->row(r) = (x.row(r).array() - mean) * is;
    y.row(r) = xhat->row(r).cwiseProduct(gd) + bd;
  }
  return y;
}

// dx for layer norm; accumulates the scale/offset gradients.
MatD layer_norm_bwd(const MatD& dy, const MatD& xhat, const VecD& invstd,
                    const MatF& g, MatD& dg, MatD& db) {
  const auto rows = dy.rows();
  const auto cols = dy.cols();
  const VecD gd = g.row(0).cast<double>();
  MatD dx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    dg.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
    db.row(0) += dy.row(r);
    const VecD dxhat = dy.row(r).cwiseProduct(gd);
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) =
        invstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

void softmax_rows_inplace(MatD& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// dS for S = softmax(rows), given probs P and dP.
MatD softmax_rows_bwd(const MatD& p, const MatD& dp) {
  MatD ds(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double dot = dp.row(r).dot(p.row(r));
    ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
  }
  return ds;
}

void check_query(const ModelConfig& config, const MaskedQuery& query) {
  const int len = static_cast<int>(query.ids.size());
  if (len > config.max_len)
    throw std::runtime_error("query length " + std::to_string(len) +
                             " exceeds max_len " +
                             std::to_string(config.max_len));
  for (const int id : query.ids)
    if (id < 0 || id >= config.vocab_size)
      throw std::runtime_error("token id " + std::to_string(id) +
                               " outside vocabulary of size " +
                               std::to_string(config.vocab_size));
  if (query.mask_positions.empty())
    throw std::runtime_error("query has no mask positions");
  for (const int pos : query.mask_positions) {
    if (pos < 0 || pos >= len)
      throw std::runtime_error("mask position out of range");
    if (query.ids[pos] != kMaskId)
      throw std::runtime_error("mask position does not hold [MASK]");
  }
  if (query.candidate_ids.size() != query.mask_positions.size())
    throw std::runtime_error("candidate token count does not match masks");
}

void write_bytes(std::ostream& out, const void* data, size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u32le(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  write_bytes(out, b, 4);
}

void write_u64le(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(out, b, 8);
}

void write_f32le(std::ostream& out, float f) {
  write_u32le(out, std::bit_cast<uint32_t>(f));
}

uint32_t read_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("truncated ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64le(std::istream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error(std::string("truncated ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void ModelConfig::check() const {
  if (vocab_size < kNumSpecials + 1)
    throw std::runtime_error("vocab_size must cover the specials plus text");
  if (dim < 1 || n_heads < 1 || dim % n_heads != 0)
    throw std::runtime_error("dim (" + std::to_string(dim) +
                             ") must be a positive multiple of n_heads (" +
                             std::to_string(n_heads) + ")");
  if (n_layers < 1) throw std::runtime_error("n_layers must be >= 1");
  if (ff_dim < 1) throw std::runtime_error("ff_dim must be >= 1");
  if (max_len < 4) throw std::runtime_error("max_len must be >= 4");
}

ModelGrads ModelGrads::zeros_like(const ModelParams& params) {
  ModelGrads grads;
  grads.layers.resize(params.layers.size());
  // Pair up the two traversals to copy shapes.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  params.for_each_tensor([&shapes](const std::string&, const MatF& t) {
    shapes.emplace_back(t.rows(), t.cols());
  });
  size_t i = 0;
  grads.for_each_tensor([&shapes, &i](const std::string&, MatD& t) {
    t = MatD::Zero(shapes[i].first, shapes[i].second);
    ++i;
  });
  return grads;
}

ModelParams init_model_shapes(const ModelConfig& config) {
  config.check();
  ModelParams params;
  params.config = config;
  auto zero = [](MatF& m, int rows, int cols) { m = MatF::Zero(rows, cols); };
  zero(params.tok_emb, config.vocab_size, config.dim);
  zero(params.pos_emb, config.max_len, config.dim);
  zero(params.emb_ln_g, 1, config.dim);
  zero(params.emb_ln_b, 1, config.dim);
  params.layers.resize(config.n_layers);
  for (auto& layer : params.layers) {
    zero(layer.wq, config.dim, config.dim);
    zero(layer.bq, 1, config.dim);
    zero(layer.wk, config.dim, config.dim);
    zero(layer.bk, 1, config.dim);
    zero(layer.wv, config.dim, config.dim);
    zero(layer.bv, 1, config.dim);
    zero(layer.wo, config.dim, config.dim);
    zero(layer.bo, 1, config.dim);
    zero(layer.ln1_g, 1, config.dim);
    zero(layer.ln1_b, 1, config.dim);
    zero(layer.w1, config.dim, config.ff_dim);
    zero(layer.b1, 1, config.ff_dim);
    zero(layer.w2, config.ff_dim, config.dim);
    zero(layer.b2, 1, config.dim);
    zero(layer.ln2_g, 1, config.dim);
    zero(layer.ln2_b, 1, config.dim);
  }
  zero(params.out_w, config.dim, config.vocab_size);
  zero(params.out_b, 1, config.vocab_size);
  return params;
}

ModelParams init_model(const ModelConfig& config) {
  config.check();
  ModelParams params;
  params.config = config;
  Rng rng(config.seed);

  auto gaussian = [&rng](MatF& m, int rows, int cols) {
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        m(r, c) = static_cast<float>(rng.next_gaussian() * 0.02);
  };
  auto zeros = [](MatF& m, int cols) { m = MatF::Zero(1, cols); };
  auto ones = [](MatF& m, int cols) { m = MatF::Ones(1, cols); };

  gaussian(params.tok_emb, config.vocab_size, config.dim);
  gaussian(params.pos_emb, config.max_len, config.dim);
  ones(params.emb_ln_g, config.dim);
  zeros(params.emb_ln_b, config.dim);
  params.layers.resize(config.n_layers);
  for (auto& layer : params.layers) {
    gaussian(layer.wq, config.dim, config.dim);
    zeros(layer.bq, config.dim);
    gaussian(layer.wk, config.dim, config.dim);
    zeros(layer.bk, config.dim);
    gaussian(layer.wv, config.dim, config.dim);
    zeros(layer.bv, config.dim);
    gaussian(layer.wo, config.dim, config.dim);
    zeros(layer.bo, config.dim);
    ones(layer.ln1_g, config.dim);
    zeros(layer.ln1_b, config.dim);
    gaussian(layer.w1, config.dim, config.ff_dim);
    zeros(layer.b1, config.ff_dim);
    gaussian(layer.w2, config.ff_dim, config.dim);
    zeros(layer.b2, config.dim);
    ones(layer.ln2_g, config.dim);
    zeros(layer.ln2_b, config.dim);
  }
  gaussian(params.out_w, config.dim, config.vocab_size);
  zeros(params.out_b, config.vocab_size);
  return params;
}

MatD forward_one(const ModelParams& params, const MaskedQuery& query,
                 ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  check_query(cfg, query);
  const int len = static_cast<int>(query.ids.size());
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ForwardCache local;
  ForwardCache& cc = cache ? *cache : local;
  cc.layers.assign(cfg.n_layers, LayerCache{});

  MatD x(len, cfg.dim);
  for (int t = 0; t < len; ++t)
    x.row(t) = params.tok_emb.row(query.ids[t]).cast<double>() +
               params.pos_emb.row(t).cast<double>();
  x = layer_norm_fwd(x, params.emb_ln_g, params.emb_ln_b, &cc.xhat0,
                     &cc.invstd0);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& lc = cc.layers[l];
    lc.x_in = x;

    lc.q = x * lp.wq.cast<double>();
    lc.q.rowwise() += VecD(lp.bq.row(0).cast<double>());
    lc.k = x * lp.wk.cast<double>();
    lc.k.rowwise() += VecD(lp.bk.row(0).cast<double>());
    lc.v = x * lp.wv.cast<double>();
    lc.v.rowwise() += VecD(lp.bv.row(0).cast<double>());

    lc.att.resize(cfg.n_heads);
    lc.ctx.resize(len, cfg.dim);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = lc.q.middleCols(h * hd, hd);
      const auto kh = lc.k.middleCols(h * hd, hd);
      const auto vh = lc.v.middleCols(h * hd, hd);
      MatD scores = qh * kh.transpose() * scale;
      softmax_rows_inplace(scores);
      lc.att[h] = std::move(scores);
      lc.ctx.middleCols(h * hd, hd) = lc.att[h] * vh;
    }
    MatD attn_out = lc.ctx * lp.wo.cast<double>();
    attn_out.rowwise() += VecD(lp.bo.row(0).cast<double>());

    const MatD s1 = lc.x_in + attn_out;
    lc.x_mid = layer_norm_fwd(s1, lp.ln1_g, lp.ln1_b, &lc.xhat1, &lc.invstd1);

    lc.h1 = lc.x_mid * lp.w1.cast<double>();
    lc.h1.rowwise() += VecD(lp.b1.row(0).cast<double>());
    lc.g1 = lc.h1.unaryExpr([](double v) { return gelu(v); });
    MatD ff = lc.g1 * lp.w2.cast<double>();
    ff.rowwise() += VecD(lp.b2.row(0).cast<double>());

    const MatD s2 = lc.x_mid + ff;
    lc.x_out = layer_norm_fwd(s2, lp.ln2_g, lp.ln2_b, &lc.xhat2, &lc.invstd2);
    x = lc.x_out;
  }
  cc.x_final = x;

  const int n_masks = static_cast<int>(query.mask_positions.size());
  MatD log_probs(n_masks, cfg.vocab_size);
  cc.probs.resize(n_masks, cfg.vocab_size);
  const VecD out_b = params.out_b.row(0).cast<double>();
  for (int m = 0; m < n_masks; ++m) {
    VecD z = x.row(query.mask_positions[m]) * params.out_w.cast<double>();
    z += out_b;
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    log_probs.row(m) = z.array() - lse;
    cc.probs.row(m) = log_probs.row(m).array().exp();
  }
  return log_probs;
}

std::vector<MatD> forward(const ModelParams& params,
                          const std::vector<MaskedQuery>& queries) {
  std::vector<MatD> out;
  out.reserve(queries.size());
  for (const auto& query : queries) out.push_back(forward_one(params, query));
  return out;
}

void backward_one(const ModelParams& params, const MaskedQuery& query,
                  const ForwardCache& cache,
                  const std::vector<double>& upstream, ModelGrads& accum) {
  const ModelConfig& cfg = params.config;
  if (upstream.size() != query.mask_positions.size())
    throw std::runtime_error("upstream size does not match mask count");
  const int len = static_cast<int>(query.ids.size());
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // Output head: log-softmax pullback at each mask row.
  MatD dx = MatD::Zero(len, cfg.dim);
  const MatD out_w = params.out_w.cast<double>();
  for (size_t m = 0; m < query.mask_positions.size(); ++m) {
    const double u = upstream[m];
    if (u == 0.0) continue;
    VecD dz = -u * cache.probs.row(m);
    dz(query.candidate_ids[m]) += u;
    accum.out_b.row(0) += dz;
    accum.out_w +=
        cache.x_final.row(query.mask_positions[m]).transpose() * dz;
    dx.row(query.mask_positions[m]) += dz * out_w.transpose();
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = params.layers[l];
    const LayerCache& lc = cache.layers[l];
    LayerGrads& lg = accum.layers[l];

    // x_out = LN2(x_mid + ff)
    MatD ds2 =
        layer_norm_bwd(dx, lc.xhat2, lc.invstd2, lp.ln2_g, lg.ln2_g, lg.ln2_b);

    // ff = gelu(x_mid*w1 + b1)*w2 + b2
    MatD dx_mid = ds2;
    const MatD& dff = ds2;
    lg.w2 += lc.g1.transpose() * dff;
    lg.b2.row(0) += dff.colwise().sum();
    MatD dg1 = dff * lp.w2.cast<double>().transpose();
    MatD dh1 =
        dg1.cwiseProduct(lc.h1.unaryExpr([](double v) { return gelu_grad(v); }));
    lg.w1 += lc.x_mid.transpose() * dh1;
    lg.b1.row(0) += dh1.colwise().sum();
    dx_mid += dh1 * lp.w1.cast<double>().transpose();

    // x_mid = LN1(x_in + attn_out)
    MatD ds1 = layer_norm_bwd(dx_mid, lc.xhat1, lc.invstd1, lp.ln1_g, lg.ln1_g,
                              lg.ln1_b);

    MatD dx_in = ds1;
    const MatD& dattn = ds1;
    lg.wo += lc.ctx.transpose() * dattn;
    lg.bo.row(0) += dattn.colwise().sum();
    MatD dctx = dattn * lp.wo.cast<double>().transpose();

    MatD dq(len, cfg.dim), dk(len, cfg.dim), dv(len, cfg.dim);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = lc.q.middleCols(h * hd, hd);
      const auto kh = lc.k.middleCols(h * hd, hd);
      const auto vh = lc.v.middleCols(h * hd, hd);
      const auto dctx_h = dctx.middleCols(h * hd, hd);
      const MatD datt = dctx_h * vh.transpose();
      dv.middleCols(h * hd, hd) = lc.att[h].transpose() * dctx_h;
      const MatD dscores = softmax_rows_bwd(lc.att[h], datt) * scale;
      dq.middleCols(h * hd, hd) = dscores * kh;
      dk.middleCols(h * hd, hd) = dscores.transpose() * qh;
    }
    lg.wq += lc.x_in.transpose() * dq;
    lg.bq.row(0) += dq.colwise().sum();
    lg.wk += lc.x_in.transpose() * dk;
    lg.bk.row(0) += dk.colwise().sum();
    lg.wv += lc.x_in.transpose() * dv;
    lg.bv.row(0) += dv.colwise().sum();
    dx_in += dq * lp.wq.cast<double>().transpose();
    dx_in += dk * lp.wk.cast<double>().transpose();
    dx_in += dv * lp.wv.cast<double>().transpose();
    dx = std::move(dx_in);
  }

  const MatD ds0 = layer_norm_bwd(dx, cache.xhat0, cache.invstd0,
                                  params.emb_ln_g, accum.emb_ln_g,
                                  accum.emb_ln_b);
  for (int t = 0; t < len; ++t) {
    accum.tok_emb.row(query.ids[t]) += ds0.row(t);
    accum.pos_emb.row(t) += ds0.row(t);
  }
}

ModelGrads backward(const ModelParams& params,
                    const std::vector<MaskedQuery>& queries,
                    const std::vector<std::vector<double>>& upstream) {
  if (queries.size() != upstream.size())
    throw std::runtime_error("queries/upstream size mismatch");
  ModelGrads grads = ModelGrads::zeros_like(params);
  for (size_t i = 0; i < queries.size(); ++i) {
    ForwardCache cache;
    forward_one(params, queries[i], &cache);
    backward_one(params, queries[i], cache, upstream[i], grads);
  }
  return grads;
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const Vocab& vocab) {
  json meta;
  meta["config"] = {{"vocab_size", params.config.vocab_size},
                    {"dim", params.config.dim},
                    {"n_layers", params.config.n_layers},
                    {"n_heads", params.config.n_heads},
                    {"ff_dim", params.config.ff_dim},
                    {"max_len", params.config.max_len},
                    {"seed", params.config.seed}};
  meta["vocab"] = {{"tokens", vocab.tokens()}};

  json manifest = json::array();
  uint64_t offset = 0;
  params.for_each_tensor([&manifest, &offset](const std::string& name,
                                              const MatF& t) {
    manifest.push_back({{"name", name},
                        {"shape", {t.rows(), t.cols()}},
                        {"offset", offset}});
    offset += static_cast<uint64_t>(t.size()) * 4;
  });
  meta["tensors"] = manifest;
  const std::string meta_bytes = meta.dump();

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  write_bytes(out, kMagic, 4);
  write_u32le(out, kCheckpointVersion);
  write_u64le(out, meta_bytes.size());
  write_bytes(out, meta_bytes.data(), meta_bytes.size());
  params.for_each_tensor([&out](const std::string&, const MatF& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) write_f32le(out, t(r, c));
  });
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in checkpoint: " + path);
  const uint32_t version = read_u32le(in, "version field");
  if (version != kCheckpointVersion)
    throw std::runtime_error("version mismatch: checkpoint format " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  const uint64_t meta_len = read_u64le(in, "metadata length");
  std::string meta_bytes(meta_len, '\0');
  if (!in.read(meta_bytes.data(), static_cast<std::streamsize>(meta_len)))
    throw std::runtime_error("truncated metadata");

  json meta;
  try {
    meta = json::parse(meta_bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("corrupt checkpoint metadata: ") +
                             e.what());
  }
  ModelConfig config;
  const auto& jc = meta.at("config");
  config.vocab_size = jc.at("vocab_size").get<int>();
  config.dim = jc.at("dim").get<int>();
  config.n_layers = jc.at("n_layers").get<int>();
  config.n_heads = jc.at("n_heads").get<int>();
  config.ff_dim = jc.at("ff_dim").get<int>();
  config.max_len = jc.at("max_len").get<int>();
  config.seed = jc.at("seed").get<uint64_t>();
  config.check();

  Checkpoint ckpt;
  ckpt.vocab = Vocab(meta.at("vocab").at("tokens").get<std::vector<std::string>>());
  if (ckpt.vocab.size() != config.vocab_size)
    throw std::runtime_error("vocab size does not match config");

  // Allocate from config, then fill by manifest name.
  ckpt.params = init_model_shapes(config);

  std::map<std::string, MatF*> by_name;
  ckpt.params.for_each_tensor(
      [&by_name](const std::string& name, MatF& t) { by_name[name] = &t; });

  uint64_t expected_offset = 0;
  for (const auto& entry : meta.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("unknown tensor in manifest: " + name);
    MatF& t = *it->second;
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
      throw std::runtime_error("tensor shape mismatch for " + name);
    if (entry.at("offset").get<uint64_t>() != expected_offset)
      throw std::runtime_error("tensor offset mismatch for " + name);
    expected_offset += static_cast<uint64_t>(t.size()) * 4;
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4))
          throw std::runtime_error("truncated tensor data in " + name);
        const uint32_t bits = static_cast<uint32_t>(b[0]) |
                              (static_cast<uint32_t>(b[1]) << 8) |
                              (static_cast<uint32_t>(b[2]) << 16) |
                              (static_cast<uint32_t>(b[3]) << 24);
        t(r, c) = std::bit_cast<float>(bits);
      }
  }
  return ckpt;
}

}  // namespace css
