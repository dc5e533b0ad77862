#include "graspbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "graspbench/rng.hpp"

namespace graspbench {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// ---------------------------------------------------------------------------
// Vector kernels. omp-simd lets the compiler vectorize the reductions with a
// fixed lane order, so results stay bit-reproducible for a given binary.
// ---------------------------------------------------------------------------

inline double dot_vec(const double* __restrict a, const double* __restrict b, int n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double* __restrict y, const double* __restrict x, double a, int n) {
#pragma omp simd
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// Y[n,out] = X[n,in] * W[in,out] + b
void linear_fwd(const double* X, int n, int in, const Tensor& W, const Tensor& b,
                double* Y) {
  const int out = b.dim(0);
  for (int i = 0; i < n; ++i) {
    double* yi = Y + static_cast<size_t>(i) * out;
    std::memcpy(yi, b.ptr(), sizeof(double) * out);
    const double* xi = X + static_cast<size_t>(i) * in;
    for (int k = 0; k < in; ++k) {
      axpy(yi, W.ptr() + static_cast<size_t>(k) * out, xi[k], out);
    }
  }
}

// Accumulates dW, db and (when dX != nullptr) dX for the layer above.
void linear_bwd(const double* X, const double* dY, int n, int in, int out,
                const Tensor& W, double* dX, Tensor& dW, Tensor& db) {
  for (int i = 0; i < n; ++i) {
    const double* dyi = dY + static_cast<size_t>(i) * out;
    axpy(db.ptr(), dyi, 1.0, out);
    const double* xi = X + static_cast<size_t>(i) * in;
    for (int k = 0; k < in; ++k) {
      axpy(dW.ptr() + static_cast<size_t>(k) * out, dyi, xi[k], out);
    }
    if (dX != nullptr) {
      double* dxi = dX + static_cast<size_t>(i) * in;
      for (int k = 0; k < in; ++k) {
        dxi[k] += dot_vec(dyi, W.ptr() + static_cast<size_t>(k) * out, out);
      }
    }
  }
}

void layernorm_fwd(const double* X, int n, int d, const Tensor& gain,
                   const Tensor& bias, double* Y, double* xhat, double* rstd) {
  for (int i = 0; i < n; ++i) {
    const double* xi = X + static_cast<size_t>(i) * d;
    double mu = 0.0;
#pragma omp simd reduction(+ : mu)
    for (int k = 0; k < d; ++k) mu += xi[k];
    mu /= d;
    double var = 0.0;
#pragma omp simd reduction(+ : var)
    for (int k = 0; k < d; ++k) var += (xi[k] - mu) * (xi[k] - mu);
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = r;
    double* xh = xhat + static_cast<size_t>(i) * d;
    double* yi = Y + static_cast<size_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      xh[k] = (xi[k] - mu) * r;
      yi[k] = gain.ptr()[k] * xh[k] + bias.ptr()[k];
    }
  }
}

void layernorm_bwd(const double* dY, const double* xhat, const double* rstd,
                   int n, int d, const Tensor& gain, double* dX, Tensor& dGain,
                   Tensor& dBias) {
  for (int i = 0; i < n; ++i) {
    const double* dyi = dY + static_cast<size_t>(i) * d;
    const double* xh = xhat + static_cast<size_t>(i) * d;
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (int k = 0; k < d; ++k) {
      dGain.ptr()[k] += dyi[k] * xh[k];
      dBias.ptr()[k] += dyi[k];
      const double dxh = dyi[k] * gain.ptr()[k];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh[k];
    }
    const double inv_d = 1.0 / d;
    double* dxi = dX + static_cast<size_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      const double dxh = dyi[k] * gain.ptr()[k];
      dxi[k] += rstd[i] * (dxh - sum_dxh * inv_d - xh[k] * sum_dxh_xh * inv_d);
    }
  }
}

inline double gelu(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * x * (1.0 + t);
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// Stable log-sum-exp; probs is optional softmax output.
double logsumexp(const double* z, int n, double* probs) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
  const double lse = m + std::log(s);
  if (probs != nullptr) {
    for (int i = 0; i < n; ++i) probs[i] = std::exp(z[i] - lse);
  }
  return lse;
}

// ---------------------------------------------------------------------------
// Encoder with activation caches for reverse mode
// ---------------------------------------------------------------------------

struct BlockCache {
  std::vector<double> x_in, ln1_xhat, ln1_out, ln1_rstd;
  std::vector<double> q, k, v;
  std::vector<double> att;      // [heads, n, n] softmax rows
  std::vector<double> att_mix;  // [n, d] concatenated head outputs
  std::vector<double> x_mid, ln2_xhat, ln2_out, ln2_rstd;
  std::vector<double> mlp_pre, mlp_act;
};

struct EncoderCache {
  int n = 0;
  std::vector<std::vector<double>> patch_flat;  // per token set: [P, patch_dim]
  int n_image_rows = 0;
  int cond = -1;
  int query_offset = 0;
  int query_count = 0;
  std::vector<double> x0;
  std::vector<BlockCache> blocks;
  std::vector<double> x_out;
};

void flatten_image(const ModelConfig& cfg, const Image& img, std::vector<double>& flat) {
  if (img.width != cfg.image_side || img.height != cfg.image_side || img.channels != 3) {
    throw std::invalid_argument("model: image resolution does not match the config");
  }
  const int per_side = cfg.image_side / cfg.patch;
  const int pd = cfg.patch_dim();
  flat.assign(static_cast<size_t>(cfg.n_patches()) * pd, 0.0);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      double* dst = flat.data() + static_cast<size_t>(pr * per_side + pc) * pd;
      int idx = 0;
      for (int py = 0; py < cfg.patch; ++py) {
        for (int px = 0; px < cfg.patch; ++px) {
          for (int c = 0; c < 3; ++c) {
            dst[idx++] = img.at(pc * cfg.patch + px, pr * cfg.patch + py, c) / 255.0;
          }
        }
      }
    }
  }
}

void patch_rows(const ModelParams& p, const std::vector<double>& flat, double* rows) {
  const ModelConfig& cfg = p.config;
  const int P = cfg.n_patches();
  const int d = cfg.d_model;
  linear_fwd(flat.data(), P, cfg.patch_dim(), p.patch_w, p.patch_b, rows);
  for (int i = 0; i < P; ++i) {
    axpy(rows + static_cast<size_t>(i) * d, p.pos_emb.ptr() + static_cast<size_t>(i) * d, 1.0, d);
  }
}

void query_range(const ModelConfig& cfg, QuerySet qs, int& offset, int& count) {
  if (qs == QuerySet::box) {
    offset = 0;
    count = cfg.box_slots;
  } else {
    offset = cfg.box_slots;
    count = cfg.grasp_slots;
  }
}

void encoder_blocks_fwd(const ModelParams& p, EncoderCache& c) {
  const ModelConfig& cfg = p.config;
  const int n = c.n, d = cfg.d_model, H = cfg.n_heads;
  const int dh = d / H;
  const int dm = cfg.d_mlp();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  const size_t nd = static_cast<size_t>(n) * d;

  c.blocks.resize(cfg.n_layers);
  const std::vector<double>* x = &c.x0;
  for (int b = 0; b < cfg.n_layers; ++b) {
    BlockCache& bc = c.blocks[b];
    const BlockParams& bp = p.blocks[b];
    bc.x_in = *x;
    bc.ln1_xhat.resize(nd);
    bc.ln1_out.resize(nd);
    bc.ln1_rstd.resize(n);
    layernorm_fwd(bc.x_in.data(), n, d, bp.ln1_g, bp.ln1_b, bc.ln1_out.data(),
                  bc.ln1_xhat.data(), bc.ln1_rstd.data());

    bc.q.resize(nd);
    bc.k.resize(nd);
    bc.v.resize(nd);
    linear_fwd(bc.ln1_out.data(), n, d, bp.wq, bp.bq, bc.q.data());
    linear_fwd(bc.ln1_out.data(), n, d, bp.wk, bp.bk, bc.k.data());
    linear_fwd(bc.ln1_out.data(), n, d, bp.wv, bp.bv, bc.v.data());

    bc.att.assign(static_cast<size_t>(H) * n * n, 0.0);
    bc.att_mix.assign(nd, 0.0);
    std::vector<double> scores(n);
    for (int h = 0; h < H; ++h) {
      const int off = h * dh;
      for (int i = 0; i < n; ++i) {
        const double* qi = bc.q.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < n; ++j) {
          scores[j] = alpha * dot_vec(qi, bc.k.data() + static_cast<size_t>(j) * d + off, dh);
        }
        double* att_row = bc.att.data() + (static_cast<size_t>(h) * n + i) * n;
        logsumexp(scores.data(), n, att_row);
        double* mix = bc.att_mix.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < n; ++j) {
          axpy(mix, bc.v.data() + static_cast<size_t>(j) * d + off, att_row[j], dh);
        }
      }
    }

    bc.x_mid.resize(nd);
    linear_fwd(bc.att_mix.data(), n, d, bp.wo, bp.bo, bc.x_mid.data());
    for (size_t i = 0; i < nd; ++i) bc.x_mid[i] += bc.x_in[i];

    bc.ln2_xhat.resize(nd);
    bc.ln2_out.resize(nd);
    bc.ln2_rstd.resize(n);
    layernorm_fwd(bc.x_mid.data(), n, d, bp.ln2_g, bp.ln2_b, bc.ln2_out.data(),
                  bc.ln2_xhat.data(), bc.ln2_rstd.data());

    bc.mlp_pre.resize(static_cast<size_t>(n) * dm);
    bc.mlp_act.resize(static_cast<size_t>(n) * dm);
    linear_fwd(bc.ln2_out.data(), n, d, bp.fc1_w, bp.fc1_b, bc.mlp_pre.data());
    for (size_t i = 0; i < bc.mlp_pre.size(); ++i) bc.mlp_act[i] = gelu(bc.mlp_pre[i]);

    c.x_out.resize(nd);
    linear_fwd(bc.mlp_act.data(), n, dm, bp.fc2_w, bp.fc2_b, c.x_out.data());
    for (size_t i = 0; i < nd; ++i) c.x_out[i] += bc.x_mid[i];
    if (b + 1 < cfg.n_layers) {
      c.blocks[b + 1].x_in = c.x_out;  // consumed as *x below
    }
    x = &c.x_out;
  }
  if (cfg.n_layers == 0) c.x_out = c.x0;
}

// Builds the sequence for a stage: image token sets, condition, query slots.
void encoder_fwd_images(const ModelParams& p, const std::vector<const Image*>& images,
                        int cond, QuerySet qs, EncoderCache& c) {
  const ModelConfig& cfg = p.config;
  if (cond < 0 || cond >= cfg.n_conditions) {
    throw std::invalid_argument("model: condition index out of range");
  }
  const int P = cfg.n_patches();
  const int d = cfg.d_model;
  query_range(cfg, qs, c.query_offset, c.query_count);
  c.n_image_rows = static_cast<int>(images.size()) * P;
  c.n = c.n_image_rows + 1 + c.query_count;
  c.cond = cond;
  c.x0.assign(static_cast<size_t>(c.n) * d, 0.0);
  c.patch_flat.resize(images.size());
  for (size_t s = 0; s < images.size(); ++s) {
    flatten_image(cfg, *images[s], c.patch_flat[s]);
    patch_rows(p, c.patch_flat[s], c.x0.data() + s * static_cast<size_t>(P) * d);
  }
  std::memcpy(c.x0.data() + static_cast<size_t>(c.n_image_rows) * d,
              p.cond_emb.ptr() + static_cast<size_t>(cond) * d, sizeof(double) * d);
  // Query slots carry the condition embedding additively, so they can select
  // the instructed object in a single attention hop (the analog of dummy
  // tokens reading the instruction prefix at every layer).
  for (int qi = 0; qi < c.query_count; ++qi) {
    double* row = c.x0.data() + static_cast<size_t>(c.n_image_rows + 1 + qi) * d;
    std::memcpy(row, p.query_emb.ptr() + static_cast<size_t>(c.query_offset + qi) * d,
                sizeof(double) * d);
    axpy(row, p.cond_emb.ptr() + static_cast<size_t>(cond) * d, 1.0, d);
  }
  encoder_blocks_fwd(p, c);
}

const double* query_rows(const EncoderCache& c, int d) {
  return c.x_out.data() + static_cast<size_t>(c.n_image_rows + 1) * d;
}

void encoder_bwd(const ModelParams& p, const EncoderCache& c, const double* dQueries,
                 ModelParams& g) {
  const ModelConfig& cfg = p.config;
  const int n = c.n, d = cfg.d_model, H = cfg.n_heads;
  const int dh = d / H;
  const int dm = cfg.d_mlp();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  const size_t nd = static_cast<size_t>(n) * d;

  std::vector<double> dx(nd, 0.0);
  std::memcpy(dx.data() + static_cast<size_t>(c.n_image_rows + 1) * d, dQueries,
              sizeof(double) * static_cast<size_t>(c.query_count) * d);

  std::vector<double> d_mlp_act(static_cast<size_t>(n) * dm);
  std::vector<double> d_mlp_pre(static_cast<size_t>(n) * dm);
  std::vector<double> d_ln2(nd), d_mix(nd), d_ln1(nd);
  std::vector<double> dq(nd), dk(nd), dv(nd);
  std::vector<double> dp_row(n), ds_row(n);

  for (int b = cfg.n_layers - 1; b >= 0; --b) {
    const BlockCache& bc = c.blocks[b];
    const BlockParams& bp = p.blocks[b];
    BlockParams& gb = g.blocks[b];

    // mlp branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
    std::fill(d_mlp_act.begin(), d_mlp_act.end(), 0.0);
    linear_bwd(bc.mlp_act.data(), dx.data(), n, dm, d, bp.fc2_w, d_mlp_act.data(),
               gb.fc2_w, gb.fc2_b);
    for (size_t i = 0; i < d_mlp_act.size(); ++i) {
      d_mlp_pre[i] = d_mlp_act[i] * gelu_grad(bc.mlp_pre[i]);
    }
    std::fill(d_ln2.begin(), d_ln2.end(), 0.0);
    linear_bwd(bc.ln2_out.data(), d_mlp_pre.data(), n, d, dm, bp.fc1_w, d_ln2.data(),
               gb.fc1_w, gb.fc1_b);
    // dx currently holds d(x_out); residual passes it straight to x_mid
    layernorm_bwd(d_ln2.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data(), n, d,
                  bp.ln2_g, dx.data(), gb.ln2_g, gb.ln2_b);

    // attention branch: x_mid = x_in + wo(att_mix)
    std::fill(d_mix.begin(), d_mix.end(), 0.0);
    linear_bwd(bc.att_mix.data(), dx.data(), n, d, d, bp.wo, d_mix.data(), gb.wo,
               gb.bo);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int h = 0; h < H; ++h) {
      const int off = h * dh;
      for (int i = 0; i < n; ++i) {
        const double* att_row = bc.att.data() + (static_cast<size_t>(h) * n + i) * n;
        const double* dmix_i = d_mix.data() + static_cast<size_t>(i) * d + off;
        double dot_pp = 0.0;
        for (int j = 0; j < n; ++j) {
          dp_row[j] = dot_vec(dmix_i, bc.v.data() + static_cast<size_t>(j) * d + off, dh);
          dot_pp += dp_row[j] * att_row[j];
        }
        const double* qi = bc.q.data() + static_cast<size_t>(i) * d + off;
        double* dqi = dq.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < n; ++j) {
          const double ds = att_row[j] * (dp_row[j] - dot_pp);
          ds_row[j] = ds;
          axpy(dv.data() + static_cast<size_t>(j) * d + off, dmix_i, att_row[j], dh);
          axpy(dqi, bc.k.data() + static_cast<size_t>(j) * d + off, alpha * ds, dh);
          axpy(dk.data() + static_cast<size_t>(j) * d + off, qi, alpha * ds, dh);
        }
      }
    }

    std::fill(d_ln1.begin(), d_ln1.end(), 0.0);
    linear_bwd(bc.ln1_out.data(), dq.data(), n, d, d, bp.wq, d_ln1.data(), gb.wq, gb.bq);
    linear_bwd(bc.ln1_out.data(), dk.data(), n, d, d, bp.wk, d_ln1.data(), gb.wk, gb.bk);
    linear_bwd(bc.ln1_out.data(), dv.data(), n, d, d, bp.wv, d_ln1.data(), gb.wv, gb.bv);
    layernorm_bwd(d_ln1.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data(), n, d,
                  bp.ln1_g, dx.data(), gb.ln1_g, gb.ln1_b);
  }

  // Scatter dX0: patch rows into the shared embedding stack, then condition
  // and query tables.
  const int P = cfg.n_patches();
  for (size_t s = 0; s < c.patch_flat.size(); ++s) {
    const double* drows = dx.data() + s * static_cast<size_t>(P) * d;
    linear_bwd(c.patch_flat[s].data(), drows, P, cfg.patch_dim(), d, p.patch_w,
               nullptr, g.patch_w, g.patch_b);
    for (int i = 0; i < P; ++i) {
      axpy(g.pos_emb.ptr() + static_cast<size_t>(i) * d,
           drows + static_cast<size_t>(i) * d, 1.0, d);
    }
  }
  axpy(g.cond_emb.ptr() + static_cast<size_t>(c.cond) * d,
       dx.data() + static_cast<size_t>(c.n_image_rows) * d, 1.0, d);
  for (int qi = 0; qi < c.query_count; ++qi) {
    const double* drow = dx.data() + static_cast<size_t>(c.n_image_rows + 1 + qi) * d;
    axpy(g.query_emb.ptr() + static_cast<size_t>(c.query_offset + qi) * d, drow, 1.0, d);
    axpy(g.cond_emb.ptr() + static_cast<size_t>(c.cond) * d, drow, 1.0, d);
  }
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

struct RegCache {
  std::vector<double> h_pre, h_act;  // [slots, d]
  std::vector<double> u, val;        // [slots]
};

void token_head_fwd(const ModelParams& p, const double* qrows, int slots,
                    std::vector<double>& logits) {
  logits.resize(static_cast<size_t>(slots) * p.config.n_bins);
  linear_fwd(qrows, slots, p.config.d_model, p.lm_w, p.lm_b, logits.data());
}

void reg_head_fwd(const ModelParams& p, const double* qrows, int slots, RegCache& rc) {
  const int d = p.config.d_model;
  rc.h_pre.resize(static_cast<size_t>(slots) * d);
  rc.h_act.resize(static_cast<size_t>(slots) * d);
  rc.u.assign(slots, 0.0);
  rc.val.assign(slots, 0.0);
  linear_fwd(qrows, slots, d, p.reg_w1, p.reg_b1, rc.h_pre.data());
  for (size_t i = 0; i < rc.h_pre.size(); ++i) rc.h_act[i] = gelu(rc.h_pre[i]);
  for (int s = 0; s < slots; ++s) {
    rc.u[s] = dot_vec(rc.h_act.data() + static_cast<size_t>(s) * d, p.reg_w2.ptr(), d) +
              p.reg_b2.ptr()[0];
    rc.val[s] = sigmoid(rc.u[s]);
  }
}

// Mean cross-entropy over slots; d_logits (optional) receives
// scale * (softmax - onehot) / slots.
double ce_slots(const double* logits, int slots, int n_bins, const int* targets,
                double scale, double* d_logits) {
  double total = 0.0;
  std::vector<double> probs(n_bins);
  for (int s = 0; s < slots; ++s) {
    const double* z = logits + static_cast<size_t>(s) * n_bins;
    const double lse = logsumexp(z, n_bins, probs.data());
    total += lse - z[targets[s]];
    if (d_logits != nullptr) {
      double* dz = d_logits + static_cast<size_t>(s) * n_bins;
      const double w = scale / slots;
      for (int i = 0; i < n_bins; ++i) dz[i] = w * probs[i];
      dz[targets[s]] -= w;
    }
  }
  return total / slots;
}

double l1_slots(const RegCache& rc, const std::array<double, 5>& target,
                double scale, double* d_u) {
  const int slots = static_cast<int>(rc.val.size());
  double total = 0.0;
  for (int s = 0; s < slots; ++s) {
    const double diff = rc.val[s] - target[s];
    total += std::abs(diff);
    if (d_u != nullptr) {
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      d_u[s] = scale / slots * sgn * rc.val[s] * (1.0 - rc.val[s]);
    }
  }
  return total / slots;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and parameters
// ---------------------------------------------------------------------------

const char* head_name(HeadKind k) {
  return k == HeadKind::token ? "token" : "regression";
}

HeadKind head_from_name(const std::string& name) {
  if (name == "token") return HeadKind::token;
  if (name == "regression") return HeadKind::regression;
  throw std::invalid_argument("unknown head kind: " + name);
}

void ModelConfig::validate() const {
  if (image_side <= 0 || patch <= 0 || image_side % patch != 0) {
    throw std::invalid_argument("ModelConfig: image_side must be a positive multiple of patch");
  }
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be a positive multiple of n_heads");
  }
  if (n_layers < 0 || mlp_ratio <= 0 || n_bins < 2 || n_conditions <= 0) {
    throw std::invalid_argument("ModelConfig: bad dimension field");
  }
  if (grasp_slots != 5 || box_slots != 4) {
    throw std::invalid_argument("ModelConfig: query slots are fixed at 5 grasp + 4 box");
  }
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"image_side", cfg.image_side}, {"patch", cfg.patch},
      {"d_model", cfg.d_model},       {"n_layers", cfg.n_layers},
      {"n_heads", cfg.n_heads},       {"mlp_ratio", cfg.mlp_ratio},
      {"n_bins", cfg.n_bins},         {"n_conditions", cfg.n_conditions},
      {"head_kind", head_name(cfg.head_kind)},
      {"grasp_slots", cfg.grasp_slots},
      {"box_slots", cfg.box_slots},
      {"seed", cfg.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.image_side = j.value("image_side", cfg.image_side);
  cfg.patch = j.value("patch", cfg.patch);
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.n_layers = j.value("n_layers", cfg.n_layers);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.mlp_ratio = j.value("mlp_ratio", cfg.mlp_ratio);
  cfg.n_bins = j.value("n_bins", cfg.n_bins);
  cfg.n_conditions = j.value("n_conditions", cfg.n_conditions);
  if (j.contains("head_kind")) cfg.head_kind = head_from_name(j.at("head_kind").get<std::string>());
  cfg.grasp_slots = j.value("grasp_slots", cfg.grasp_slots);
  cfg.box_slots = j.value("box_slots", cfg.box_slots);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  const int d = cfg.d_model;
  p.patch_w = Tensor({cfg.patch_dim(), d});
  p.patch_b = Tensor({d});
  p.pos_emb = Tensor({cfg.n_patches(), d});
  p.cond_emb = Tensor({cfg.n_conditions, d});
  p.query_emb = Tensor({cfg.box_slots + cfg.grasp_slots, d});
  p.blocks.resize(cfg.n_layers);
  for (BlockParams& b : p.blocks) {
    b.ln1_g = Tensor({d});
    b.ln1_b = Tensor({d});
    b.wq = Tensor({d, d});
    b.bq = Tensor({d});
    b.wk = Tensor({d, d});
    b.bk = Tensor({d});
    b.wv = Tensor({d, d});
    b.bv = Tensor({d});
    b.wo = Tensor({d, d});
    b.bo = Tensor({d});
    b.ln2_g = Tensor({d});
    b.ln2_b = Tensor({d});
    b.fc1_w = Tensor({d, cfg.d_mlp()});
    b.fc1_b = Tensor({cfg.d_mlp()});
    b.fc2_w = Tensor({cfg.d_mlp(), d});
    b.fc2_b = Tensor({d});
  }
  p.lm_w = Tensor({d, cfg.n_bins});
  p.lm_b = Tensor({cfg.n_bins});
  p.reg_w1 = Tensor({d, d});
  p.reg_b1 = Tensor({d});
  p.reg_w2 = Tensor({d, 1});
  p.reg_b2 = Tensor({1});
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  ModelParams p = zeros(cfg);
  Rng rng(mix_seed({cfg.seed, 0xB00757ULL}));
  auto xavier = [&rng](Tensor& t) {
    const double std = std::sqrt(2.0 / (t.dim(0) + t.dim(1)));
    for (double& v : t.data) v = rng.normal(0.0, std);
  };
  auto small = [&rng](Tensor& t) {
    for (double& v : t.data) v = rng.normal(0.0, 0.02);
  };
  xavier(p.patch_w);
  small(p.pos_emb);
  // cond_emb stays zero: untrained (unseen) conditions then carry no signal
  small(p.query_emb);
  for (BlockParams& b : p.blocks) {
    b.ln1_g.fill(1.0);
    xavier(b.wq);
    xavier(b.wk);
    xavier(b.wv);
    xavier(b.wo);
    b.ln2_g.fill(1.0);
    xavier(b.fc1_w);
    xavier(b.fc2_w);
  }
  // lm head and the regression output layer start at zero: uniform logits
  // and mid-range regression outputs.
  xavier(p.reg_w1);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("patch_w", &patch_w);
  out.emplace_back("patch_b", &patch_b);
  out.emplace_back("pos_emb", &pos_emb);
  out.emplace_back("cond_emb", &cond_emb);
  out.emplace_back("query_emb", &query_emb);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string pre = "blk" + std::to_string(i) + ".";
    BlockParams& b = blocks[i];
    out.emplace_back(pre + "ln1_g", &b.ln1_g);
    out.emplace_back(pre + "ln1_b", &b.ln1_b);
    out.emplace_back(pre + "wq", &b.wq);
    out.emplace_back(pre + "bq", &b.bq);
    out.emplace_back(pre + "wk", &b.wk);
    out.emplace_back(pre + "bk", &b.bk);
    out.emplace_back(pre + "wv", &b.wv);
    out.emplace_back(pre + "bv", &b.bv);
    out.emplace_back(pre + "wo", &b.wo);
    out.emplace_back(pre + "bo", &b.bo);
    out.emplace_back(pre + "ln2_g", &b.ln2_g);
    out.emplace_back(pre + "ln2_b", &b.ln2_b);
    out.emplace_back(pre + "fc1_w", &b.fc1_w);
    out.emplace_back(pre + "fc1_b", &b.fc1_b);
    out.emplace_back(pre + "fc2_w", &b.fc2_w);
    out.emplace_back(pre + "fc2_b", &b.fc2_b);
  }
  out.emplace_back("lm_w", &lm_w);
  out.emplace_back("lm_b", &lm_b);
  out.emplace_back("reg_w1", &reg_w1);
  out.emplace_back("reg_b1", &reg_b1);
  out.emplace_back("reg_w2", &reg_w2);
  out.emplace_back("reg_b2", &reg_b2);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  auto mut = const_cast<ModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

// ---------------------------------------------------------------------------
// Public forward surface
// ---------------------------------------------------------------------------

Tensor patch_embed(const ModelParams& params, const Image& image) {
  std::vector<double> flat;
  flatten_image(params.config, image, flat);
  Tensor out({params.config.n_patches(), params.config.d_model});
  patch_rows(params, flat, out.ptr());
  return out;
}

Tensor encoder_forward(const ModelParams& params, const std::vector<Tensor>& token_sets,
                       int condition, QuerySet queries) {
  const ModelConfig& cfg = params.config;
  if (condition < 0 || condition >= cfg.n_conditions) {
    throw std::invalid_argument("encoder_forward: condition index out of range");
  }
  int rows = 0;
  for (const Tensor& t : token_sets) {
    if (t.shape.size() != 2 || t.dim(1) != cfg.d_model) {
      throw std::invalid_argument("encoder_forward: token sets must be [n, d_model]");
    }
    rows += t.dim(0);
  }
  EncoderCache c;
  query_range(cfg, queries, c.query_offset, c.query_count);
  c.n_image_rows = rows;
  c.n = rows + 1 + c.query_count;
  c.cond = condition;
  const int d = cfg.d_model;
  c.x0.assign(static_cast<size_t>(c.n) * d, 0.0);
  int at = 0;
  for (const Tensor& t : token_sets) {
    std::memcpy(c.x0.data() + static_cast<size_t>(at) * d, t.ptr(),
                sizeof(double) * t.data.size());
    at += t.dim(0);
  }
  std::memcpy(c.x0.data() + static_cast<size_t>(rows) * d,
              params.cond_emb.ptr() + static_cast<size_t>(condition) * d,
              sizeof(double) * d);
  for (int qi = 0; qi < c.query_count; ++qi) {
    double* row = c.x0.data() + static_cast<size_t>(rows + 1 + qi) * d;
    std::memcpy(row, params.query_emb.ptr() + static_cast<size_t>(c.query_offset + qi) * d,
                sizeof(double) * d);
    axpy(row, params.cond_emb.ptr() + static_cast<size_t>(condition) * d, 1.0, d);
  }
  encoder_blocks_fwd(params, c);
  Tensor out({c.query_count, d});
  std::memcpy(out.ptr(), query_rows(c, d), sizeof(double) * out.data.size());
  return out;
}

StageOut stage1_forward(const ModelParams& params, const Image& image, int condition) {
  EncoderCache c;
  encoder_fwd_images(params, {&image}, condition, QuerySet::box, c);
  StageOut out;
  out.seq_len = c.n;
  std::vector<double> logits;
  token_head_fwd(params, query_rows(c, params.config.d_model), params.config.box_slots,
                 logits);
  out.logits = Tensor({params.config.box_slots, params.config.n_bins});
  out.logits.data = std::move(logits);
  return out;
}

StageOut stage2_forward(const ModelParams& params, const Image& full, const Image* crop,
                        int condition) {
  EncoderCache c;
  std::vector<const Image*> images{&full};
  if (crop != nullptr) images.push_back(crop);
  encoder_fwd_images(params, images, condition, QuerySet::grasp, c);
  StageOut out;
  out.seq_len = c.n;
  const double* qrows = query_rows(c, params.config.d_model);
  if (params.config.head_kind == HeadKind::token) {
    std::vector<double> logits;
    token_head_fwd(params, qrows, params.config.grasp_slots, logits);
    out.logits = Tensor({params.config.grasp_slots, params.config.n_bins});
    out.logits.data = std::move(logits);
  } else {
    RegCache rc;
    reg_head_fwd(params, qrows, params.config.grasp_slots, rc);
    out.values = Tensor({params.config.grasp_slots});
    out.values.data = rc.val;
  }
  return out;
}

double loss_total(const StageOut& stage1, const StageOut& stage2,
                  const BoxTokens& box_target, const GraspTarget& grasp_target,
                  double lambda, HeadKind head) {
  const int n_bins = stage1.logits.dim(1);
  const double lb = ce_slots(stage1.logits.ptr(), stage1.logits.dim(0), n_bins,
                             box_target.bins.data(), 0.0, nullptr);
  double lg = 0.0;
  if (head == HeadKind::token) {
    lg = ce_slots(stage2.logits.ptr(), stage2.logits.dim(0), n_bins,
                  grasp_target.tokens.bins.data(), 0.0, nullptr);
  } else {
    const int slots = stage2.values.dim(0);
    for (int s = 0; s < slots; ++s) {
      lg += std::abs(stage2.values.ptr()[s] - grasp_target.norm[s]);
    }
    lg /= slots;
  }
  return lg + lambda * lb;
}

// ---------------------------------------------------------------------------
// Batch loss / backward
// ---------------------------------------------------------------------------

namespace {

double example_loss_and_grad(const ModelParams& p, const TrainExample& ex,
                             double lambda, double scale, ModelParams* g) {
  const ModelConfig& cfg = p.config;
  const int d = cfg.d_model;

  // Stage 1: box tokens from the full view.
  EncoderCache c1;
  encoder_fwd_images(p, {&ex.full}, ex.detect_cond, QuerySet::box, c1);
  std::vector<double> logits1;
  token_head_fwd(p, query_rows(c1, d), cfg.box_slots, logits1);
  std::vector<double> dlogits1;
  if (g != nullptr) dlogits1.resize(logits1.size());
  const double lb = ce_slots(logits1.data(), cfg.box_slots, cfg.n_bins,
                             ex.box_target.bins.data(), scale * lambda,
                             g != nullptr ? dlogits1.data() : nullptr);
  if (g != nullptr) {
    std::vector<double> dq1(static_cast<size_t>(cfg.box_slots) * d, 0.0);
    linear_bwd(query_rows(c1, d), dlogits1.data(), cfg.box_slots, d, cfg.n_bins,
               p.lm_w, dq1.data(), g->lm_w, g->lm_b);
    encoder_bwd(p, c1, dq1.data(), *g);
  }

  // Stage 2: grasp from full view plus (in vcot mode) the zoomed crop.
  EncoderCache c2;
  std::vector<const Image*> images{&ex.full};
  if (ex.has_crop) images.push_back(&ex.crop);
  encoder_fwd_images(p, images, ex.grasp_cond, QuerySet::grasp, c2);
  const double* q2 = query_rows(c2, d);

  double lg = 0.0;
  if (cfg.head_kind == HeadKind::token) {
    std::vector<double> logits2;
    token_head_fwd(p, q2, cfg.grasp_slots, logits2);
    std::vector<double> dlogits2;
    if (g != nullptr) dlogits2.resize(logits2.size());
    lg = ce_slots(logits2.data(), cfg.grasp_slots, cfg.n_bins,
                  ex.grasp_target.tokens.bins.data(), scale,
                  g != nullptr ? dlogits2.data() : nullptr);
    if (g != nullptr) {
      std::vector<double> dq2(static_cast<size_t>(cfg.grasp_slots) * d, 0.0);
      linear_bwd(q2, dlogits2.data(), cfg.grasp_slots, d, cfg.n_bins, p.lm_w,
                 dq2.data(), g->lm_w, g->lm_b);
      encoder_bwd(p, c2, dq2.data(), *g);
    }
  } else {
    RegCache rc;
    reg_head_fwd(p, q2, cfg.grasp_slots, rc);
    std::vector<double> du(cfg.grasp_slots, 0.0);
    lg = l1_slots(rc, ex.grasp_target.norm, scale, g != nullptr ? du.data() : nullptr);
    if (g != nullptr) {
      // u = h_act . reg_w2 + reg_b2, per slot
      std::vector<double> dh_act(static_cast<size_t>(cfg.grasp_slots) * d, 0.0);
      for (int s = 0; s < cfg.grasp_slots; ++s) {
        g->reg_b2.ptr()[0] += du[s];
        axpy(g->reg_w2.ptr(), rc.h_act.data() + static_cast<size_t>(s) * d, du[s], d);
        axpy(dh_act.data() + static_cast<size_t>(s) * d, p.reg_w2.ptr(), du[s], d);
      }
      std::vector<double> dh_pre(dh_act.size());
      for (size_t i = 0; i < dh_act.size(); ++i) {
        dh_pre[i] = dh_act[i] * gelu_grad(rc.h_pre[i]);
      }
      std::vector<double> dq2(static_cast<size_t>(cfg.grasp_slots) * d, 0.0);
      linear_bwd(q2, dh_pre.data(), cfg.grasp_slots, d, d, p.reg_w1, dq2.data(),
                 g->reg_w1, g->reg_b1);
      encoder_bwd(p, c2, dq2.data(), *g);
    }
  }
  return lg + lambda * lb;
}

}  // namespace

double batch_loss(const ModelParams& params, std::span<const TrainExample> batch,
                  double lambda) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  for (const TrainExample& ex : batch) {
    total += example_loss_and_grad(params, ex, lambda, 0.0, nullptr);
  }
  return total / static_cast<double>(batch.size());
}

BackwardResult backward(const ModelParams& params, std::span<const TrainExample> batch,
                        double lambda) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult res;
  res.grads = ModelParams::zeros(params.config);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    res.loss += example_loss_and_grad(params, ex, lambda, scale, &res.grads);
  }
  res.loss *= scale;
  for (const auto& [name, t] : res.grads.named_tensors()) {
    for (double v : t->data) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("backward: non-finite gradient in " + name);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ModelConfig& cfg, uint64_t seed, int min_coords,
                           double eps, double tol) {
  cfg.validate();
  Rng rng(mix_seed({seed, 0x66ADCULL}));

  auto random_image = [&](int side) {
    Image img(side, side, 3);
    for (uint8_t& b : img.data) b = static_cast<uint8_t>(rng.uniform_int(256));
    return img;
  };
  auto random_example = [&](bool with_crop) {
    TrainExample ex;
    ex.full = random_image(cfg.image_side);
    ex.has_crop = with_crop;
    if (with_crop) ex.crop = random_image(cfg.image_side);
    ex.detect_cond = rng.uniform_int(cfg.n_conditions);
    ex.grasp_cond = rng.uniform_int(cfg.n_conditions);
    for (int& b : ex.box_target.bins) b = rng.uniform_int(cfg.n_bins);
    for (int& b : ex.grasp_target.tokens.bins) b = rng.uniform_int(cfg.n_bins);
    for (double& v : ex.grasp_target.norm) v = rng.uniform();
    return ex;
  };
  // One example per pipeline mode so both sequence layouts get covered.
  std::vector<TrainExample> batch{random_example(true), random_example(false)};
  const double lambda = 1.0;

  ModelParams params = ModelParams::init(cfg);
  const BackwardResult analytic = backward(params, batch, lambda);

  auto tensors = params.named_tensors();
  auto grads = analytic.grads.named_tensors();

  std::vector<std::pair<int, int64_t>> coords;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    coords.emplace_back(static_cast<int>(ti),
                        static_cast<int64_t>(rng.uniform_int(
                            static_cast<int>(tensors[ti].second->size()))));
  }
  while (static_cast<int>(coords.size()) < min_coords) {
    const int ti = rng.uniform_int(static_cast<int>(tensors.size()));
    coords.emplace_back(ti, static_cast<int64_t>(rng.uniform_int(
                                static_cast<int>(tensors[ti].second->size()))));
  }

  GradCheckReport report;
  report.n_checked = static_cast<int>(coords.size());
  for (const auto& [ti, idx] : coords) {
    double& slot = tensors[ti].second->data[static_cast<size_t>(idx)];
    const double saved = slot;
    slot = saved + eps;
    const double up = batch_loss(params, batch, lambda);
    slot = saved - eps;
    const double down = batch_loss(params, batch, lambda);
    slot = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double an = grads[ti].second->data[static_cast<size_t>(idx)];
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
    const double rel = std::abs(an - fd) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = {tensors[ti].first, idx, an, fd, rel};
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

namespace {

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace

BoxTokens NetPolicy::predict_box(const Image& full, int detect_cond) const {
  const StageOut out = stage1_forward(*params_, full, detect_cond);
  BoxTokens t;
  for (int s = 0; s < 4; ++s) {
    t.bins[s] = argmax_row(out.logits.ptr() + static_cast<size_t>(s) * out.logits.dim(1),
                           out.logits.dim(1));
  }
  return t;
}

GraspRect NetPolicy::predict_grasp(const Image& full, const Image* crop,
                                   int grasp_cond) const {
  if ((crop != nullptr) != (mode_ == PipelineMode::vcot)) {
    throw std::runtime_error("NetPolicy: pipeline mode mismatch");
  }
  const StageOut out = stage2_forward(*params_, full, crop, grasp_cond);
  const double fw = crop != nullptr ? crop->width : full.width;
  const double fh = crop != nullptr ? crop->height : full.height;
  if (params_->config.head_kind == HeadKind::token) {
    GraspTokens t;
    for (int s = 0; s < 5; ++s) {
      t.bins[s] = argmax_row(out.logits.ptr() + static_cast<size_t>(s) * out.logits.dim(1),
                             out.logits.dim(1));
    }
    return decode_grasp(t, fw, fh);
  }
  const double* v = out.values.ptr();
  return GraspRect(v[0] * fw, v[1] * fh, std::max(v[2] * fw, 1e-6),
                   std::max(v[3] * fh, 1e-6), v[4] * kAngleRange);
}

}  // namespace graspbench
