#include <cmath>
#include <numbers>

#include "sift/lm.hpp"

namespace sift::model {

Matrix FrozenLM::forward(const Matrix& inputs) const {
  const Matrix h = hidden(inputs, nullptr);
  std::vector<int> rows(static_cast<std::size_t>(h.rows()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return logits(h, rows);
}

namespace {

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  return m;
}

// Row-wise causal softmax of scores with an ALiBi distance penalty.
Matrix causal_softmax(const Matrix& scores, double slope) {
  const Eigen::Index L = scores.rows();
  Matrix a = Matrix::Zero(L, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s <= t; ++s) {
      a(t, s) = scores(t, s) - slope * static_cast<double>(t - s);
      mx = std::max(mx, a(t, s));
    }
    double z = 0.0;
    for (Eigen::Index s = 0; s <= t; ++s) {
      a(t, s) = std::exp(a(t, s) - mx);
      z += a(t, s);
    }
    for (Eigen::Index s = 0; s <= t; ++s) a(t, s) /= z;
  }
  return a;
}

}  // namespace

struct ToyLM::Saved final : Activations {
  struct HeadState {
    Matrix q, k, v, a;
  };
  struct LayerState {
    Matrix x;  // layer input
    std::vector<HeadState> heads;
    Matrix pre;  // MLP pre-activation
  };
  std::vector<LayerState> layers;
};

ToyLM::ToyLM(const ToyLMConfig& config)
    : config_(config), tokenizer_(config.lexicon, config.byte_fallback), d_(config.d_model) {
  if (d_ < 2) throw InvalidSpec("ToyLM d_model must be >= 2");
  Rng rng(derive_seed(config.seed, {0x746f796c6dULL}));
  if (config.kind == ToyLMKind::induction) {
    build_induction(rng);
  } else {
    build_random(rng);
  }
}

void ToyLM::build_induction(Rng& rng) {
  const int m = config_.position_pairs;
  const int dt = (d_ - 1 - 2 * m) / 2;
  if (m < 1 || dt < 2)
    throw InvalidSpec("induction ToyLM needs d_model >= 5 + 2*position_pairs (got d_model " + std::to_string(d_) + ")");
  // Subspaces: [0] role flag, T token identity, Pv copied tokens, P positions.
  const int T = 1, Pv = 1 + dt, P = 1 + 2 * dt;
  const int V = tokenizer_.size();
  const auto& sp = tokenizer_.specials();

  embeddings_ = Matrix::Zero(V, d_);
  for (int v = 0; v < V; ++v) {
    RowVector e(dt);
    for (int i = 0; i < dt; ++i) e[i] = rng.normal();
    embeddings_.row(v).segment(T, dt) = e / e.norm();
  }
  for (int role : {sp.role_system, sp.role_user, sp.role_assistant}) embeddings_(role, 0) = 1.0;

  positions_ = Matrix::Zero(kMaxPositions, d_);
  for (int t = 0; t < kMaxPositions; ++t)
    for (int j = 0; j < m; ++j) {
      const double w = std::numbers::pi / std::ldexp(1.0, j);
      positions_(t, P + 2 * j) = std::cos(w * t);
      positions_(t, P + 2 * j + 1) = std::sin(w * t);
    }

  auto blank_head = [&] {
    Head h;
    h.wq = Matrix::Zero(d_, d_);
    h.wk = Matrix::Zero(d_, d_);
    h.wv = Matrix::Zero(d_, d_);
    h.wo = Matrix::Identity(d_, d_);
    h.bq = RowVector::Zero(d_);
    return h;
  };

  // Layer 1: each position attends to its predecessor (the query is the
  // position rotated back by one step) and stores that token, scaled, in Pv.
  Head prev = blank_head();
  const double beta = config_.position_gain;
  for (int j = 0; j < m; ++j) {
    const double w = std::numbers::pi / std::ldexp(1.0, j);
    const int c = P + 2 * j, s = c + 1;
    prev.wq(c, c) = beta * std::cos(w);
    prev.wq(s, c) = beta * std::sin(w);
    prev.wq(c, s) = -beta * std::sin(w);
    prev.wq(s, s) = beta * std::cos(w);
    prev.wk(c, c) = 1.0;
    prev.wk(s, s) = 1.0;
  }
  for (int i = 0; i < dt; ++i) prev.wv(T + i, Pv + i) = config_.prev_scale;
  prev.slope = config_.position_slope;

  // Layer 2: the current token looks for the position whose predecessor equals
  // it and copies that position's token into Pv. Role tokens also look for the
  // token that followed the user marker, which starts the response.
  Head ind = blank_head();
  const double gamma = config_.match_gain;
  for (int i = 0; i < dt; ++i) {
    ind.wq(T + i, Pv + i) = gamma;
    ind.wq(0, Pv + i) = gamma * config_.start_gain * embeddings_(sp.role_user, T + i);
    ind.wk(Pv + i, Pv + i) = 1.0 / config_.prev_scale;
    ind.wv(T + i, Pv + i) = 1.0;
  }
  ind.slope = config_.recency_slope;

  layers_.resize(2);
  layers_[0].heads = {prev};
  layers_[1].heads = {ind};

  // Read-out compares the copied content in Pv with every token.
  unembed_ = Matrix::Zero(V, d_);
  unembed_.middleCols(Pv, dt) = config_.logit_scale * embeddings_.middleCols(T, dt);
  out_bias_ = RowVector::Zero(V);
}

void ToyLM::build_random(Rng& rng) {
  if (config_.layers < 1 || config_.heads < 1 || config_.d_ff < 0) throw InvalidSpec("random ToyLM needs layers, heads >= 1");
  const int V = tokenizer_.size();
  const double sd = config_.init_scale / std::sqrt(static_cast<double>(d_));
  embeddings_ = gaussian(rng, V, d_, 1.0 / std::sqrt(static_cast<double>(d_)));
  positions_ = gaussian(rng, kMaxPositions, d_, 0.1);
  layers_.resize(static_cast<std::size_t>(config_.layers));
  for (Layer& layer : layers_) {
    for (int h = 0; h < config_.heads; ++h) {
      Head hd;
      hd.wq = gaussian(rng, d_, d_, sd * 3.0);
      hd.wk = gaussian(rng, d_, d_, sd * 3.0);
      hd.wv = gaussian(rng, d_, d_, sd);
      hd.wo = gaussian(rng, d_, d_, sd);
      hd.bq = gaussian(rng, 1, d_, sd);
      hd.slope = rng.uniform(0.0, 0.5);
      layer.heads.push_back(std::move(hd));
    }
    if (config_.d_ff > 0) {
      layer.w1 = gaussian(rng, d_, config_.d_ff, sd * 2.0);
      layer.b1 = gaussian(rng, 1, config_.d_ff, 0.1);
      layer.w2 = gaussian(rng, config_.d_ff, d_, config_.init_scale / std::sqrt(static_cast<double>(config_.d_ff)));
      layer.b2 = gaussian(rng, 1, d_, 0.1);
    }
  }
  unembed_ = gaussian(rng, V, d_, 2.0);
  out_bias_ = gaussian(rng, 1, V, 0.5);
}

Matrix ToyLM::embed(std::span<const int> ids) const {
  Matrix out(static_cast<Eigen::Index>(ids.size()), d_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tokenizer_.size()) throw TemplateError("token id out of range");
    out.row(static_cast<Eigen::Index>(i)) = embeddings_.row(ids[i]);
  }
  return out;
}

Matrix ToyLM::hidden(const Matrix& inputs, std::unique_ptr<Activations>* saved) const {
  const Eigen::Index L = inputs.rows();
  if (inputs.cols() != d_) throw DimMismatch("ToyLM input width " + std::to_string(inputs.cols()));
  if (L > kMaxPositions) throw DecodeBudgetExceeded("sequence longer than " + std::to_string(kMaxPositions));
  auto s = std::make_unique<Saved>();
  Matrix x = inputs + positions_.topRows(L);
  for (const Layer& layer : layers_) {
    Saved::LayerState st;
    st.x = x;
    for (const Head& hd : layer.heads) {
      Saved::HeadState hs;
      hs.q = (st.x * hd.wq).rowwise() + hd.bq;
      hs.k = st.x * hd.wk;
      hs.v = st.x * hd.wv;
      hs.a = causal_softmax(hs.q * hs.k.transpose(), hd.slope);
      x.noalias() += (hs.a * hs.v) * hd.wo;
      st.heads.push_back(std::move(hs));
    }
    if (layer.w1.size() > 0) {
      st.pre = (x * layer.w1).rowwise() + layer.b1;
      x += (st.pre.cwiseMax(0.0) * layer.w2).rowwise() + layer.b2;
    }
    s->layers.push_back(std::move(st));
  }
  if (saved) *saved = std::move(s);
  return x;
}

Matrix ToyLM::logits(const Matrix& hidden_states, std::span<const int> rows) const {
  Matrix sel(static_cast<Eigen::Index>(rows.size()), d_);
  for (std::size_t i = 0; i < rows.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = hidden_states.row(rows[i]);
  Matrix out = sel * unembed_.transpose();
  out.rowwise() += out_bias_;
  return out;
}

Matrix ToyLM::backward_logits(std::size_t length, std::span<const int> rows, const Matrix& d_logits) const {
  Matrix dz = Matrix::Zero(static_cast<Eigen::Index>(length), d_);
  const Matrix sel = d_logits * unembed_;
  for (std::size_t i = 0; i < rows.size(); ++i) dz.row(rows[i]) += sel.row(static_cast<Eigen::Index>(i));
  return dz;
}

Matrix ToyLM::backward_hidden(const Activations& saved, const Matrix& d_hidden) const {
  const auto& s = dynamic_cast<const Saved&>(saved);
  Matrix dx = d_hidden;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const Saved::LayerState& st = s.layers[l];
    if (layer.w1.size() > 0) {
      const Matrix relu_mask = (st.pre.array() > 0.0).cast<double>().matrix();
      const Matrix d_pre = (dx * layer.w2.transpose()).cwiseProduct(relu_mask);
      dx.noalias() += d_pre * layer.w1.transpose();
    }
    Matrix d_in = dx;
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const Head& hd = layer.heads[h];
      const Saved::HeadState& hs = st.heads[h];
      const Matrix dh = dx * hd.wo.transpose();
      const Matrix da = dh * hs.v.transpose();
      const Matrix dv = hs.a.transpose() * dh;
      // Softmax backward, row-wise: dS = A o (dA - sum(dA o A)).
      const Vector row_dot = da.cwiseProduct(hs.a).rowwise().sum();
      const Matrix ds = hs.a.cwiseProduct(da.colwise() - row_dot);
      const Matrix dq = ds * hs.k;
      const Matrix dk = ds.transpose() * hs.q;
      d_in.noalias() += dq * hd.wq.transpose();
      d_in.noalias() += dk * hd.wk.transpose();
      d_in.noalias() += dv * hd.wv.transpose();
    }
    dx = std::move(d_in);
  }
  return dx;
}

bool ToyLM::generable(int id) const {
  if (id == tokenizer_.specials().im_end) return true;
  return !tokenizer_.is_special(id) && !tokenizer_.is_byte(id);
}

std::string ToyLM::param_hash() const {
  ByteWriter w;
  w.matrix(embeddings_);
  w.matrix(positions_);
  for (const Layer& layer : layers_) {
    for (const Head& h : layer.heads) {
      w.matrix(h.wq);
      w.matrix(h.wk);
      w.matrix(h.wv);
      w.matrix(h.wo);
      w.vector(h.bq.transpose());
      w.f64(h.slope);
    }
    w.matrix(layer.w1);
    w.vector(layer.b1.transpose());
    w.matrix(layer.w2);
    w.vector(layer.b2.transpose());
  }
  w.matrix(unembed_);
  w.vector(out_bias_.transpose());
  return to_hex(sha256(w.bytes()));
}

}  // namespace sift::model
