#include "graphnav/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "graphnav/errors.hpp"

namespace graphnav::decoder {

void DecoderConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("decoder: n_blocks must be >= 1");
  if (n_heads < 1) throw ConfigError("decoder: n_heads must be >= 1");
  if (d_model % n_heads != 0) throw ConfigError("decoder: d_model not divisible by n_heads");
  if (d_enc < 1) throw ConfigError("decoder: d_enc must be >= 1");
  if (max_timesteps < 1) throw ConfigError("decoder: max_timesteps must be >= 1");
  if (context_timesteps < 0 || context_timesteps > max_timesteps)
    throw ConfigError("decoder: context_timesteps must lie in [0, max_timesteps]");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("decoder: dropout must be in [0, 1)");
}

std::vector<uint8_t> causal_mask(int n_tokens) {
  if (n_tokens < 1) throw std::invalid_argument("causal_mask: need at least one token");
  std::vector<uint8_t> mask(static_cast<size_t>(n_tokens) * n_tokens, 0);
  for (int i = 0; i < n_tokens; ++i)
    for (int j = i + 1; j < n_tokens; ++j)
      mask[static_cast<size_t>(i) * n_tokens + j] = 1;
  return mask;
}

DecoderModel::DecoderModel(const DecoderConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  // n_blocks = 0 is allowed here (identity stack, useful in tests); full
  // config validation happens at config load.
  if (cfg_.d_model % cfg_.n_heads != 0)
    throw ConfigError("decoder: d_model not divisible by n_heads");
  Rng rng(seed_combine(init_seed, 0x6d6f64656cULL));  // "model"
  const int d = cfg_.d_model, de = cfg_.d_enc;
  const double sd = 0.02;

  triplet_.w_r = store_.create_randn("embed.w_r", {1, d}, sd, rng);
  triplet_.b_r = store_.create_zeros("embed.b_r", {d});
  triplet_.w_s = store_.create_randn("embed.w_s", {de, d}, sd, rng);
  triplet_.b_s = store_.create_zeros("embed.b_s", {d});
  triplet_.w_a = store_.create_randn("embed.w_a", {de, d}, sd, rng);
  triplet_.b_a = store_.create_zeros("embed.b_a", {d});
  triplet_.stop_vector = store_.create_randn("embed.stop", {1, de}, 1.0, rng);
  triplet_.timestep = store_.create_randn("embed.timestep", {cfg_.max_timesteps, d}, sd, rng);

  blocks_.resize(static_cast<size_t>(cfg_.n_blocks));
  for (int l = 0; l < cfg_.n_blocks; ++l) {
    auto& b = blocks_[static_cast<size_t>(l)];
    const std::string p = "block" + std::to_string(l) + ".";
    b.ln1_g = store_.create_full(p + "ln1.g", {d}, 1.0);
    b.ln1_b = store_.create_zeros(p + "ln1.b", {d});
    b.wq = store_.create_randn(p + "attn.wq", {d, d}, sd, rng);
    b.bq = store_.create_zeros(p + "attn.bq", {d});
    b.wk = store_.create_randn(p + "attn.wk", {d, d}, sd, rng);
    b.bk = store_.create_zeros(p + "attn.bk", {d});
    b.wv = store_.create_randn(p + "attn.wv", {d, d}, sd, rng);
    b.bv = store_.create_zeros(p + "attn.bv", {d});
    b.wo = store_.create_randn(p + "attn.wo", {d, d}, sd, rng);
    b.bo = store_.create_zeros(p + "attn.bo", {d});
    b.ln2_g = store_.create_full(p + "ln2.g", {d}, 1.0);
    b.ln2_b = store_.create_zeros(p + "ln2.b", {d});
    b.mlp_w1 = store_.create_randn(p + "mlp.w1", {d, 4 * d}, sd, rng);
    b.mlp_b1 = store_.create_zeros(p + "mlp.b1", {4 * d});
    b.mlp_w2 = store_.create_randn(p + "mlp.w2", {4 * d, d}, sd, rng);
    b.mlp_b2 = store_.create_zeros(p + "mlp.b2", {d});
  }

  head_.ln_g = store_.create_full("head.ln.g", {d}, 1.0);
  head_.ln_b = store_.create_zeros("head.ln.b", {d});
  head_.w_c = store_.create_randn("head.w_c", {de, d}, sd, rng);
  head_.b_c = store_.create_zeros("head.b_c", {d});
  head_.w1 = store_.create_randn("head.w1", {d, d}, sd, rng);
  head_.b1 = store_.create_zeros("head.b1", {d});
  head_.w2 = store_.create_randn("head.w2", {d, 1}, sd, rng);
  head_.b2 = store_.create_zeros("head.b2", {1});
}

tensor::Tensor DecoderModel::forward_hidden(tensor::Graph& g,
                                            const std::vector<ModelStep>& steps,
                                            bool include_trailing_action, bool train_mode,
                                            Rng* dropout_rng) const {
  if (steps.empty()) throw std::invalid_argument("forward_hidden: empty step sequence");
  const int T = static_cast<int>(steps.size());
  if (T > cfg_.effective_context())
    throw std::invalid_argument("forward_hidden: sequence exceeds the context window");

  embed::TripletInputs in;
  in.rtg.reserve(static_cast<size_t>(T));
  in.state_tokens.reserve(static_cast<size_t>(T));
  in.action_choices.reserve(static_cast<size_t>(T));
  in.timesteps.reserve(static_cast<size_t>(T));
  static const embed::FusedState pending = embed::stop_candidate(1);
  for (int t = 0; t < T; ++t) {
    const auto& st = steps[static_cast<size_t>(t)];
    in.rtg.push_back(st.rtg);
    in.state_tokens.push_back(st.features.state_token);
    if (st.action_index >= 0) {
      if (st.action_index >= static_cast<int>(st.features.candidates.size()))
        throw std::invalid_argument("forward_hidden: action index outside candidate set");
      in.action_choices.push_back(&st.features.candidates[static_cast<size_t>(st.action_index)]);
    } else {
      if (t != T - 1 || include_trailing_action)
        throw std::invalid_argument("forward_hidden: missing action inside the sequence");
      in.action_choices.push_back(&pending);  // sliced off below
    }
    in.timesteps.push_back(st.timestep);
  }

  auto tokens = embed::embed_triplets(g, triplet_, in);  // {3T, d}
  const int n = include_trailing_action ? 3 * T : 3 * T - 1;
  if (n < tokens->shape[0]) tokens = g.slice_rows(tokens, 0, n);

  const bool use_dropout = train_mode && cfg_.dropout > 0.0;
  if (use_dropout) {
    if (dropout_rng == nullptr)
      throw std::invalid_argument("forward_hidden: dropout enabled but no rng supplied");
    tokens = g.dropout(tokens, cfg_.dropout, *dropout_rng);
  }

  const auto mask = causal_mask(n);
  const int dh = cfg_.d_model / cfg_.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  auto h = tokens;
  for (const auto& blk : blocks_) {
    auto a_in = g.layer_norm(h, blk.ln1_g, blk.ln1_b);
    auto q = g.add(g.matmul(a_in, blk.wq), blk.bq);
    auto k = g.add(g.matmul(a_in, blk.wk), blk.bk);
    auto v = g.add(g.matmul(a_in, blk.wv), blk.bv);
    std::vector<tensor::Tensor> heads;
    heads.reserve(static_cast<size_t>(cfg_.n_heads));
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
      auto qh = g.slice_cols(q, hd * dh, (hd + 1) * dh);
      auto kh = g.slice_cols(k, hd * dh, (hd + 1) * dh);
      auto vh = g.slice_cols(v, hd * dh, (hd + 1) * dh);
      auto scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);
      auto probs = g.softmax(g.masked_fill(scores, mask, neg_inf));
      if (use_dropout) probs = g.dropout(probs, cfg_.dropout, *dropout_rng);
      heads.push_back(g.matmul(probs, vh));
    }
    auto attn = g.add(g.matmul(g.concat_cols(heads), blk.wo), blk.bo);
    if (use_dropout) attn = g.dropout(attn, cfg_.dropout, *dropout_rng);
    h = g.add(h, attn);

    auto m_in = g.layer_norm(h, blk.ln2_g, blk.ln2_b);
    auto mid = g.gelu(g.add(g.matmul(m_in, blk.mlp_w1), blk.mlp_b1));
    auto mlp = g.add(g.matmul(mid, blk.mlp_w2), blk.mlp_b2);
    if (use_dropout) mlp = g.dropout(mlp, cfg_.dropout, *dropout_rng);
    h = g.add(h, mlp);
  }
  return h;
}

tensor::Tensor DecoderModel::action_logits(tensor::Graph& g, const tensor::Tensor& h,
                                           int step_index,
                                           const std::vector<embed::FusedState>& candidates) const {
  if (candidates.empty()) throw std::invalid_argument("action_logits: empty candidate list");
  const int pos = 3 * step_index + 1;
  if (pos >= h->shape[0])
    throw std::invalid_argument("action_logits: step has no state token in h");
  const int k = static_cast<int>(candidates.size());

  auto h_state = g.layer_norm(g.slice_rows(h, pos, pos + 1), head_.ln_g, head_.ln_b);

  // Candidate matrix {k, d_enc}; the STOP row is the learned stop vector.
  std::vector<tensor::Tensor> rows;
  rows.reserve(static_cast<size_t>(k));
  for (const auto& c : candidates) {
    if (c.is_stop_candidate) {
      rows.push_back(triplet_.stop_vector);
    } else {
      if (static_cast<int>(c.s.size()) != cfg_.d_enc)
        throw std::invalid_argument("action_logits: candidate dimension mismatch");
      rows.push_back(tensor::make_tensor({1, cfg_.d_enc}, c.s));
    }
  }
  auto cand = g.add(g.matmul(g.concat_rows(rows), head_.w_c), head_.b_c);  // {k, d}

  auto h_rep = g.gather_rows(h_state, std::vector<int>(static_cast<size_t>(k), 0));
  auto fused = g.mul(h_rep, cand);
  auto hid = g.gelu(g.add(g.matmul(fused, head_.w1), head_.b1));
  auto logits = g.add(g.matmul(hid, head_.w2), head_.b2);  // {k, 1}
  return g.reshape(logits, {1, k});
}

namespace {

// Window of the last K steps ending at the sequence tail.
template <typename Vec>
std::vector<ModelStep> window_tail(const Vec& steps, int k_ctx) {
  const int T = static_cast<int>(steps.size());
  const int lo = std::max(0, T - k_ctx);
  return std::vector<ModelStep>(steps.begin() + lo, steps.end());
}

}  // namespace

tensor::Tensor DecoderModel::sequence_nll(tensor::Graph& g,
                                          const std::vector<ModelStep>& steps,
                                          bool train_mode, Rng* dropout_rng) const {
  return sequence_losses(g, steps, train_mode, dropout_rng, false).nll;
}

DecoderModel::SequenceLosses DecoderModel::sequence_losses(
    tensor::Graph& g, const std::vector<ModelStep>& steps, bool train_mode,
    Rng* dropout_rng, bool with_entropy) const {
  if (steps.empty()) throw std::invalid_argument("sequence_losses: empty trajectory");
  const int T = static_cast<int>(steps.size());
  for (const auto& st : steps)
    if (st.action_index < 0)
      throw std::invalid_argument("sequence_losses: trajectory has a pending action");

  const int k_ctx = cfg_.effective_context();
  std::vector<tensor::Tensor> losses, entropies;
  losses.reserve(static_cast<size_t>(T));
  auto score_step = [&](const tensor::Tensor& h, int row, const ModelStep& st) {
    auto logits = action_logits(g, h, row, st.features.candidates);
    losses.push_back(g.cross_entropy_with_logits(logits, st.action_index));
    if (with_entropy) entropies.push_back(g.entropy_from_logits(logits));
  };
  if (T <= k_ctx) {
    auto h = forward_hidden(g, steps, true, train_mode, dropout_rng);
    for (int t = 0; t < T; ++t) score_step(h, t, steps[static_cast<size_t>(t)]);
  } else {
    // Sliding context window: one truncated pass per step.
    for (int t = 0; t < T; ++t) {
      std::vector<ModelStep> win(steps.begin() + std::max(0, t + 1 - k_ctx),
                                 steps.begin() + t + 1);
      auto h = forward_hidden(g, win, false, train_mode, dropout_rng);
      score_step(h, static_cast<int>(win.size()) - 1, steps[static_cast<size_t>(t)]);
    }
  }
  SequenceLosses out;
  out.nll = g.sum(g.concat_rows(losses));
  if (with_entropy) out.entropy = g.sum(g.concat_rows(entropies));
  return out;
}

double DecoderModel::sequence_log_likelihood(const std::vector<ModelStep>& steps) const {
  tensor::Graph g(false);
  auto nll = sequence_nll(g, steps, false, nullptr);
  return -nll->value[0];
}

ActionDistribution DecoderModel::action_distribution(
    const std::vector<ModelStep>& prefix) const {
  if (prefix.empty()) throw std::invalid_argument("action_distribution: empty prefix");
  auto win = window_tail(prefix, cfg_.effective_context());
  tensor::Graph g(false);
  auto h = forward_hidden(g, win, false, false, nullptr);
  const auto& cands = win.back().features.candidates;
  auto logits = action_logits(g, h, static_cast<int>(win.size()) - 1, cands);
  ActionDistribution dist;
  dist.logits = logits->value;
  auto probs = g.softmax(logits);
  dist.probs = probs->value;
  return dist;
}

int DecoderModel::sample_action(const std::vector<ModelStep>& prefix, double temperature,
                                SampleMode mode, Rng& rng) const {
  if (temperature <= 0.0) throw std::invalid_argument("sample_action: temperature must be > 0");
  auto dist = action_distribution(prefix);
  const int k = static_cast<int>(dist.logits.size());
  if (mode == SampleMode::kGreedy) {
    int best = 0;
    for (int i = 1; i < k; ++i)
      if (dist.logits[static_cast<size_t>(i)] > dist.logits[static_cast<size_t>(best)])
        best = i;  // strict >: ties keep the lowest index
    return best;
  }
  // Temperature-scaled softmax, then an inverse-CDF draw.
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : dist.logits) mx = std::max(mx, l / temperature);
  std::vector<double> p(static_cast<size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    p[static_cast<size_t>(i)] = std::exp(dist.logits[static_cast<size_t>(i)] / temperature - mx);
    sum += p[static_cast<size_t>(i)];
  }
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += p[static_cast<size_t>(i)];
    if (u < acc) return i;
  }
  return k - 1;
}

}  // namespace graphnav::decoder
