#include "graphnav/embed.hpp"

#include <cmath>

#include "graphnav/errors.hpp"

namespace graphnav::embed {

namespace {
constexpr uint64_t kTokenTag = 0x746f6bULL;   // "tok"
constexpr uint64_t kPosTag = 0x706f73ULL;     // "pos"
constexpr uint64_t kViewTag = 0x76696577ULL;  // "view"
}  // namespace

SyntheticEncoders::SyntheticEncoders(int d_enc, int d_raw, int vocab_size, uint64_t seed)
    : d_enc_(d_enc), d_raw_(d_raw), vocab_(vocab_size) {
  if (d_enc < 1 || d_raw < 1 || vocab_size < 1)
    throw std::invalid_argument("SyntheticEncoders: bad dimensions");
  {
    Rng rng(seed_combine(seed, kTokenTag));
    token_table_.resize(static_cast<size_t>(vocab_) * d_enc_);
    for (auto& v : token_table_) v = rng.normal();
  }
  {
    Rng rng(seed_combine(seed, kPosTag));
    pos_codes_.resize(static_cast<size_t>(kMaxInstructionTokens) * d_enc_);
    for (auto& v : pos_codes_) v = rng.u64() & 1 ? 1.0 : -1.0;
  }
  {
    Rng rng(seed_combine(seed, kViewTag));
    w_view_.resize(static_cast<size_t>(d_enc_) * d_raw_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_raw_));
    for (auto& v : w_view_) v = scale * rng.normal();
    b_view_.resize(static_cast<size_t>(d_enc_));
    for (auto& v : b_view_) v = 0.1 * rng.normal();
  }
}

std::vector<double> SyntheticEncoders::embed_instruction(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("embed_instruction: empty token sequence");
  if (static_cast<int>(tokens.size()) > kMaxInstructionTokens)
    throw std::invalid_argument("embed_instruction: instruction too long");
  std::vector<double> x(static_cast<size_t>(d_enc_), 0.0);
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (tok < 0 || tok >= vocab_)
      throw std::invalid_argument("embed_instruction: token outside vocabulary");
    const double* e = token_table_.data() + static_cast<size_t>(tok) * d_enc_;
    const double* p = pos_codes_.data() + i * static_cast<size_t>(d_enc_);
    for (int j = 0; j < d_enc_; ++j) x[static_cast<size_t>(j)] += e[j] * p[j];
  }
  double norm = 0.0;
  for (double v : x) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-12) throw NumericalError("embed_instruction: degenerate zero pooling");
  const double target = std::sqrt(static_cast<double>(d_enc_));
  for (auto& v : x) v *= target / norm;
  return x;
}

std::vector<double> SyntheticEncoders::embed_view(const std::vector<double>& raw) const {
  if (static_cast<int>(raw.size()) != d_raw_)
    throw std::invalid_argument("embed_view: raw feature dimension mismatch");
  std::vector<double> out(static_cast<size_t>(d_enc_));
  for (int i = 0; i < d_enc_; ++i) {
    const double* row = w_view_.data() + static_cast<size_t>(i) * d_raw_;
    double acc = b_view_[static_cast<size_t>(i)];
    for (int j = 0; j < d_raw_; ++j) acc += row[j] * raw[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = std::tanh(acc);
  }
  return out;
}

FusedState fuse(const std::vector<double>& x_cls, const std::vector<double>& o_e,
                int view_index) {
  if (x_cls.size() != o_e.size())
    throw std::invalid_argument("fuse: dimension mismatch");
  FusedState f;
  f.view_index = view_index;
  f.s.resize(x_cls.size());
  for (size_t j = 0; j < x_cls.size(); ++j) f.s[j] = x_cls[j] * o_e[j];
  return f;
}

FusedState stop_candidate(int d_enc) {
  FusedState f;
  f.is_stop_candidate = true;
  f.s.assign(static_cast<size_t>(d_enc), 0.0);  // replaced by the learned stop vector
  return f;
}

std::vector<double> pool_state(const std::vector<FusedState>& fused_views) {
  if (fused_views.empty()) throw std::invalid_argument("pool_state: empty view list");
  std::vector<double> out(fused_views.front().s.size(), 0.0);
  for (const auto& f : fused_views) {
    if (f.s.size() != out.size()) throw std::invalid_argument("pool_state: ragged views");
    for (size_t j = 0; j < out.size(); ++j) out[j] += f.s[j];
  }
  const double inv = 1.0 / static_cast<double>(fused_views.size());
  for (auto& v : out) v *= inv;
  return out;
}

StepFeatures featurize_step(const SyntheticEncoders& enc, const std::vector<double>& x_cls,
                            const env::Observation& obs) {
  StepFeatures out;
  std::vector<FusedState> fused;
  fused.reserve(obs.views.size());
  for (size_t i = 0; i < obs.views.size(); ++i)
    fused.push_back(fuse(x_cls, enc.embed_view(obs.views[i].feature), static_cast<int>(i)));
  out.state_token = pool_state(fused);
  const auto actions = env::action_set(obs);
  out.candidates.reserve(static_cast<size_t>(actions.size()));
  out.candidates.push_back(stop_candidate(enc.d_enc()));
  for (int ai = 1; ai < actions.size(); ++ai)
    out.candidates.push_back(fused[static_cast<size_t>(actions.view_of(ai))]);
  return out;
}

tensor::Tensor embed_triplets(tensor::Graph& g, const TripletParams& p,
                              const TripletInputs& in) {
  const size_t T = in.rtg.size();
  if (T == 0) throw std::invalid_argument("embed_triplets: empty sequence");
  if (in.state_tokens.size() != T || in.action_choices.size() != T ||
      in.timesteps.size() != T)
    throw std::invalid_argument("embed_triplets: ragged step inputs");
  const int t_max = p.timestep->shape[0];
  for (int t : in.timesteps)
    if (t < 0 || t >= t_max)
      throw std::invalid_argument("embed_triplets: timestep outside the embedding table");
  const int d_enc = p.w_s->shape[0];

  std::vector<double> rtg_col(T), states_flat(T * static_cast<size_t>(d_enc));
  for (size_t t = 0; t < T; ++t) {
    rtg_col[t] = in.rtg[t];
    if (static_cast<int>(in.state_tokens[t].size()) != d_enc)
      throw std::invalid_argument("embed_triplets: state token dimension mismatch");
    std::copy(in.state_tokens[t].begin(), in.state_tokens[t].end(),
              states_flat.begin() + static_cast<long>(t) * d_enc);
  }
  auto rtg_t = tensor::make_tensor({static_cast<int>(T), 1}, std::move(rtg_col));
  auto states_t =
      tensor::make_tensor({static_cast<int>(T), d_enc}, std::move(states_flat));

  // Action inputs: chosen candidate's fused vector, or the learned stop
  // vector (kept on-graph so its gradient flows).
  std::vector<tensor::Tensor> action_rows;
  action_rows.reserve(T);
  for (size_t t = 0; t < T; ++t) {
    const FusedState* f = in.action_choices[t];
    if (f == nullptr) throw std::invalid_argument("embed_triplets: null action choice");
    if (f->is_stop_candidate) {
      action_rows.push_back(p.stop_vector);
    } else {
      if (static_cast<int>(f->s.size()) != d_enc)
        throw std::invalid_argument("embed_triplets: action vector dimension mismatch");
      action_rows.push_back(tensor::make_tensor({1, d_enc}, f->s));
    }
  }

  auto v_r = g.add(g.matmul(rtg_t, p.w_r), p.b_r);                       // {T, d}
  auto v_s = g.add(g.matmul(states_t, p.w_s), p.b_s);                    // {T, d}
  auto v_a = g.add(g.matmul(g.concat_rows(action_rows), p.w_a), p.b_a);  // {T, d}
  auto v_p = g.embedding_lookup(p.timestep, in.timesteps);               // {T, d}

  auto with_time = [&](const tensor::Tensor& x) { return g.add(x, v_p); };
  auto stacked = g.concat_rows({with_time(v_r), with_time(v_s), with_time(v_a)});  // {3T, d}

  // Interleave rows into (r_0, s_0, a_0, r_1, ...).
  std::vector<int> order;
  order.reserve(3 * T);
  for (size_t t = 0; t < T; ++t) {
    order.push_back(static_cast<int>(t));
    order.push_back(static_cast<int>(T + t));
    order.push_back(static_cast<int>(2 * T + t));
  }
  return g.gather_rows(stacked, order);
}

}  // namespace graphnav::embed
