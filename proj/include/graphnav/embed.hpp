#pragma once

#include <cstdint>
#include <vector>

#include "graphnav/env.hpp"
#include "graphnav/tensor.hpp"

// Deterministic synthetic stand-ins for the pre-trained text and vision
// encoders, the element-wise modality fusion, per-step state pooling, and
// the learned return/state/action/timestep embedding layer.

namespace graphnav::embed {

constexpr int kMaxInstructionTokens = 64;

// Frozen encoders: a seeded token table with Rademacher position codes for
// instructions, and a seeded random projection with tanh squashing for view
// features. Pure and bitwise repeatable.
class SyntheticEncoders {
 public:
  SyntheticEncoders(int d_enc, int d_raw, int vocab_size, uint64_t seed);

  // Position-sensitive pooling of token embeddings, L2-normalized and scaled
  // to norm sqrt(d_enc). Empty sequences are rejected.
  std::vector<double> embed_instruction(const std::vector<int>& tokens) const;

  // tanh(W * raw + b); Lipschitz and bounded in (-1, 1).
  std::vector<double> embed_view(const std::vector<double>& raw_feature) const;

  int d_enc() const { return d_enc_; }
  int d_raw() const { return d_raw_; }
  int vocab_size() const { return vocab_; }

 private:
  int d_enc_, d_raw_, vocab_;
  std::vector<double> token_table_;  // vocab x d_enc
  std::vector<double> pos_codes_;    // kMaxInstructionTokens x d_enc, entries +-1
  std::vector<double> w_view_;       // d_enc x d_raw
  std::vector<double> b_view_;       // d_enc
};

// The multimodal atom: s = x_cls (elementwise*) o_e, or the STOP marker.
struct FusedState {
  std::vector<double> s;
  int view_index = -1;
  bool is_stop_candidate = false;
};

FusedState fuse(const std::vector<double>& x_cls, const std::vector<double>& o_e,
                int view_index);
FusedState stop_candidate(int d_enc);

// Arithmetic mean over fused views; the per-step state token.
std::vector<double> pool_state(const std::vector<FusedState>& fused_views);

// Everything the model consumes about one step, before any learned layer.
struct StepFeatures {
  std::vector<double> state_token;               // pooled, d_enc
  std::vector<embed::FusedState> candidates;     // [0] = STOP, then ActionSet order
};

StepFeatures featurize_step(const SyntheticEncoders& enc,
                            const std::vector<double>& x_cls, const env::Observation& obs);

// Learned projections of (return, state, action) plus the timestep table.
// Created inside the decoder's parameter store; grouped here because the
// interleaved token assembly is embedding-layer logic.
struct TripletParams {
  tensor::Tensor w_r, b_r;      // {1, d_model}, {d_model}
  tensor::Tensor w_s, b_s;      // {d_enc, d_model}, {d_model}
  tensor::Tensor w_a, b_a;      // {d_enc, d_model}, {d_model}
  tensor::Tensor stop_vector;   // {1, d_enc}: the action-input stand-in for STOP
  tensor::Tensor timestep;      // {max_timesteps, d_model}
};

// Interleaves per-step (return, state, action) token vectors, each with its
// timestep embedding added, into a {3T, d_model} sequence. Timesteps must be
// strictly below the table size; they are never wrapped.
//
// actions[t] points into the step's candidate list (0 = STOP). The action
// input vector is the chosen candidate's fused state, or the learned stop
// vector.
struct TripletInputs {
  std::vector<double> rtg;                          // T
  std::vector<std::vector<double>> state_tokens;    // T x d_enc
  std::vector<const FusedState*> action_choices;    // T entries (chosen candidate)
  std::vector<int> timesteps;                       // T
};

tensor::Tensor embed_triplets(tensor::Graph& g, const TripletParams& p,
                              const TripletInputs& in);

}  // namespace graphnav::embed
