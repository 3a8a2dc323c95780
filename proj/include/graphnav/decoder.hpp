#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "graphnav/embed.hpp"
#include "graphnav/tensor.hpp"

// Causal transformer over (return, state, action) token triplets, GPT-2
// block structure, plus the candidate-scoring action head. Actions are
// predicted from the hidden state at each step's state token; the head
// fuses that hidden state elementwise with a learned projection of every
// candidate view and scores the result with a two-layer MLP.

namespace graphnav::decoder {

struct DecoderConfig {
  int n_blocks = 12;
  int n_heads = 4;  // 12 heads fit the 768-dim paper scale, not d_model 128
  int d_model = 128;
  int d_enc = 64;
  int max_timesteps = 15;
  int context_timesteps = 0;  // 0 = full episode
  double dropout = 0.1;

  void validate() const;
  // Timestep window actually applied (0 config means max_timesteps).
  int effective_context() const {
    return context_timesteps == 0 ? max_timesteps : context_timesteps;
  }
};

// One step as the model sees it: conditioning scalars, pooled state token,
// candidate set, and (when teacher-forcing) the chosen action.
struct ModelStep {
  double rtg = 0;
  embed::StepFeatures features;
  int action_index = -1;  // into features.candidates; -1 = pending (inference)
  int timestep = 0;
};

struct ActionDistribution {
  std::vector<double> logits;  // [0] = STOP, then ActionSet order
  std::vector<double> probs;
};

enum class SampleMode { kGreedy, kSample };

// Byte mask for masked_fill over an n x n score matrix: nonzero marks the
// disallowed upper triangle (j > i).
std::vector<uint8_t> causal_mask(int n_tokens);

class DecoderModel {
 public:
  DecoderModel(const DecoderConfig& cfg, uint64_t init_seed);

  const DecoderConfig& config() const { return cfg_; }
  tensor::ParameterStore& params() { return store_; }
  const tensor::ParameterStore& params() const { return store_; }

  // Hidden states over the interleaved token sequence, {3T or 3T-1, d_model}.
  // include_trailing_action=false drops the final step's action slot (the
  // inference prefix). train_mode enables dropout, fed from dropout_rng.
  tensor::Tensor forward_hidden(tensor::Graph& g, const std::vector<ModelStep>& steps,
                                bool include_trailing_action, bool train_mode,
                                Rng* dropout_rng) const;

  // Candidate logits {1, k} for the step at `step_index`, read from the
  // state-token row of h.
  tensor::Tensor action_logits(tensor::Graph& g, const tensor::Tensor& h, int step_index,
                               const std::vector<embed::FusedState>& candidates) const;

  // Teacher-forced negative log-likelihood, summed over steps ({1} tensor).
  // Respects the configured context window.
  tensor::Tensor sequence_nll(tensor::Graph& g, const std::vector<ModelStep>& steps,
                              bool train_mode, Rng* dropout_rng) const;

  // NLL plus (optionally) the summed per-step policy entropy from the same
  // teacher-forced pass.
  struct SequenceLosses {
    tensor::Tensor nll;      // {1}, summed over steps
    tensor::Tensor entropy;  // {1}, summed over steps; null unless requested
  };
  SequenceLosses sequence_losses(tensor::Graph& g, const std::vector<ModelStep>& steps,
                                 bool train_mode, Rng* dropout_rng,
                                 bool with_entropy) const;

  // Sum over steps of log p(a_t | window); inference mode, no tape.
  double sequence_log_likelihood(const std::vector<ModelStep>& steps) const;

  // Distribution over the last step's candidates given the prefix (the last
  // step's action_index is ignored). Applies the context window.
  ActionDistribution action_distribution(const std::vector<ModelStep>& prefix) const;

  // Greedy: argmax with lowest-index tie-break. Sample: draw from the
  // temperature-scaled distribution. Temperature must be positive.
  int sample_action(const std::vector<ModelStep>& prefix, double temperature,
                    SampleMode mode, Rng& rng) const;

 private:
  struct BlockParams {
    tensor::Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    tensor::Tensor ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  struct HeadParams {
    tensor::Tensor ln_g, ln_b;  // normalizes the state-token hidden state
    tensor::Tensor w_c, b_c;    // candidate projection d_enc -> d_model
    tensor::Tensor w1, b1, w2, b2;  // scoring MLP d_model -> d_model -> 1
  };

  DecoderConfig cfg_;
  tensor::ParameterStore store_;
  embed::TripletParams triplet_;
  std::vector<BlockParams> blocks_;
  HeadParams head_;
};

}  // namespace graphnav::decoder
