#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "graphnav/embed.hpp"
#include "graphnav/errors.hpp"

using namespace graphnav;
using namespace graphnav::embed;

TEST_CASE("embed_instruction: deterministic, order-sensitive, fixed norm") {
  SyntheticEncoders enc(64, 32, 40, 5);
  std::vector<int> ab{3, 7}, ba{7, 3};
  auto e1 = enc.embed_instruction(ab);
  auto e2 = enc.embed_instruction(ab);
  CHECK(e1 == e2);
  auto e3 = enc.embed_instruction(ba);
  CHECK(e1 != e3);

  for (auto& toks : {std::vector<int>{1}, {2, 9, 9, 4}, {0, 1, 2, 3, 4, 5, 6}}) {
    auto e = enc.embed_instruction(toks);
    double norm = 0;
    for (double v : e) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(std::sqrt(64.0)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(enc.embed_instruction({}), std::invalid_argument);
  CHECK_THROWS_AS(enc.embed_instruction({40}), std::invalid_argument);
}

TEST_CASE("embed_view: bias image at zero, deterministic, Lipschitz-bounded") {
  SyntheticEncoders enc(16, 8, 10, 6);
  std::vector<double> zero(8, 0.0);
  auto at_zero = enc.embed_view(zero);
  auto again = enc.embed_view(zero);
  CHECK(at_zero == again);
  for (double v : at_zero) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(enc.embed_view(std::vector<double>(7, 0.0)), std::invalid_argument);

  // Distinct inputs map to distinct outputs (collision scan).
  Rng rng(7);
  std::vector<std::vector<double>> outs;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> raw(8);
    for (auto& v : raw) v = rng.uniform(-2.0, 2.0);
    outs.push_back(enc.embed_view(raw));
  }
  for (size_t i = 0; i < outs.size(); ++i)
    for (size_t j = i + 1; j < outs.size(); ++j) CHECK(outs[i] != outs[j]);
}

TEST_CASE("fuse: identity, annihilator, definition, commutativity") {
  std::vector<double> ones{1, 1}, zeros{0, 0}, a{2, -1}, b{3, 4};
  CHECK(fuse(ones, b, 0).s == b);
  CHECK(fuse(zeros, b, 0).s == zeros);
  CHECK(fuse(a, b, 0).s == std::vector<double>{6, -4});
  CHECK(fuse(a, b, 0).s == fuse(b, a, 0).s);
  CHECK_THROWS_AS(fuse(a, std::vector<double>{1, 2, 3}, 0), std::invalid_argument);
}

TEST_CASE("pool_state: mean semantics") {
  FusedState f1, f2;
  f1.s = {2.0, -4.0};
  f2.s = {-2.0, 4.0};
  CHECK(pool_state({f1}) == f1.s);
  CHECK(pool_state({f1, f2}) == std::vector<double>{0.0, 0.0});
  FusedState f3;
  f3.s = {1.0, 1.0};
  auto p123 = pool_state({f1, f2, f3});
  auto p321 = pool_state({f3, f2, f1});
  CHECK(p123 == p321);  // permutation invariance
  CHECK_THROWS_AS(pool_state({}), std::invalid_argument);

  // Linearity under scaling of every member.
  FusedState g1 = f1, g2 = f3;
  for (auto& v : g1.s) v *= 2.5;
  for (auto& v : g2.s) v *= 2.5;
  auto scaled = pool_state({g1, g2});
  auto base = pool_state({f1, f3});
  for (size_t i = 0; i < base.size(); ++i)
    CHECK(scaled[i] == doctest::Approx(2.5 * base[i]).epsilon(1e-12));
}

namespace {

TripletParams make_params(tensor::ParameterStore& store, int d_enc, int d_model, int t_max,
                          uint64_t seed) {
  Rng rng(seed);
  TripletParams p;
  p.w_r = store.create_randn("w_r", {1, d_model}, 0.3, rng);
  p.b_r = store.create_randn("b_r", {d_model}, 0.3, rng);
  p.w_s = store.create_randn("w_s", {d_enc, d_model}, 0.3, rng);
  p.b_s = store.create_randn("b_s", {d_model}, 0.3, rng);
  p.w_a = store.create_randn("w_a", {d_enc, d_model}, 0.3, rng);
  p.b_a = store.create_randn("b_a", {d_model}, 0.3, rng);
  p.stop_vector = store.create_randn("stop", {1, d_enc}, 0.3, rng);
  p.timestep = store.create_randn("timestep", {t_max, d_model}, 0.3, rng);
  return p;
}

TripletInputs make_inputs(int d_enc, int T, std::vector<FusedState>& holder, uint64_t seed) {
  Rng rng(seed);
  TripletInputs in;
  holder.clear();
  holder.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    FusedState f;
    f.s.resize(static_cast<size_t>(d_enc));
    for (auto& v : f.s) v = rng.uniform(-1.0, 1.0);
    holder.push_back(f);
  }
  for (int t = 0; t < T; ++t) {
    in.rtg.push_back(rng.uniform(0.0, 10.0));
    std::vector<double> s(static_cast<size_t>(d_enc));
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    in.state_tokens.push_back(s);
    in.action_choices.push_back(&holder[static_cast<size_t>(t)]);
    in.timesteps.push_back(t);
  }
  return in;
}

}  // namespace

TEST_CASE("embed_triplets: additive timestep structure") {
  tensor::ParameterStore store;
  const int d_enc = 6, d_model = 8, t_max = 5;
  auto p = make_params(store, d_enc, d_model, t_max, 11);
  std::vector<FusedState> holder;
  auto in = make_inputs(d_enc, 1, holder, 12);

  tensor::Graph g(false);
  in.timesteps = {0};
  auto tok0 = embed_triplets(g, p, in);
  in.timesteps = {1};
  auto tok1 = embed_triplets(g, p, in);
  // Same (r, s, a): rows differ by exactly v_p(1) - v_p(0) on every token.
  for (int row = 0; row < 3; ++row)
    for (int j = 0; j < d_model; ++j) {
      const double diff = tok1->value[static_cast<size_t>(row * d_model + j)] -
                          tok0->value[static_cast<size_t>(row * d_model + j)];
      const double want = p.timestep->value[static_cast<size_t>(d_model + j)] -
                          p.timestep->value[static_cast<size_t>(j)];
      CHECK(diff == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("embed_triplets: zero rtg with zero W_r bias gives the bias row") {
  tensor::ParameterStore store;
  const int d_enc = 4, d_model = 6, t_max = 3;
  auto p = make_params(store, d_enc, d_model, t_max, 13);
  std::vector<FusedState> holder;
  auto in = make_inputs(d_enc, 1, holder, 14);
  in.rtg = {0.0};
  in.timesteps = {2};
  tensor::Graph g(false);
  auto tok = embed_triplets(g, p, in);
  // Return token row = b_r + v_p(2).
  for (int j = 0; j < d_model; ++j) {
    const double want = p.b_r->value[static_cast<size_t>(j)] +
                        p.timestep->value[static_cast<size_t>(2 * d_model + j)];
    CHECK(tok->value[static_cast<size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("embed_triplets: timestep outside the table is rejected, never wrapped") {
  tensor::ParameterStore store;
  auto p = make_params(store, 4, 6, 3, 15);
  std::vector<FusedState> holder;
  auto in = make_inputs(4, 1, holder, 16);
  in.timesteps = {3};
  tensor::Graph g(false);
  CHECK_THROWS_AS(embed_triplets(g, p, in), std::invalid_argument);
}

TEST_CASE("embed_triplets: gradient w.r.t. W_s matches finite differences") {
  tensor::ParameterStore store;
  const int d_enc = 5, d_model = 7, t_max = 4;
  auto p = make_params(store, d_enc, d_model, t_max, 17);
  std::vector<FusedState> holder;
  auto in = make_inputs(d_enc, 3, holder, 18);
  auto rep = graphnav::testing::check_gradients(
      {p.w_s, p.w_r, p.w_a, p.stop_vector, p.timestep}, [&](tensor::Graph& g) {
        auto tok = embed_triplets(g, p, in);
        return g.mean(g.mul(tok, tok));
      });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("featurize_step wires candidates in ActionSet order with STOP first") {
  auto g = env::generate_world(71, 20, 3.0);
  env::FeatureParams fp;
  SyntheticEncoders enc(32, fp.d_raw, 64, 5);
  auto vocab = env::build_vocabulary(fp.n_landmarks);
  auto x_cls = enc.embed_instruction({vocab.go, vocab.landmark_base + 1, vocab.goal});
  auto obs = env::observe(g, 3, 11, fp);
  auto feat = featurize_step(enc, x_cls, obs);
  const auto as = env::action_set(obs);
  REQUIRE(static_cast<int>(feat.candidates.size()) == as.size());
  CHECK(feat.candidates[0].is_stop_candidate);
  for (int ai = 1; ai < as.size(); ++ai) {
    CHECK_FALSE(feat.candidates[static_cast<size_t>(ai)].is_stop_candidate);
    CHECK(feat.candidates[static_cast<size_t>(ai)].view_index == as.view_of(ai));
  }
  CHECK(feat.state_token.size() == 32);
}
