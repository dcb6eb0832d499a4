#include <cmath>

#include "doctest.h"
#include "hstrack/backbone.hpp"
#include "test_util.hpp"

using namespace hstrack;
using testutil::bit_identical;
using testutil::random_tensor;

namespace {

void zero_block(Backbone& bb, int layer) {
  std::string base = "backbone.block" + std::to_string(layer - 1);
  for (const char* part : {".qkv", ".proj", ".fc1", ".fc2"}) {
    Var* w = bb.params().find(base + part + ".weight");
    Var* b = bb.params().find(base + part + ".bias");
    w->assign(Tensor::zeros(w->value.shape()));
    b->assign(Tensor::zeros(b->value.shape()));
  }
}

}  // namespace

TEST_CASE("embed_pair shape contract and token ordering") {
  Backbone bb(BackboneConfig{}, Rng(3));
  Rng rng(5);
  Tensor templ = random_tensor(rng, {3, 32, 32});
  Tensor search = random_tensor(rng, {3, 64, 64});
  Tensor tokens = bb.embed_pair(nullptr, templ, search);
  CHECK(tokens.shape() == Shape{1, 80, 64});

  // changing the template only changes slots 0..15
  Tensor templ2 = random_tensor(rng, {3, 32, 32});
  Tensor tokens2 = bb.embed_pair(nullptr, templ2, search);
  CHECK(bit_identical(slice(tokens, 1, 16, 64), slice(tokens2, 1, 16, 64)));
  bool template_changed = false;
  for (int i = 0; i < 16 * 64 && !template_changed; ++i)
    template_changed = slice(tokens, 1, 0, 16).values()[static_cast<size_t>(i)] !=
                       slice(tokens2, 1, 0, 16).values()[static_cast<size_t>(i)];
  CHECK(template_changed);

  CHECK_THROWS_AS(bb.embed_pair(nullptr, search, templ), std::invalid_argument);
}

TEST_CASE("zero embed and positions produce zero tokens") {
  Backbone bb(BackboneConfig{}, Rng(7));
  for (const char* name : {"backbone.patch.weight", "backbone.patch.bias",
                           "backbone.pos_template", "backbone.pos_search"}) {
    Var* v = bb.params().find(name);
    v->assign(Tensor::zeros(v->value.shape()));
  }
  Tensor tokens = bb.embed_pair(nullptr, Tensor::zeros({3, 32, 32}),
                                Tensor::zeros({3, 64, 64}));
  for (double v : tokens.values()) CHECK(v == 0.0);
}

TEST_CASE("block with zero attention and MLP weights is the identity") {
  Backbone bb(BackboneConfig{}, Rng(11));
  zero_block(bb, 1);
  Rng rng(13);
  Tensor tokens = random_tensor(rng, {1, 80, 64});
  Tensor out = bb.block_forward(nullptr, tokens, 1, nullptr);
  CHECK(bit_identical(tokens, out));
}

TEST_CASE("block forward is deterministic") {
  Backbone bb(BackboneConfig{}, Rng(17));
  Rng rng(19);
  Tensor tokens = random_tensor(rng, {2, 80, 64});
  Tensor a = bb.block_forward(nullptr, tokens, 5, nullptr);
  Tensor b = bb.block_forward(nullptr, tokens, 5, nullptr);
  CHECK(bit_identical(a, b));
  CHECK_THROWS_AS(bb.block_forward(nullptr, tokens, 0, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(bb.block_forward(nullptr, tokens, 13, nullptr), std::invalid_argument);
}

TEST_CASE("gradient flows correctly through one block") {
  BackboneConfig cfg;
  cfg.template_size = 16;  // 2x2 grid
  cfg.search_size = 16;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  Backbone bb(cfg, Rng(23));
  Rng rng(29);
  Tensor tokens = random_tensor(rng, {1, 8, 8});
  Tensor w = random_tensor(rng, {1, 8, 8});
  auto f = [&](Tape& t, const Tensor& x) {
    return sum_all(mul(bb.block_forward(&t, x, 1, nullptr), w));
  };
  CHECK(grad_check(f, tokens, 1e-5) <= 1e-4);
}

TEST_CASE("final block records attention; relevance mask selects top tokens") {
  BackboneConfig cfg;
  cfg.template_size = 16;  // 4 template tokens
  cfg.search_size = 16;    // 4 search tokens, grid 2x2
  cfg.dim = 8;
  cfg.heads = 1;
  cfg.blocks = 1;
  Backbone bb(cfg, Rng(31));

  // synthetic attention record: template queries put known mass on search keys
  double scores[4] = {0.9, 0.1, 0.2, 0.8};
  std::vector<double> attn(8 * 8, 0.0);
  for (int q = 0; q < 4; ++q)
    for (int j = 0; j < 4; ++j) attn[static_cast<size_t>(q * 8 + 4 + j)] = scores[j];
  TokenState state;
  state.final_attn = Tensor::from({1, 1, 8, 8}, attn);

  Tensor mask = bb.relevance_mask(state, 0.5);
  CHECK(mask.shape() == Shape{1, 2, 2});
  CHECK(mask.values() == std::vector<double>{0.0, 1.0, 1.0, 0.0});

  // rho = 1: everything is target-relevant
  Tensor all = bb.relevance_mask(state, 1.0);
  for (double v : all.values()) CHECK(v == 0.0);

  // ties break toward the lower row-major index
  double tied[4] = {0.5, 0.5, 0.5, 0.5};
  for (int q = 0; q < 4; ++q)
    for (int j = 0; j < 4; ++j) attn[static_cast<size_t>(q * 8 + 4 + j)] = tied[j];
  state.final_attn = Tensor::from({1, 1, 8, 8}, attn);
  Tensor tie_mask = bb.relevance_mask(state, 0.5);
  CHECK(tie_mask.values() == std::vector<double>{0.0, 0.0, 1.0, 1.0});

  TokenState missing;
  CHECK_THROWS_AS(bb.relevance_mask(missing, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(bb.relevance_mask(state, 0.0), std::invalid_argument);
}

TEST_CASE("relevance mask zero count matches ceil(rho * tokens)") {
  Backbone bb(BackboneConfig{}, Rng(37));
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> attn(static_cast<size_t>(4) * 80 * 80);
    for (double& v : attn) v = rng.uniform();
    TokenState state;
    state.final_attn = Tensor::from({1, 4, 80, 80}, attn);
    double rho = rng.uniform(0.01, 1.0);
    Tensor mask = bb.relevance_mask(state, rho);
    int zeros = 0;
    for (double v : mask.values())
      if (v == 0.0) ++zeros;
    CHECK(zeros == static_cast<int>(std::ceil(rho * 64)));
  }
}

TEST_CASE("warm-up mask marks exactly the cells whose centers fall in the box") {
  Backbone bb(BackboneConfig{}, Rng(43));
  TokenState state;  // unused in gt mode
  BBox gt{0, 0, 32, 32};
  Tensor mask = bb.relevance_mask(state, 0.25, &gt);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double expect = (i < 4 && j < 4) ? 0.0 : 1.0;
      CHECK(mask.at({0, i, j}) == expect);
    }
}

TEST_CASE("upsample_mask repeats cells into pixel blocks") {
  Tensor grid = Tensor::from({1, 2, 2}, {0.0, 1.0, 1.0, 0.0});
  Tensor px = upsample_mask(grid, 4);
  CHECK(px.shape() == Shape{1, 8, 8});
  CHECK(px.at({0, 0, 0}) == 0.0);
  CHECK(px.at({0, 3, 3}) == 0.0);
  CHECK(px.at({0, 0, 4}) == 1.0);
  CHECK(px.at({0, 7, 7}) == 0.0);
  CHECK(px.at({0, 7, 0}) == 1.0);
}

TEST_CASE("token count and ordering are invariant under injected offsets") {
  Backbone bb(BackboneConfig{}, Rng(47));
  Rng rng(53);
  Tensor tokens = random_tensor(rng, {1, 80, 64});
  Tensor injected = add(tokens, random_tensor(rng, {1, 80, 64}));
  Tensor out = bb.block_forward(nullptr, injected, 3, nullptr);
  CHECK(out.shape() == tokens.shape());
}
