#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "grokforget/checkpoint.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/model.hpp"
#include "support.hpp"

using namespace gf;

TEST_CASE("engine gradients match the double-precision reference") {
  for (const auto& spec : {support::small_mlp(), support::small_cnn(), support::small_transformer()}) {
    CAPTURE(zoo::to_string(spec.family));
    const auto r = support::gradcheck(spec, 17, 100, 3, 1e-6);
    CHECK(r.max_loss_gap < 1e-4);
    CHECK(r.checked + r.below_floor + r.kink_skipped == 300);
    CHECK(r.checked >= 100);
    CHECK(r.max_rel_err <= 1e-3);
  }
}

TEST_CASE("spec validation") {
  zoo::ModelSpec s;
  s.layer_sizes = {4};
  CHECK_THROWS_AS(s.validate(), ValidationError);
  auto t = support::small_transformer();
  t.heads = 3;
  CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("spec json round trip") {
  for (const auto& spec : {support::small_mlp(), support::small_cnn(), support::small_transformer()})
    CHECK(zoo::ModelSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}

TEST_CASE("initialisation is deterministic and fan-in bounded") {
  const auto spec = support::small_mlp();
  const auto a = zoo::build_model(spec, Rng(5, 1));
  const auto b = zoo::build_model(spec, Rng(5, 1));
  const auto c = zoo::build_model(spec, Rng(6, 1));
  CHECK(a == b);
  CHECK(!(a == c));
  const float bound = 1.0f / std::sqrt(6.0f);
  for (float v : a.view("fc0.weight")) CHECK(std::abs(v) <= bound);
  for (float v : a.view("fc0.bias")) CHECK(std::abs(v) <= bound);
}

TEST_CASE("layout names and sizes") {
  const auto layout = zoo::parameter_layout(support::small_mlp());
  CHECK(layout->find("fc0.weight").shape == Shape{6, 10});
  CHECK(layout->find("fc2.bias").shape == Shape{4});
  CHECK(layout->total() == 6 * 10 + 10 + 10 * 8 + 8 + 8 * 4 + 4);
  const auto t = zoo::parameter_layout(support::small_transformer());
  CHECK(t->contains("block1.attn.qkv.weight"));
  CHECK(t->find("head.weight").shape == Shape{8, 7});
}

TEST_CASE("inference shapes and chunking") {
  const auto spec = support::small_mlp();
  const auto p = zoo::build_model(spec, Rng(1, 1));
  Rng rng(3);
  const auto ds = support::random_inputs(spec, zoo::kEvalChunk + 37, rng);
  const Tensor all = zoo::forward(spec, p, ds.inputs);
  CHECK(all.shape() == Shape{zoo::kEvalChunk + 37, 4});
  std::vector<std::int64_t> tail{zoo::kEvalChunk + 5};
  const Tensor one = zoo::forward(spec, p, ds.inputs.gather_rows(tail));
  for (std::int64_t c = 0; c < 4; ++c) CHECK(one.at(0, c) == doctest::Approx(all.at(zoo::kEvalChunk + 5, c)));
  CHECK(zoo::penultimate_activations(spec, p, ds.inputs).dim(1) == 8);
  CHECK(zoo::relu_preactivations(spec, p, ds.inputs).dim(1) == 18);
}

TEST_CASE("wrong input width is a shape error") {
  const auto spec = support::small_mlp();
  const auto p = zoo::build_model(spec, Rng(1, 1));
  CHECK_THROWS_AS(zoo::forward(spec, p, Tensor({2, 5})), ShapeError);
}

TEST_CASE("transformer rejects out-of-vocabulary tokens and has no relu layers") {
  const auto spec = support::small_transformer();
  const auto p = zoo::build_model(spec, Rng(1, 1));
  CHECK_THROWS_AS(zoo::forward(spec, p, Tensor({1, 5}, 9.0f)), ValidationError);
  CHECK_THROWS_AS(zoo::relu_preactivations(spec, p, Tensor({1, 5})), UnsupportedFamilyError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "gf_ckpt_test";
  std::filesystem::create_directories(dir);
  for (const auto& spec : {support::small_mlp(), support::small_cnn(), support::small_transformer()}) {
    const auto p = zoo::build_model(spec, Rng(2, 1));
    zoo::CheckpointMeta meta;
    meta.spec = spec;
    meta.seed = 2;
    meta.step = 123;
    zoo::save_checkpoint(dir / "model", p, meta);
    const auto back = zoo::load_checkpoint(dir / "model");
    CHECK(back.params == p);
    CHECK(back.meta.step == 123);
    CHECK(back.meta.spec.to_json() == spec.to_json());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto p = zoo::build_model(support::small_mlp(), Rng(2, 1));
  auto bytes = zoo::encode_params(p);
  CHECK(zoo::decode_params(bytes) == p);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(zoo::decode_params(bad_magic), FormatError);
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(zoo::decode_params(bytes), FormatError);
}
