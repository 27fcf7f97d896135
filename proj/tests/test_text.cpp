#include "specfuse/text.hpp"

#include <doctest.h>

#include "helpers.hpp"

#include <filesystem>
#include <fstream>

using namespace specfuse;
using testutil::randn;

namespace {

PromptManifest toy_manifest(int C) {
  PromptManifest m;
  for (int c = 0; c < C; ++c) {
    PromptClass pc;
    pc.name = "thing_" + std::to_string(c);
    pc.self_categorical = self_categorical_template(pc.name);
    pc.differentiated = {"it is the " + std::to_string(c) + "th kind",
                         "it sits next to other things",
                         "its height is number " + std::to_string(c)};
    m.classes.push_back(pc);
  }
  return m;
}

}  // namespace

TEST_CASE("manifest: corpus size, template autofill, validation") {
  PromptManifest m = toy_manifest(6);
  CHECK(m.corpus().size() == 24);  // C + 3C

  std::string path = (std::filesystem::temp_directory_path() / "m.json").string();
  {
    std::ofstream f(path);
    f << R"({"classes": [{"name": "ground",
        "differentiated": ["a", "b", "c"]}]})";
  }
  PromptManifest loaded = load_manifest(path);
  CHECK(loaded.classes[0].self_categorical ==
        "a hyperspectral and lidar multimodal data of ground");

  PromptManifest bad = toy_manifest(2);
  bad.classes[1].differentiated[2] = "";
  CHECK_THROWS_AS(validate_manifest(bad), DataError);

  PromptManifest dup = toy_manifest(2);
  dup.classes[1].name = dup.classes[0].name;
  CHECK_THROWS_AS(validate_manifest(dup), DataError);
}

TEST_CASE("bpe: alphabet-only vocab, aaaa merge, determinism") {
  BPEVocab base = build_vocab({"abc"}, kByteBase + 256);
  CHECK(base.merges.empty());

  BPEVocab aa = build_vocab({"aaaa"}, kByteBase + 256 + 1);
  REQUIRE(aa.merges.size() == 1);
  int a_id = kByteBase + (int)'a';
  CHECK(aa.merges[0] == std::pair<int, int>{a_id, a_id});

  std::vector<std::string> corpus = toy_manifest(4).corpus();
  BPEVocab v1 = build_vocab(corpus, 300);
  BPEVocab v2 = build_vocab(corpus, 300);
  CHECK(v1.merges == v2.merges);

  std::string path = (std::filesystem::temp_directory_path() / "merges.txt").string();
  v1.save(path);
  BPEVocab v3 = BPEVocab::load(path);
  CHECK(v3.merges == v1.merges);
}

TEST_CASE("tokenize: framing invariants and round trips") {
  BPEVocab v = build_vocab(toy_manifest(6).corpus(), 350);

  TokenSequence empty = tokenize("", v);
  CHECK(empty.valid_len == 2);
  CHECK(empty.ids[0] == kSotId);
  CHECK(empty.ids[1] == kEotId);
  for (int i = 2; i < kMaxTokens; ++i) CHECK(empty.ids[(size_t)i] == kPadId);

  std::string huge;
  for (int i = 0; i < 500; ++i) huge += "word ";
  TokenSequence cap = tokenize(huge, v);
  CHECK(cap.valid_len == kMaxTokens);
  CHECK(cap.ids[76] == kEotId);

  for (const std::string& p : toy_manifest(6).corpus()) {
    TokenSequence t = tokenize(p, v);
    CHECK(t.ids[0] == kSotId);
    CHECK(t.ids[(size_t)t.valid_len - 1] == kEotId);
    CHECK(detokenize(t, v) == to_lower(p));
  }
}

TEST_CASE("text encoder: determinism, pad invariance, fd gradient") {
  Rng rng(51);
  ParamStore ps;
  TextEncoderConfig cfg{.width = 32, .layers = 2, .heads = 4, .shared_dim = 16};
  BPEVocab v = build_vocab({"some words to merge merge merge"}, 280);
  TextEncoder enc;
  enc.init(ps, cfg, v.vocab_size(), rng);

  TokenSequence a = tokenize("some words", v);
  TokenSequence b = a;
  // garbage beyond valid_len must not matter
  for (int i = b.valid_len; i < kMaxTokens; ++i) b.ids[(size_t)i] = kPadId;
  TokenSequence c = a;
  for (int i = c.valid_len; i < kMaxTokens; ++i)
    c.ids[(size_t)i] = kByteBase + (i % 200);

  Var ea = enc.encode({a});
  Var eb = enc.encode({b});
  Var ec = enc.encode({c, a});
  CHECK(ea->shape == std::vector<int>{1, 16});
  for (int i = 0; i < 16; ++i) {
    CHECK(ea->val(i) == eb->val(i));
    CHECK(ea->val(i) == doctest::Approx(ec->val(i)).epsilon(1e-12));
    CHECK(ea->val(i) == doctest::Approx(ec->val(16 + i)).epsilon(1e-12));
  }

  auto r = testutil::fd_probe(ps, [&] {
    Var e = enc.encode({a});
    return mean_all(mul(e, e));
  }, 25, rng);
  CHECK(r.max_rel_err <= 1e-3);
}

TEST_CASE("prompt refiner: depth from config, zero-block identity, param counts") {
  Rng rng(52);
  {
    ParamStore ps;
    PromptRefiner refiner;
    refiner.init(ps, 3, 16, 4, rng);
    CHECK(refiner.depth() == 3);
  }
  // parameter count strictly monotone in e
  int64_t prev = -1;
  for (int e = 1; e <= 5; ++e) {
    ParamStore ps;
    PromptRefiner refiner;
    refiner.init(ps, e, 16, 4, rng);
    CHECK(ps.count() > prev);
    prev = ps.count();
  }
  // zeroed block weights: pre-LN residual stack passes input through
  ParamStore ps;
  PromptRefiner refiner;
  refiner.init(ps, 2, 16, 4, rng);
  for (const auto& [name, p] : ps.params())
    if (name.find(".attn.") != std::string::npos || name.find(".mlp.") != std::string::npos)
      p->val.setZero();
  Var x = constant({5, 16}, randn(80, rng));
  Var y = refiner.refine(x);
  for (int64_t i = 0; i < x->size(); ++i)
    CHECK(y->val(i) == doctest::Approx(x->val(i)).epsilon(1e-12));
}
