#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "bugsift/docvec.hpp"
#include "support/synthetic.hpp"

using namespace bugsift;

namespace {

std::vector<TokenizedIssue> tiny_corpus() {
  // Two topical groups over a vocabulary of 8.
  std::vector<TokenizedIssue> corpus;
  for (int i = 0; i < 6; ++i)
    corpus.push_back({"doc/a" + std::to_string(i), {0, 1, 2, 1, 0}, ReporterType::bug});
  for (int i = 0; i < 6; ++i)
    corpus.push_back({"doc/b" + std::to_string(i), {5, 6, 7, 6, 5}, ReporterType::nonbug});
  return corpus;
}

std::string model_bytes(const DocVecModel<float>& model) {
  auto path = std::filesystem::temp_directory_path() / "bugsift_dv_probe.bin";
  save_docvec(model, path);
  return read_file(path);
}

}  // namespace

TEST_CASE("training loss strictly decreases early on a repetitive corpus") {
  std::vector<TokenizedIssue> corpus = {
      {"doc/rep", {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}, ReporterType::bug}};
  DocVecConfig config;
  config.dim = 4;
  config.window = 2;
  config.negative_samples = 2;
  config.epochs = 50;
  config.seed = 11;
  auto model = train_pvdm<float>(corpus, config, 3);
  REQUIRE(model.epoch_loss.size() == 50);
  for (int e = 0; e + 1 < 10; ++e)
    CHECK(model.epoch_loss[e + 1] < model.epoch_loss[e]);
}

TEST_CASE("identical documents end up close; disjoint documents do not") {
  std::vector<TokenizedIssue> corpus = tiny_corpus();
  DocVecConfig config;
  config.dim = 16;
  config.window = 2;
  config.epochs = 120;
  config.seed = 3;
  auto model = train_pvdm<float>(corpus, config, 8);
  double same = cosine_similarity(model.doc_vector("doc/a0"),
                                  model.doc_vector("doc/a1"));
  double cross = cosine_similarity(model.doc_vector("doc/a0"),
                                   model.doc_vector("doc/b0"));
  CHECK(same > 0.9);
  CHECK(cross < same);
}

TEST_CASE("default dimensionality is 128 and vectors stay finite") {
  std::vector<TokenizedIssue> corpus = tiny_corpus();
  DocVecConfig config;
  config.epochs = 3;
  config.seed = 5;
  auto model = train_pvdm<float>(corpus, config, 8);
  CHECK(model.doc_vectors.cols == 128);
  for (const auto& issue : corpus) {
    auto v = model.doc_vector(issue.issue_id);
    CHECK(v.size() == 128);
    for (float x : v) CHECK(std::isfinite(x));
  }
  CHECK(all_finite(model.word_in));
  CHECK(all_finite(model.word_out));
}

TEST_CASE("doc_vector rejects unknown ids") {
  auto model = train_pvdm<float>(tiny_corpus(), DocVecConfig{.dim = 8,
                                                            .epochs = 1},
                                 8);
  CHECK_THROWS_AS(model.doc_vector("nope"), DataError);
}

TEST_CASE("training is invariant to corpus order, per id") {
  std::vector<TokenizedIssue> corpus = tiny_corpus();
  DocVecConfig config;
  config.dim = 12;
  config.epochs = 9;
  config.seed = 21;
  auto model_a = train_pvdm<float>(corpus, config, 8);
  std::vector<TokenizedIssue> permuted(corpus.rbegin(), corpus.rend());
  auto model_b = train_pvdm<float>(permuted, config, 8);
  for (const auto& issue : corpus) {
    auto va = model_a.doc_vector(issue.issue_id);
    auto vb = model_b.doc_vector(issue.issue_id);
    REQUIRE(va.size() == vb.size());
    for (std::size_t d = 0; d < va.size(); ++d) CHECK(va[d] == vb[d]);
  }
}

TEST_CASE("training is bit-reproducible with a fixed seed") {
  DocVecConfig config;
  config.dim = 16;
  config.epochs = 5;
  config.seed = 77;
  auto a = train_pvdm<float>(tiny_corpus(), config, 8);
  auto b = train_pvdm<float>(tiny_corpus(), config, 8);
  CHECK(model_bytes(a) == model_bytes(b));
}

TEST_CASE("epoch losses are non-increasing within 5% jitter") {
  DocVecConfig config;
  config.dim = 16;
  config.window = 2;
  config.epochs = 10;
  config.seed = 13;
  auto model = train_pvdm<float>(tiny_corpus(), config, 8);
  for (std::size_t e = 1; e < model.epoch_loss.size(); ++e)
    CHECK(model.epoch_loss[e] <= model.epoch_loss[e - 1] * 1.05);
}

TEST_CASE("infer_vector recovers a training document's region") {
  std::vector<TokenizedIssue> corpus = tiny_corpus();
  DocVecConfig config;
  config.dim = 16;
  config.window = 2;
  config.epochs = 120;
  config.seed = 9;
  auto model = train_pvdm<float>(corpus, config, 8);
  std::string before = model_bytes(model);

  std::vector<float> inferred = infer_vector(model, corpus[0].tokens, 60);
  CHECK(cosine_similarity(std::span<const float>(inferred),
                          model.doc_vector("doc/a0")) > 0.5);

  // Inference never mutates the model.
  CHECK(model_bytes(model) == before);

  // steps = 0 returns the seeded initialization, reproducibly.
  auto init_a = infer_vector(model, corpus[0].tokens, 0);
  auto init_b = infer_vector(model, corpus[0].tokens, 0);
  CHECK(init_a == init_b);
  CHECK(init_a != inferred);

  CHECK_THROWS_AS(infer_vector(model, {}, 5), DataError);
}

TEST_CASE("zero training epochs leave the output layer untouched") {
  DocVecConfig config;
  config.dim = 8;
  config.epochs = 0;
  config.seed = 2;
  auto model = train_pvdm<float>(tiny_corpus(), config, 8);
  for (float v : model.word_out.data) CHECK(v == 0.0f);
  CHECK(model.epoch_loss.empty());
}

TEST_CASE("analytic gradients match central finite differences") {
  CHECK(pvdm_gradient_check() < 1e-5);
}

TEST_CASE("symmetric output vectors give the hand-computed loss") {
  // One context vector c, center row +w, single negative row -w:
  //   loss = -log s(c.w) - log s(-c.(-w)) = -2 log s(c.w)
  Matrix<double> word_out(2, 3);
  std::vector<double> w = {0.4, -0.3, 0.2};
  for (std::size_t d = 0; d < 3; ++d) {
    word_out(0, d) = w[d];
    word_out(1, d) = -w[d];
  }
  std::vector<double> ctx = {0.5, 0.1, -0.7};
  std::vector<int> negatives = {1};
  double loss = bugsift::detail::negsampling_event<double>(
      word_out, ctx, 0, negatives, nullptr);
  double score = 0.4 * 0.5 + (-0.3) * 0.1 + 0.2 * (-0.7);
  CHECK(loss == doctest::Approx(-2.0 * log_sigmoid(score)).epsilon(1e-12));
}

TEST_CASE("empty corpus and empty documents are rejected") {
  DocVecConfig config;
  CHECK_THROWS_AS(train_pvdm<float>({}, config, 4), DataError);
  std::vector<TokenizedIssue> bad = {{"x", {}, ReporterType::bug}};
  CHECK_THROWS_AS(train_pvdm<float>(bad, config, 4), DataError);
}

TEST_CASE("model file round-trip preserves vectors and ids") {
  DocVecConfig config;
  config.dim = 8;
  config.epochs = 4;
  config.seed = 31;
  auto model = train_pvdm<float>(tiny_corpus(), config, 8);
  auto path = std::filesystem::temp_directory_path() / "bugsift_dv_rt.bin";
  save_docvec(model, path);
  auto back = load_docvec<float>(path);
  CHECK(back.doc_ids == model.doc_ids);
  CHECK(back.doc_vectors.data == model.doc_vectors.data);
  CHECK(back.word_in.data == model.word_in.data);
  CHECK(back.word_out.data == model.word_out.data);
  CHECK(back.token_counts == model.token_counts);

  std::string text = docvec_text_export(model);
  // one line per document, id first
  std::size_t lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == model.doc_ids.size());
  CHECK(text.rfind("doc/a0 ", 0) == 0);
}

TEST_CASE("lock-free parallel mode still converges to finite vectors") {
  DocVecConfig config;
  config.dim = 16;
  config.epochs = 6;
  config.threads = 2;
  config.seed = 41;
  auto model = train_pvdm<float>(tiny_corpus(), config, 8);
  CHECK(all_finite(model.doc_vectors));
  CHECK(model.epoch_loss.size() == 6);
}
