#include <doctest.h>

#include <cmath>
#include <fstream>

#include "s3rp/config.hpp"
#include "s3rp/error.hpp"
#include "s3rp/train.hpp"
#include "support.hpp"

using namespace s3rp;

namespace {

struct Toy {
  config::ToolkitConfig cfg;
  data::Dataset ds;
  data::LrTrainingSet view;
};

const Toy& toy() {
  static const Toy t = [] {
    Toy out;
    out.cfg = testing::tiny_toolkit(3, 12, 1);
    out.cfg.train.lr = 1e-3;
    out.cfg.train.batch = 2;
    out.cfg.train.chunk = 6;
    out.cfg.loss.gamma = 1.0;
    out.ds = config::generate_dataset(out.cfg);
    out.view = out.ds.training_view();
    return out;
  }();
  return t;
}

std::vector<double> flat_params(const model::Checkpoint& ck) {
  std::vector<double> v;
  for (const auto& a : ck.arrays)
    if (a.name.rfind("param/", 0) == 0) v.insert(v.end(), a.values.begin(), a.values.end());
  return v;
}

int count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("gradient clipping bounds the global norm") {
  std::vector<double> a{3.0, 0.0}, b{4.0};
  std::vector<std::vector<double>*> g{&a, &b};
  CHECK(train::clip_gradients(g, 1.0) == doctest::Approx(1.0));
  CHECK(a[0] == doctest::Approx(0.6));
  CHECK(b[0] == doctest::Approx(0.8));
  CHECK(train::clip_gradients(g, 10.0) == doctest::Approx(1.0));
  CHECK(a[0] == doctest::Approx(0.6));
}

TEST_CASE("zero steps returns the initial model") {
  const auto& t = toy();
  auto tc = t.cfg.train;
  tc.max_steps = 0;
  const auto ck = train::train(t.cfg.model, tc, t.cfg.loss, t.view);
  model::S3rpModel fresh(t.cfg.model, tc.seed);
  CHECK(flat_params(ck) == flat_params(model::make_checkpoint(fresh)));
  CHECK(ck.step == 0);
}

TEST_CASE("training reduces the loss on a toy dataset") {
  const auto& t = toy();
  auto tc = t.cfg.train;
  tc.max_steps = 200;
  std::vector<double> totals;
  train::TrainCallbacks cb;
  cb.on_step = [&](std::int64_t, const objective::LossBreakdown& b) { totals.push_back(b.total); };
  const auto dir = testing::temp_path("train_toy");
  std::filesystem::remove_all(dir);
  const auto ck = train::train(t.cfg.model, tc, t.cfg.loss, t.view, dir, cb);
  REQUIRE(totals.size() == 200);
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 10; ++k) {
    first += totals[k] / 10;
    last += totals[190 + k] / 10;
  }
  CHECK(last <= 0.7 * first);
  CHECK(ck.step == 200);
  CHECK(std::filesystem::exists(dir / "final.s3ck"));
  CHECK(count_lines(dir / "train_log.csv") == 201);
  std::ifstream log(dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,recon,mmd,phys_adv,phys_div,total");
  auto m = model::model_from_checkpoint(ck);
  CHECK(m->constraint_violation() <= 1e-6);
}

TEST_CASE("resume reproduces the uninterrupted run exactly") {
  const auto& t = toy();
  auto tc = t.cfg.train;
  tc.max_steps = 12;
  tc.checkpoint_interval = 6;
  const auto dir = testing::temp_path("train_resume");
  std::filesystem::remove_all(dir);
  std::vector<double> straight, resumed;
  train::TrainCallbacks cb_a, cb_b;
  cb_a.on_step = [&](std::int64_t, const objective::LossBreakdown& b) { straight.push_back(b.total); };
  cb_b.on_step = [&](std::int64_t, const objective::LossBreakdown& b) { resumed.push_back(b.total); };
  const auto full = train::train(t.cfg.model, tc, t.cfg.loss, t.view, dir, cb_a);
  REQUIRE(std::filesystem::exists(dir / "ckpt_6.s3ck"));
  CHECK(std::filesystem::exists(dir / "ckpt_12.s3ck"));

  const auto back = train::resume(dir / "ckpt_6.s3ck", tc, t.cfg.loss, t.view, dir, cb_b);
  REQUIRE(resumed.size() == 6);
  for (int k = 0; k < 6; ++k) CHECK_MESSAGE(resumed[k] == straight[6 + k], k, " ", resumed[k] - straight[6 + k]);
  CHECK(testing::max_abs_diff(flat_params(full), flat_params(back)) <= 1e-12);
  // The log keeps one row per step.
  CHECK(count_lines(dir / "train_log.csv") == 13);
}

TEST_CASE("resume honours a changed learning rate from the first resumed step") {
  const auto& t = toy();
  auto tc = t.cfg.train;
  tc.max_steps = 3;
  const auto ck = train::train(t.cfg.model, tc, t.cfg.loss, t.view);
  auto slow = tc;
  slow.max_steps = 4;
  slow.lr = 1e-14;
  auto fast = slow;
  fast.lr = 1e-3;
  const auto a = flat_params(ck);
  const auto s = flat_params(train::resume(ck, slow, t.cfg.loss, t.view));
  const auto f = flat_params(train::resume(ck, fast, t.cfg.loss, t.view));
  // The projection may move constrained entries by round-off only.
  CHECK(testing::max_abs_diff(a, s) <= 1e-12);
  CHECK(testing::max_abs_diff(a, f) > 1e-5);
}

TEST_CASE("corrupted checkpoint fails to load") {
  const auto& t = toy();
  auto tc = t.cfg.train;
  tc.max_steps = 1;
  const auto dir = testing::temp_path("train_corrupt");
  std::filesystem::remove_all(dir);
  train::train(t.cfg.model, tc, t.cfg.loss, t.view, dir);
  const auto p = dir / "final.s3ck";
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(train::resume(p, tc, t.cfg.loss, t.view), Error);
}

TEST_CASE("non-finite data raises a numeric error and dumps state") {
  const auto& t = toy();
  auto view = t.view;
  for (auto& s : view.sequences) s.data()[5] = std::nan("");
  auto tc = t.cfg.train;
  tc.max_steps = 2;
  const auto dir = testing::temp_path("train_nan");
  std::filesystem::remove_all(dir);
  try {
    train::train(t.cfg.model, tc, t.cfg.loss, view, dir);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
  CHECK(std::filesystem::exists(dir / "nan_dump.s3ck"));
}

TEST_CASE("trainer rejects inconsistent configurations") {
  const auto& t = toy();
  model::S3rpModel m(t.cfg.model, 0);
  auto tc = t.cfg.train;
  tc.batch = 1;
  CHECK_THROWS_AS(train::Trainer(m, tc, t.cfg.loss, t.view), Error);
  auto w = t.cfg.loss;
  w.lambda = 0.0;
  CHECK_NOTHROW(train::Trainer(m, tc, w, t.view));
  tc = t.cfg.train;
  tc.chunk = 100;
  CHECK_THROWS_AS(train::Trainer(m, tc, t.cfg.loss, t.view), Error);
  tc = t.cfg.train;
  tc.lr = -1.0;
  CHECK_THROWS_AS(tc.validate(), Error);
}

TEST_CASE("sgd optimiser moves parameters along the negative gradient") {
  const auto& t = toy();
  model::S3rpModel m(t.cfg.model, 0);
  m.set_normalization(t.view.norm);
  auto tc = t.cfg.train;
  tc.optimizer = train::Optimizer::sgd;
  tc.lr = 1e-3;
  train::Trainer tr(m, tc, t.cfg.loss, t.view);
  const auto before = flat_params(model::make_checkpoint(m));
  tr.step();
  CHECK(tr.steps_done() == 1);
  CHECK(tr.last_grad_norm() <= tc.clip_norm + 1e-12);
  const auto after = flat_params(model::make_checkpoint(m));
  double moved = 0.0;
  for (std::size_t k = 0; k < after.size(); ++k) moved += std::abs(after[k] - before[k]);
  CHECK(moved > 0.0);
  CHECK(moved <= tc.lr * tc.clip_norm * std::sqrt(static_cast<double>(after.size())) + 1e-9);
}
