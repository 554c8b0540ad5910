#include <doctest.h>

#include <cmath>
#include <fstream>

#include "s3rp/config.hpp"
#include "s3rp/error.hpp"
#include "s3rp/eval.hpp"
#include "support.hpp"

using namespace s3rp;

namespace {

FieldSequence shifted(const FieldSequence& s, double d) {
  FieldSequence o = s;
  for (double& v : o.data()) v += d;
  return o;
}

int count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("mse: zero, constant offset and loop oracle") {
  const auto y = testing::random_sequence(Resolution::hr, 2, 6, 1);
  CHECK(eval::mse(y, y) == 0.0);
  CHECK(eval::mse(shifted(y, 0.01), y) == doctest::Approx(1e-4).epsilon(1e-9));
  const auto m = testing::random_sequence(Resolution::hr, 2, 6, 2);
  double all = 0.0, c = 0.0;
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int ch = 0; ch < 3; ++ch) {
          const double e = m.at(t, i, j, ch) - y.at(t, i, j, ch);
          all += e * e;
          if (ch == 2) c += e * e;
        }
  CHECK(std::abs(eval::mse(m, y) - all / (2 * 36 * 3)) <= 1e-12);
  CHECK(std::abs(eval::mse(m, y, 2) - c / (2 * 36)) <= 1e-12);
  CHECK_THROWS_AS(eval::mse(m, y.slice(0, 1)), Error);
}

TEST_CASE("ensemble moments of explicit samples") {
  const auto a = testing::random_sequence(Resolution::hr, 2, 4, 1);
  const auto same = eval::ensemble_from_samples({a, a, a});
  for (double v : same.std.data()) CHECK(v == 0.0);

  std::vector<FieldSequence> s;
  for (int k = 0; k < 5; ++k) s.push_back(testing::random_sequence(Resolution::hr, 2, 4, 10 + k));
  const auto e = eval::ensemble_from_samples(s);
  CHECK(e.members == 5);
  for (std::size_t p = 0; p < e.mean.data().size(); ++p) {
    double m = 0.0;
    for (const auto& x : s) m += x.data()[p];
    m /= 5;
    double v = 0.0;
    for (const auto& x : s) v += (x.data()[p] - m) * (x.data()[p] - m);
    CHECK(std::abs(e.mean.data()[p] - m) <= 1e-10);
    CHECK(std::abs(e.std.data()[p] - std::sqrt(v / 4)) <= 1e-10);
  }
}

TEST_CASE("ecp: exact mean, nesting and zero spread") {
  const auto y = testing::random_sequence(Resolution::hr, 1, 8, 3);
  FieldSequence sd(Resolution::hr, 1, 8);
  for (double& v : sd.data()) v = 0.1;
  for (double k : {0.0, 1.0, 2.0}) CHECK(eval::ecp(y, sd, y, k) == 1.0);
  CHECK(eval::ecp(y, FieldSequence(Resolution::hr, 1, 8), y, 1.0) == 1.0);
  CHECK(eval::ecp(shifted(y, 1e-6), FieldSequence(Resolution::hr, 1, 8), y, 1.0) == 0.0);

  const auto m = testing::random_sequence(Resolution::hr, 1, 8, 4);
  CHECK(eval::ecp(m, sd, y, 2.0) >= eval::ecp(m, sd, y, 1.0));
}

TEST_CASE("ecp reproduces Gaussian coverage on a million sites") {
  const int n = 578;
  FieldSequence truth(Resolution::hr, 1, n), mean(Resolution::hr, 1, n), sd(Resolution::hr, 1, n);
  NoiseSource rng(42);
  for (std::size_t p = 0; p < truth.data().size(); ++p) {
    const double s = 0.1 + rng.uniform();
    truth.data()[p] = rng.normal();
    sd.data()[p] = s;
    mean.data()[p] = truth.data()[p] + s * rng.normal();
  }
  CHECK(std::abs(eval::ecp(mean, sd, truth, 1.0) - 0.683) <= 0.01);
  CHECK(std::abs(eval::ecp(mean, sd, truth, 2.0) - 0.954) <= 0.01);
}

TEST_CASE("quantile coverage of an exchangeable ensemble") {
  const int members = 39, n = 40;
  NoiseSource rng(3);
  std::vector<FieldSequence> samples(members, FieldSequence(Resolution::hr, 1, n));
  FieldSequence truth(Resolution::hr, 1, n);
  for (std::size_t p = 0; p < truth.data().size(); ++p) {
    truth.data()[p] = rng.normal();
    for (auto& s : samples) s.data()[p] = rng.normal();
  }
  CHECK(std::abs(eval::ecp_quantile(samples, truth, 0.95) - 0.95) <= 0.06);
  CHECK(eval::ecp_quantile(samples, truth, 0.95) >= eval::ecp_quantile(samples, truth, 0.68));
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> a{1, 2, 3, 4, 5}, up{2, 4, 8, 16, 32}, down{5, 4, 3, 2, 1};
  CHECK(eval::spearman(a, up) == doctest::Approx(1.0));
  CHECK(eval::spearman(a, down) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2, 3};
  // Average ranks 1.5, 1.5, 3.5, 3.5, 5 against 1..5.
  CHECK(eval::spearman(a, ties) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("error/std histogram") {
  std::vector<double> err(1000), sd(1000, 0.3);
  NoiseSource rng(1);
  for (double& e : err) e = rng.uniform();
  const auto h = eval::error_std_histogram(err, sd, 16);
  CHECK(h.counts.size() == 256);
  int rows_used = 0;
  std::int64_t total = 0;
  for (int s = 0; s < 16; ++s) {
    std::int64_t row = 0;
    for (int e = 0; e < 16; ++e) row += h.counts[s * 16 + e];
    rows_used += row > 0;
    total += row;
  }
  CHECK(rows_used == 1);
  CHECK(total == 1000);

  std::vector<double> prop(1000);
  for (std::size_t k = 0; k < err.size(); ++k) prop[k] = 2.5 * err[k];
  CHECK(eval::error_std_histogram(err, prop, 16).rank_correlation >= 0.99);

  const auto path = testing::temp_path("hist.csv");
  eval::write_histogram_csv(h, path);
  CHECK(count_lines(path) > 1);
}

TEST_CASE("coordinate trace at a zero-concentration site") {
  FieldSequence zero(Resolution::hr, 4, 8);
  const auto ens = eval::ensemble_from_samples({zero, zero});
  const auto rows = eval::coordinate_trace(ens, zero, 0, 0);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.mean == 0.0);
    CHECK(r.std == 0.0);
  }
  const auto path = testing::temp_path("trace.csv");
  eval::write_trace_csv(rows, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,truth,mean,std,lo1,hi1,lo2,hi2,sample");
  CHECK_THROWS_AS(eval::coordinate_trace(ens, zero, 8, 0), Error);
}

TEST_CASE("monte carlo prediction: determinism, jobs independence and streaming") {
  auto mc = testing::tiny_model(model::Mode::extrapolation);
  mc.grid.n_lr = 4;
  model::S3rpModel m(mc, 2);
  const auto x = testing::random_sequence(Resolution::lr, 4, 4, 3, 0.0, 1.0);
  eval::McOptions o;
  o.members = 5;
  o.seed = 9;
  o.keep_samples = true;
  o.horizon = 6;
  const auto a = eval::mc_predict(m, x, o);
  o.jobs = 3;
  std::vector<int> seen;
  o.on_member = [&](int k, const FieldSequence& s) {
    seen.push_back(k);
    CHECK(s.frames() == 6);
  };
  const auto b = eval::mc_predict(m, x, o);
  CHECK(seen == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(a.mean.data() == b.mean.data());
  CHECK(a.std.data() == b.std.data());
  REQUIRE(a.samples.size() == 5);
  const auto e = eval::ensemble_from_samples(a.samples);
  CHECK(testing::max_abs_diff(e.mean.data(), a.mean.data()) <= 1e-10);
  CHECK(testing::max_abs_diff(e.std.data(), a.std.data()) <= 1e-10);

  o.keep_samples = false;
  o.on_member = {};
  const auto c = eval::mc_predict(m, x, o);
  CHECK(c.samples.size() == 1);
  CHECK(c.samples[0].data() == a.samples[0].data());

  // Member m uses stream derive(seed, m).
  NoiseSource n3 = NoiseSource::derive(9, 3);
  CHECK(m.rollout(x, 6, n3).data() == a.samples[3].data());

  o.members = 1;
  CHECK_THROWS_AS(eval::mc_predict(m, x, o), Error);
}

TEST_CASE("evaluate on an untrained model yields a finite report") {
  auto cfg = testing::tiny_toolkit(2, 8, 1);
  const auto ds = config::generate_dataset(cfg);
  model::S3rpModel m(cfg.model, 1);
  m.set_normalization(ds.norm);
  eval::EvalOptions o;
  o.mc.members = 3;
  o.max_sequences = 1;
  int seen = 0;
  const auto rep = eval::evaluate(m, ds, o, [&](const data::Sample&, const eval::McEnsemble& e) {
    ++seen;
    CHECK(e.members == 3);
  });
  CHECK(seen == 1);
  CHECK(rep.sequences == 1);
  for (double v : {rep.model.mse, rep.model.eps_advdiff, rep.model.eps_div, *rep.model.ecp_1sigma,
                   *rep.model.ecp_2sigma, rep.baseline.mse, rep.baseline.eps_advdiff, rep.baseline.eps_div})
    CHECK(std::isfinite(v));
  CHECK(*rep.model.ecp_2sigma >= *rep.model.ecp_1sigma);
  const auto j = rep.to_json();
  for (const char* k : {"mse", "ecp_1sigma", "ecp_2sigma", "eps_advdiff", "eps_div"})
    CHECK(j["model"].contains(k));
  CHECK(j["baseline"]["metrics"]["ecp_1sigma"].is_null());
  CHECK(j["baseline"]["name"] == "bicubic");
}

TEST_CASE("evaluate requires holdout HR and metadata") {
  auto cfg = testing::tiny_toolkit(2, 8, 1);
  auto ds = config::generate_dataset(cfg);
  model::S3rpModel m(cfg.model, 1);
  eval::EvalOptions o;
  o.mc.members = 2;
  auto no_hr = ds;
  for (auto& s : no_hr.samples) s.hr.reset();
  auto code = [&](const data::Dataset& d) {
    try {
      eval::evaluate(m, d, o);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::model;
  };
  CHECK(code(no_hr) == ErrorCode::evaluation);
  auto no_meta = ds;
  no_meta.sims.clear();
  CHECK(code(no_meta) == ErrorCode::evaluation);
}
