#include <doctest.h>

#include <fstream>

#include "s3rp/container.hpp"
#include "s3rp/error.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/rng.hpp"
#include "support.hpp"

using namespace s3rp;

TEST_CASE("grid spacing and validation") {
  GridSpec g;
  CHECK(g.n_hr() == 128);
  CHECK(g.spacing_hr() == doctest::Approx(1.0 / 128));
  CHECK(g.spacing_lr() == doctest::Approx(1.0 / 16));
  g.ratio = 1;
  CHECK_THROWS_AS(g.validate(), Error);
}

TEST_CASE("field sequence slicing and channel access") {
  auto s = testing::random_sequence(Resolution::lr, 5, 4, 1);
  auto sub = s.slice(2, 2);
  CHECK(sub.frames() == 2);
  CHECK(sub.at(0, 1, 3, 2) == s.at(2, 1, 3, 2));
  auto c = s.channel(4, FieldSequence::kC);
  CHECK(c(3, 0) == s.at(4, 3, 0, 2));
  auto w = s.wind(1);
  CHECK(w(2, 1, 1) == s.at(1, 2, 1, FieldSequence::kV));
  CHECK(wrap(-1, 4) == 3);
  CHECK(wrap(4, 4) == 0);
}

TEST_CASE("field sequence validation rejects negative concentration") {
  FieldSequence s(Resolution::hr, 1, 2);
  s.at(0, 0, 0, FieldSequence::kC) = -1e-3;
  try {
    s.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
  }
}

TEST_CASE("noise source is reproducible and serializable") {
  NoiseSource a(7), b(7);
  for (int k = 0; k < 10; ++k) CHECK(a.normal() == b.normal());
  const std::string st = a.state();
  const double next = a.uniform();
  NoiseSource c;
  c.set_state(st);
  CHECK(c.uniform() == next);
  auto d0 = NoiseSource::derive(3, 0), d1 = NoiseSource::derive(3, 1);
  CHECK(d0.next_u64() != d1.next_u64());
  NoiseSource e(1);
  for (int k = 0; k < 1000; ++k) CHECK(e.below(5) < 5u);
}

TEST_CASE("normal variates have unit moments") {
  NoiseSource rng(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("container round trip and error classes") {
  const auto path = testing::temp_path("container.bin");
  const container::Magic magic{'T', 'E', 'S', 'T'};
  std::vector<container::Array> arrays{
      {"a", container::DType::f64, {2, 3}, {1, 2, 3, 4, 5, 6.5}},
      {"b", container::DType::f32, {2}, {0.25, -1.0}}};
  container::write(path, magic, 3, {{"note", "x"}}, arrays);

  auto got = container::read(path, magic, 3);
  CHECK(got.meta["note"] == "x");
  CHECK(got.get("a").values == arrays[0].values);
  CHECK(got.get("b").shape == std::vector<std::int64_t>{2});
  CHECK(got.has("b"));
  CHECK_FALSE(got.has("c"));

  auto code_of = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::model;
  };
  CHECK(code_of([&] { container::read(path, magic, 4); }) == ErrorCode::version);
  CHECK(code_of([&] { container::read(path, {'N', 'O', 'P', 'E'}, 3); }) == ErrorCode::corrupt);
  CHECK(code_of([&] { container::read(testing::temp_path("missing.bin"), magic, 3); }) ==
        ErrorCode::io);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  CHECK(code_of([&] { container::read(path, magic, 3); }) == ErrorCode::corrupt);
}

TEST_CASE("stream writer matches the one-shot writer") {
  const container::Magic magic{'S', 'T', 'R', 'M'};
  std::vector<container::Array> arrays{{"x", container::DType::f32, {3, 2}, {1, 2, 3, 4, 5, 6}},
                                       {"y", container::DType::f64, {1}, {9}}};
  const auto one = testing::temp_path("one.bin"), two = testing::temp_path("two.bin");
  container::write(one, magic, 1, {}, arrays);
  {
    container::StreamWriter w(two, magic, 1, {}, arrays);
    const std::vector<double> first{1, 2, 3, 4}, rest{5, 6, 9};
    w.append(first);
    w.append(rest);
    w.close();
  }
  std::ifstream a(one, std::ios::binary), b(two, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);

  container::StreamWriter short_writer(testing::temp_path("short.bin"), magic, 1, {}, arrays);
  CHECK_THROWS_AS(short_writer.close(), Error);
}
