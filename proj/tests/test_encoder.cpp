#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motion_forge/encoder.hpp"
#include "motion_forge/nn.hpp"
#include "support.hpp"

#include <fstream>
#include <set>

using namespace mforge;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

Points random_points(int n, std::mt19937_64& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) p(i, k) = u(gen);
  return p;
}

CloudTensor random_cloud(int n, std::mt19937_64& gen, double scale = 0.3) {
  std::vector<Vec3> a, b, c;
  std::uniform_real_distribution<double> u(-scale, scale);
  for (int i = 0; i < n; ++i) {
    Vec3 p(u(gen), u(gen), u(gen) + 0.4);
    (i % 3 == 0 ? a : i % 3 == 1 ? b : c).push_back(p);
  }
  return make_cloud({{PointClass::robot, &a}, {PointClass::obstacle, &b}, {PointClass::target, &c}});
}

Matrix random_matrix(int r, int c, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(gen);
  return m;
}

double min_pairwise(const Points& p, const std::vector<int>& idx) {
  double best = 1e9;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j) best = std::min(best, (p.row(idx[i]) - p.row(idx[j])).norm());
  return best;
}

/// Central-difference check of dL/dx for L = sum(W .* f(x)).
template <class F, class B>
double jvp_check(const Matrix& x, F&& forward, B&& backward, std::mt19937_64& gen, int probes = 40) {
  Matrix y = forward(x);
  Matrix w = random_matrix(y.rows(), y.cols(), gen);
  Matrix dx = backward(w);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
  double worst = 0.0;
  const double h = 1e-6;
  for (int k = 0; k < probes; ++k) {
    int i = pick(gen);
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    double fd = ((forward(xp).array() * w.array()).sum() - (forward(xm).array() * w.array()).sum()) / (2 * h);
    if (std::max(std::abs(fd), std::abs(dx.data()[i])) < 1e-6) continue;
    worst = std::max(worst, testing::rel_err(fd, dx.data()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("fps with k = N returns every index") {
  std::mt19937_64 gen(1);
  Points p = random_points(50, gen);
  auto idx = furthest_point_sampling_from(p, 50, 7);
  std::set<int> s(idx.begin(), idx.end());
  CHECK(s.size() == 50);
  CHECK(idx.front() == 7);
}

TEST_CASE("fps on a square picks the diagonal corner second") {
  Points p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  auto idx = furthest_point_sampling_from(p, 2, 0);
  CHECK(idx == std::vector<int>{0, 2});
}

TEST_CASE("fps spreads points further than uniform sampling") {
  std::mt19937_64 gen(2);
  double fps = 0.0, uniform = 0.0;
  for (int t = 0; t < 100; ++t) {
    Points p = random_points(1024, gen);
    Rng rng(t);
    fps += min_pairwise(p, furthest_point_sampling(p, 32, rng));
    std::vector<int> all(1024);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), gen);
    all.resize(32);
    uniform += min_pairwise(p, all);
  }
  CHECK(fps > uniform);
}

TEST_CASE("ball query on an isolated point") {
  Points p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Points c(1, 3);
  c << 0, 0, 0;
  auto g = ball_query(p, c, 1e-3, 4);
  REQUIRE(g.size() == 1);
  CHECK(g[0].size() == 4);
  CHECK(std::set<int>(g[0].begin(), g[0].end()) == std::set<int>{0});
  Points far(1, 3);
  far << 5, 5, 5;
  CHECK_THROWS_AS(ball_query(p, far, 0.1, 4), EmptyBall);
}

TEST_CASE("ball query caps large groups at max_k members within the radius") {
  std::mt19937_64 gen(3);
  Points p = random_points(200, gen, 0.1);
  Points c = p.topRows(3);
  auto g = ball_query(p, c, 1.0, 16);
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(g[k].size() == 16);
    CHECK(std::set<int>(g[k].begin(), g[k].end()).size() == 16);
    for (int i : g[k]) CHECK((p.row(i) - c.row(k)).norm() <= 1.0);
  }
}

TEST_CASE("ball query matches brute-force neighbor sets") {
  std::mt19937_64 gen(4);
  for (int t = 0; t < 100; ++t) {
    Points p = random_points(300, gen);
    Points c = p.topRows(10);
    const double radius = 0.35;
    const int max_k = 40;
    auto g = ball_query(p, c, radius, max_k);
    for (int k = 0; k < c.rows(); ++k) {
      std::vector<std::pair<double, int>> in;
      for (int i = 0; i < p.rows(); ++i) {
        double d = (p.row(i) - c.row(k)).norm();
        if (d <= radius) in.push_back({d, i});
      }
      std::sort(in.begin(), in.end());
      if (static_cast<int>(in.size()) > max_k) in.resize(max_k);
      std::set<int> expect;
      for (auto& [d, i] : in) expect.insert(i);
      CHECK(std::set<int>(g[k].begin(), g[k].end()) == expect);
    }
  }
}

TEST_CASE("max pool breaks ties toward the lowest row") {
  Matrix x(4, 2);
  x << 1, 5, 3, 5, 3, 2, 0, 5;
  std::vector<int> arg;
  Matrix y = group_max_pool(x, 4, &arg);
  CHECK(y(0, 0) == 3);
  CHECK(y(0, 1) == 5);
  CHECK(arg == std::vector<int>{1, 0});
  Matrix dx = group_max_pool_backward(arg, Matrix::Ones(1, 2), 4);
  CHECK(dx(1, 0) == 1);
  CHECK(dx(2, 0) == 0);
  CHECK(dx(0, 1) == 1);
  CHECK(dx(3, 1) == 0);
}

TEST_CASE("layer backward passes match finite differences") {
  std::mt19937_64 gen(5);
  Rng rng(6);
  SUBCASE("linear") {
    Linear l = Linear::init(5, 4, rng);
    Matrix x = random_matrix(6, 5, gen);
    double e = jvp_check(
        x, [&](const Matrix& v) { return l.forward(v); },
        [&](const Matrix& dy) { return l.backward(x, dy); }, gen);
    CHECK(e <= 1e-4);
  }
  SUBCASE("group norm") {
    GroupNorm n = GroupNorm::init(16);
    n.gamma.value = random_matrix(1, 16, gen);
    n.beta.value = random_matrix(1, 16, gen);
    Matrix x = random_matrix(6, 16, gen);
    GroupNorm::Cache cache;
    double e = jvp_check(
        x, [&](const Matrix& v) { return n.forward(v, nullptr); },
        [&](const Matrix& dy) {
          n.forward(x, &cache);
          return n.backward(cache, dy);
        },
        gen);
    CHECK(e <= 1e-4);
  }
  SUBCASE("leaky relu") {
    Matrix x = random_matrix(6, 7, gen);
    double e = jvp_check(
        x, [&](const Matrix& v) { return leaky_relu(v); },
        [&](const Matrix& dy) { return leaky_relu_backward(x, dy); }, gen);
    CHECK(e <= 1e-4);
  }
  SUBCASE("max pool") {
    Matrix x = random_matrix(12, 5, gen);
    double e = jvp_check(
        x, [&](const Matrix& v) { return group_max_pool(v, 4, nullptr); },
        [&](const Matrix& dy) {
          std::vector<int> arg;
          group_max_pool(x, 4, &arg);
          return group_max_pool_backward(arg, dy, 12);
        },
        gen);
    CHECK(e <= 1e-4);
  }
  SUBCASE("mlp with norm") {
    Mlp m = Mlp::init(9, {8, 8, 16}, true, true, true, rng);
    Matrix x = random_matrix(10, 9, gen);
    double e = jvp_check(
        x, [&](const Matrix& v) { return m.forward(v); },
        [&](const Matrix& dy) {
          Mlp::Cache c;
          m.forward(x, &c);
          return m.backward(c, dy);
        },
        gen);
    CHECK(e <= 1e-4);
  }
  SUBCASE("set abstraction gather") {
    CloudTensor cloud = random_cloud(60, gen);
    SetAbstractionSpec spec{8, 0.25, 6, {8, 8, 8}};
    Mlp m = Mlp::init(3 + kCloudFeatures, spec.widths, true, true, true, rng);
    double e = jvp_check(
        cloud.features,
        [&](const Matrix& f) {
          CloudTensor c = cloud;
          c.features = f;
          return set_abstraction(c, spec, m, 0).features;
        },
        [&](const Matrix& dy) {
          SetAbstractionCache cache;
          set_abstraction(cloud, spec, m, 0, &cache);
          return set_abstraction_backward(cache, m, dy, kCloudFeatures);
        },
        gen);
    CHECK(e <= 1e-4);
  }
}

TEST_CASE("parameter gradients of the encoder match finite differences") {
  std::mt19937_64 gen(7);
  Rng rng(8);
  EncoderParams params = EncoderParams::init(EncoderProfile::desk(), rng);
  CloudTensor cloud = random_cloud(96, gen);
  RowVector w = random_matrix(1, params.profile.embedding(), gen);
  auto loss = [&] { return encode_cloud_from(cloud, params, 0).dot(w); };
  params.visit("", [](const std::string&, Tensor& t) { t.zero_grad(); });
  EncoderCache cache;
  encode_cloud_from(cloud, params, 0, &cache);
  encode_backward(cache, params, w);
  double worst = 0.0;
  int checked = 0;
  std::vector<std::pair<std::string, Tensor*>> all;
  params.visit("", [&](const std::string& n, Tensor& t) { all.emplace_back(n, &t); });
  for (auto& [name, t] : all) {
    for (int k = 0; k < 3; ++k) {
      int i = static_cast<int>((k * 7919 + 31) % t->value.size());
      double g = t->grad.data()[i];
      double old = t->value.data()[i];
      const double h = 1e-6;
      t->value.data()[i] = old + h;
      double lp = loss();
      t->value.data()[i] = old - h;
      double lm = loss();
      t->value.data()[i] = old;
      double fd = (lp - lm) / (2 * h);
      if (std::max(std::abs(fd), std::abs(g)) < 1e-5) continue;
      ++checked;
      worst = std::max(worst, testing::rel_err(fd, g));
      if (testing::rel_err(fd, g) > 1e-4) MESSAGE(name << "[" << i << "] analytic " << g << " fd " << fd);
    }
  }
  CHECK(checked > 30);
  CHECK(worst <= 1e-4);
}

TEST_CASE("a group of identical points pools to the single point output") {
  Rng rng(9);
  std::vector<Vec3> pts(5, Vec3(0.1, 0.2, 0.3));
  CloudTensor cloud = make_cloud({{PointClass::obstacle, &pts}});
  SetAbstractionSpec spec{1, 0.1, 5, {8, 8}};
  Mlp m = Mlp::init(3 + kCloudFeatures, spec.widths, false, false, true, rng);
  CloudTensor out = set_abstraction(cloud, spec, m, 0);
  Matrix row(1, 3 + kCloudFeatures);
  row << 0, 0, 0, cloud.features.row(0);
  CHECK((out.features - m.forward(row)).norm() == 0.0);
}

TEST_CASE("encoder is invariant to point order and duplication") {
  std::mt19937_64 gen(10);
  Rng rng(11);
  EncoderParams params = EncoderParams::init(EncoderProfile::desk(), rng);
  CloudTensor cloud = random_cloud(300, gen);
  RowVector base = encode_cloud_from(cloud, params, 5);

  std::vector<int> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  CloudTensor shuffled = cloud;
  int start = -1;
  for (int i = 0; i < cloud.size(); ++i) {
    shuffled.points.row(i) = cloud.points.row(perm[i]);
    shuffled.features.row(i) = cloud.features.row(perm[i]);
    if (perm[i] == 5) start = i;
  }
  CHECK((encode_cloud_from(shuffled, params, start) - base).cwiseAbs().maxCoeff() <= 1e-9);

  CloudTensor doubled;
  doubled.points.resize(2 * cloud.size(), 3);
  doubled.features.resize(2 * cloud.size(), cloud.features.cols());
  doubled.points << cloud.points, cloud.points;
  doubled.features << cloud.features, cloud.features;
  CHECK((encode_cloud_from(doubled, params, 5) - base).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(deduplicate(doubled).size() == cloud.size());
}

TEST_CASE("encoder output is deterministic but not translation invariant") {
  std::mt19937_64 gen(12);
  Rng init(13);
  EncoderParams params = EncoderParams::init(EncoderProfile::desk(), init);
  CloudTensor cloud = random_cloud(200, gen);
  Rng a(14), b(14);
  RowVector x = encode_cloud(cloud, params, a), y = encode_cloud(cloud, params, b);
  CHECK(x == y);
  CloudTensor moved = cloud;
  moved.points.rowwise() += Eigen::RowVector3d(0.2, -0.1, 0.05);
  moved.features.rightCols(3) = moved.points;
  Rng c(14);
  CHECK((encode_cloud(moved, params, c) - x).norm() > 1e-6);
}

TEST_CASE("cloud validation") {
  CloudTensor empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  std::mt19937_64 gen(15);
  CloudTensor c = random_cloud(10, gen);
  CHECK_NOTHROW(c.validate());
  c.points(3, 1) = std::nan("");
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("paper profile shape chain") {
  EncoderProfile p = EncoderProfile::paper();
  CHECK(p.blocks[0].samples == 512);
  CHECK(p.blocks[0].radius == doctest::Approx(0.05));
  CHECK(p.blocks[0].max_group == 128);
  CHECK(p.blocks[1].samples == 128);
  CHECK(p.blocks[1].radius == doctest::Approx(0.3));
  CHECK(p.blocks[2].global());
  CHECK(p.embedding() == 2048);
  EncoderProfile d = EncoderProfile::desk();
  CHECK(d.blocks[0].samples == 64);
  CHECK(d.embedding() == 256);
  CHECK_THROWS(EncoderProfile::by_name("huge"));
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(16);
  EncoderParams params = EncoderParams::init(EncoderProfile::desk(), rng);
  std::vector<std::pair<std::string, const Tensor*>> out;
  params.visit("enc", [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); });
  auto dir = testing::scratch_dir("ckpt");
  write_checkpoint(dir / "a.ckpt", "desk", out);
  CHECK(read_checkpoint_profile(dir / "a.ckpt") == "desk");

  Rng other(17);
  EncoderParams back = EncoderParams::init(EncoderProfile::desk(), other);
  std::vector<std::pair<std::string, Tensor*>> in;
  back.visit("enc", [&](const std::string& n, Tensor& t) { in.emplace_back(n, &t); });
  read_checkpoint(dir / "a.ckpt", in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    Matrix expect = out[i].second->value.cast<float>().cast<double>();
    CHECK(in[i].second->value == expect);
  }

  auto size = std::filesystem::file_size(dir / "a.ckpt");
  std::filesystem::resize_file(dir / "a.ckpt", size - 10);
  CHECK_THROWS_AS(read_checkpoint(dir / "a.ckpt", in), CheckpointError);
  std::ofstream(dir / "b.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(read_checkpoint_profile(dir / "b.ckpt"), CheckpointError);
}

TEST_CASE("adam moves against the gradient and skips zero learning rate") {
  Tensor t = Tensor::zeros(1, 3);
  t.grad << 1.0, -2.0, 0.0;
  Adam adam(AdamOptions{0.1});
  adam.step({&t});
  CHECK(t.value(0, 0) < 0);
  CHECK(t.value(0, 1) > 0);
  CHECK(t.value(0, 2) == 0);
  Tensor u = Tensor::zeros(1, 2);
  u.value << 0.5, -0.25;
  u.grad << 3.0, 4.0;
  Adam frozen(AdamOptions{0.0});
  frozen.step({&u});
  CHECK(u.value(0, 0) == 0.5);
  CHECK(u.value(0, 1) == -0.25);
}
