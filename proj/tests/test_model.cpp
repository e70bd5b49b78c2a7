#include <doctest.h>

#include <cmath>
#include <random>

#include "stochabs/model.hpp"
#include "stochabs/rng.hpp"

using namespace stochabs;

namespace {

// room: x+ = 0.4 x + gamma (Th - x) nu + 0.1 (w1 + w2) + beta Te + 0.21 zeta
NonlinearSCS make_room() {
  NonlinearSCS sys;
  sys.A = Matrix::Constant(1, 1, 0.4);
  sys.B = Matrix::Constant(1, 1, 25.0);  // gamma * Th
  sys.C = Matrix::Identity(1, 1);
  sys.D = Matrix::Constant(1, 2, 0.1);
  sys.R = Matrix::Identity(1, 1);
  sys.noise_std = Vector::Constant(1, 0.21);
  sys.bias = Vector::Constant(1, -0.4);  // beta * Te
  sys.bilinear.push_back({0, Matrix::Constant(1, 1, -0.5)});  // -gamma * nu * x
  return sys;
}

Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("room step matches the hand evaluation") {
  const NonlinearSCS room = make_room();
  Vector w(2);
  w << 20.0, 20.0;
  const Vector next = room.step(vec1(20.0), vec1(0.0), w, vec1(0.0));
  CHECK(next(0) == doctest::Approx(11.6).epsilon(1e-12));
  CHECK(room.output(vec1(20.0))(0) == doctest::Approx(20.0));
}

TEST_CASE("zero system maps everything to zero") {
  NonlinearSCS sys;
  sys.A = Matrix::Zero(3, 3);
  sys.B = Matrix::Zero(3, 2);
  sys.C = Matrix::Identity(3, 3);
  sys.D = Matrix::Zero(3, 0);
  sys.R = Matrix::Zero(3, 0);
  sys.noise_std = Vector::Zero(0);
  const Vector next = sys.step(Vector::Random(3), Vector::Random(2), Vector(0), Vector(0));
  CHECK(next.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear case agrees with a dense matrix oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 20; ++trial) {
    NonlinearSCS sys;
    const int n = 4, m = 2, p = 3, r = 2;
    auto rand_mat = [&](int rows, int cols) {
      Matrix M(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) M(i, j) = gauss(rng);
      return M;
    };
    sys.A = rand_mat(n, n);
    sys.B = rand_mat(n, m);
    sys.C = rand_mat(2, n);
    sys.D = rand_mat(n, p);
    sys.R = rand_mat(n, r);
    sys.noise_std = Vector::Constant(r, 0.5);
    const Vector x = Vector::Random(n), nu = Vector::Random(m), w = Vector::Random(p),
                 zeta = Vector::Random(r);
    const Vector oracle =
        sys.A * x + sys.B * nu + sys.D * w + sys.R * (sys.noise_std.asDiagonal() * zeta);
    CHECK((sys.step(x, nu, w, zeta) - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("step is affine in the noise argument") {
  const NonlinearSCS room = make_room();
  Vector w(2);
  w << 19.5, 20.5;
  const Vector base = room.step(vec1(20.3), vec1(0.2), w, vec1(0.0));
  const Vector z1 = room.step(vec1(20.3), vec1(0.2), w, vec1(1.7)) - base;
  const Vector z2 = room.step(vec1(20.3), vec1(0.2), w, vec1(-0.4)) - base;
  const Vector z12 = room.step(vec1(20.3), vec1(0.2), w, vec1(1.3)) - base;
  CHECK((z12 - (z1 + z2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sampled next-state variance matches the noise map row norms") {
  NonlinearSCS sys;
  sys.A = Matrix::Zero(2, 2);
  sys.B = Matrix::Zero(2, 1);
  sys.C = Matrix::Identity(2, 2);
  sys.D = Matrix::Zero(2, 0);
  sys.R = Matrix(2, 2);
  sys.R << 1.0, 0.5, 0.0, 2.0;
  sys.noise_std = Vector(2);
  sys.noise_std << 0.3, 0.7;
  const Matrix gamma = sys.noise_matrix();

  const int samples = 100000;
  const NoiseStream stream(99, 0);
  Vector sum = Vector::Zero(2), sumsq = Vector::Zero(2);
  for (int k = 0; k < samples; ++k) {
    Vector zeta(2);
    zeta << stream.gaussian(k, 0), stream.gaussian(k, 1);
    const Vector next = sys.step(Vector::Zero(2), Vector::Zero(1), Vector(0), zeta);
    sum += next;
    sumsq += next.cwiseProduct(next);
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = sum(d) / samples;
    const double var = sumsq(d) / samples - mean * mean;
    const double expect = gamma.row(d).squaredNorm();
    // var(chi^2-ish) ~ 2 expect^2 / n, use 3 sigma
    CHECK(std::abs(var - expect) < 3.0 * expect * std::sqrt(2.0 / samples));
  }
}

TEST_CASE("slope normalization preserves trajectories") {
  NonlinearSCS sys;
  const int n = 3;
  sys.A = Matrix::Identity(n, n) * 0.5;
  sys.B = Matrix::Identity(n, n);
  sys.C = Matrix::Identity(n, n);
  sys.D = Matrix::Zero(n, 0);
  sys.R = Matrix::Zero(n, 0);
  sys.noise_std = Vector::Zero(0);
  NonlinearTerm t;
  t.E = Matrix::Zero(n, 1);
  t.E(0, 0) = 1.0;
  t.F = Matrix::Zero(1, n);
  t.F(0, 1) = 0.7;
  t.phi = ScalarFn::from_name("sin");
  t.slope_a = -1.0;
  t.slope_b = 1.0;
  sys.nonlin.push_back(t);

  SUBCASE("slope_a zero is returned unchanged") {
    NonlinearSCS flat = sys;
    flat.nonlin[0].slope_a = 0.0;
    const NonlinearSCS out = normalize_slope(flat);
    CHECK((out.A - flat.A).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("shifted system agrees pointwise") {
    const NonlinearSCS shifted = normalize_slope(sys);
    CHECK(shifted.nonlin[0].slope_a == 0.0);
    CHECK(shifted.nonlin[0].slope_b == doctest::Approx(2.0));
    CHECK((shifted.A - (sys.A - sys.nonlin[0].E * sys.nonlin[0].F)).cwiseAbs().maxCoeff() < 1e-15);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss;
    for (int k = 0; k < 100; ++k) {
      Vector x(n), nu(n);
      for (int i = 0; i < n; ++i) {
        x(i) = gauss(rng);
        nu(i) = gauss(rng);
      }
      const Vector a = sys.step(x, nu, Vector(0), Vector(0));
      const Vector b = shifted.step(x, nu, Vector(0), Vector(0));
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()));
    }
  }

  SUBCASE("sin shifted by -1 has slopes (0,2)") {
    const NonlinearSCS shifted = normalize_slope(sys);
    const auto check = spot_check_slopes(shifted);
    CHECK(check.ok);
  }
}

TEST_CASE("interconnection validation") {
  SUBCASE("two rooms in a ring pass") {
    const Interconnection net = make_network(make_room(), 2, Topology::ring);
    CHECK(validate_interconnection(net).pass);
  }
  SUBCASE("three rooms in a ring pass") {
    const Interconnection net = make_network(make_room(), 3, Topology::ring);
    CHECK(validate_interconnection(net).pass);
  }
  SUBCASE("complete five-dimensional network passes") {
    NonlinearSCS unit;
    unit.A = Matrix::Identity(5, 5);
    unit.B = Matrix::Identity(5, 5);
    unit.C = Matrix::Identity(5, 5);
    unit.D = Matrix::Constant(5, 10, 0.001);
    unit.R = Matrix::Constant(5, 1, 1.0);
    unit.noise_std = Vector::Constant(1, 1.0);
    const Interconnection net = make_network(unit, 3, Topology::complete);
    CHECK(validate_interconnection(net).pass);
  }
  SUBCASE("single subsystem with no edges passes") {
    NonlinearSCS unit;
    unit.A = Matrix::Identity(1, 1);
    unit.B = Matrix::Identity(1, 1);
    unit.C = Matrix::Identity(1, 1);
    unit.D = Matrix::Zero(1, 0);
    unit.R = Matrix::Zero(1, 0);
    unit.noise_std = Vector::Zero(0);
    const Interconnection net = make_network(unit, 1, Topology::single);
    CHECK(validate_interconnection(net).pass);
  }
  SUBCASE("distinct output blocks per target are sliced correctly") {
    // sub0 emits 3 output rows: rows 0..1 feed sub1, row 2 is external
    NonlinearSCS a;
    a.A = Matrix::Identity(2, 2);
    a.B = Matrix::Identity(2, 2);
    a.C = Matrix(3, 2);
    a.C << 1, 0, 0, 1, 1, 1;
    a.D = Matrix::Zero(2, 0);
    a.R = Matrix::Zero(2, 0);
    a.noise_std = Vector::Zero(0);
    NonlinearSCS b = a;
    b.C = Matrix::Identity(2, 2);
    b.D = Matrix::Zero(2, 2);
    Interconnection net;
    net.subsystems = {a, b};
    net.partitions.resize(2);
    net.partitions[0].blocks = {{1, 0, 2}, {0, 2, 1}};
    net.partitions[0].external_block = 1;
    net.partitions[1].blocks = {{1, 0, 2}};
    net.partitions[1].external_block = 0;
    net.sources = {{}, {0}};
    CHECK(validate_interconnection(net).pass);
    Vector x0(2), x1(2);
    x0 << 2.0, 3.0;
    x1 << -1.0, 4.0;
    const std::vector<Vector> ys = {net.subsystems[0].output(x0), net.subsystems[1].output(x1)};
    const Vector w1 = net.gather_internal(1, ys);
    REQUIRE(w1.size() == 2);
    CHECK(w1(0) == 2.0);
    CHECK(w1(1) == 3.0);
    const Vector ext = net.external_output({x0, x1});
    REQUIRE(ext.size() == 3);  // 1 external row from sub0, 2 from sub1
    CHECK(ext(0) == 5.0);
    CHECK(ext(1) == -1.0);
    CHECK(ext(2) == 4.0);
  }
  SUBCASE("forced dimension mismatch is reported with the offending edge") {
    NonlinearSCS a;  // outputs 2 rows
    a.A = Matrix::Identity(2, 2);
    a.B = Matrix::Identity(2, 2);
    a.C = Matrix::Identity(2, 2);
    a.D = Matrix::Zero(2, 0);
    a.R = Matrix::Zero(2, 0);
    a.noise_std = Vector::Zero(0);
    NonlinearSCS b = a;  // expects 3 internal inputs
    b.D = Matrix::Zero(2, 3);
    Interconnection net;
    net.subsystems = {a, b};
    net.partitions.resize(2);
    net.partitions[0].blocks = {{1, 0, 2}, {0, 0, 2}};
    net.partitions[0].external_block = 1;
    net.partitions[1].blocks = {{1, 0, 2}};
    net.partitions[1].external_block = 0;
    net.sources = {{}, {0}};
    const auto rep = validate_interconnection(net);
    CHECK_FALSE(rep.pass);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].first == 0);
    CHECK(rep.violations[0].second == 1);
  }
}
