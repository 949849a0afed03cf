#include <cmath>

#include <doctest.h>

#include "usd/features.hpp"
#include "usd/rng.hpp"
#include "test_util.hpp"

using usd::FeatureMap;

TEST_CASE("rff rebuild with the same seed is bit identical") {
  const auto a = FeatureMap::rff(3, 64, 1.5, 42);
  const auto b = FeatureMap::rff(3, 64, 1.5, 42);
  CHECK(a.frequencies() == b.frequencies());
  CHECK(a.phases() == b.phases());

  usd::Rng rng(1);
  Eigen::VectorXd x(3);
  x << rng.normal(), rng.normal(), rng.normal();
  CHECK(a.featurize(x) == b.featurize(x));

  const auto c = FeatureMap::rff(3, 64, 1.5, 43);
  CHECK(a.frequencies() != c.frequencies());
}

TEST_CASE("rff jacobian matches finite differences") {
  const auto fm = FeatureMap::rff(2, 48, 0.8, 7);
  usd::Rng rng(3);
  const double h = 1e-5;
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd x(2);
    x << rng.normal(), rng.normal();
    const Eigen::MatrixXd jac = fm.jacobian(x);
    REQUIRE(jac.rows() == 2);
    REQUIRE(jac.cols() == 48);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const Eigen::VectorXd fd = (fm.featurize(xp) - fm.featurize(xm)) / (2.0 * h);
      for (int j = 0; j < 48; ++j) CHECK(std::abs(jac(k, j) - fd(j)) < 1e-6);
    }
  }
}

TEST_CASE("rff inner products approximate the Gaussian kernel") {
  const double sigma = 1.3;
  const auto fm = FeatureMap::rff(2, 2048, sigma, 99);
  usd::Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd x(2), y(2);
    x << rng.normal(), rng.normal();
    y << rng.normal(), rng.normal();
    const double approx = fm.featurize(x).dot(fm.featurize(y));
    const double exact = std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
    CHECK(std::abs(approx - exact) < 0.08);
  }
}

TEST_CASE("rff self inner product concentrates at one") {
  const auto fm = FeatureMap::rff(3, 4096, 1.0, 123);
  usd::Rng rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd x(3);
    x << rng.normal(), rng.normal(), rng.normal();
    CHECK(std::abs(fm.featurize(x).squaredNorm() - 1.0) < 0.05);
  }
}

TEST_CASE("identity map is exact") {
  const auto fm = FeatureMap::identity(3);
  Eigen::VectorXd x(3);
  x << 0.5, -1.0, 2.0;
  CHECK(fm.featurize(x) == x);
  CHECK(fm.jacobian(x) == Eigen::MatrixXd::Identity(3, 3));
}

TEST_CASE("polynomial map carries a constant feature and exact jacobian") {
  const auto fm = FeatureMap::polynomial(2);
  REQUIRE(fm.dim_out() == 5);
  Eigen::VectorXd x(2);
  x << 3.0, -2.0;
  const Eigen::VectorXd phi = fm.featurize(x);
  CHECK(phi(0) == 1.0);
  CHECK(phi(1) == 3.0);
  CHECK(phi(2) == -2.0);
  CHECK(phi(3) == 4.5);
  CHECK(phi(4) == 2.0);

  const Eigen::MatrixXd jac = fm.jacobian(x);
  CHECK(jac.col(0).isZero(0.0));
  CHECK(jac(0, 1) == 1.0);
  CHECK(jac(1, 2) == 1.0);
  CHECK(jac(0, 3) == 3.0);
  CHECK(jac(1, 4) == -2.0);
  CHECK(jac(1, 3) == 0.0);
  CHECK(jac(0, 4) == 0.0);
}

TEST_CASE("featurize_rows matches per point featurize") {
  const auto fm = FeatureMap::rff(3, 32, 1.0, 17);
  usd::Rng rng(21);
  const auto cloud = testutil::random_cloud(40, 3, rng);
  const Eigen::MatrixXd rows = fm.featurize_rows(cloud.points);
  REQUIRE(rows.rows() == 40);
  REQUIRE(rows.cols() == 32);
  for (int i = 0; i < 40; ++i) {
    const Eigen::VectorXd one = fm.featurize(cloud.points.row(i).transpose());
    CHECK((rows.row(i).transpose() - one).norm() == 0.0);
  }
}

TEST_CASE("rff angles are consistent with featurize") {
  const auto fm = FeatureMap::rff(2, 16, 0.7, 31);
  usd::Rng rng(33);
  const auto cloud = testutil::random_cloud(10, 2, rng);
  const Eigen::MatrixXd angles = fm.rff_angles(cloud.points);
  const Eigen::MatrixXd phi = fm.featurize_rows(cloud.points);
  CHECK((phi - fm.scale() * angles.array().cos().matrix()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("feature map construction and use reject bad arguments") {
  CHECK_THROWS(FeatureMap::rff(0, 8, 1.0, 1));
  CHECK_THROWS(FeatureMap::rff(2, 0, 1.0, 1));
  CHECK_THROWS(FeatureMap::rff(2, 8, 0.0, 1));
  CHECK_THROWS(FeatureMap::rff(2, 8, -1.0, 1));
  CHECK_THROWS(FeatureMap::identity(0));

  const auto fm = FeatureMap::rff(2, 8, 1.0, 1);
  Eigen::VectorXd wrong(3);
  wrong.setZero();
  CHECK_THROWS(fm.featurize(wrong));
  CHECK_THROWS(fm.jacobian(wrong));
  const auto id = FeatureMap::identity(2);
  CHECK_THROWS(id.rff_angles(Eigen::MatrixXd::Zero(3, 2)));
}
