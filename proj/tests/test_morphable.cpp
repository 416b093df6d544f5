#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>

#include "uvc/morphable.hpp"
#include "uvc/error.hpp"

using namespace uvc;

TEST_CASE("synthetic model bases are orthonormal and deterministic") {
  ShapeModel m = build_synthetic_model(99, 300, 6, 4);
  auto check_orthonormal = [](const Eigen::MatrixXd& B) {
    Eigen::MatrixXd gram = B.transpose() * B;
    for (int i = 0; i < gram.rows(); ++i)
      for (int j = 0; j < gram.cols(); ++j) {
        double expect = i == j ? 1.0 : 0.0;
        CHECK(std::abs(gram(i, j) - expect) < 1e-6);
      }
  };
  check_orthonormal(m.shape_basis);
  check_orthonormal(m.expression_basis);

  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      CHECK(t[k] >= 0);
      CHECK(t[k] < m.vertex_count);
    }
  CHECK(m.landmarks.size() == 17);

  ShapeModel m2 = build_synthetic_model(99, 300, 6, 4);
  CHECK(m.mean_shape == m2.mean_shape);
  CHECK(m.shape_basis == m2.shape_basis);
  CHECK(m.expression_basis == m2.expression_basis);

  ShapeModel m3 = build_synthetic_model(100, 300, 6, 4);
  CHECK(m.shape_basis != m3.shape_basis);
}

TEST_CASE("shape basis has full column rank (independent oracle)") {
  ShapeModel m = build_synthetic_model(7, 500, 5, 3);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.shape_basis);
  CHECK(qr.rank() == 5);
}

TEST_CASE("basis size preconditions") {
  CHECK_THROWS_AS(build_synthetic_model(1, 16, 40, 30), Error);
  CHECK_THROWS_AS(build_synthetic_model(1, 8, 2, 2), Error);
}

TEST_CASE("reconstruct_shape") {
  ShapeModel m = build_synthetic_model(3, 200, 4, 3);
  Eigen::VectorXd a0 = Eigen::VectorXd::Zero(4), b0 = Eigen::VectorXd::Zero(3);

  SUBCASE("zero coefficients give the mean exactly") {
    CHECK(reconstruct_shape(m, a0, b0) == m.mean_shape);
  }

  SUBCASE("single mode moves along one basis vector") {
    Eigen::VectorXd a = a0;
    a[2] = 2.5;
    Eigen::VectorXd diff = reconstruct_shape(m, a, b0) - m.mean_shape;
    CHECK((diff - 2.5 * m.shape_basis.col(2)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("matches explicit summation oracle") {
    Rng rng(5);
    Eigen::VectorXd a(4), b(3);
    for (int i = 0; i < 4; ++i) a[i] = rng.normal();
    for (int i = 0; i < 3; ++i) b[i] = rng.normal();
    Eigen::VectorXd expect = m.mean_shape;
    for (int i = 0; i < 4; ++i) expect += m.shape_basis.col(i) * a[i];
    for (int i = 0; i < 3; ++i) expect += m.expression_basis.col(i) * b[i];
    CHECK((reconstruct_shape(m, a, b) - expect).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("affine superposition") {
    Rng rng(6);
    Eigen::VectorXd a1(4), a2(4), b1(3), b2(3);
    for (int i = 0; i < 4; ++i) { a1[i] = rng.normal(); a2[i] = rng.normal(); }
    for (int i = 0; i < 3; ++i) { b1[i] = rng.normal(); b2[i] = rng.normal(); }
    const double c1 = 0.3, c2 = 0.7;  // affine combination, c1+c2=1
    Eigen::VectorXd mix = reconstruct_shape(m, c1 * a1 + c2 * a2, c1 * b1 + c2 * b2);
    Eigen::VectorXd parts =
        c1 * reconstruct_shape(m, a1, b1) + c2 * reconstruct_shape(m, a2, b2);
    CHECK((mix - parts).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("dimension mismatch rejected") {
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(5);
    CHECK_THROWS_AS(reconstruct_shape(m, bad, b0), Error);
  }
}

TEST_CASE("rigid_transform") {
  SUBCASE("identity pose") {
    Eigen::VectorXd v(6);
    v << 1, 2, 3, -4, 0, 2;
    PoseParams pose;
    CHECK((rigid_transform(v, pose) - v).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("180 degrees about z") {
    Eigen::VectorXd v(3);
    v << 1, 0, 0;
    PoseParams pose;
    pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()));
    Eigen::VectorXd out = rigid_transform(v, pose);
    CHECK(out[0] == doctest::Approx(-1.0));
    CHECK(std::abs(out[1]) < 1e-12);
    CHECK(std::abs(out[2]) < 1e-12);
  }

  SUBCASE("pairwise distances preserved under a random valid pose") {
    Rng rng(9);
    Eigen::VectorXd v(3 * 40);
    for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-50.0, 50.0);
    PoseParams pose;
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(1.234, axis));
    pose.translation = Eigen::Vector3d(3.0, -8.0, 11.0);
    Eigen::VectorXd w = rigid_transform(v, pose);
    for (int i = 0; i < 40; ++i)
      for (int j = i + 1; j < 40; j += 7) {
        double d0 = (v.segment<3>(3 * i) - v.segment<3>(3 * j)).norm();
        double d1 = (w.segment<3>(3 * i) - w.segment<3>(3 * j)).norm();
        CHECK(std::abs(d0 - d1) < 1e-6);
      }
  }

  SUBCASE("non-rotation matrix rejected by pose validation") {
    Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
    bad(0, 0) = 2.0;
    CHECK_THROWS_AS(PoseParams::make(1.0, bad, {0, 0, 0}, {0, 0}), Error);
    Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
    reflect(2, 2) = -1.0;  // orthonormal but det = -1
    CHECK_THROWS_AS(PoseParams::make(1.0, reflect, {0, 0, 0}, {0, 0}), Error);
    CHECK_THROWS_AS(
        PoseParams::make(-1.0, Eigen::Matrix3d::Identity(), {0, 0, 0}, {0, 0}), Error);
    CHECK_NOTHROW(
        PoseParams::make(2.0, Eigen::Matrix3d::Identity(), {0, 0, 0}, {0, 0}));
  }
}

TEST_CASE("project") {
  SUBCASE("drops z at unit scale") {
    Eigen::VectorXd v(3);
    v << 3, 4, 7;
    PoseParams pose;
    Eigen::VectorXd p = project(v, pose);
    CHECK(p[0] == 3.0);
    CHECK(p[1] == 4.0);
  }

  SUBCASE("scale and principal point") {
    Eigen::VectorXd v(3);
    v << 1, 1, 5;
    PoseParams pose;
    pose.scale = 2.0;
    pose.principal_point = Eigen::Vector2d(10.0, 10.0);
    Eigen::VectorXd p = project(v, pose);
    CHECK(p[0] == 12.0);
    CHECK(p[1] == 12.0);
  }

  SUBCASE("invariant to depth-only perturbation") {
    Rng rng(11);
    Eigen::VectorXd v(3 * 10);
    for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-20.0, 20.0);
    PoseParams pose;
    pose.scale = 1.7;
    pose.principal_point = Eigen::Vector2d(32.0, 32.0);
    Eigen::VectorXd p0 = project(v, pose);
    for (double dz : {-100.0, 0.5, 42.0}) {
      Eigen::VectorXd vz = v;
      for (int i = 0; i < 10; ++i) vz[3 * i + 2] += dz;
      CHECK((project(vz, pose) - p0).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("owpdc cost") {
  Eigen::VectorXd p0(4), pg(4), w(4);
  p0 << 1, 2, 3, 4;
  pg << 2, 0, 3, 5;
  w << 1, 1, 1, 1;

  SUBCASE("perfect update has zero cost") {
    CHECK(owpdc_cost(pg - p0, p0, pg, w) == doctest::Approx(0.0));
  }

  SUBCASE("unit weights give squared euclidean distance") {
    Eigen::VectorXd dp = Eigen::VectorXd::Zero(4);
    double expect = (p0 - pg).squaredNorm();
    CHECK(owpdc_cost(dp, p0, pg, w) == doctest::Approx(expect));
  }

  SUBCASE("matches explicit loop oracle") {
    Rng rng(13);
    Eigen::VectorXd dp(4), wr(4);
    for (int i = 0; i < 4; ++i) {
      dp[i] = rng.normal();
      wr[i] = rng.uniform(0.0, 2.0);
    }
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      double d = dp[i] + p0[i] - pg[i];
      expect += wr[i] * d * d;
    }
    CHECK(std::abs(owpdc_cost(dp, p0, pg, wr) - expect) < 1e-8);
  }

  SUBCASE("negative weights rejected") {
    Eigen::VectorXd wn = w;
    wn[2] = -0.1;
    CHECK_THROWS_AS(owpdc_cost(pg - p0, p0, pg, wn), Error);
  }

  SUBCASE("nonnegative everywhere; zero only at the goal when w > 0") {
    Rng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd dp(4);
      for (int i = 0; i < 4; ++i) dp[i] = rng.normal();
      double c = owpdc_cost(dp, p0, pg, w);
      CHECK(c >= 0.0);
      if ((dp + p0 - pg).cwiseAbs().maxCoeff() > 1e-9) CHECK(c > 0.0);
    }
  }
}

TEST_CASE("cascaded fit") {
  ShapeModel m = build_synthetic_model(21, 300, 5, 3);
  const double base_scale = 1.2;
  const Eigen::Vector2d center(128.0, 128.0);
  FitSampling fs;
  Rng rng(100);
  ModelParams gt = sample_params(m, base_scale, center, fs, rng);
  ModelParams p0 = perturb_params(gt, m, fs, rng);
  Eigen::VectorXd observed = project_landmarks(m, gt);

  SUBCASE("zero regressor leaves parameters untouched") {
    auto zero = [&](const Eigen::VectorXd&) {
      return Eigen::VectorXd::Zero(param_vector_dim(m)).eval();
    };
    ModelParams out = cascaded_fit(observed, m, zero, p0, 4);
    CHECK((params_to_vector(out) - params_to_vector(p0)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("oracle regressor converges in one step") {
    Eigen::VectorXd mirror = params_to_vector(p0);
    Eigen::VectorXd goal = params_to_vector(gt);
    auto oracle = [&](const Eigen::VectorXd&) {
      Eigen::VectorXd d = goal - mirror;
      mirror += d;
      return d;
    };
    ModelParams out = cascaded_fit(observed, m, oracle, p0, 1);
    CHECK((params_to_vector(out) - goal).cwiseAbs().maxCoeff() < 1e-9);
    double err = (project_landmarks(m, out) - observed).cwiseAbs().maxCoeff();
    CHECK(err < 1e-6);
  }

  SUBCASE("regressor with wrong output dimension rejected") {
    auto bad = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(3).eval(); };
    CHECK_THROWS_AS(cascaded_fit(observed, m, bad, p0, 1), Error);
  }

  SUBCASE("trained linear regressor halves landmark error in 3 iterations") {
    Rng train_rng(200);
    LinearRegressor reg =
        train_linear_regressor(m, 600, base_scale, center, fs, train_rng);
    Rng eval_rng(300);
    double err_before = 0.0, err_after = 0.0;
    const int n_eval = 40;
    for (int i = 0; i < n_eval; ++i) {
      ModelParams egt = sample_params(m, base_scale, center, fs, eval_rng);
      ModelParams ep0 = perturb_params(egt, m, fs, eval_rng);
      Eigen::VectorXd obs = project_landmarks(m, egt);
      auto lm_err = [&](const ModelParams& p) {
        Eigen::VectorXd d = obs - project_landmarks(m, p);
        double s = 0.0;
        for (int k = 0; k < d.size() / 2; ++k) s += d.segment<2>(2 * k).norm();
        return s / (d.size() / 2);
      };
      err_before += lm_err(ep0);
      ModelParams fit = cascaded_fit(obs, m, reg, ep0, 3);
      err_after += lm_err(fit);
    }
    CAPTURE(err_before / n_eval);
    CAPTURE(err_after / n_eval);
    CHECK(err_after <= 0.5 * err_before);
  }
}

TEST_CASE("obj round trip") {
  ShapeModel m = build_synthetic_model(31, 120, 3, 2);
  std::string path = "test_mesh_roundtrip.obj";
  write_obj(path, m.mean_shape, m.triangles);
  Eigen::VectorXd verts;
  std::vector<std::array<int, 3>> tris;
  read_obj(path, verts, tris);
  REQUIRE(verts.size() == m.mean_shape.size());
  CHECK((verts - m.mean_shape).cwiseAbs().maxCoeff() < 1e-6);
  REQUIRE(tris.size() == m.triangles.size());
  CHECK(tris == m.triangles);
  std::remove(path.c_str());
}

TEST_CASE("model binary container round trip") {
  ShapeModel m = build_synthetic_model(17, 250, 5, 4);
  std::string path = "test_model_roundtrip.bin";
  save_model(path, m);
  ShapeModel r = load_model(path);
  CHECK(r.vertex_count == m.vertex_count);
  CHECK(r.mean_shape == m.mean_shape);
  CHECK(r.shape_basis == m.shape_basis);
  CHECK(r.expression_basis == m.expression_basis);
  CHECK(r.triangles == m.triangles);
  CHECK(r.landmarks == m.landmarks);
  CHECK(r.seed == m.seed);
  std::remove(path.c_str());
}
