#include "uvc/morphable.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "uvc/error.hpp"

namespace uvc {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Azimuth/elevation extent of the face patch, radians.
constexpr double kThetaMax = 75.0 * kPi / 180.0;
constexpr double kPhiMin = -60.0 * kPi / 180.0;
constexpr double kPhiMax = 75.0 * kPi / 180.0;

struct Bump {
  double theta, phi;      // center, radians
  double sigma_t, sigma_p;
  double amp;             // radial relief, relative
};

// Symmetric facial relief: nose out, eye sockets in, mouth groove, brow and
// chin. Gives the mean mesh self-occlusion structure under yaw.
const Bump kBumps[] = {
    {0.0, -0.09, 0.16, 0.22, 0.22},                  // nose
    {0.44, 0.31, 0.20, 0.14, -0.10},                 // right eye socket
    {-0.44, 0.31, 0.20, 0.14, -0.10},                // left eye socket
    {0.0, -0.66, 0.42, 0.10, -0.06},                 // mouth groove
    {0.0, 0.63, 0.70, 0.18, 0.05},                   // brow ridge
    {0.0, -1.02, 0.30, 0.14, 0.10},                  // chin
};

double relief(double theta, double phi) {
  double r = 1.0;
  for (const Bump& b : kBumps) {
    double dt = (theta - b.theta) / b.sigma_t;
    double dp = (phi - b.phi) / b.sigma_p;
    r += b.amp * std::exp(-0.5 * (dt * dt + dp * dp));
  }
  return r;
}

// 17 landmark anchors as (theta, phi) fractions of the patch extent.
const double kLandmarkAnchors[17][2] = {
    {-0.60, 0.35}, {-0.30, 0.35},                    // left eye corners
    {0.30, 0.35},  {0.60, 0.35},                     // right eye corners
    {-0.45, 0.42}, {0.45, 0.42},                     // eye centers (upper)
    {0.0, -0.07},                                    // nose tip
    {0.0, -0.30},                                    // nose base
    {-0.35, -0.55}, {0.35, -0.55},                   // mouth corners
    {0.0, -0.55},                                    // mouth center
    {0.0, -0.92},                                    // chin
    {-0.45, 0.60}, {0.45, 0.60},                     // brows
    {-0.75, -0.15}, {0.75, -0.15},                   // cheeks
    {0.0, 0.85},                                     // forehead
};

}  // namespace

PoseParams PoseParams::make(double f, const Eigen::Matrix3d& rot,
                            const Eigen::Vector3d& t, const Eigen::Vector2d& t2d) {
  if (!(f > 0.0)) throw_data("pose: scale factor must be positive");
  Eigen::Matrix3d gram = rot.transpose() * rot;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw_data("pose: matrix is not orthonormal (R'R != I)");
  if (std::abs(rot.determinant() - 1.0) > 1e-6)
    throw_data("pose: matrix is not a proper rotation (det != 1)");
  PoseParams p;
  p.scale = f;
  p.rotation = Eigen::Quaterniond(rot).normalized();
  p.translation = t;
  p.principal_point = t2d;
  return p;
}

ShapeModel build_synthetic_model(uint64_t seed, int target_vertices, int n_shape,
                                 int n_expression) {
  if (target_vertices < 16) throw_data("synthetic model needs at least 16 vertices");
  int rows = std::max(4, static_cast<int>(std::lround(std::sqrt(double(target_vertices)))));
  int cols = std::max(4, static_cast<int>(std::lround(double(target_vertices) / rows)));
  const int n_vertices = rows * cols;
  if (n_shape < 1 || n_expression < 1 || n_shape + n_expression > 3 * n_vertices)
    throw_data("basis sizes must satisfy 1 <= n_s, n_e and n_s + n_e <= 3N");

  ShapeModel model;
  model.seed = seed;
  model.vertex_count = n_vertices;
  model.grid_rows = rows;
  model.grid_cols = cols;
  model.mean_shape.resize(3 * n_vertices);

  const double rx = 80.0, ry = 100.0, rz = 90.0;
  for (int r = 0; r < rows; ++r) {
    double pv = rows == 1 ? 0.5 : double(r) / (rows - 1);
    double phi = kPhiMin + pv * (kPhiMax - kPhiMin);
    for (int c = 0; c < cols; ++c) {
      double tu = cols == 1 ? 0.5 : double(c) / (cols - 1);
      double theta = -kThetaMax + tu * 2.0 * kThetaMax;
      double rad = relief(theta, phi);
      int i = r * cols + c;
      model.mean_shape[3 * i + 0] = rad * rx * std::sin(theta) * std::cos(phi);
      model.mean_shape[3 * i + 1] = rad * ry * std::sin(phi);
      model.mean_shape[3 * i + 2] = rad * rz * std::cos(theta) * std::cos(phi);
    }
  }

  // Grid quads split into two triangles, oriented outward (star-shaped mesh).
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      int v00 = r * cols + c, v01 = r * cols + c + 1;
      int v10 = (r + 1) * cols + c, v11 = (r + 1) * cols + c + 1;
      for (auto tri : {std::array<int, 3>{v00, v01, v11}, std::array<int, 3>{v00, v11, v10}}) {
        Eigen::Vector3d a = model.mean_shape.segment<3>(3 * tri[0]);
        Eigen::Vector3d b = model.mean_shape.segment<3>(3 * tri[1]);
        Eigen::Vector3d c3 = model.mean_shape.segment<3>(3 * tri[2]);
        Eigen::Vector3d n = (b - a).cross(c3 - a);
        if (n.dot(a + b + c3) < 0.0) std::swap(tri[1], tri[2]);
        model.triangles.push_back(tri);
      }
    }

  // Smooth random deformation fields, orthonormalized jointly so both
  // families are orthonormal and mutually orthogonal.
  Rng rng(seed);
  const int n_total = n_shape + n_expression;
  Eigen::MatrixXd basis(3 * n_vertices, n_total);
  for (int j = 0; j < n_total; ++j) {
    for (int axis = 0; axis < 3; ++axis) {
      double a1 = rng.normal(), a2 = rng.normal(), a3 = rng.normal();
      double w1 = rng.uniform(0.5, 3.0), w2 = rng.uniform(0.5, 3.0);
      double w3 = rng.uniform(0.5, 2.0), w4 = rng.uniform(0.5, 2.0);
      double p1 = rng.uniform(0.0, 2.0 * kPi), p2 = rng.uniform(0.0, 2.0 * kPi);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          double u = cols == 1 ? 0.5 : double(c) / (cols - 1);
          double v = rows == 1 ? 0.5 : double(r) / (rows - 1);
          double val = a1 * std::sin(w1 * kPi * u + p1) * std::cos(w2 * kPi * v) +
                       a2 * std::cos(w3 * kPi * u) * std::sin(w4 * kPi * v + p2) +
                       a3 * u * v;
          basis(3 * (r * cols + c) + axis, j) = val;
        }
    }
  }
  // Modified Gram-Schmidt.
  for (int j = 0; j < n_total; ++j) {
    for (int k = 0; k < j; ++k)
      basis.col(j) -= basis.col(k).dot(basis.col(j)) * basis.col(k);
    double norm = basis.col(j).norm();
    if (norm < 1e-10)
      throw_internal("synthetic basis degenerated during orthonormalization");
    basis.col(j) /= norm;
  }
  model.shape_basis = basis.leftCols(n_shape);
  model.expression_basis = basis.rightCols(n_expression);

  // Landmarks: nearest grid vertex to each anchor.
  for (auto& anchor : kLandmarkAnchors) {
    double tu = (anchor[0] + 1.0) / 2.0;
    double pv = (anchor[1] + 1.0) / 2.0;
    int c = std::min(cols - 1, std::max(0, static_cast<int>(std::lround(tu * (cols - 1)))));
    int r = std::min(rows - 1, std::max(0, static_cast<int>(std::lround(pv * (rows - 1)))));
    model.landmarks.push_back(r * cols + c);
  }
  return model;
}

Eigen::VectorXd reconstruct_shape(const ShapeModel& model,
                                  const Eigen::VectorXd& alpha,
                                  const Eigen::VectorXd& beta) {
  if (alpha.size() != model.shape_basis.cols() ||
      beta.size() != model.expression_basis.cols())
    throw_data("reconstruct_shape: coefficient dimensions do not match the model");
  return model.mean_shape + model.shape_basis * alpha + model.expression_basis * beta;
}

Eigen::VectorXd rigid_transform(const Eigen::VectorXd& vertices, const PoseParams& pose) {
  if (vertices.size() % 3 != 0) throw_data("rigid_transform: not a 3N vector");
  const Eigen::Matrix3d R = pose.rotation_matrix();
  Eigen::VectorXd out(vertices.size());
  for (int i = 0; i < vertices.size() / 3; ++i)
    out.segment<3>(3 * i) = R * vertices.segment<3>(3 * i) + pose.translation;
  return out;
}

Eigen::VectorXd project(const Eigen::VectorXd& vertices_cam, const PoseParams& pose) {
  if (vertices_cam.size() % 3 != 0) throw_data("project: not a 3N vector");
  const int n = static_cast<int>(vertices_cam.size() / 3);
  Eigen::VectorXd out(2 * n);
  for (int i = 0; i < n; ++i) {
    out[2 * i + 0] = pose.scale * vertices_cam[3 * i + 0] + pose.principal_point[0];
    out[2 * i + 1] = pose.scale * vertices_cam[3 * i + 1] + pose.principal_point[1];
  }
  return out;
}

Eigen::VectorXd project_landmarks(const ShapeModel& model, const ModelParams& params) {
  Eigen::VectorXd shape = reconstruct_shape(model, params.alpha, params.beta);
  Eigen::VectorXd cam = rigid_transform(shape, params.pose);
  Eigen::VectorXd out(2 * model.landmarks.size());
  for (size_t i = 0; i < model.landmarks.size(); ++i) {
    int v = model.landmarks[i];
    out[2 * i + 0] = params.pose.scale * cam[3 * v + 0] + params.pose.principal_point[0];
    out[2 * i + 1] = params.pose.scale * cam[3 * v + 1] + params.pose.principal_point[1];
  }
  return out;
}

int param_vector_dim(const ShapeModel& model) {
  return 6 + model.n_shape() + model.n_expression();
}

Eigen::VectorXd params_to_vector(const ModelParams& params) {
  Eigen::AngleAxisd aa(params.pose.rotation.normalized());
  Eigen::Vector3d rotvec = aa.angle() * aa.axis();
  Eigen::VectorXd v(6 + params.alpha.size() + params.beta.size());
  v[0] = params.pose.scale;
  v.segment<3>(1) = rotvec;
  v.segment<2>(4) = params.pose.principal_point;
  v.segment(6, params.alpha.size()) = params.alpha;
  v.segment(6 + params.alpha.size(), params.beta.size()) = params.beta;
  return v;
}

ModelParams params_from_vector(const ShapeModel& model, const Eigen::VectorXd& v) {
  if (v.size() != param_vector_dim(model))
    throw_data("parameter vector has wrong dimension");
  ModelParams p;
  p.pose.scale = v[0];
  Eigen::Vector3d rotvec = v.segment<3>(1);
  double angle = rotvec.norm();
  p.pose.rotation = angle < 1e-12
                        ? Eigen::Quaterniond::Identity()
                        : Eigen::Quaterniond(Eigen::AngleAxisd(angle, rotvec / angle));
  p.pose.principal_point = v.segment<2>(4);
  p.alpha = v.segment(6, model.n_shape());
  p.beta = v.segment(6 + model.n_shape(), model.n_expression());
  return p;
}

ModelParams cascaded_fit(const Eigen::VectorXd& observed_landmarks,
                         const ShapeModel& model, const Regressor& regressor,
                         const ModelParams& p0, int iterations) {
  if (observed_landmarks.size() != 2 * static_cast<int>(model.landmarks.size()))
    throw_data("cascaded_fit: observed landmark vector has wrong dimension");
  const int dim = param_vector_dim(model);
  Eigen::VectorXd p = params_to_vector(p0);
  for (int k = 0; k < iterations; ++k) {
    ModelParams cur = params_from_vector(model, p);
    Eigen::VectorXd feature = observed_landmarks - project_landmarks(model, cur);
    Eigen::VectorXd update = regressor(feature);
    if (update.size() != dim)
      throw_data("cascaded_fit: regressor returned dimension " +
                 std::to_string(update.size()) + ", parameter dimension is " +
                 std::to_string(dim));
    p += update;
  }
  return params_from_vector(model, p);
}

double owpdc_cost(const Eigen::VectorXd& delta_p, const Eigen::VectorXd& p0,
                  const Eigen::VectorXd& p_goal, const Eigen::VectorXd& weights) {
  if (delta_p.size() != p0.size() || p0.size() != p_goal.size() ||
      weights.size() != p0.size())
    throw_data("owpdc_cost: dimension mismatch");
  if ((weights.array() < 0.0).any())
    throw_data("owpdc_cost: importance weights must be nonnegative");
  Eigen::VectorXd d = delta_p + p0 - p_goal;
  return (d.array().square() * weights.array()).sum();
}

ModelParams sample_params(const ShapeModel& model, double base_scale,
                          const Eigen::Vector2d& center, const FitSampling& s,
                          Rng& rng) {
  ModelParams p;
  p.pose.scale = base_scale * std::exp(rng.normal() * s.scale_sigma);
  Eigen::Vector3d rotvec(rng.normal() * s.rotation_sigma,
                         rng.normal() * s.rotation_sigma,
                         rng.normal() * s.rotation_sigma * 0.3);
  double angle = rotvec.norm();
  p.pose.rotation = angle < 1e-12
                        ? Eigen::Quaterniond::Identity()
                        : Eigen::Quaterniond(Eigen::AngleAxisd(angle, rotvec / angle));
  p.pose.principal_point =
      center + Eigen::Vector2d(rng.normal() * s.shift_sigma, rng.normal() * s.shift_sigma);
  p.alpha.resize(model.n_shape());
  for (int i = 0; i < p.alpha.size(); ++i) p.alpha[i] = rng.normal() * s.coeff_sigma;
  p.beta.resize(model.n_expression());
  for (int i = 0; i < p.beta.size(); ++i) p.beta[i] = rng.normal() * s.coeff_sigma;
  return p;
}

ModelParams perturb_params(const ModelParams& gt, const ShapeModel& model,
                           const FitSampling& s, Rng& rng) {
  Eigen::VectorXd v = params_to_vector(gt);
  v[0] *= std::exp(rng.normal() * s.scale_sigma);
  for (int i = 1; i < 4; ++i) v[i] += rng.normal() * s.rotation_sigma;
  for (int i = 4; i < 6; ++i) v[i] += rng.normal() * s.shift_sigma;
  for (int i = 6; i < v.size(); ++i) v[i] += rng.normal() * s.coeff_sigma;
  return params_from_vector(model, v);
}

LinearRegressor train_linear_regressor(const ShapeModel& model, int samples,
                                       double base_scale,
                                       const Eigen::Vector2d& center,
                                       const FitSampling& s, Rng& rng) {
  const int dim = param_vector_dim(model);
  const int feat_dim = 2 * static_cast<int>(model.landmarks.size());
  Eigen::MatrixXd A(samples, feat_dim + 1);  // augmented with constant column
  Eigen::MatrixXd Y(samples, dim);
  for (int i = 0; i < samples; ++i) {
    ModelParams gt = sample_params(model, base_scale, center, s, rng);
    ModelParams start = perturb_params(gt, model, s, rng);
    Eigen::VectorXd feature =
        project_landmarks(model, gt) - project_landmarks(model, start);
    A.row(i).head(feat_dim) = feature.transpose();
    A(i, feat_dim) = 1.0;
    Y.row(i) = (params_to_vector(gt) - params_to_vector(start)).transpose();
  }
  // Ridge-regularized least squares keeps the map stable when samples are few.
  Eigen::MatrixXd gram = A.transpose() * A;
  gram.diagonal().array() += 1e-6 * gram.diagonal().maxCoeff();
  Eigen::MatrixXd X = gram.ldlt().solve(A.transpose() * Y);  // (F+1) x D
  LinearRegressor reg;
  reg.weights = X.topRows(feat_dim).transpose();
  reg.bias = X.row(feat_dim).transpose();
  return reg;
}

void write_obj(const std::string& path, const Eigen::VectorXd& vertices,
               const std::vector<std::array<int, 3>>& triangles) {
  std::ofstream out(path);
  if (!out) throw_data("cannot open " + path + " for writing");
  out.precision(9);
  for (int i = 0; i < vertices.size() / 3; ++i)
    out << "v " << vertices[3 * i] << " " << vertices[3 * i + 1] << " "
        << vertices[3 * i + 2] << "\n";
  for (const auto& t : triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

void read_obj(const std::string& path, Eigen::VectorXd& vertices,
              std::vector<std::array<int, 3>>& triangles) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open " + path);
  std::vector<double> coords;
  triangles.clear();
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      coords.push_back(x);
      coords.push_back(y);
      coords.push_back(z);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ls >> tok;
        t[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      triangles.push_back(t);
    }
  }
  vertices = Eigen::Map<Eigen::VectorXd>(coords.data(), coords.size());
  const int n = static_cast<int>(coords.size()) / 3;
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= n) throw_data("obj: face index out of range");
}

namespace {

void write_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void read_bytes(std::ifstream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw_data("model file truncated");
}

}  // namespace

void save_model(const std::string& path, const ShapeModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open " + path + " for writing");
  const char magic[4] = {'U', 'V', 'M', '1'};
  write_bytes(out, magic, 4);
  int32_t header[5] = {model.vertex_count, model.n_shape(), model.n_expression(),
                       model.grid_rows, model.grid_cols};
  write_bytes(out, header, sizeof(header));
  write_bytes(out, &model.seed, sizeof(model.seed));
  write_bytes(out, model.mean_shape.data(), sizeof(double) * model.mean_shape.size());
  write_bytes(out, model.shape_basis.data(), sizeof(double) * model.shape_basis.size());
  write_bytes(out, model.expression_basis.data(),
              sizeof(double) * model.expression_basis.size());
  int32_t ntri = static_cast<int32_t>(model.triangles.size());
  write_bytes(out, &ntri, sizeof(ntri));
  for (const auto& t : model.triangles) {
    int32_t idx[3] = {t[0], t[1], t[2]};
    write_bytes(out, idx, sizeof(idx));
  }
  int32_t nlm = static_cast<int32_t>(model.landmarks.size());
  write_bytes(out, &nlm, sizeof(nlm));
  for (int v : model.landmarks) {
    int32_t iv = v;
    write_bytes(out, &iv, sizeof(iv));
  }
}

ShapeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open model file " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::string(magic, 4) != "UVM1") throw_data("not a model file: " + path);
  int32_t header[5];
  read_bytes(in, header, sizeof(header));
  ShapeModel model;
  model.vertex_count = header[0];
  model.grid_rows = header[3];
  model.grid_cols = header[4];
  read_bytes(in, &model.seed, sizeof(model.seed));
  model.mean_shape.resize(3 * model.vertex_count);
  read_bytes(in, model.mean_shape.data(), sizeof(double) * model.mean_shape.size());
  model.shape_basis.resize(3 * model.vertex_count, header[1]);
  read_bytes(in, model.shape_basis.data(), sizeof(double) * model.shape_basis.size());
  model.expression_basis.resize(3 * model.vertex_count, header[2]);
  read_bytes(in, model.expression_basis.data(),
             sizeof(double) * model.expression_basis.size());
  int32_t ntri = 0;
  read_bytes(in, &ntri, sizeof(ntri));
  model.triangles.resize(ntri);
  for (auto& t : model.triangles) {
    int32_t idx[3];
    read_bytes(in, idx, sizeof(idx));
    t = {idx[0], idx[1], idx[2]};
  }
  int32_t nlm = 0;
  read_bytes(in, &nlm, sizeof(nlm));
  model.landmarks.resize(nlm);
  for (auto& v : model.landmarks) {
    int32_t iv;
    read_bytes(in, &iv, sizeof(iv));
    v = iv;
  }
  return model;
}

}  // namespace uvc
