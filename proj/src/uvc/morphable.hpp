#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "uvc/rng.hpp"

namespace uvc {

// Parametric 3D face family: mean shape plus orthonormal identity and
// expression deformation bases over a fixed triangulated mesh. Shapes are
// flattened 3N vectors (x1,y1,z1,...). Coordinates are object-centered,
// arbitrary length units, face looking along +z.
struct ShapeModel {
  int vertex_count = 0;                       // N
  Eigen::VectorXd mean_shape;                 // 3N
  Eigen::MatrixXd shape_basis;                // 3N x n_s, orthonormal columns
  Eigen::MatrixXd expression_basis;           // 3N x n_e, orthonormal columns
  std::vector<std::array<int, 3>> triangles;  // outward-oriented
  std::vector<int> landmarks;                 // 17 fixed vertex ids
  int grid_rows = 0, grid_cols = 0;           // construction grid of the mean mesh
  uint64_t seed = 0;

  int n_shape() const { return static_cast<int>(shape_basis.cols()); }
  int n_expression() const { return static_cast<int>(expression_basis.cols()); }
};

// Rigid pose plus scaled orthographic camera. The rotation is kept as a unit
// quaternion so the rotation-matrix invariant cannot drift.
struct PoseParams {
  double scale = 1.0;                          // f
  Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d translation{0.0, 0.0, 0.0};  // t
  Eigen::Vector2d principal_point{0.0, 0.0};   // t_2d, pixels

  Eigen::Matrix3d rotation_matrix() const { return rotation.normalized().toRotationMatrix(); }

  // Validates f > 0, R'R = I and det(R) = 1 within 1e-6.
  static PoseParams make(double f, const Eigen::Matrix3d& rot,
                         const Eigen::Vector3d& t, const Eigen::Vector2d& t2d);
};

struct ModelParams {
  PoseParams pose;
  Eigen::VectorXd alpha;  // n_s
  Eigen::VectorXd beta;   // n_e
};

// Grid-rounded synthetic stand-in for a scan-trained PCA family: a face-like
// ellipsoid mean mesh with nose/eye/mouth relief and jointly orthonormalized
// smooth random deformation bases. The actual vertex count is the nearest
// full grid >= 16 vertices; callers read it back from the model.
ShapeModel build_synthetic_model(uint64_t seed, int target_vertices, int n_shape,
                                 int n_expression);

// S = mean + shape_basis*alpha + expression_basis*beta
Eigen::VectorXd reconstruct_shape(const ShapeModel& model,
                                  const Eigen::VectorXd& alpha,
                                  const Eigen::VectorXd& beta);

// Per-vertex v_cam = R*v + t over a flattened 3N vector.
Eigen::VectorXd rigid_transform(const Eigen::VectorXd& vertices,
                                const PoseParams& pose);

// v_p = f * Pr * v_cam + t_2d with Pr dropping z; returns flattened 2N vector.
Eigen::VectorXd project(const Eigen::VectorXd& vertices_cam, const PoseParams& pose);

// Landmark helper: reconstruct, transform, project, gather the 17 landmark
// positions as a 34-vector.
Eigen::VectorXd project_landmarks(const ShapeModel& model, const ModelParams& params);

// Flat parameter encoding used by the cascaded fitter:
// [f, rotation-vector(3), t2d(2), alpha..., beta...].
Eigen::VectorXd params_to_vector(const ModelParams& params);
ModelParams params_from_vector(const ShapeModel& model, const Eigen::VectorXd& v);
int param_vector_dim(const ShapeModel& model);

// One regression stage: maps a shape-indexed feature to a parameter update.
using Regressor = std::function<Eigen::VectorXd(const Eigen::VectorXd& feature)>;

// p^{k+1} = p^k + Net(Feat(observed, p^k)); the feature is the concatenated
// signed landmark residual observed - projected(p^k).
ModelParams cascaded_fit(const Eigen::VectorXd& observed_landmarks,
                         const ShapeModel& model, const Regressor& regressor,
                         const ModelParams& p0, int iterations);

// (dp + p0 - pg)' diag(w) (dp + p0 - pg); weights must be >= 0.
double owpdc_cost(const Eigen::VectorXd& delta_p, const Eigen::VectorXd& p0,
                  const Eigen::VectorXd& p_goal, const Eigen::VectorXd& weights);

// Desk-scale stage regressor: a linear map trained by least squares on
// synthetic (landmark-residual -> parameter-update) pairs.
struct LinearRegressor {
  Eigen::MatrixXd weights;  // D x F
  Eigen::VectorXd bias;     // D

  Eigen::VectorXd operator()(const Eigen::VectorXd& feature) const {
    return weights * feature + bias;
  }
};

struct FitSampling {
  double scale_sigma = 0.08;      // relative
  double rotation_sigma = 0.15;   // radians
  double shift_sigma = 8.0;       // pixels
  double coeff_sigma = 4.0;       // alpha/beta
};

// Draws a random ground-truth parameter set around a canonical frontal pose.
ModelParams sample_params(const ShapeModel& model, double base_scale,
                          const Eigen::Vector2d& center, const FitSampling& s,
                          Rng& rng);

// Perturbs ground truth into a plausible initialization for fitting.
ModelParams perturb_params(const ModelParams& gt, const ShapeModel& model,
                           const FitSampling& s, Rng& rng);

LinearRegressor train_linear_regressor(const ShapeModel& model, int samples,
                                       double base_scale,
                                       const Eigen::Vector2d& center,
                                       const FitSampling& s, Rng& rng);

// ASCII OBJ with v/f records only.
void write_obj(const std::string& path, const Eigen::VectorXd& vertices,
               const std::vector<std::array<int, 3>>& triangles);
void read_obj(const std::string& path, Eigen::VectorXd& vertices,
              std::vector<std::array<int, 3>>& triangles);

// Binary model container used by the CLI (render needs the mesh + bases).
void save_model(const std::string& path, const ShapeModel& model);
ShapeModel load_model(const std::string& path);

}  // namespace uvc
