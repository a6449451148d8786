#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "steproute/sim.hpp"

namespace steproute {

/// A point in the observation square: (min of earlier scores, current score).
struct Observation {
  double min_prev = 1.0;
  double current = 1.0;
};

inline constexpr double kLikelihoodFloor = 1e-8;

/// Anything that can score an observation under each latent class.
class ObservationLikelihood {
 public:
  virtual ~ObservationLikelihood() = default;
  /// Density of `obs` under class `cls` (S0, S1 or S2), floored at kLikelihoodFloor.
  virtual double likelihood(LatentClass cls, const Observation& obs) const = 0;
};

struct KdeOptions {
  double bandwidth_floor = 0.02;
  int min_samples = 10;
};

/// Per-class 2-D product-Gaussian KDE on [0,1]^2, reflected across all four edges.
class ObservationModel final : public ObservationLikelihood {
 public:
  struct ClassDensity {
    Eigen::VectorXd x;  // min_prev samples
    Eigen::VectorXd y;  // current samples
    double bandwidth = 0.1;
  };

  ObservationModel() = default;
  explicit ObservationModel(std::array<ClassDensity, 3> classes) : classes_(std::move(classes)) {}

  /// Raw density (no floor). Throws OutOfDomain outside [0,1]^2.
  double density(LatentClass cls, const Observation& obs) const;
  double likelihood(LatentClass cls, const Observation& obs) const override;

  /// Probability mass of the cell [x0,x1] x [y0,y1].
  double cell_mass(LatentClass cls, double x0, double x1, double y0, double y1) const;

  /// Densities at cell midpoints of a res x res grid (row = min_prev index, col = current index).
  Eigen::MatrixXd density_grid(LatentClass cls, int res) const;
  /// Cell masses of an n x n partition of the square (row = min_prev cell, col = current cell).
  Eigen::MatrixXd cell_masses(LatentClass cls, int n) const;

  const ClassDensity& class_density(LatentClass cls) const;
  std::size_t sample_count(LatentClass cls) const { return static_cast<std::size_t>(class_density(cls).x.size()); }
  double bandwidth(LatentClass cls) const { return class_density(cls).bandwidth; }

 private:
  std::array<ClassDensity, 3> classes_;
};

ObservationModel fit_observation_model(const std::vector<LabeledObservation>& labeled, const KdeOptions& options = {});

/// Samples + bandwidths; densities are re-derived on load.
nlohmann::json to_json(const ObservationModel& model);
ObservationModel observation_model_from_json(const nlohmann::json& j);

/// Bilinear interpolation of the KDE on a lattice; used on hot paths.
class TabulatedObservation final : public ObservationLikelihood {
 public:
  TabulatedObservation(const ObservationModel& model, int resolution = 128);
  double likelihood(LatentClass cls, const Observation& obs) const override;

 private:
  int resolution_;
  std::array<Eigen::MatrixXd, 3> nodes_;
};

/// Piecewise-constant likelihood over an n x n partition: P(cell | class) * n^2.
class DiscretizedObservation final : public ObservationLikelihood {
 public:
  DiscretizedObservation(std::array<Eigen::MatrixXd, 3> cell_probs);
  static DiscretizedObservation from_model(const ObservationModel& model, int n);

  double likelihood(LatentClass cls, const Observation& obs) const override;
  int cells_per_axis() const { return static_cast<int>(probs_[0].rows()); }
  int cell_index(const Observation& obs) const;
  /// Midpoint of a flattened cell index.
  Observation cell_center(int index) const;
  /// Row-major flattened cell probabilities for one class.
  Eigen::VectorXd flat(LatentClass cls) const;

 private:
  std::array<Eigen::MatrixXd, 3> probs_;
};

int class_index(LatentClass cls);

}  // namespace steproute
