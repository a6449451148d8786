#include "steproute/kde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace steproute {

int class_index(LatentClass cls) {
  switch (cls) {
    case LatentClass::S0: return 0;
    case LatentClass::S1: return 1;
    case LatentClass::S2: return 2;
    case LatentClass::Terminal: break;
  }
  throw Error(ErrorCode::OutOfDomain, "Terminal has no observation density");
}

namespace {

constexpr LatentClass kClasses[3] = {LatentClass::S0, LatentClass::S1, LatentClass::S2};

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Reflected 1-D kernel: mirrors of the sample across 0 and 1.
double reflected_pdf(double x, double c, double h) {
  return (normal_pdf((x - c) / h) + normal_pdf((x + c) / h) + normal_pdf((x - (2.0 - c)) / h)) / h;
}

double reflected_mass(double a, double b, double c, double h) {
  double m = 0.0;
  for (double center : {c, -c, 2.0 - c}) m += normal_cdf((b - center) / h) - normal_cdf((a - center) / h);
  return m;
}

void check_domain(const Observation& obs) {
  if (!(obs.min_prev >= 0.0 && obs.min_prev <= 1.0 && obs.current >= 0.0 && obs.current <= 1.0)) {
    throw Error(ErrorCode::OutOfDomain,
                "(" + std::to_string(obs.min_prev) + ", " + std::to_string(obs.current) + ") outside [0,1]^2");
  }
}

double sample_std(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

// Kernel values at `points` for every sample: rows = samples, cols = points.
template <typename F>
Eigen::MatrixXd kernel_table(const Eigen::VectorXd& samples, int cols, F&& f) {
  Eigen::MatrixXd k(samples.size(), cols);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    for (int j = 0; j < cols; ++j) k(i, j) = f(samples[i], j);
  }
  return k;
}

}  // namespace

const ObservationModel::ClassDensity& ObservationModel::class_density(LatentClass cls) const {
  return classes_[static_cast<std::size_t>(class_index(cls))];
}

double ObservationModel::density(LatentClass cls, const Observation& obs) const {
  check_domain(obs);
  const auto& c = class_density(cls);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < c.x.size(); ++i) {
    acc += reflected_pdf(obs.min_prev, c.x[i], c.bandwidth) * reflected_pdf(obs.current, c.y[i], c.bandwidth);
  }
  return c.x.size() > 0 ? acc / static_cast<double>(c.x.size()) : 0.0;
}

double ObservationModel::likelihood(LatentClass cls, const Observation& obs) const {
  return std::max(kLikelihoodFloor, density(cls, obs));
}

double ObservationModel::cell_mass(LatentClass cls, double x0, double x1, double y0, double y1) const {
  const auto& c = class_density(cls);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < c.x.size(); ++i) {
    acc += reflected_mass(x0, x1, c.x[i], c.bandwidth) * reflected_mass(y0, y1, c.y[i], c.bandwidth);
  }
  return acc / static_cast<double>(c.x.size());
}

Eigen::MatrixXd ObservationModel::density_grid(LatentClass cls, int res) const {
  const auto& c = class_density(cls);
  auto mid = [res](int j) { return (j + 0.5) / res; };
  const auto kx = kernel_table(c.x, res, [&](double s, int j) { return reflected_pdf(mid(j), s, c.bandwidth); });
  const auto ky = kernel_table(c.y, res, [&](double s, int j) { return reflected_pdf(mid(j), s, c.bandwidth); });
  return kx.transpose() * ky / static_cast<double>(c.x.size());
}

Eigen::MatrixXd ObservationModel::cell_masses(LatentClass cls, int n) const {
  const auto& c = class_density(cls);
  auto edge = [n](int j) { return static_cast<double>(j) / n; };
  const auto kx =
      kernel_table(c.x, n, [&](double s, int j) { return reflected_mass(edge(j), edge(j + 1), s, c.bandwidth); });
  const auto ky =
      kernel_table(c.y, n, [&](double s, int j) { return reflected_mass(edge(j), edge(j + 1), s, c.bandwidth); });
  return kx.transpose() * ky / static_cast<double>(c.x.size());
}

ObservationModel fit_observation_model(const std::vector<LabeledObservation>& labeled, const KdeOptions& options) {
  std::array<std::vector<Observation>, 3> buckets;
  for (const auto& row : labeled) {
    check_domain({row.min_prev, row.current});
    buckets[static_cast<std::size_t>(class_index(row.cls))].push_back({row.min_prev, row.current});
  }
  std::array<ObservationModel::ClassDensity, 3> classes;
  for (int k = 0; k < 3; ++k) {
    const auto& pts = buckets[static_cast<std::size_t>(k)];
    if (static_cast<int>(pts.size()) < options.min_samples) {
      throw Error(ErrorCode::InsufficientSamples, std::string(to_string(kClasses[k])) + " has " +
                                                      std::to_string(pts.size()) + " samples, need " +
                                                      std::to_string(options.min_samples));
    }
    auto& c = classes[static_cast<std::size_t>(k)];
    c.x.resize(static_cast<Eigen::Index>(pts.size()));
    c.y.resize(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      c.x[static_cast<Eigen::Index>(i)] = pts[i].min_prev;
      c.y[static_cast<Eigen::Index>(i)] = pts[i].current;
    }
    // Silverman-style rule for d = 2: h = sigma * n^(-1/6).
    const double sigma = 0.5 * (sample_std(c.x) + sample_std(c.y));
    c.bandwidth = std::max(options.bandwidth_floor, sigma * std::pow(static_cast<double>(pts.size()), -1.0 / 6.0));
  }
  return ObservationModel(std::move(classes));
}

nlohmann::json to_json(const ObservationModel& model) {
  nlohmann::json classes = nlohmann::json::object();
  for (auto cls : kClasses) {
    const auto& c = model.class_density(cls);
    classes[to_string(cls)] = {{"bandwidth", c.bandwidth},
                               {"min_prev", std::vector<double>(c.x.data(), c.x.data() + c.x.size())},
                               {"current", std::vector<double>(c.y.data(), c.y.data() + c.y.size())}};
  }
  return {{"format", "steproute-observation-model"}, {"version", 1}, {"kernel", "reflected-gaussian"}, {"classes", classes}};
}

ObservationModel observation_model_from_json(const nlohmann::json& j) {
  std::array<ObservationModel::ClassDensity, 3> classes;
  try {
    for (int k = 0; k < 3; ++k) {
      const auto& jc = j.at("classes").at(to_string(kClasses[k]));
      auto& c = classes[static_cast<std::size_t>(k)];
      c.bandwidth = jc.at("bandwidth").get<double>();
      const auto xs = jc.at("min_prev").get<std::vector<double>>();
      const auto ys = jc.at("current").get<std::vector<double>>();
      if (xs.size() != ys.size() || xs.empty()) throw Error(ErrorCode::InvariantViolation, "samples");
      if (!(c.bandwidth > 0)) throw Error(ErrorCode::InvariantViolation, "bandwidth");
      c.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
      c.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("observation model: ") + e.what());
  }
  return ObservationModel(std::move(classes));
}

TabulatedObservation::TabulatedObservation(const ObservationModel& model, int resolution) : resolution_(resolution) {
  for (int k = 0; k < 3; ++k) {
    const auto& c = model.class_density(kClasses[k]);
    auto node = [this](int j) { return static_cast<double>(j) / resolution_; };
    const auto kx = kernel_table(c.x, resolution_ + 1, [&](double s, int j) { return reflected_pdf(node(j), s, c.bandwidth); });
    const auto ky = kernel_table(c.y, resolution_ + 1, [&](double s, int j) { return reflected_pdf(node(j), s, c.bandwidth); });
    nodes_[static_cast<std::size_t>(k)] = kx.transpose() * ky / static_cast<double>(c.x.size());
  }
}

double TabulatedObservation::likelihood(LatentClass cls, const Observation& obs) const {
  check_domain(obs);
  const auto& t = nodes_[static_cast<std::size_t>(class_index(cls))];
  const double fx = obs.min_prev * resolution_;
  const double fy = obs.current * resolution_;
  const int ix = std::min(static_cast<int>(fx), resolution_ - 1);
  const int iy = std::min(static_cast<int>(fy), resolution_ - 1);
  const double ax = fx - ix;
  const double ay = fy - iy;
  const double v = (1 - ax) * (1 - ay) * t(ix, iy) + ax * (1 - ay) * t(ix + 1, iy) + (1 - ax) * ay * t(ix, iy + 1) +
                   ax * ay * t(ix + 1, iy + 1);
  return std::max(kLikelihoodFloor, v);
}

DiscretizedObservation::DiscretizedObservation(std::array<Eigen::MatrixXd, 3> cell_probs) : probs_(std::move(cell_probs)) {
  for (const auto& p : probs_) {
    if (p.rows() != probs_[0].rows() || p.cols() != p.rows() || p.rows() < 1) {
      throw Error(ErrorCode::InvariantViolation, "cell probability tables must be square and equal-sized");
    }
  }
}

DiscretizedObservation DiscretizedObservation::from_model(const ObservationModel& model, int n) {
  std::array<Eigen::MatrixXd, 3> probs;
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd m = model.cell_masses(kClasses[k], n);
    probs[static_cast<std::size_t>(k)] = m / m.sum();
  }
  return DiscretizedObservation(std::move(probs));
}

int DiscretizedObservation::cell_index(const Observation& obs) const {
  check_domain(obs);
  const int n = cells_per_axis();
  const int ix = std::min(static_cast<int>(obs.min_prev * n), n - 1);
  const int iy = std::min(static_cast<int>(obs.current * n), n - 1);
  return ix * n + iy;
}

Observation DiscretizedObservation::cell_center(int index) const {
  const int n = cells_per_axis();
  return {(index / n + 0.5) / n, (index % n + 0.5) / n};
}

double DiscretizedObservation::likelihood(LatentClass cls, const Observation& obs) const {
  const int n = cells_per_axis();
  const int idx = cell_index(obs);
  const double p = probs_[static_cast<std::size_t>(class_index(cls))](idx / n, idx % n);
  return std::max(kLikelihoodFloor, p * n * n);
}

Eigen::VectorXd DiscretizedObservation::flat(LatentClass cls) const {
  const auto& p = probs_[static_cast<std::size_t>(class_index(cls))];
  Eigen::VectorXd out(p.size());
  const int n = cells_per_axis();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out[i * n + j] = p(i, j);
  }
  return out;
}

}  // namespace steproute
