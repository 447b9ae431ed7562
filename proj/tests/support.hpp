#pragma once

#include <vector>

#include "mvbranch/engine.hpp"
#include "mvbranch/flow.hpp"
#include "mvbranch/model.hpp"

namespace mvb::testing {

inline Point pt(double x) {
  Point p(1);
  p[0] = x;
  return p;
}

inline FiniteMeasure atoms(const std::vector<double>& xs, const std::vector<double>& ws) {
  Eigen::MatrixXd pos(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::VectorXd w(static_cast<Eigen::Index>(ws.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    pos(0, static_cast<Eigen::Index>(i)) = xs[i];
    w[static_cast<Eigen::Index>(i)] = ws[i];
  }
  return FiniteMeasure(pos, w);
}

/// dX = (c + a x) dt + sigma dW with constant branching rate and law p.
inline ModelCoefficients constant_model(double c, double a, double sigma, double gamma, std::vector<double> p) {
  ModelCoefficients m;
  m.dimension = 1;
  m.drift = [c, a](double, const Point& x, const FiniteMeasure&, const ControlValue& u) {
    Point out(1);
    out[0] = c + a * x[0] + (u.size() > 0 ? u[0] : 0.0);
    return out;
  };
  m.diffusion = [sigma](double, const Point&, const FiniteMeasure&, const ControlValue&) {
    DiffusionMatrix s(1, 1);
    s(0, 0) = sigma;
    return s;
  };
  m.branching_rate = [gamma](double, const Point&, const FiniteMeasure&, const ControlValue&) { return gamma; };
  m.rate_bound = gamma > 0.0 ? gamma : 1.0;
  m.progeny = ProgenyLaw::constant(std::move(p));
  return m;
}

inline MeasureFlow trivial_flow(const TimeGrid& grid) { return MeasureFlow::constant(grid, FiniteMeasure(1)); }

}  // namespace mvb::testing
