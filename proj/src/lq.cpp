#include "mvbranch/lq.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mvb {

// ---------------------------------------------------------------------------
// TimeFunction

TimeFunction::TimeFunction(double value) : values_{value} {}

TimeFunction::TimeFunction(std::vector<double> times, std::vector<double> values)
    : times_(std::move(times)), values_(std::move(values)) {
  require(times_.size() == values_.size(), "TimeFunction: times and values differ in length");
  require(times_.size() >= 2, "TimeFunction: a table needs at least two samples");
  for (std::size_t i = 0; i < times_.size(); ++i) {
    require(std::isfinite(times_[i]) && std::isfinite(values_[i]), "TimeFunction: non-finite table entry");
    if (i > 0) require(times_[i] > times_[i - 1], "TimeFunction: times must be strictly increasing");
  }
  // Natural spline: second derivatives vanish at both ends; tridiagonal
  // system solved by the Thomas algorithm.
  const std::size_t n = times_.size();
  second_derivatives_.assign(n, 0.0);
  std::vector<double> diag(n, 1.0), upper(n, 0.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = times_[i] - times_[i - 1];
    const double h1 = times_[i + 1] - times_[i];
    const double lower = h0 / 6.0;
    diag[i] = (h0 + h1) / 3.0;
    upper[i] = h1 / 6.0;
    rhs[i] = (values_[i + 1] - values_[i]) / h1 - (values_[i] - values_[i - 1]) / h0;
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 1; i-- > 1;) {
    second_derivatives_[i] = (rhs[i] - upper[i] * second_derivatives_[i + 1]) / diag[i];
  }
}

double TimeFunction::operator()(double t) const {
  if (times_.empty()) return values_.front();
  if (t <= times_.front()) return values_.front();
  if (t >= times_.back()) return values_.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
  const std::size_t lo = hi - 1;
  const double h = times_[hi] - times_[lo];
  const double a = (times_[hi] - t) / h;
  const double b = (t - times_[lo]) / h;
  return a * values_[lo] + b * values_[hi] +
         ((a * a * a - a) * second_derivatives_[lo] + (b * b * b - b) * second_derivatives_[hi]) * h * h / 6.0;
}

// ---------------------------------------------------------------------------
// Model

double LQModel::theta() const { return gamma * progeny_net_growth(p); }

void LQModel::validate() const {
  require(std::isfinite(t0) && std::isfinite(horizon) && horizon > t0, "LQModel: need t0 < T");
  require(std::isfinite(sigma), "LQModel: sigma must be finite");
  require(gamma > 0.0 && gamma <= rate_bound() * (1.0 + 1e-12), "LQModel: gamma must lie in (0, gamma_bar]");
  const auto q = normalize_progeny(p, std::max<int>(10, static_cast<int>(p.size()) - 1));
  require(progeny_mean(q) > 0.0, "LQModel: mean offspring number must be positive");
  for (int k = 0; k <= 1000; ++k) {
    const double t = t0 + (horizon - t0) * k / 1000.0;
    if (!(L4(t) > 0.0)) {
      std::ostringstream msg;
      msg << "LQModel: L4 must be positive, L4(" << t << ") = " << L4(t);
      throw InvalidArgument(msg.str());
    }
  }
}

Moments Moments::of(const FiniteMeasure& mu) {
  require(mu.dimension() == 1, "Moments: measure must be one-dimensional");
  return {mu.mass(), mu.first_moment()[0], mu.second_moment()};
}

std::string to_string(ThetaConvention convention) {
  return convention == ThetaConvention::kPrinted ? "paper_printed" : "theta_explicit";
}

ThetaConvention theta_convention_from_string(const std::string& name) {
  if (name == "paper_printed") return ThetaConvention::kPrinted;
  if (name == "theta_explicit") return ThetaConvention::kThetaExplicit;
  throw InvalidArgument("unknown theta convention '" + name + "'");
}

// ---------------------------------------------------------------------------
// Riccati system

RiccatiState riccati_rhs(const LQModel& model, ThetaConvention convention, double t, const RiccatiState& y) {
  const double l4 = model.L4(t);
  if (!(l4 > 0.0)) {
    std::ostringstream msg;
    msg << "riccati: L4 must be positive, L4(" << t << ") = " << l4;
    throw InvalidArgument(msg.str());
  }
  const double b1 = model.b1(t), b2 = model.b2(t), b3 = model.b3(t);
  const double theta = model.theta();
  // The printed system carries theta only in the Lambda equation.
  const double th = convention == ThetaConvention::kThetaExplicit ? theta : 1.0;
  const double s2 = model.sigma * model.sigma;
  const double lam = y[0], g1 = y[1], g2 = y[2], g3 = y[3], g4 = y[4];
  RiccatiState dy;
  dy[0] = b3 * b3 * lam * lam / l4 - model.L1(t) - 2.0 * b1 * lam - theta * lam;
  dy[1] = -s2 * lam - th * g1;
  dy[2] = b3 * b3 * lam * g2 / l4 - 2.0 * b2 * lam - b1 * g2 - 2.0 * th * g2 - model.L3(t);
  dy[3] = -model.L2(t) - 2.0 * th * g3;
  dy[4] = b3 * b3 * g2 * g2 / (4.0 * l4) - b2 * g2 - 3.0 * th * g4;
  return dy;
}

RiccatiSolution::RiccatiSolution(LQModel model, ThetaConvention convention, TimeGrid grid,
                                 std::vector<RiccatiState> values, std::vector<RiccatiState> derivatives)
    : model_(std::move(model)),
      convention_(convention),
      grid_(std::move(grid)),
      values_(std::move(values)),
      derivatives_(std::move(derivatives)) {
  require(values_.size() == grid_.size() && derivatives_.size() == grid_.size(),
          "RiccatiSolution: one value and derivative per grid time");
}

std::size_t RiccatiSolution::segment(double t) const {
  const double tol = 1e-9 * std::max({1.0, std::abs(grid_.start()), std::abs(grid_.end())});
  if (t < grid_.start() - tol || t > grid_.end() + tol) {
    std::ostringstream msg;
    msg << "RiccatiSolution: t = " << t << " outside [" << grid_.start() << ", " << grid_.end() << "]";
    throw InvalidArgument(msg.str());
  }
  if (grid_.size() == 1) return 0;
  const auto& times = grid_.times();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto hi = static_cast<std::size_t>(it - times.begin());
  return std::clamp<std::size_t>(hi, 1, times.size() - 1) - 1;
}

RiccatiState RiccatiSolution::value(double t) const {
  const std::size_t k = segment(t);
  if (grid_.size() == 1) return values_[0];
  const double h = grid_.step(k);
  const double s = std::clamp((t - grid_[k]) / h, 0.0, 1.0);
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * values_[k] + (s3 - 2 * s2 + s) * h * derivatives_[k] +
         (-2 * s3 + 3 * s2) * values_[k + 1] + (s3 - s2) * h * derivatives_[k + 1];
}

RiccatiState RiccatiSolution::derivative(double t) const {
  const std::size_t k = segment(t);
  if (grid_.size() == 1) return derivatives_[0];
  const double h = grid_.step(k);
  const double s = std::clamp((t - grid_[k]) / h, 0.0, 1.0);
  const double s2 = s * s;
  return (6 * s2 - 6 * s) / h * values_[k] + (3 * s2 - 4 * s + 1) * derivatives_[k] +
         (-6 * s2 + 6 * s) / h * values_[k + 1] + (3 * s2 - 2 * s) * derivatives_[k + 1];
}

RiccatiSolution RiccatiSolution::perturbed(const RiccatiState& delta) const {
  std::vector<RiccatiState> shifted = values_;
  for (auto& v : shifted) v += delta;
  return RiccatiSolution(model_, convention_, grid_, std::move(shifted), derivatives_);
}

RiccatiSolution solve_riccati(const LQModel& model, const TimeGrid& grid, ThetaConvention convention) {
  model.validate();
  const double tol = 1e-9 * std::max(1.0, std::abs(model.horizon));
  require(std::abs(grid.end() - model.horizon) <= tol, "solve_riccati: grid must end at the horizon T");
  require(grid.start() >= model.t0 - tol, "solve_riccati: grid starts before t0");

  const std::size_t n = grid.size();
  std::vector<RiccatiState> values(n), derivatives(n);
  RiccatiState y;
  y << model.g1, 0.0, model.g3, model.g2, 0.0;
  values[n - 1] = y;
  derivatives[n - 1] = riccati_rhs(model, convention, grid[n - 1], y);
  for (std::size_t j = n - 1; j-- > 0;) {
    const double t1 = grid[j + 1];
    const double h = grid.step(j);
    const double tm = t1 - 0.5 * h;
    const RiccatiState k1 = riccati_rhs(model, convention, t1, y);
    const RiccatiState k2 = riccati_rhs(model, convention, tm, y - 0.5 * h * k1);
    const RiccatiState k3 = riccati_rhs(model, convention, tm, y - 0.5 * h * k2);
    const RiccatiState k4 = riccati_rhs(model, convention, grid[j], y - h * k3);
    y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite() || y.cwiseAbs().maxCoeff() > 1e8) {
      std::ostringstream msg;
      msg << "solve_riccati: solution blows up (|value| > 1e8) at t = " << grid[j];
      throw NumericalFailure(msg.str());
    }
    values[j] = y;
    derivatives[j] = riccati_rhs(model, convention, grid[j], y);
  }
  return RiccatiSolution(model, convention, grid, std::move(values), std::move(derivatives));
}

// ---------------------------------------------------------------------------
// Value, control, moments

double lq_value(const RiccatiSolution& sol, double t, const Moments& m) {
  const RiccatiState y = sol.value(t);
  return y[0] * m.m2 + y[1] * m.mass + y[2] * m.mass * m.m1 + y[3] * m.mass * m.mass +
         y[4] * m.mass * m.mass * m.mass;
}

double lq_optimal_control(const RiccatiSolution& sol, double t, double x, double mass) {
  const LQModel& model = sol.model();
  const RiccatiState y = sol.value(t);
  const double b3 = model.b3(t);
  return -(2.0 * b3 * y[0] * x + b3 * y[2] * mass) / (2.0 * model.L4(t));
}

AffineFeedback lq_optimal_affine(const std::shared_ptr<const RiccatiSolution>& sol, double t0, double mass0) {
  require(sol != nullptr, "lq_optimal_affine: missing Riccati solution");
  const double theta = sol->model().theta();
  AffineFeedback out;
  out.offset = [sol, t0, mass0, theta](double t) {
    const double mass = mass0 * std::exp(theta * (t - t0));
    return -sol->model().b3(t) * sol->gamma2(t) * mass / (2.0 * sol->model().L4(t));
  };
  out.slope = [sol](double t) { return -sol->model().b3(t) * sol->lambda(t) / sol->model().L4(t); };
  return out;
}

ClosedLoopControl lq_optimal_control_law(const std::shared_ptr<const RiccatiSolution>& sol, double t0, double mass0) {
  AffineFeedback affine = lq_optimal_affine(sol, t0, mass0);
  double lipschitz = 0.0;
  for (double t : sol->grid().times()) {
    if (t < t0) continue;
    lipschitz = std::max({lipschitz, std::abs(affine.offset(t)), std::abs(affine.slope(t))});
  }
  return ClosedLoopControl::from_affine(std::move(affine), lipschitz);
}

namespace {

/// d/dt (mass, m1, m2, J) under a = k0 + k1 x.
Eigen::Vector4d moment_rhs(const LQModel& model, const AffineFeedback& control, double t, const Eigen::Vector4d& y) {
  const double theta = model.theta();
  const double k0 = control.offset(t), k1 = control.slope(t);
  const double b1 = model.b1(t), b2 = model.b2(t), b3 = model.b3(t);
  const double mass = y[0], m1 = y[1], m2 = y[2];
  const double shift = b2 * mass + b3 * k0;
  const double slope = b1 + b3 * k1;
  Eigen::Vector4d dy;
  dy[0] = theta * mass;
  dy[1] = (slope + theta) * m1 + shift * mass;
  dy[2] = (2.0 * slope + theta) * m2 + 2.0 * shift * m1 + model.sigma * model.sigma * mass;
  dy[3] = lq_running_rate(model, control, t, Moments{mass, m1, m2});
  return dy;
}

Eigen::Vector4d rk4_step(const LQModel& model, const AffineFeedback& control, double t, double h,
                         const Eigen::Vector4d& y) {
  const Eigen::Vector4d k1 = moment_rhs(model, control, t, y);
  const Eigen::Vector4d k2 = moment_rhs(model, control, t + 0.5 * h, y + 0.5 * h * k1);
  const Eigen::Vector4d k3 = moment_rhs(model, control, t + 0.5 * h, y + 0.5 * h * k2);
  const Eigen::Vector4d k4 = moment_rhs(model, control, t + h, y + h * k3);
  Eigen::Vector4d next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e8) {
    std::ostringstream msg;
    msg << "lq moment flow blows up (|value| > 1e8) at t = " << t + h;
    throw NumericalFailure(msg.str());
  }
  return next;
}

void check_moments(const Moments& m) {
  require(std::isfinite(m.mass) && std::isfinite(m.m1) && std::isfinite(m.m2), "moments must be finite");
  require(m.mass >= 0.0, "moments: mass must be nonnegative");
  require(m.m1 * m.m1 <= m.mass * m.m2 * (1.0 + 1e-12) + 1e-300, "moments violate m1^2 <= mass m2");
}

}  // namespace

double lq_running_rate(const LQModel& model, const AffineFeedback& control, double t, const Moments& m) {
  const double k0 = control.offset(t), k1 = control.slope(t);
  const double control_energy = k0 * k0 * m.mass + 2.0 * k0 * k1 * m.m1 + k1 * k1 * m.m2;
  return model.L1(t) * m.m2 + model.L2(t) * m.mass * m.mass + model.L3(t) * m.mass * m.m1 +
         model.L4(t) * control_energy;
}

double lq_terminal_cost(const LQModel& model, const Moments& m) {
  return model.g1 * m.m2 + model.g2 * m.mass * m.mass + model.g3 * m.mass * m.m1;
}

std::vector<Moments> lq_moment_flow(const LQModel& model, const AffineFeedback& control, const Moments& m0,
                                    const TimeGrid& grid) {
  check_moments(m0);
  std::vector<Moments> out(grid.size());
  Eigen::Vector4d y(m0.mass, m0.m1, m0.m2, 0.0);
  out[0] = m0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    y = rk4_step(model, control, grid[j], grid.step(j), y);
    out[j + 1] = Moments{y[0], y[1], y[2]};
  }
  return out;
}

MeasureFlow lq_moment_measure_flow(const LQModel& model, const AffineFeedback& control, const Moments& m0,
                                   const TimeGrid& grid) {
  const auto flow = lq_moment_flow(model, control, m0, grid);
  std::vector<Eigen::Vector3d> triples;
  triples.reserve(flow.size());
  for (const Moments& m : flow) triples.push_back(m.vector());
  return MeasureFlow::from_moments(grid, triples);
}

LQPolicyEvaluation lq_evaluate_policy(const LQModel& model, const AffineFeedback& control, double t0,
                                      const Moments& m0, double s, double dt) {
  check_moments(m0);
  require(dt > 0.0, "lq_evaluate_policy: dt must be positive");
  require(s >= t0, "lq_evaluate_policy: need t0 <= s");
  const auto steps = std::max<long long>(1, static_cast<long long>(std::ceil((s - t0) / dt - 1e-9)));
  const double h = (s - t0) / static_cast<double>(steps);
  Eigen::Vector4d y(m0.mass, m0.m1, m0.m2, 0.0);
  if (s > t0) {
    for (long long k = 0; k < steps; ++k) y = rk4_step(model, control, t0 + h * static_cast<double>(k), h, y);
  }
  return {y[3], Moments{y[0], y[1], y[2]}};
}

double lq_cost_ode(const LQModel& model, const AffineFeedback& control, double t0, const Moments& m0, double dt) {
  const LQPolicyEvaluation eval = lq_evaluate_policy(model, control, t0, m0, model.horizon, dt);
  return eval.running + lq_terminal_cost(model, eval.end);
}

double lq_hamiltonian_integrand(const RiccatiSolution& sol, double t, double x, double mass, double a) {
  const RiccatiState y = sol.value(t);
  return sol.model().L4(t) * a * a + sol.model().b3(t) * a * (2.0 * y[0] * x + y[2] * mass);
}

double hjb_residual(const RiccatiSolution& sol, double t, const Moments& m) {
  const LQModel& model = sol.model();
  const RiccatiState y = sol.value(t);
  const RiccatiState dy = sol.derivative(t);
  const double lam = y[0], g1 = y[1], g2 = y[2], g3 = y[3], g4 = y[4];
  const double mass = m.mass, m1 = m.m1, m2 = m.m2;
  const double mass2 = mass * mass, mass3 = mass2 * mass;
  const double b1 = model.b1(t), b2 = model.b2(t), b3 = model.b3(t), l4 = model.L4(t);
  const double theta = model.theta();

  const double dt_w = dy[0] * m2 + dy[1] * mass + dy[2] * mass * m1 + dy[3] * mass2 + dy[4] * mass3;

  // Pointwise minimiser a*(x) = k0 + k1 x.
  const double k1 = -b3 * lam / l4;
  const double k0 = -b3 * g2 * mass / (2.0 * l4);
  const AffineFeedback star{[k0](double) { return k0; }, [k1](double) { return k1; }};
  const double running = lq_running_rate(model, star, t, m);

  // <b . D_mu w, m> with D_mu w(x) = 2 Lambda x + Gamma2 mass.
  const double slope = b1 + b3 * k1;
  const double shift = b2 * mass + b3 * k0;
  const double transport = slope * (2.0 * lam * m2 + g2 * mass * m1) + shift * (2.0 * lam * m1 + g2 * mass2);
  // 1/2 sigma^2 <d_x D_mu w, m> with d_x D_mu w = 2 Lambda.
  const double diffusion = model.sigma * model.sigma * lam * mass;
  // theta <dw/dmu, m>
  const double branching = theta * (lam * m2 + g1 * mass + 2.0 * g2 * mass * m1 + 2.0 * g3 * mass2 + 3.0 * g4 * mass3);

  return dt_w + running + transport + diffusion + branching;
}

// ---------------------------------------------------------------------------
// Adapters to the generic engine

ModelCoefficients lq_coefficients(const LQModel& model) {
  model.validate();
  ModelCoefficients c;
  c.dimension = 1;
  c.drift = [b1 = model.b1, b2 = model.b2, b3 = model.b3](double t, const Point& x, const FiniteMeasure& m,
                                                          const ControlValue& a) {
    Point out(1);
    out[0] = b1(t) * x[0] + b2(t) * m.mass() + b3(t) * a[0];
    return out;
  };
  c.diffusion = [sigma = model.sigma](double, const Point&, const FiniteMeasure&, const ControlValue&) {
    DiffusionMatrix s(1, 1);
    s(0, 0) = sigma;
    return s;
  };
  c.branching_rate = [gamma = model.gamma](double, const Point&, const FiniteMeasure&, const ControlValue&) {
    return gamma;
  };
  c.rate_bound = model.rate_bound();
  const int lmax = std::max<int>(10, static_cast<int>(model.p.size()) - 1);
  c.progeny = ProgenyLaw::constant(model.p, std::nullopt, lmax);
  double bound = std::abs(model.sigma);
  for (int k = 0; k <= 200; ++k) {
    const double t = model.t0 + (model.horizon - model.t0) * k / 200.0;
    bound = std::max(bound, std::abs(model.b1(t)) + std::abs(model.b2(t)) + std::abs(model.b3(t)) +
                                std::abs(model.sigma));
  }
  c.growth_constant = bound;
  return c;
}

CostSpec lq_costs(const LQModel& model) {
  CostSpec costs;
  costs.running = [l1 = model.L1, l2 = model.L2, l3 = model.L3, l4 = model.L4](
                      double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) {
    return l1(t) * x[0] * x[0] + l2(t) * m.mass() + l3(t) * m.first_moment()[0] + l4(t) * a[0] * a[0];
  };
  costs.terminal = [g1 = model.g1, g2 = model.g2, g3 = model.g3](const Point& x, const FiniteMeasure& m) {
    return g1 * x[0] * x[0] + g2 * m.mass() + g3 * m.first_moment()[0];
  };
  double cl = 0.0;
  for (int k = 0; k <= 200; ++k) {
    const double t = model.t0 + (model.horizon - model.t0) * k / 200.0;
    cl = std::max(cl, std::abs(model.L1(t)) + std::abs(model.L2(t)) + std::abs(model.L3(t)) + std::abs(model.L4(t)));
  }
  costs.running_growth = cl;
  costs.terminal_growth = std::abs(model.g1) + std::abs(model.g2) + std::abs(model.g3);
  return costs;
}

}  // namespace mvb
