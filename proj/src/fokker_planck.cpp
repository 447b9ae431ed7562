#include "mvbranch/fokker_planck.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include <Eigen/SparseLU>

#include "mvbranch/meanfield.hpp"

namespace mvb {

SpaceGrid SpaceGrid::with_step(double x_lo, double x_hi, double dx) {
  require(std::isfinite(dx) && dx > 0.0, "SpaceGrid: dx must be positive");
  require(std::isfinite(x_lo) && std::isfinite(x_hi) && x_hi > x_lo, "SpaceGrid: need x_lo < x_hi");
  const auto cells = static_cast<int>(std::llround((x_hi - x_lo) / dx));
  return SpaceGrid{x_lo, x_hi, std::max(cells, 1)};
}

void SpaceGrid::validate() const {
  require(std::isfinite(x_lo) && std::isfinite(x_hi) && x_hi > x_lo, "SpaceGrid: need x_lo < x_hi");
  require(cells >= 3, "SpaceGrid: need at least three cells");
}

std::string to_string(FpBoundary boundary) {
  return boundary == FpBoundary::kZeroFlux ? "zero_flux" : "zero_value";
}

std::string to_string(FpScheme scheme) { return scheme == FpScheme::kImplicit ? "implicit" : "explicit"; }

FpCoefficients frozen_coefficients(const ModelCoefficients& model, const ClosedLoopControl& control,
                                   const MeasureFlow& flow) {
  require(model.dimension == 1, "frozen_coefficients: the Fokker-Planck solver is one-dimensional");
  FpCoefficients c;
  c.drift = [&model, &control, &flow](double t, double x) {
    const Point p = Point::Constant(1, x);
    return model.drift(t, p, flow.at(t), control(t, p))[0];
  };
  c.sigma = [&model, &control, &flow](double t, double x) {
    const Point p = Point::Constant(1, x);
    return model.diffusion(t, p, flow.at(t), control(t, p))(0, 0);
  };
  c.source = [&model, &control, &flow](double t, double x) {
    const Point p = Point::Constant(1, x);
    return model.growth_rate(t, p, flow.at(t), control(t, p));
  };
  return c;
}

FiniteMeasure DensityFlow::as_measure(std::size_t j) const {
  const int n = space.cells;
  Eigen::MatrixXd positions(1, n);
  for (int i = 0; i < n; ++i) positions(0, i) = space.center(i);
  return FiniteMeasure(std::move(positions), density[j] * space.dx());
}

Eigen::VectorXd discretize_density(const std::function<double(double)>& f, const SpaceGrid& space) {
  Eigen::VectorXd rho(space.cells);
  for (int i = 0; i < space.cells; ++i) rho[i] = f(space.center(i));
  if (!rho.allFinite() || rho.minCoeff() < 0.0) throw InvalidArgument("density must be finite and nonnegative");
  return rho;
}

Eigen::VectorXd density_from_measure(const FiniteMeasure& mu, const SpaceGrid& space) {
  require(mu.dimension() == 1, "density_from_measure: measure must be one-dimensional");
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(space.cells);
  const double dx = space.dx();
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const double x = mu.positions()(0, k);
    const auto i = static_cast<long long>(std::floor((x - space.x_lo) / dx));
    if (i >= 0 && i < space.cells) rho[static_cast<Eigen::Index>(i)] += mu.weights()[k] / dx;
  }
  return rho;
}

void check_mass_leak(const FiniteMeasure& nu0, const SpaceGrid& space, double tol) {
  require(nu0.dimension() == 1, "check_mass_leak: measure must be one-dimensional");
  double outside = 0.0;
  for (Eigen::Index k = 0; k < nu0.size(); ++k) {
    const double x = nu0.positions()(0, k);
    if (x < space.x_lo || x > space.x_hi) outside += nu0.weights()[k];
  }
  if (nu0.mass() > 0.0 && outside > tol * nu0.mass()) {
    std::ostringstream msg;
    msg << "mass leak: a fraction " << outside / nu0.mass() << " of the initial mass lies outside [" << space.x_lo
        << ", " << space.x_hi << "]";
    throw InvalidArgument(msg.str());
  }
}

namespace {

double checked(double v, const char* what, double t, double x) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "fp_solve: non-finite " << what << " at t = " << t << ", x = " << x;
    throw NumericalFailure(msg.str());
  }
  return v;
}

/// Diffusion operator rho -> d_xx(a rho) with a = sigma^2 / 2.
Eigen::SparseMatrix<double> diffusion_operator(const FpCoefficients& c, const SpaceGrid& space, FpBoundary boundary,
                                               double t) {
  const int n = space.cells;
  const double inv_dx2 = 1.0 / (space.dx() * space.dx());
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(3 * n));
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double s = checked(c.sigma(t, space.center(i)), "sigma", t, space.center(i));
    a[static_cast<std::size_t>(i)] = 0.5 * s * s;
  }
  for (int i = 0; i < n; ++i) {
    const double ai = a[static_cast<std::size_t>(i)];
    double diag = 0.0;
    if (i > 0) {
      entries.emplace_back(i, i - 1, a[static_cast<std::size_t>(i - 1)] * inv_dx2);
      diag -= ai * inv_dx2;
    } else if (boundary == FpBoundary::kZeroValue) {
      diag -= ai * inv_dx2;
    }
    if (i + 1 < n) {
      entries.emplace_back(i, i + 1, a[static_cast<std::size_t>(i + 1)] * inv_dx2);
      diag -= ai * inv_dx2;
    } else if (boundary == FpBoundary::kZeroValue) {
      diag -= ai * inv_dx2;
    }
    entries.emplace_back(i, i, diag);
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(entries.begin(), entries.end());
  return A;
}

/// One explicit upwind advection update over dt, sub-cycled for stability.
void advect(const FpCoefficients& c, const SpaceGrid& space, FpBoundary boundary, double t, double dt,
            Eigen::VectorXd& rho) {
  const int n = space.cells;
  const double dx = space.dx();
  Eigen::VectorXd b(n + 1);  // interface velocities, b[i] at x_lo + i dx
  for (int i = 0; i <= n; ++i) {
    const double x = space.x_lo + i * dx;
    b[i] = checked(c.drift(t, x), "drift", t, x);
  }
  const double courant = b.cwiseAbs().maxCoeff() * dt / dx;
  const int substeps = std::max(1, static_cast<int>(std::ceil(courant / 0.9)));
  const double h = dt / substeps;
  Eigen::VectorXd flux(n + 1);
  for (int k = 0; k < substeps; ++k) {
    for (int i = 1; i < n; ++i) flux[i] = std::max(b[i], 0.0) * rho[i - 1] + std::min(b[i], 0.0) * rho[i];
    if (boundary == FpBoundary::kZeroFlux) {
      flux[0] = 0.0;
      flux[n] = 0.0;
    } else {
      flux[0] = std::min(b[0], 0.0) * rho[0];
      flux[n] = std::max(b[n], 0.0) * rho[n - 1];
    }
    for (int i = 0; i < n; ++i) rho[i] -= h / dx * (flux[i + 1] - flux[i]);
  }
}

}  // namespace

DensityFlow fp_solve(const FpCoefficients& coefficients, const Eigen::VectorXd& density0, const SpaceGrid& space,
                     const TimeGrid& time, const FpOptions& options) {
  space.validate();
  require(density0.size() == space.cells, "fp_solve: initial density has the wrong number of cells");
  require(density0.allFinite() && density0.minCoeff() >= 0.0, "fp_solve: initial density must be nonnegative");
  require(static_cast<bool>(coefficients.drift) && static_cast<bool>(coefficients.sigma) &&
              static_cast<bool>(coefficients.source),
          "fp_solve: incomplete coefficients");
  const int n = space.cells;
  const double dx = space.dx();

  DensityFlow out{space, time, options.boundary, {}, {}, 0.0, 0};
  out.density.reserve(time.size());
  out.mass.reserve(time.size());
  out.density.push_back(density0);
  out.mass.push_back(density0.sum() * dx);

  Eigen::VectorXd rho = density0;
  std::map<double, std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>>> cached;
  const Eigen::SparseMatrix<double> identity = [&] {
    Eigen::SparseMatrix<double> I(n, n);
    I.setIdentity();
    return I;
  }();

  for (std::size_t j = 0; j + 1 < time.size(); ++j) {
    const double t = time[j];
    const double dt = time.step(j);
    advect(coefficients, space, options.boundary, t, dt, rho);

    if (options.scheme == FpScheme::kExplicit) {
      const Eigen::SparseMatrix<double> A = diffusion_operator(coefficients, space, options.boundary, t);
      double max_sigma_sq = 0.0;
      for (int i = 0; i < n; ++i) max_sigma_sq = std::max(max_sigma_sq, -2.0 * A.coeff(i, i) * dx * dx / 2.0);
      if (max_sigma_sq * dt > options.safety * dx * dx) {
        std::ostringstream msg;
        msg << "fp_solve: explicit stability violated at t = " << t << " (dt = " << dt << " > " << options.safety
            << " dx^2 / sigma^2)";
        throw NumericalFailure(msg.str());
      }
      rho += dt * (A * rho);
    } else {
      const double t_next = time[j + 1];
      Eigen::SparseLU<Eigen::SparseMatrix<double>>* solver = nullptr;
      std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> fresh;
      if (coefficients.time_independent_sigma) {
        auto& slot = cached[dt];
        if (!slot) {
          slot = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
          slot->compute(identity - dt * diffusion_operator(coefficients, space, options.boundary, t_next));
        }
        solver = slot.get();
      } else {
        fresh = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        fresh->compute(identity - dt * diffusion_operator(coefficients, space, options.boundary, t_next));
        solver = fresh.get();
      }
      if (solver->info() != Eigen::Success) throw NumericalFailure("fp_solve: diffusion solve failed");
      rho = solver->solve(rho);
    }

    const double t_mid = t + 0.5 * dt;
    for (int i = 0; i < n; ++i) {
      const double x = space.center(i);
      rho[i] *= std::exp(checked(coefficients.source(t_mid, x), "source", t_mid, x) * dt);
    }
    if (!rho.allFinite()) {
      std::ostringstream msg;
      msg << "fp_solve: density became non-finite at t = " << time[j + 1];
      throw NumericalFailure(msg.str());
    }
    for (int i = 0; i < n; ++i) {
      if (rho[i] < 0.0) {
        out.min_density = std::min(out.min_density, rho[i]);
        rho[i] = 0.0;
        ++out.clipped;
      }
    }
    out.density.push_back(rho);
    out.mass.push_back(rho.sum() * dx);
  }
  return out;
}

double eta_norm(const Eigen::VectorXd& density, const SpaceGrid& space, double eta0) {
  require(density.allFinite(), "eta_norm: density must be finite");
  require(eta0 >= 0.0, "eta_norm: eta0 must be nonnegative");
  double total = 0.0;
  for (int i = 0; i < density.size(); ++i) {
    if (density[i] == 0.0) continue;
    const double x = space.center(i);
    const double weight = std::exp(eta0 * std::sqrt(1.0 + x * x));
    total += weight * density[i] * density[i] * space.dx();
  }
  return std::isfinite(total) ? std::sqrt(total) : std::numeric_limits<double>::infinity();
}

SmoothTest bump_test(double center, double radius) {
  require(radius > 0.0, "bump_test: radius must be positive");
  // phi = exp(-1 / (1 - u^2)), u = (x - c) / r.
  auto phi = [=](double x) {
    const double u = (x - center) / radius;
    return std::abs(u) < 1.0 ? std::exp(-1.0 / (1.0 - u * u)) : 0.0;
  };
  auto dphi = [=](double x) {
    const double u = (x - center) / radius;
    if (std::abs(u) >= 1.0) return 0.0;
    const double q = 1.0 - u * u;
    return std::exp(-1.0 / q) * (-2.0 * u / (q * q)) / radius;
  };
  auto d2phi = [=](double x) {
    const double u = (x - center) / radius;
    if (std::abs(u) >= 1.0) return 0.0;
    const double q = 1.0 - u * u;
    const double g = -2.0 * u / (q * q);                          // d/du of -1/q
    const double dg = (-2.0 * q * q - 8.0 * u * u * q) / (q * q * q * q);
    return std::exp(-1.0 / q) * (g * g + dg) / (radius * radius);
  };
  return SmoothTest{phi, dphi, d2phi};
}

double weak_form_residual(const DensityFlow& flow, const FpCoefficients& c, const SmoothTest& test) {
  const SpaceGrid& space = flow.space;
  const double dx = space.dx();
  auto pair = [&](const Eigen::VectorXd& rho, const std::function<double(double)>& f) {
    double acc = 0.0;
    for (int i = 0; i < space.cells; ++i) acc += f(space.center(i)) * rho[i];
    return acc * dx;
  };
  auto generator_pair = [&](std::size_t j) {
    const double t = flow.time[j];
    return pair(flow.density[j], [&](double x) {
      const double s = c.sigma(t, x);
      return c.drift(t, x) * test.dphi(x) + 0.5 * s * s * test.d2phi(x) + c.source(t, x) * test.phi(x);
    });
  };
  double integral = 0.0;
  double left = generator_pair(0);
  for (std::size_t j = 0; j + 1 < flow.time.size(); ++j) {
    const double right = generator_pair(j + 1);
    integral += 0.5 * flow.time.step(j) * (left + right);
    left = right;
  }
  return pair(flow.density.back(), test.phi) - pair(flow.density.front(), test.phi) - integral;
}

EllipticityReport ellipticity(const FpCoefficients& c, const SpaceGrid& space, const TimeGrid& time) {
  EllipticityReport r;
  r.min_sigma_sq = std::numeric_limits<double>::infinity();
  const std::size_t time_stride = std::max<std::size_t>(1, time.size() / 20);
  const int space_stride = std::max(1, space.cells / 50);
  for (std::size_t j = 0; j < time.size(); j += time_stride) {
    for (int i = 0; i < space.cells; i += space_stride) {
      const double s = c.sigma(time[j], space.center(i));
      r.min_sigma_sq = std::min(r.min_sigma_sq, s * s);
      r.max_sigma_sq = std::max(r.max_sigma_sq, s * s);
    }
  }
  r.uniformly_elliptic = r.min_sigma_sq > 0.0 && std::isfinite(r.max_sigma_sq);
  return r;
}

UniquenessReport uniqueness_stress(const ModelCoefficients& model, const ClosedLoopControl& control,
                                   const MeasureFlow& flow, const FiniteMeasure& nu0,
                                   const std::function<double(double)>& nu0_density, double x_lo, double x_hi,
                                   const UniquenessOptions& options) {
  require(options.dx.size() >= 2, "uniqueness_stress: need at least two resolutions");
  const TimeGrid& time = flow.grid();
  const FpCoefficients coefficients = frozen_coefficients(model, control, flow);
  UniquenessReport report;
  report.dx = options.dx;

  std::vector<FiniteMeasure> finals;
  for (double dx : options.dx) {
    const SpaceGrid space = SpaceGrid::with_step(x_lo, x_hi, dx);
    const DensityFlow density = fp_solve(coefficients, discretize_density(nu0_density, space), space, time);
    finals.push_back(thin_to_quantiles(density.as_measure(time.size() - 1), static_cast<Eigen::Index>(options.atoms)));
    if (report.dx.front() == dx) report.ellipticity = ellipticity(coefficients, space, time);
  }
  for (std::size_t k = 0; k + 1 < finals.size(); ++k) report.fd_distances.push_back(wbar1(finals[k], finals[k + 1]));
  if (report.fd_distances.size() >= 2 && report.fd_distances[1] > 0.0)
    report.fd_ratio = report.fd_distances[0] / report.fd_distances[1];

  auto particle_final = [&](InitScheme scheme, std::uint64_t seed) {
    FlowSimulationOptions sim;
    sim.scheme = scheme;
    sim.atom_cap = options.atoms;
    sim.batch = options.batch;
    const MeasureFlow f = simulate_flow(model, control, flow, nu0, time, options.trees, StreamKey(seed), sim);
    return f.measure(time.size() - 1);
  };
  const FiniteMeasure a = particle_final(options.scheme_a, options.seed);
  const FiniteMeasure b = particle_final(options.scheme_b, mix64(options.seed + 1));
  const FiniteMeasure a2 = particle_final(options.scheme_a, mix64(options.seed + 2));
  report.particle_distance = wbar1(a, b);
  report.particle_null_distance = wbar1(a, a2);
  return report;
}

}  // namespace mvb
