#include "volcomp/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp {

namespace {

struct Group {
  std::vector<double> x;  // ln(age)
  std::vector<double> y;
};

struct Beta {
  double b0 = 0.0;
  double b1 = 0.0;
};

// GLS under V_i = se2 I + sb2 11^T, using V_i^-1 = (I - g_i 11^T) / se2.
Beta gls(const std::vector<Group>& groups, double sb2, double se2) {
  double a00 = 0, a01 = 0, a11 = 0, r0 = 0, r1 = 0;
  for (const Group& g : groups) {
    const double n = static_cast<double>(g.x.size());
    const double gamma = sb2 / (se2 + n * sb2);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t j = 0; j < g.x.size(); ++j) {
      sx += g.x[j];
      sy += g.y[j];
      sxx += g.x[j] * g.x[j];
      sxy += g.x[j] * g.y[j];
    }
    a00 += n - gamma * n * n;
    a01 += sx - gamma * n * sx;
    a11 += sxx - gamma * sx * sx;
    r0 += sy - gamma * n * sy;
    r1 += sxy - gamma * sx * sy;
  }
  const double det = a00 * a11 - a01 * a01;
  if (!(std::abs(det) > 0.0)) throw NumericalError("lmm: singular fixed-effects system");
  return {(a11 * r0 - a01 * r1) / det, (a00 * r1 - a01 * r0) / det};
}

double log_likelihood(const std::vector<Group>& groups, const Beta& b, double sb2, double se2) {
  double ll = 0.0;
  for (const Group& g : groups) {
    const double n = static_cast<double>(g.x.size());
    double s = 0, s2 = 0;
    for (std::size_t j = 0; j < g.x.size(); ++j) {
      const double r = g.y[j] - b.b0 - b.b1 * g.x[j];
      s += r;
      s2 += r * r;
    }
    const double gamma = sb2 / (se2 + n * sb2);
    const double logdet = (n - 1.0) * std::log(se2) + std::log(se2 + n * sb2);
    const double quad = (s2 - gamma * s * s) / se2;
    ll += -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + quad);
  }
  return ll;
}

}  // namespace

LmmFit fit_lmm_loglinear(std::span<const LmmObservation> obs, const LmmOptions& opts) {
  if (obs.size() < 3) throw InvalidArgument("lmm fit needs at least 3 observations");
  std::map<std::string, Group> by_subject;
  double xmin = INFINITY, xmax = -INFINITY, ymean = 0.0;
  for (const auto& o : obs) {
    if (!(o.age_months > 0.0) || !std::isfinite(o.value)) throw InvalidArgument("lmm: ages must be positive, values finite");
    const double x = std::log(o.age_months);
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymean += o.value;
    by_subject[o.subject_id].x.push_back(x);
    by_subject[o.subject_id].y.push_back(o.value);
  }
  if (!(xmax - xmin > 1e-12)) throw InvalidArgument("lmm: degenerate design, all ages are equal");
  ymean /= static_cast<double>(obs.size());
  std::vector<Group> groups;
  for (auto& [id, g] : by_subject) groups.push_back(std::move(g));
  const double n_total = static_cast<double>(obs.size());
  const double m = static_cast<double>(groups.size());

  double yvar = 0.0;
  for (const auto& o : obs) yvar += (o.value - ymean) * (o.value - ymean);
  yvar /= n_total;
  const double floor = 1e-14 * std::max(yvar, 1.0);

  // Start from OLS with the residual variance split evenly.
  Beta beta = gls(groups, 0.0, 1.0);
  double rss = 0.0;
  for (const Group& g : groups)
    for (std::size_t j = 0; j < g.x.size(); ++j) {
      const double r = g.y[j] - beta.b0 - beta.b1 * g.x[j];
      rss += r * r;
    }
  double sb2 = std::max(0.5 * rss / n_total, floor);
  double se2 = std::max(0.5 * rss / n_total, floor);

  LmmFit fit;
  fit.n_obs = obs.size();
  fit.n_subjects = groups.size();
  beta = gls(groups, sb2, se2);
  double ll = log_likelihood(groups, beta, sb2, se2);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    double acc_b = 0.0, acc_e = 0.0;
    for (const Group& g : groups) {
      const double n = static_cast<double>(g.x.size());
      double s = 0.0;
      for (std::size_t j = 0; j < g.x.size(); ++j) s += g.y[j] - beta.b0 - beta.b1 * g.x[j];
      const double denom = se2 + n * sb2;
      const double bhat = sb2 * s / denom;
      const double vhat = sb2 * se2 / denom;
      acc_b += bhat * bhat + vhat;
      for (std::size_t j = 0; j < g.x.size(); ++j) {
        const double r = g.y[j] - beta.b0 - beta.b1 * g.x[j] - bhat;
        acc_e += r * r;
      }
      acc_e += n * vhat;
    }
    sb2 = std::max(acc_b / m, floor);
    se2 = std::max(acc_e / n_total, floor);
    beta = gls(groups, sb2, se2);
    const double next = log_likelihood(groups, beta, sb2, se2);
    if (!std::isfinite(next)) throw NumericalError("lmm: log-likelihood is not finite");
    const double change = std::abs(next - ll) / std::max(std::abs(ll), 1.0);
    ll = next;
    fit.iterations = it;
    if (change < opts.rel_tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.beta0 = beta.b0;
  fit.beta1 = beta.b1;
  fit.sigma_b2 = sb2;
  fit.sigma_e2 = se2;
  fit.log_likelihood = ll;
  return fit;
}

TrajectoryModel fit_trajectories(std::span<const TrajectoryPoint> points, const LmmOptions& opts) {
  TrajectoryModel model;
  for (Tissue t : kTissues) {
    std::vector<LmmObservation> obs;
    for (const auto& p : points) {
      if (p.tissue == t) obs.push_back({p.subject_id, p.age_months, p.volume_mm3});
    }
    model.fits[static_cast<std::size_t>(t)] = fit_lmm_loglinear(obs, opts);
  }
  return model;
}

}  // namespace volcomp
