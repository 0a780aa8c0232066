#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rcml/dispersion.hpp"
#include "rcml/likelihood.hpp"
#include "rcml/scoring.hpp"
#include "rcml/simgen.hpp"
#include "rcml/stats.hpp"

namespace rcml {

struct BenchConfig {
  std::vector<int> n_individuals{20};
  std::vector<int> n_obs{50, 100, 200};
  std::vector<int> p{3};
  std::vector<int> q{3};
  int repetitions = 41;
  double min_batch_seconds = 0.02;  // each timed sample runs the operation at least this long
  std::uint64_t seed = 7;
};

struct BenchRow {
  int n_individuals = 0;
  int n_obs = 0;
  int p = 0;
  int q = 0;
  std::string method;  // full | reduced
  std::string phase;   // precompute | per-step
  double median_seconds = 0.0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// One timed operation: the batch size is chosen so a batch lasts about
/// `min_seconds`, and each sample is the mean per-call time of one batch.
struct Timer {
  explicit Timer(std::function<void()> f) : fn(std::move(f)) {}

  std::function<void()> fn;
  long batch = 1;
  std::vector<double> samples;

  void calibrate(double min_seconds) {
    for (batch = 1;; batch *= 2) {
      const auto t0 = Clock::now();
      for (long i = 0; i < batch; ++i) fn();
      if (seconds_since(t0) >= min_seconds || batch >= (1L << 24)) break;
    }
  }

  void sample() {
    const auto t0 = Clock::now();
    for (long i = 0; i < batch; ++i) fn();
    samples.push_back(seconds_since(t0) / static_cast<double>(batch));
  }

  double median() {
    const auto mid = samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2);
    std::nth_element(samples.begin(), mid, samples.end());
    return *mid;
  }
};

struct BenchCase {
  int n_individuals, n_obs, p, q;
  Simulation sim;
  std::vector<IndividualStats> stats;
  DispersionSpec spec;
};

}  // namespace detail

/// Times one likelihood + gradient evaluation at theta = 0 with the dense
/// n_k x n_k blocks ("full") and with cached sufficient statistics
/// ("reduced"), plus the one-off statistics pass for the reduced method.
/// The full method has no precompute phase. Samples are taken round-robin
/// over all grid points so slow drift in machine speed affects them alike.
inline std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  if (cfg.n_individuals.empty() || cfg.n_obs.empty() || cfg.p.empty() || cfg.q.empty() || cfg.repetitions < 1) {
    throw Error(ErrorCode::invalid_config, "bench grid lists must be non-empty and repetitions >= 1");
  }
  std::vector<std::unique_ptr<detail::BenchCase>> cases;
  for (int n_ind : cfg.n_individuals) {
    for (int n_obs : cfg.n_obs) {
      for (int p : cfg.p) {
        for (int q : cfg.q) {
          SimConfig sc;
          sc.n_individuals = n_ind;
          sc.n_obs_min = sc.n_obs_max = n_obs;
          sc.p = p;
          sc.q = q;
          sc.alpha = Vector::Ones(p);
          sc.d = 0.5 * Matrix::Identity(q, q);
          sc.sigma2 = Vector::Ones(1);
          sc.design = p == q ? Design::z_equals_x : Design::gaussian_z_subset;
          sc.seed = cfg.seed;
          auto sim = generate(sc);
          auto stats = compute_all_stats(sim.data);
          cases.push_back(std::make_unique<detail::BenchCase>(
              detail::BenchCase{n_ind, n_obs, p, q, std::move(sim), std::move(stats), DispersionSpec::full_symmetric(q)}));
        }
      }
    }
  }

  static volatile double sink = 0.0;
  std::vector<BenchRow> rows;
  std::vector<detail::Timer> timers;
  for (const auto& c : cases) {
    const auto* bc = c.get();
    const Matrix d0 = Matrix::Zero(bc->q, bc->q);
    rows.push_back({bc->n_individuals, bc->n_obs, bc->p, bc->q, "full", "per-step", 0.0});
    timers.emplace_back([bc, d0] {
      const auto ev = reml_full_evaluate(bc->sim.data, d0, bc->sim.truth.sigma2, &bc->spec);
      sink = sink + ev.loglik + ev.gradient(0);
    });
    rows.push_back({bc->n_individuals, bc->n_obs, bc->p, bc->q, "reduced", "precompute", 0.0});
    timers.emplace_back([bc] {
      const auto s = compute_all_stats(bc->sim.data);
      sink = sink + s.front().rss;
    });
    rows.push_back({bc->n_individuals, bc->n_obs, bc->p, bc->q, "reduced", "per-step", 0.0});
    timers.emplace_back([bc, d0] {
      const auto st = evaluate_state(bc->stats, d0, bc->sim.truth.sigma2);
      sink = sink + reml_reduced(bc->stats, st) + gradient(bc->stats, st, bc->spec)(0);
    });
  }
  for (auto& t : timers) t.calibrate(cfg.min_batch_seconds);
  for (int r = 0; r < cfg.repetitions; ++r) {
    for (auto& t : timers) t.sample();
  }
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].median_seconds = timers[i].median();
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "N,n_k,p,q,method,phase,median_seconds\n";
  for (const auto& r : rows) {
    std::ostringstream t;
    t.precision(9);
    t << r.median_seconds;
    out << r.n_individuals << ',' << r.n_obs << ',' << r.p << ',' << r.q << ',' << r.method << ',' << r.phase << ','
        << t.str() << '\n';
  }
}

}  // namespace rcml
