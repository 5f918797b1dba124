#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mflq/error.hpp"
#include "mflq/gare.hpp"
#include "mflq/lyapunov.hpp"
#include "mflq/model.hpp"
#include "mflq/rng.hpp"

namespace mflq {

/// Uniform time grid s_l = t0 + l·dt, l = 0..steps.
struct SimGrid {
  double dt = 0.01;
  long steps = 2000;
  double t0 = 0.0;

  double horizon() const { return dt * static_cast<double>(steps); }
  double time(long l) const { return t0 + dt * static_cast<double>(l); }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) {
      throw Error(ErrorKind::DimensionMismatch, "grid step dt must be positive");
    }
    if (steps < 1) throw Error(ErrorKind::DimensionMismatch, "grid needs at least one step");
  }
};

struct SimOptions {
  long paths = 1;
  std::uint64_t seed = 0;
  /// Store every sampled path (H·(L+1)·n doubles).
  bool keep_paths = false;
  /// Store, per path, the left-endpoint integral of (X−X̄)(X−X̄)ᵀ around the driving mean.
  bool keep_path_integrals = false;
  /// 0 selects worker_count().
  unsigned threads = 0;
};

/// Paths are grouped into fixed-size blocks. Each block accumulates its own
/// moments and blocks are combined in index order, so results do not depend
/// on the number of workers.
inline constexpr long kPathBlock = 1024;

/// H closed-loop sample paths from one initial state, summarized by their
/// per-step cross-path moments.
struct TrajectoryBundle {
  SimGrid grid;
  Vector x0;
  long paths = 0;
  std::uint64_t seed = 0;
  FeedbackGain gain;
  /// (L+1)×n sample mean across paths.
  Matrix mean;
  /// (L+1)×n², row l is vec of the sample covariance about mean.row(l) (1/H normalization).
  Matrix scatter;
  /// (L+1)×n deterministic Euler mean used inside each path's coefficients.
  Matrix driving_mean;
  /// Optional: one (L+1)×n matrix per path.
  std::vector<Matrix> path_data;
  /// Optional: H×n², row h is vec of ∫(X_h−X̄)(X_h−X̄)ᵀds around driving_mean.
  Matrix path_integrals;

  Eigen::Index n() const { return x0.size(); }
  long steps() const { return grid.steps; }

  Matrix covariance(long l) const { return scatter.row(l).reshaped(n(), n()); }
};

namespace detail {

/// Runs fn(block) for every block on up to `threads` workers; rethrows the
/// first captured exception.
template <class Fn>
void for_each_block(long blocks, unsigned threads, Fn&& fn) {
  const long workers = std::min<long>(std::max<unsigned>(threads, 1u), blocks);
  if (workers <= 1) {
    for (long b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (long w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (long b = next++; b < blocks; b = next++) fn(b);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
        next = blocks;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<double> row_major(const Matrix& M) {
  std::vector<double> out(static_cast<std::size_t>(M.size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out[i * M.cols() + j] = M(i, j);
  }
  return out;
}

inline long block_count(long paths) { return (paths + kPathBlock - 1) / kPathBlock; }

}  // namespace detail

/// Euler recursion X̄(s+Δs) = X̄ + (Â+B̂K̂)X̄Δs used as the driving mean.
inline Matrix euler_mean(const Matrix& Ahatcl, const Vector& x0, const SimGrid& grid) {
  const auto n = x0.size();
  Matrix out(grid.steps + 1, n);
  Vector x = x0;
  out.row(0) = x.transpose();
  for (long l = 0; l < grid.steps; ++l) {
    x = x + Ahatcl * x * grid.dt;
    out.row(l + 1) = x.transpose();
  }
  return out;
}

/// Simulates the closed-loop mean-field SDE by Euler–Maruyama:
///   X(s+Δs) = X + [(A+BK)(X−X̄) + (Â+B̂K̂)X̄]Δs + [(C+DK)(X−X̄) + (Ĉ+D̂K̂)X̄]ΔW,
/// with X̄ propagated by the deterministic Euler recursion and ΔW = Z√Δs.
/// Path h draws from stream derive_seed(seed, h).
inline TrajectoryBundle simulate_closed_loop(const MfSystem& sys, const FeedbackGain& gain,
                                             const Vector& x0, const SimGrid& grid,
                                             const SimOptions& opts) {
  grid.validate();
  require_compatible(sys, gain);
  if (x0.size() != sys.n()) {
    throw Error(ErrorKind::DimensionMismatch, "initial state has wrong dimension");
  }
  if (opts.paths < 1) throw Error(ErrorKind::DimensionMismatch, "need at least one path");

  const auto n = sys.n();
  const long L = grid.steps;
  const long H = opts.paths;
  const double dt = grid.dt;
  const double sqdt = std::sqrt(dt);
  const ClosedLoopMatrices cl = closed_loop(sys, gain);

  const Matrix xbar = euler_mean(cl.Ahat, x0, grid);
  if (!xbar.allFinite()) {
    long bad = 0;
    while (bad <= L && xbar.row(bad).allFinite()) ++bad;
    throw DivergedError("mean trajectory overflowed", bad);
  }
  const Matrix chat_xbar = xbar * cl.Chat.transpose();
  const bool draws = !(cl.C.isZero(0.0) && chat_xbar.isZero(0.0));

  const std::vector<double> acl = detail::row_major(cl.A);
  const std::vector<double> ccl = detail::row_major(cl.C);
  const std::vector<double> xb = detail::row_major(xbar);
  const std::vector<double> cx = detail::row_major(chat_xbar);

  struct BlockMoments {
    std::vector<double> sum_x, sum_y, sum_yy;
    long first_bad = -1;
  };
  const long blocks = detail::block_count(H);
  std::vector<BlockMoments> acc(static_cast<std::size_t>(blocks));

  TrajectoryBundle bundle{grid, x0, H, opts.seed, gain, {}, {}, {}, {}, {}};
  if (opts.keep_paths) bundle.path_data.assign(static_cast<std::size_t>(H), Matrix(L + 1, n));
  if (opts.keep_path_integrals) bundle.path_integrals = Matrix::Zero(H, n * n);

  const std::size_t nn = static_cast<std::size_t>(n);
  const std::size_t width = static_cast<std::size_t>(L + 1);

  detail::for_each_block(blocks, worker_count(opts.threads), [&](long b) {
    BlockMoments& m = acc[static_cast<std::size_t>(b)];
    m.sum_x.assign(width * nn, 0.0);
    m.sum_y.assign(width * nn, 0.0);
    m.sum_yy.assign(width * nn * nn, 0.0);
    std::vector<double> y(nn), y_next(nn), integral(nn * nn);
    const long first = b * kPathBlock;
    const long last = std::min(H, first + kPathBlock);
    for (long h = first; h < last; ++h) {
      NormalStream normal(derive_seed(opts.seed, static_cast<std::uint64_t>(h)));
      std::fill(y.begin(), y.end(), 0.0);
      std::fill(integral.begin(), integral.end(), 0.0);
      for (long l = 0; l <= L; ++l) {
        const std::size_t row = static_cast<std::size_t>(l) * nn;
        for (std::size_t i = 0; i < nn; ++i) {
          const double x = xb[row + i] + y[i];
          m.sum_x[row + i] += x;
          m.sum_y[row + i] += y[i];
          if (opts.keep_paths) bundle.path_data[static_cast<std::size_t>(h)](l, i) = x;
        }
        double* yy = &m.sum_yy[row * nn];
        for (std::size_t i = 0; i < nn; ++i) {
          for (std::size_t j = 0; j < nn; ++j) yy[i * nn + j] += y[i] * y[j];
        }
        if (l == L) break;
        if (opts.keep_path_integrals) {
          for (std::size_t i = 0; i < nn; ++i) {
            for (std::size_t j = 0; j < nn; ++j) integral[i * nn + j] += y[i] * y[j] * dt;
          }
        }
        const double dw = draws ? normal() * sqdt : 0.0;
        bool finite = true;
        for (std::size_t i = 0; i < nn; ++i) {
          double drift = 0.0;
          double diffusion = cx[row + i];
          for (std::size_t j = 0; j < nn; ++j) {
            drift += acl[i * nn + j] * y[j];
            diffusion += ccl[i * nn + j] * y[j];
          }
          y_next[i] = y[i] + drift * dt + diffusion * dw;
          finite = finite && std::isfinite(y_next[i]);
        }
        if (!finite) {
          if (m.first_bad < 0 || l + 1 < m.first_bad) m.first_bad = l + 1;
          break;
        }
        y.swap(y_next);
      }
      if (opts.keep_path_integrals) {
        for (std::size_t k = 0; k < nn * nn; ++k) bundle.path_integrals(h, k) = integral[k];
      }
    }
  });

  long first_bad = -1;
  for (const auto& m : acc) {
    if (m.first_bad >= 0 && (first_bad < 0 || m.first_bad < first_bad)) first_bad = m.first_bad;
  }
  if (first_bad >= 0) throw DivergedError("closed-loop path overflowed", first_bad);

  std::vector<double> sum_x(width * nn, 0.0), sum_y(width * nn, 0.0),
      sum_yy(width * nn * nn, 0.0);
  for (const auto& m : acc) {
    for (std::size_t k = 0; k < sum_x.size(); ++k) sum_x[k] += m.sum_x[k];
    for (std::size_t k = 0; k < sum_y.size(); ++k) sum_y[k] += m.sum_y[k];
    for (std::size_t k = 0; k < sum_yy.size(); ++k) sum_yy[k] += m.sum_yy[k];
  }

  const double inv_h = 1.0 / static_cast<double>(H);
  bundle.mean.resize(L + 1, n);
  bundle.scatter.resize(L + 1, n * n);
  for (long l = 0; l <= L; ++l) {
    const std::size_t row = static_cast<std::size_t>(l) * nn;
    for (std::size_t i = 0; i < nn; ++i) bundle.mean(l, i) = sum_x[row + i] * inv_h;
    for (std::size_t i = 0; i < nn; ++i) {
      for (std::size_t j = 0; j < nn; ++j) {
        const double yi = sum_y[row + i] * inv_h;
        const double yj = sum_y[row + j] * inv_h;
        // column-major vec index of entry (i, j)
        bundle.scatter(l, static_cast<Eigen::Index>(i + nn * j)) =
            sum_yy[(row + i) * nn + j] * inv_h - yi * yj;
      }
    }
  }
  bundle.driving_mean = xbar;
  return bundle;
}

inline TrajectoryBundle simulate_closed_loop(const MfSystem& sys, const FeedbackGain& gain,
                                             const Vector& x0, const SimGrid& grid, long paths,
                                             std::uint64_t seed) {
  SimOptions opts;
  opts.paths = paths;
  opts.seed = seed;
  return simulate_closed_loop(sys, gain, x0, grid, opts);
}

/// Exact conditional mean E[X(s_l)] = exp((Â+B̂K̂)(s_l − t0))·x0.
inline Matrix mean_ode(const MfSystem& sys, const FeedbackGain& gain, const Vector& x0,
                       const SimGrid& grid) {
  grid.validate();
  const ClosedLoopMatrices cl = closed_loop(sys, gain);
  Matrix out(grid.steps + 1, sys.n());
  for (long l = 0; l <= grid.steps; ++l) {
    const Matrix expm = (cl.Ahat * (grid.dt * static_cast<double>(l))).exp();
    out.row(l) = (expm * x0).transpose();
  }
  return out;
}

/// Riemann-sum estimate of the cost functional under u = K(X−X̄) + K̂X̄, with
/// the cross-path sample mean standing in for every conditional expectation.
inline double estimate_cost(const TrajectoryBundle& bundle, const CostWeights& w,
                            const FeedbackGain& gain) {
  const Matrix& K = gain.K();
  const Matrix& Khat = gain.Khat();
  double total = 0.0;
  for (long l = 0; l < bundle.steps(); ++l) {
    const Vector m = bundle.mean.row(l).transpose();
    const Matrix cov = bundle.covariance(l);
    const Vector u_mean = Khat * m;
    const Matrix second = cov + m * m.transpose();
    const Matrix x_u = cov * K.transpose() + m * u_mean.transpose();
    const Matrix u_u = K * cov * K.transpose() + u_mean * u_mean.transpose();
    const double running = (w.Q() * second).trace() + m.dot(w.Qbar() * m) +
                           2.0 * (w.S() * x_u).trace() + 2.0 * u_mean.dot(w.Sbar() * m) +
                           (w.R() * u_u).trace() + u_mean.dot(w.Rbar() * u_mean);
    total += running * bundle.grid.dt;
  }
  return total;
}

struct DecayReport {
  bool decayed = false;
  /// E|X(s_l)|² for l = 0..L.
  Vector second_moment;
};

/// Whether E|X(T)|² ≤ ratio · E|X(0)|².
inline DecayReport decay_check(const TrajectoryBundle& bundle, double ratio = 0.05) {
  DecayReport report;
  const long L = bundle.steps();
  report.second_moment.resize(L + 1);
  for (long l = 0; l <= L; ++l) {
    report.second_moment(l) =
        bundle.mean.row(l).squaredNorm() + bundle.covariance(l).trace();
  }
  report.decayed = report.second_moment(L) <= ratio * report.second_moment(0);
  return report;
}

/// Monte Carlo estimate of P = E∫Φᵀ(KᵀRK+SᵀK+KᵀS+Q)Φ ds with
/// dΦ = (A+BK)Φds + (C+DK)ΦdW, Φ(t0) = I.
struct FundamentalEstimate {
  Matrix P;
  /// Entrywise standard error of P.
  Matrix stderr_;
  SimGrid grid;
  long paths = 0;
  std::uint64_t seed = 0;
};

inline FundamentalEstimate estimate_P_fundamental(const MfSystem& sys, const CostWeights& w,
                                                  const FeedbackGain& gain,
                                                  const SimGrid& grid,
                                                  const SimOptions& opts) {
  grid.validate();
  require_compatible(sys, w);
  if (opts.paths < 1) throw Error(ErrorKind::DimensionMismatch, "need at least one path");
  const auto n = sys.n();
  const ClosedLoopMatrices cl = closed_loop(sys, gain);
  const Matrix Lambda = fluctuation_weight(w, gain.K());
  const long H = opts.paths;
  const long L = grid.steps;
  const double dt = grid.dt;
  const double sqdt = std::sqrt(dt);
  const bool draws = !cl.C.isZero(0.0);

  struct BlockSums {
    Matrix sum, sum_sq;
    long first_bad = -1;
  };
  const long blocks = detail::block_count(H);
  std::vector<BlockSums> acc(static_cast<std::size_t>(blocks));

  detail::for_each_block(blocks, worker_count(opts.threads), [&](long b) {
    BlockSums& s = acc[static_cast<std::size_t>(b)];
    s.sum = Matrix::Zero(n, n);
    s.sum_sq = Matrix::Zero(n, n);
    // Column-major scratch buffers; each path is a plain loop without allocation.
    const std::size_t nn = static_cast<std::size_t>(n);
    std::vector<double> phi(nn * nn), next(nn * nn), tmp(nn * nn), integral(nn * nn);
    const double* a = cl.A.data();
    const double* c = cl.C.data();
    const double* lam = Lambda.data();
    const long first = b * kPathBlock;
    const long last = std::min(H, first + kPathBlock);
    for (long h = first; h < last; ++h) {
      NormalStream normal(derive_seed(opts.seed, static_cast<std::uint64_t>(h)));
      std::fill(phi.begin(), phi.end(), 0.0);
      for (std::size_t i = 0; i < nn; ++i) phi[i + nn * i] = 1.0;
      std::fill(integral.begin(), integral.end(), 0.0);
      for (long l = 0; l < L; ++l) {
        // integral += dt · Φᵀ Λ Φ
        for (std::size_t j = 0; j < nn; ++j) {
          for (std::size_t i = 0; i < nn; ++i) {
            double acc_ij = 0.0;
            for (std::size_t k = 0; k < nn; ++k) acc_ij += lam[i + nn * k] * phi[k + nn * j];
            tmp[i + nn * j] = acc_ij;
          }
        }
        for (std::size_t j = 0; j < nn; ++j) {
          for (std::size_t i = 0; i < nn; ++i) {
            double acc_ij = 0.0;
            for (std::size_t k = 0; k < nn; ++k) acc_ij += phi[k + nn * i] * tmp[k + nn * j];
            integral[i + nn * j] += dt * acc_ij;
          }
        }
        const double dw = draws ? normal() * sqdt : 0.0;
        bool finite = true;
        for (std::size_t j = 0; j < nn; ++j) {
          for (std::size_t i = 0; i < nn; ++i) {
            double drift = 0.0, diffusion = 0.0;
            for (std::size_t k = 0; k < nn; ++k) {
              drift += a[i + nn * k] * phi[k + nn * j];
              diffusion += c[i + nn * k] * phi[k + nn * j];
            }
            const double v = phi[i + nn * j] + drift * dt + diffusion * dw;
            next[i + nn * j] = v;
            finite = finite && std::isfinite(v);
          }
        }
        if (!finite) {
          if (s.first_bad < 0 || l + 1 < s.first_bad) s.first_bad = l + 1;
          break;
        }
        phi.swap(next);
      }
      for (std::size_t k = 0; k < nn * nn; ++k) {
        s.sum.data()[k] += integral[k];
        s.sum_sq.data()[k] += integral[k] * integral[k];
      }
    }
  });

  Matrix sum = Matrix::Zero(n, n), sum_sq = Matrix::Zero(n, n);
  for (const auto& s : acc) {
    if (s.first_bad >= 0) throw DivergedError("fundamental solution overflowed", s.first_bad);
    sum += s.sum;
    sum_sq += s.sum_sq;
  }
  const double hd = static_cast<double>(H);
  FundamentalEstimate out;
  const Matrix mean = sum / hd;
  out.P = 0.5 * (mean + mean.transpose());
  if (H > 1) {
    const Matrix var = ((sum_sq / hd) - mean.cwiseProduct(mean)).cwiseMax(0.0) * (hd / (hd - 1.0));
    out.stderr_ = (var / hd).cwiseSqrt();
  } else {
    out.stderr_ = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
  }
  out.grid = grid;
  out.paths = H;
  out.seed = opts.seed;
  return out;
}

/// Extends the horizon until |exp((Â+B̂K̂)T)x0| < rel_tol·|x0| for every state,
/// keeping at least `grid.steps` steps and at most `max_steps`.
inline SimGrid adaptive_grid(const MfSystem& sys, const FeedbackGain& gain,
                             const std::vector<Vector>& states, SimGrid grid,
                             long max_steps = 1'000'000, double rel_tol = 1e-6) {
  grid.validate();
  const ClosedLoopMatrices cl = closed_loop(sys, gain);
  const Matrix step = (cl.Ahat * grid.dt).exp();
  long needed = grid.steps;
  for (const Vector& x0 : states) {
    const double target = rel_tol * x0.norm();
    Vector x = x0;
    long l = 0;
    while (x.norm() >= target && x0.norm() > 0.0 && l < max_steps) {
      x = step * x;
      ++l;
    }
    needed = std::max(needed, l);
  }
  grid.steps = std::min(needed, max_steps);
  return grid;
}

/// The "real environment" for the trajectory-driven loop: owns the full model
/// and returns closed-loop bundles for requested gains and initial states.
class SimulatedEnvironment {
 public:
  SimulatedEnvironment(MfSystem sys, SimGrid grid, long paths, unsigned threads = 0)
      : sys_(std::move(sys)), grid_(grid), paths_(paths), threads_(threads) {
    grid_.validate();
  }

  Eigen::Index n() const { return sys_.n(); }
  const SimGrid& grid() const { return grid_; }
  long paths() const { return paths_; }

  /// Bundle j uses seed derive_seed(seed, j).
  std::vector<TrajectoryBundle> run(const FeedbackGain& gain, const std::vector<Vector>& states,
                                    std::uint64_t seed) const {
    std::vector<TrajectoryBundle> out;
    out.reserve(states.size());
    SimOptions opts;
    opts.paths = paths_;
    opts.threads = threads_;
    for (std::size_t j = 0; j < states.size(); ++j) {
      opts.seed = derive_seed(seed, j);
      out.push_back(simulate_closed_loop(sys_, gain, states[j], grid_, opts));
    }
    return out;
  }

 private:
  MfSystem sys_;
  SimGrid grid_;
  long paths_;
  unsigned threads_;
};

}  // namespace mflq
