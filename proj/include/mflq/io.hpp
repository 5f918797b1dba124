#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mflq/error.hpp"
#include "mflq/gare.hpp"
#include "mflq/model.hpp"
#include "mflq/rl.hpp"
#include "mflq/simulator.hpp"

namespace mflq {

/// Everything one experiment needs. The file format is JSON with the matrices
/// as row-major nested arrays under their conventional names.
struct ProblemConfig {
  MfSystem system;
  CostWeights weights;
  std::optional<FeedbackGain> gain;
  RlConfig rl;
  /// Grid and path count for the simulate command.
  SimGrid grid;
  long paths = 100;
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  Eigen::Index n() const { return system.n(); }
  Eigen::Index m() const { return system.m(); }
};

// ---------------------------------------------------------------------------
// Number and matrix formatting. Every double is written with 17 significant
// digits; non-finite values become null.

inline std::string fmt17(double x) {
  if (!std::isfinite(x)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// CSV flavour: non-finite values are written as nan/inf.
inline std::string csv17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt17(x);
}

inline std::string json_matrix(const Matrix& M) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    s += i ? ", [" : "[";
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j) s += ", ";
      s += fmt17(M(i, j));
    }
    s += "]";
  }
  return s + "]";
}

inline std::string json_vector(const Vector& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fmt17(v(i));
  }
  return s + "]";
}

inline std::string json_string(const std::string& text) { return nlohmann::json(text).dump(); }

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline Error field_error(const std::string& field, const std::string& msg) {
  return Error(ErrorKind::Parse, "field '" + field + "': " + msg);
}

inline Matrix parse_matrix(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw field_error(field, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array() || j[0].empty()) {
    throw field_error(field, "row 0 must be a non-empty array of numbers");
  }
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw field_error(field, "row " + std::to_string(r) + " must have " +
                                   std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) {
        throw field_error(field, "entry (" + std::to_string(r) + ", " + std::to_string(c) +
                                     ") is not a number");
      }
      M(r, c) = v.get<double>();
    }
  }
  return M;
}

inline Matrix require_matrix(const nlohmann::json& obj, const std::string& field,
                             Eigen::Index rows, Eigen::Index cols) {
  if (!obj.contains(field)) throw field_error(field, "missing");
  Matrix M = parse_matrix(obj.at(field), field);
  if (M.rows() != rows || M.cols() != cols) {
    throw Error(ErrorKind::DimensionMismatch,
                "field '" + field + "': expected " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", got " + shape(M));
  }
  return M;
}

template <class T>
T get_or(const nlohmann::json& obj, const std::string& field, T fallback,
         const std::string& prefix = "") {
  if (!obj.contains(field)) return fallback;
  try {
    return obj.at(field).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw field_error(prefix + field, e.what());
  }
}

inline SimGrid parse_grid(const nlohmann::json& j, SimGrid g, const std::string& prefix) {
  if (!j.is_object()) throw field_error(prefix, "expected an object");
  g.dt = get_or(j, "dt", g.dt, prefix + ".");
  g.steps = get_or(j, "steps", g.steps, prefix + ".");
  g.t0 = get_or(j, "t0", g.t0, prefix + ".");
  try {
    g.validate();
  } catch (const Error& e) {
    throw field_error(prefix, e.what());
  }
  return g;
}

}  // namespace detail

inline ProblemConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse,
                "malformed JSON at " + detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0) +
                    ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::Parse, "top level must be an object");

  if (!j.contains("A")) throw detail::field_error("A", "missing");
  const Matrix A = detail::parse_matrix(j.at("A"), "A");
  if (!j.contains("B")) throw detail::field_error("B", "missing");
  const Matrix B = detail::parse_matrix(j.at("B"), "B");
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  if (j.contains("n") && detail::get_or<long>(j, "n", 0) != n) {
    throw Error(ErrorKind::DimensionMismatch, "field 'n' disagrees with the size of A");
  }
  if (j.contains("m") && detail::get_or<long>(j, "m", 0) != m) {
    throw Error(ErrorKind::DimensionMismatch, "field 'm' disagrees with the columns of B");
  }
  auto nn = [&](const char* f) { return detail::require_matrix(j, f, n, n); };
  auto nm = [&](const char* f) { return detail::require_matrix(j, f, n, m); };
  auto mn = [&](const char* f) { return detail::require_matrix(j, f, m, n); };
  auto mm = [&](const char* f) { return detail::require_matrix(j, f, m, m); };

  MfSystem sys(detail::require_matrix(j, "A", n, n), nn("Abar"), nm("B"), nm("Bbar"), nn("C"),
               nn("Cbar"), nm("D"), nm("Dbar"));
  CostWeights w(nn("Q"), nn("Qbar"), mn("S"), mn("Sbar"), mm("R"), mm("Rbar"));

  ProblemConfig cfg{std::move(sys), std::move(w), std::nullopt, RlConfig{}, SimGrid{}};
  if (j.contains("gain")) {
    const auto& g = j.at("gain");
    if (!g.is_object()) throw detail::field_error("gain", "expected an object with K and Khat");
    cfg.gain.emplace(detail::require_matrix(g, "K", m, n), detail::require_matrix(g, "Khat", m, n));
  }
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.out_dir = detail::get_or<std::string>(j, "out", cfg.out_dir);
  if (j.contains("grid")) cfg.grid = detail::parse_grid(j.at("grid"), cfg.grid, "grid");
  cfg.paths = detail::get_or(j, "paths", cfg.paths);
  if (cfg.paths < 1) throw detail::field_error("paths", "must be positive");

  cfg.rl.seed = cfg.seed;
  if (j.contains("rl")) {
    const auto& r = j.at("rl");
    if (!r.is_object()) throw detail::field_error("rl", "expected an object");
    cfg.rl.N = detail::get_or(r, "N", cfg.rl.N, "rl.");
    cfg.rl.H = detail::get_or(r, "H", cfg.rl.H, "rl.");
    cfg.rl.epsilon = detail::get_or(r, "epsilon", cfg.rl.epsilon, "rl.");
    cfg.rl.max_iter = detail::get_or(r, "max_iter", cfg.rl.max_iter, "rl.");
    cfg.rl.state_lo = detail::get_or(r, "state_lo", cfg.rl.state_lo, "rl.");
    cfg.rl.state_hi = detail::get_or(r, "state_hi", cfg.rl.state_hi, "rl.");
    cfg.rl.decay_ratio = detail::get_or(r, "decay_ratio", cfg.rl.decay_ratio, "rl.");
    if (r.contains("grid")) cfg.rl.grid = detail::parse_grid(r.at("grid"), cfg.rl.grid, "rl.grid");
    if (r.contains("states")) {
      const Matrix X = detail::parse_matrix(r.at("states"), "rl.states");
      if (X.cols() != n) {
        throw Error(ErrorKind::DimensionMismatch, "field 'rl.states': rows must have n entries");
      }
      for (Eigen::Index i = 0; i < X.rows(); ++i) cfg.rl.states.emplace_back(X.row(i).transpose());
    }
  }
  try {
    cfg.rl.validate();
  } catch (const Error& e) {
    throw detail::field_error("rl", e.what());
  }

  if (const PdcReport pdc = check_pdc(cfg.weights); !pdc.satisfied) {
    warn("cost weights violate the positive-definiteness condition (min eig R = " +
         fmt17(pdc.min_eig_R) + ", min eig Schur = " + fmt17(pdc.min_eig_schur) + ")");
  }
  return cfg;
}

inline ProblemConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Parse, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + std::string(e.what()).substr(to_string(e.kind()).size() + 2));
  }
}

inline std::string config_to_json(const ProblemConfig& c) {
  const MfSystem& s = c.system;
  const CostWeights& w = c.weights;
  std::ostringstream o;
  o << "{\n";
  o << "  \"n\": " << c.n() << ",\n  \"m\": " << c.m() << ",\n";
  auto mat = [&](const char* name, const Matrix& M) {
    o << "  \"" << name << "\": " << json_matrix(M) << ",\n";
  };
  mat("A", s.A());
  mat("Abar", s.Abar());
  mat("B", s.B());
  mat("Bbar", s.Bbar());
  mat("C", s.C());
  mat("Cbar", s.Cbar());
  mat("D", s.D());
  mat("Dbar", s.Dbar());
  mat("Q", w.Q());
  mat("Qbar", w.Qbar());
  mat("S", w.S());
  mat("Sbar", w.Sbar());
  mat("R", w.R());
  mat("Rbar", w.Rbar());
  if (c.gain) {
    o << "  \"gain\": {\"K\": " << json_matrix(c.gain->K())
      << ", \"Khat\": " << json_matrix(c.gain->Khat()) << "},\n";
  }
  auto grid = [](const SimGrid& g) {
    return "{\"dt\": " + fmt17(g.dt) + ", \"steps\": " + std::to_string(g.steps) +
           ", \"t0\": " + fmt17(g.t0) + "}";
  };
  o << "  \"grid\": " << grid(c.grid) << ",\n";
  o << "  \"paths\": " << c.paths << ",\n";
  const RlConfig& r = c.rl;
  o << "  \"rl\": {\"N\": " << r.N << ", \"H\": " << r.H << ", \"epsilon\": " << fmt17(r.epsilon)
    << ", \"max_iter\": " << r.max_iter << ", \"state_lo\": " << fmt17(r.state_lo)
    << ", \"state_hi\": " << fmt17(r.state_hi) << ", \"decay_ratio\": " << fmt17(r.decay_ratio)
    << ", \"grid\": " << grid(r.grid);
  if (!r.states.empty()) {
    Matrix X(static_cast<Eigen::Index>(r.states.size()), c.n());
    for (std::size_t i = 0; i < r.states.size(); ++i) {
      X.row(static_cast<Eigen::Index>(i)) = r.states[i].transpose();
    }
    o << ", \"states\": " << json_matrix(X);
  }
  o << "},\n";
  o << "  \"out\": " << json_string(c.out_dir) << ",\n";
  o << "  \"seed\": " << c.seed << "\n}\n";
  return o.str();
}

inline void write_config(const ProblemConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Parse, "cannot write '" + path + "'");
  out << config_to_json(c);
}

/// Reads the named matrices from a JSON file such as a written solution.
inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Parse, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path + ": malformed JSON at " +
                                      detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0));
  }
}

inline RiccatiPair load_pair(const std::string& path, Eigen::Index n) {
  const nlohmann::json j = load_json_file(path);
  return {detail::require_matrix(j, "P", n, n), detail::require_matrix(j, "Phat", n, n)};
}

inline FeedbackGain load_gain(const std::string& path, Eigen::Index m, Eigen::Index n) {
  const nlohmann::json j = load_json_file(path);
  return {detail::require_matrix(j, "K", m, n), detail::require_matrix(j, "Khat", m, n)};
}

// ---------------------------------------------------------------------------
// Output records

inline std::string record_json(const IterationRecord& r) {
  return "{\"iteration\": " + std::to_string(r.index) + ", \"deltaP\": " + fmt17(r.deltaP) +
         ", \"deltaPhat\": " + fmt17(r.deltaPhat) + ", \"residP\": " + fmt17(r.residP) +
         ", \"residPhat\": " + fmt17(r.residPhat) + ", \"P\": " + json_matrix(r.pair.P()) +
         ", \"Phat\": " + json_matrix(r.pair.Phat()) + ", \"K\": " + json_matrix(r.gain.K()) +
         ", \"Khat\": " + json_matrix(r.gain.Khat()) + "}";
}

inline std::string history_csv_header() { return "iteration,deltaP,deltaPhat,residP,residPhat\n"; }

inline std::string record_csv(const IterationRecord& r) {
  return std::to_string(r.index) + "," + csv17(r.deltaP) + "," + csv17(r.deltaPhat) + "," +
         csv17(r.residP) + "," + csv17(r.residPhat) + "\n";
}

/// Columnar trajectory file: a header line, then one row per (path, step).
inline void write_trajectory(const TrajectoryBundle& b, std::ostream& out) {
  const auto n = b.n();
  out << "# n " << n << " H " << b.paths << " L " << b.steps() << " dt " << fmt17(b.grid.dt)
      << " seed " << b.seed << "\n";
  out << "path,step,time";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
  out << "\n";
  for (std::size_t h = 0; h < b.path_data.size(); ++h) {
    const Matrix& X = b.path_data[h];
    for (long l = 0; l <= b.steps(); ++l) {
      out << h << ',' << l << ',' << fmt17(b.grid.time(l));
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << fmt17(X(l, i));
      out << '\n';
    }
  }
}

/// time, sample mean, exact mean, sample second moment.
inline void write_mean_csv(const TrajectoryBundle& b, const Matrix& exact_mean,
                           const Vector& second_moment, std::ostream& out) {
  const auto n = b.n();
  out << "time";
  for (Eigen::Index i = 0; i < n; ++i) out << ",mean" << i;
  for (Eigen::Index i = 0; i < n; ++i) out << ",ode" << i;
  out << ",second_moment\n";
  for (long l = 0; l <= b.steps(); ++l) {
    out << fmt17(b.grid.time(l));
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << fmt17(b.mean(l, i));
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << fmt17(exact_mean(l, i));
    out << ',' << fmt17(second_moment(l)) << '\n';
  }
}

}  // namespace mflq
