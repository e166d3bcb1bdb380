#include "imd/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

namespace imd {
namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object())
    throw ConfigError(where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

double get_num(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number())
    throw ConfigError("config: '" + key + "' must be a number");
  return obj[key].get<double>();
}

int get_int(const json& obj, const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer())
    throw ConfigError("config: '" + key + "' must be an integer");
  return obj[key].get<int>();
}

Vec get_vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw ConfigError(where + ": expected numeric entries");
    v[i] = j[i].get<double>();
  }
  return v;
}

std::vector<double> get_grid(const json& j, const std::string& where) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& v : j) {
      if (!v.is_number()) throw ConfigError(where + ": numeric grid expected");
      out.push_back(v.get<double>());
    }
  } else if (j.is_object()) {
    check_keys(j, {"start", "stop", "step"}, where);
    const double start = get_num(j, "start", 0.0);
    const double stop = get_num(j, "stop", 0.0);
    const double step = get_num(j, "step", 0.0);
    if (step <= 0.0 || stop < start)
      throw ConfigError(where + ": need step > 0 and stop >= start");
    for (double v = start; v <= stop + 1e-12 * step; v += step)
      out.push_back(v);
  } else {
    throw ConfigError(where + ": expected array or {start,stop,step}");
  }
  if (out.empty()) throw ConfigError(where + ": empty grid");
  return out;
}

std::string csv_header(const std::string& command, const json& config,
                       int workers, std::uint64_t seed) {
  json resolved = config;
  resolved["command"] = command;
  resolved["workers"] = workers;
  resolved["seed"] = seed;
  return "# imd " + command + "\n# config " + resolved.dump() + "\n";
}

void write_file(const std::string& out_dir, const std::string& name,
                const std::string& body) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(std::filesystem::path(out_dir) / name,
                  std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open output file " + name);
  f << body;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ProblemDef problem_from_config(const json& cfg) {
  if (!cfg.contains("problem"))
    throw ConfigError("config: missing 'problem'");
  const json& pr = cfg["problem"];
  check_keys(pr, {"name", "params"}, "problem");
  if (!pr.contains("name") || !pr["name"].is_string())
    throw ConfigError("problem: missing 'name'");
  const std::string name = pr["name"].get<std::string>();
  json params = pr.value("params", json::object());

  if (name == "rotating2d") {
    check_keys(params, {"sigma"}, "problem.params");
    return rotating_2d(get_num(params, "sigma", 0.1));
  }
  if (name == "kse") {
    check_keys(params, {"n_modes", "xi"}, "problem.params");
    return kse_galerkin(get_int(params, "n_modes", 15),
                        get_num(params, "xi", 0.02991));
  }
  if (name == "two_layer_lorenz") {
    check_keys(params, {"K", "J", "eps", "h_x", "h_y", "F"},
               "problem.params");
    return two_layer_lorenz(get_int(params, "K", 5), get_int(params, "J", 4),
                            get_num(params, "eps", 0.5),
                            get_num(params, "h_x", -1.0),
                            get_num(params, "h_y", 1.0),
                            get_num(params, "F", 8.0));
  }
  if (name == "linear_benchmark") {
    check_keys(params, {"ny", "nx", "alpha", "beta", "c12", "nl_eps"},
               "problem.params");
    const int ny = get_int(params, "ny", 1);
    const int nx = get_int(params, "nx", 1);
    const double alpha = get_num(params, "alpha", -10.0);
    const double beta = get_num(params, "beta", -1.0);
    const double c12 = get_num(params, "c12", 0.0);
    Mat B = beta * Mat::Identity(ny, ny);
    Mat A = alpha * Mat::Identity(nx, nx);
    Mat C12 = Mat::Zero(ny, nx);
    C12(0, 0) = c12;
    return linear_benchmark(B, A, C12, get_num(params, "nl_eps", 0.0)).def;
  }
  throw ConfigError("problem: unknown name '" + name + "'");
}

ManifoldQuery query_from_config(const json& cfg, const ProblemDef& problem,
                                std::uint64_t seed) {
  ManifoldQuery q;
  q.p = get_int(cfg, "p", 1);
  if (q.p < 1 || q.p >= problem.d)
    throw ConfigError("config: need 1 <= p < d");
  q.t = get_num(cfg, "t", 0.0);
  q.T = get_num(cfg, "T", 1.0);
  q.bvp_tol = get_num(cfg, "bvp_tol", 1e-3);
  q.ivp_rtol = get_num(cfg, "ivp_rtol", 1e-4);
  q.ivp_atol = get_num(cfg, "ivp_atol", 1e-7);
  q.initial_mesh = get_int(cfg, "initial_mesh", 11);
  q.max_mesh_points = get_int(cfg, "max_mesh_points", 4000);
  if (q.bvp_tol <= 0.0 || q.ivp_rtol <= 0.0 || q.ivp_atol <= 0.0)
    throw ConfigError("config: tolerances must be positive");

  if (cfg.contains("y0")) {
    q.y0 = get_vec(cfg["y0"], "y0");
  } else {
    // normalized alternating vector, the documented default
    q.y0 = Vec(q.p);
    for (int i = 0; i < q.p; ++i) q.y0[i] = (i % 2 == 0) ? -1.0 : 1.0;
    q.y0 /= std::sqrt(static_cast<double>(q.p));
  }
  if (q.y0.size() != q.p) throw ConfigError("config: y0 length != p");

  if (cfg.contains("w_boundary")) {
    const json& wb = cfg["w_boundary"];
    if (wb.is_string() && wb.get<std::string>() == "random") {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> uni(-0.5, 0.5);
      for (int i = 0; i < q.p; ++i) {
        Vec w(problem.d - i - 1);
        for (Eigen::Index c = 0; c < w.size(); ++c) w[c] = uni(rng);
        q.what_boundary.push_back(w);
      }
    } else if (wb.is_number()) {
      // shorthand: first component of hat-w_1, rest zero
      Vec w = Vec::Zero(problem.d - 1);
      w[0] = wb.get<double>();
      q.what_boundary.push_back(w);
    } else if (wb.is_array()) {
      for (const auto& row : wb)
        q.what_boundary.push_back(get_vec(row, "w_boundary"));
    } else {
      throw ConfigError("config: w_boundary must be number, array or "
                        "\"random\"");
    }
  }
  return q;
}

namespace {

const std::set<std::string> kCommonKeys = {
    "problem", "p",        "t",        "y0",          "T",
    "bvp_tol", "ivp_rtol", "ivp_atol", "initial_mesh", "max_mesh_points",
    "w_boundary"};

std::set<std::string> with(std::set<std::string> base,
                           std::initializer_list<std::string> extra) {
  base.insert(extra.begin(), extra.end());
  return base;
}

int cmd_decouple(const json& cfg, const std::string& out_dir, int workers,
                 std::uint64_t seed) {
  check_keys(cfg, with(kCommonKeys, {"t0", "t1", "samples"}), "decouple");
  ProblemDef problem = problem_from_config(cfg);
  ManifoldQuery q = query_from_config(cfg, problem, seed);
  const double t0 = get_num(cfg, "t0", 0.0);
  const double t1 = get_num(cfg, "t1", 10.0);
  const int samples = get_int(cfg, "samples", 101);
  if (samples < 2 || !(t1 > t0))
    throw ConfigError("decouple: need samples >= 2 and t1 > t0");

  CoupledSystem sys(problem, q.p);
  Vec Y0 = sys.pack(Vec::Zero(q.p), Vec::Zero(problem.d - q.p),
                    q.what_boundary);
  IvpSpec ivp;
  ivp.rhs = [&sys](double t, const Vec& Y) { return sys.rhs(t, Y); };
  ivp.t0 = t0;
  ivp.t1 = t1;
  ivp.y0 = Y0;
  ivp.rtol = q.ivp_rtol;
  ivp.atol = q.ivp_atol;
  ivp.hook = [&sys](double t, Vec& Y) { return sys.reembed_hook(t, Y); };
  IvpSolution sol = integrate(ivp);

  std::string body = csv_header("decouple", cfg, workers, seed);
  body += "t";
  for (int i = 0; i < problem.d; ++i) body += ",diagD" + std::to_string(i);
  body += ",leakage,reembeds\n";
  for (int s = 0; s < samples; ++s) {
    const double t = t0 + (t1 - t0) * static_cast<double>(s) / (samples - 1);
    Vec Y = sol.eval(t);
    Vec y, x;
    ReflectorStack stack;
    sys.unpack(Y, y, x, stack);
    // sampled states can sit just outside the chart between hook firings
    sys.reembed_hook(t, Y);
    sys.unpack(Y, y, x, stack);
    BlockD D = sys.blockD(t, Y);
    int reembeds = 0;
    for (const auto& e : sol.events)
      if (e.t <= t) ++reembeds;
    body += fmt_full(t);
    for (int i = 0; i < q.p; ++i) body += "," + fmt_full(D.D11(i, i));
    for (int i = 0; i < problem.d - q.p; ++i)
      body += "," + fmt_full(D.D22(i, i));
    body += "," + fmt_full(D.leakage) + "," + std::to_string(reembeds) + "\n";
  }
  write_file(out_dir, "decouple.csv", body);
  return kExitOk;
}

int cmd_manifold_point(const json& cfg, const std::string& out_dir,
                       int workers, std::uint64_t seed) {
  check_keys(cfg, kCommonKeys, "manifold-point");
  ProblemDef problem = problem_from_config(cfg);
  ManifoldQuery q = query_from_config(cfg, problem, seed);
  q.threads = workers;
  ManifoldPoint pt = manifold_point(problem, q);

  json out;
  out["config"] = cfg;
  out["t"] = pt.t;
  out["y"] = vec_to_json(pt.y);
  out["x"] = vec_to_json(pt.x);
  json what = json::array();
  for (const auto& w : pt.stack.what) what.push_back(vec_to_json(w));
  out["what"] = what;
  out["bvp_residual"] = pt.bvp_residual;
  out["newton_iterations"] = pt.newton_iterations;
  out["reembed_events"] = pt.reembed_events;
  out["mesh_points"] = pt.bvp.mesh.size();
  if (problem.residual_metric) {
    Vec u = pt.original_state(problem);
    out["u"] = vec_to_json(u);
    out["residual_metric"] = std::abs(problem.residual_metric(u, pt.t));
  }
  write_file(out_dir, "manifold_point.json", out.dump(2) + "\n");
  return kExitOk;
}

int cmd_sweep(const json& cfg, const std::string& out_dir, int workers,
              std::uint64_t seed) {
  check_keys(cfg, with(kCommonKeys, {"T_grid", "w_grid", "horizon"}),
             "sweep");
  if (cfg.contains("T_grid") == cfg.contains("w_grid"))
    throw ConfigError("sweep: give exactly one of T_grid or w_grid");
  ProblemDef problem = problem_from_config(cfg);
  ManifoldQuery base = query_from_config(cfg, problem, seed);

  std::vector<SweepRow> rows;
  std::string axis;
  std::vector<double> grid;
  if (cfg.contains("T_grid")) {
    axis = "T";
    grid = get_grid(cfg["T_grid"], "T_grid");
    rows = sweep_T(problem, base, grid, workers);
  } else {
    axis = "w1";
    grid = get_grid(cfg["w_grid"], "w_grid");
    // vary the first component of hat-w_1(-T)
    std::vector<ManifoldQuery> qs;
    for (double w1 : grid) {
      ManifoldQuery q = base;
      if (q.what_boundary.empty())
        q.what_boundary.resize(1, Vec::Zero(problem.d - 1));
      if (q.what_boundary[0].size() == 0)
        q.what_boundary[0] = Vec::Zero(problem.d - 1);
      q.what_boundary[0][0] = w1;
      qs.push_back(q);
    }
    rows.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::vector<SweepRow> one = sweep_T(problem, qs[i], {qs[i].T}, 1);
      rows[i] = one[0];
      rows[i].T = qs[i].T;
    }
  }

  std::string body = csv_header("sweep", cfg, workers, seed);
  body += axis + ",ok,residual,bvp_residual,newton_iterations,reembeds,"
          "mesh_points,error\n";
  int failed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SweepRow& r = rows[i];
    if (!r.ok) ++failed;
    body += fmt_full(grid[i]);
    body += r.ok ? ",1," : ",0,";
    body += fmt_full(r.residual) + "," + fmt_full(r.bvp_residual) + "," +
            std::to_string(r.newton_iterations) + "," +
            std::to_string(r.reembed_events) + "," +
            std::to_string(r.mesh_points) + ",\"" + r.error + "\"\n";
  }
  write_file(out_dir, "sweep.csv", body);
  if (failed == static_cast<int>(rows.size())) return kExitSolver;
  return failed > 0 ? kExitPartial : kExitOk;
}

int cmd_trajectory(const json& cfg, const std::string& out_dir, int workers,
                   std::uint64_t seed) {
  check_keys(cfg, with(kCommonKeys, {"scheme", "dt", "steps"}), "trajectory");
  ProblemDef problem = problem_from_config(cfg);
  ManifoldQuery q = query_from_config(cfg, problem, seed);
  q.threads = workers;
  const std::string scheme_name = cfg.value("scheme", std::string("euler"));
  TimeStepScheme scheme;
  if (scheme_name == "euler")
    scheme = TimeStepScheme::ExplicitEuler;
  else if (scheme_name == "ab2")
    scheme = TimeStepScheme::AdamsBashforth2;
  else if (scheme_name == "ab3")
    scheme = TimeStepScheme::AdamsBashforth3;
  else if (scheme_name == "ab4")
    scheme = TimeStepScheme::AdamsBashforth4;
  else
    throw ConfigError("trajectory: unknown scheme '" + scheme_name + "'");
  const double dt = get_num(cfg, "dt", 1e-2);
  const int steps = get_int(cfg, "steps", 100);
  if (dt <= 0.0 || steps < 0)
    throw ConfigError("trajectory: need dt > 0 and steps >= 0");

  Trajectory traj = manifold_trajectory(problem, q, dt, steps, scheme);

  std::string body = csv_header("trajectory", cfg, workers, seed);
  body += "n,t";
  for (int i = 0; i < q.p; ++i) body += ",y" + std::to_string(i);
  for (int i = 0; i < problem.d - q.p; ++i) body += ",x" + std::to_string(i);
  body += ",residual\n";
  for (std::size_t n = 0; n < traj.steps.size(); ++n) {
    const TrajectoryStep& s = traj.steps[n];
    body += std::to_string(n) + "," + fmt_full(s.t);
    for (Eigen::Index i = 0; i < s.y.size(); ++i)
      body += "," + fmt_full(s.y[i]);
    for (Eigen::Index i = 0; i < s.x.size(); ++i)
      body += "," + fmt_full(s.x[i]);
    body += "," + fmt_full(s.residual) + "\n";
  }
  write_file(out_dir, "trajectory.csv", body);

  json summary;
  summary["config"] = cfg;
  summary["bvp_solves"] = traj.bvp_solves;
  summary["steps"] = steps;
  write_file(out_dir, "trajectory_summary.json", summary.dump(2) + "\n");
  return kExitOk;
}

int cmd_tbound(const json& cfg, const std::string& out_dir, int workers,
               std::uint64_t seed) {
  check_keys(cfg, {"gap", "tol", "x0_norm", "t0", "T_grid"}, "tbound");
  if (!cfg.contains("gap")) throw ConfigError("tbound: missing 'gap'");
  const json& gj = cfg["gap"];
  check_keys(gj, {"K", "alpha", "beta", "L", "sigma"}, "tbound.gap");
  GapData g = GapData::make(
      get_num(gj, "K", 1.0), get_num(gj, "alpha", -10.0),
      get_num(gj, "beta", -1.0), get_num(gj, "L", 0.0),
      gj.contains("sigma") ? get_num(gj, "sigma", 0.0)
                           : std::numeric_limits<double>::quiet_NaN());
  const double tol = get_num(cfg, "tol", 1e-6);
  const double x0 = get_num(cfg, "x0_norm", 1.0);
  const double t0 = get_num(cfg, "t0", 0.0);

  json out;
  out["config"] = cfg;
  out["gap"] = {{"K", g.K},       {"alpha", g.alpha}, {"beta", g.beta},
                {"L", g.L},       {"sigma", g.sigma}, {"kappa", g.kappa},
                {"gap_ok", g.gap_ok()}};
  if (g.kappa >= 1.0) {
    out["gap_violation"] = true;
    out["message"] = "kappa >= 1: the truncation bound is unavailable";
  } else {
    out["gap_violation"] = false;
    const double Tmin = t_lower_bound(g, tol, x0, t0);
    out["T_min"] = Tmin;
    json curve = json::array();
    std::vector<double> Ts;
    if (cfg.contains("T_grid"))
      Ts = get_grid(cfg["T_grid"], "T_grid");
    else
      for (int i = 0; i <= 20; ++i)
        Ts.push_back(t0 + (Tmin - t0) * 1.5 * i / 20.0);
    for (double T : Ts)
      curve.push_back({{"T", T}, {"bound", truncation_bound(g, x0, t0, T)}});
    out["bound_curve"] = curve;
  }
  write_file(out_dir, "tbound.json", out.dump(2) + "\n");
  (void)workers;
  (void)seed;
  return kExitOk;
}

}  // namespace

int run_command(const std::string& command, const json& config,
                const std::string& out_dir, int workers, std::uint64_t seed,
                std::string& message) {
  try {
    if (command == "decouple")
      return cmd_decouple(config, out_dir, workers, seed);
    if (command == "manifold-point")
      return cmd_manifold_point(config, out_dir, workers, seed);
    if (command == "sweep") return cmd_sweep(config, out_dir, workers, seed);
    if (command == "trajectory")
      return cmd_trajectory(config, out_dir, workers, seed);
    if (command == "tbound")
      return cmd_tbound(config, out_dir, workers, seed);
    message = "unknown command: " + command;
    return kExitConfig;
  } catch (const ConfigError& e) {
    message = e.what();
    return kExitConfig;
  } catch (const std::exception& e) {
    message = e.what();
    return kExitSolver;
  }
}

}  // namespace imd
