#include "dtn/harness.hpp"

#include "dtn/accel_nd.hpp"
#include "dtn/bodyload.hpp"
#include "dtn/problems.hpp"
#include "dtn/reference.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace dtn {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

struct Row {
  std::string problem;
  int n = 0;
  std::string engine;
  double epsilon = 0, t_build = 0, t_solve = 0;
  Eigen::Index crossover = 0;
  std::uint64_t m_bytes = 0;
  std::optional<double> e1, e2;
  Eigen::Index max_rank = 0;
  std::string status = "ok";

  std::string csv() const {
    std::ostringstream ss;
    ss << problem << ',' << n << ',' << std::uint64_t(n) * n << ',' << engine
       << ',' << fmt(epsilon) << ',' << crossover << ',' << fmt(t_build) << ','
       << fmt(t_solve) << ',' << m_bytes << ','
       << fmt(double(m_bytes) / n) << ',' << (e1 ? fmt(*e1) : "") << ','
       << (e2 ? fmt(*e2) : "") << ',' << max_rank << ',' << status;
    return ss.str();
  }
};

constexpr const char* kHeader =
    "problem,n,N,engine,epsilon,crossover,T_build_s,T_solve_s,M_bytes,"
    "M_over_n,e1,e2,max_rank,status";

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  std::istringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{
      "dtn_bench: builds Dirichlet-to-Neumann solution operators for the "
      "problem catalog and reports timings, memory and accuracy as CSV"};

  std::string problem = "laplace";
  std::string ns;
  std::string engine = "accel";
  double epsilon = 1e-7;
  Eigen::Index crossover = 1024;
  int n_leaf = 4096;
  std::uint64_t seed = 0;
  int threads = 1;
  int repeats = 1;
  bool check = false;
  double check_tol = 1e-4;
  bool no_metrics = false;
  std::string bodyloads_path, csv_path, level_csv_path, config_path,
      dump_root_path;

  app.add_option("--problem", problem,
                 "problem name(s), comma separated, or 'all'");
  app.add_option("--n", ns, "grid size(s), comma separated");
  app.add_option("--engine", engine, "dense, accel, or both")
      ->check(CLI::IsMember({"dense", "accel", "both"}));
  app.add_option("--epsilon", epsilon, "compression tolerance");
  app.add_option("--crossover", crossover,
                 "boundary size at which boxes turn structured");
  app.add_option("--nleaf", n_leaf, "max grid points per leaf box");
  app.add_option("--seed", seed, "seed for all randomness");
  app.add_option("--threads", threads, "worker threads per build");
  app.add_option("--repeats", repeats, "build repetitions (median reported)");
  app.add_flag("--check", check, "fail (exit 4) when e1 exceeds --check-tol");
  app.add_option("--check-tol", check_tol, "accuracy threshold for --check");
  app.add_flag("--no-metrics", no_metrics, "skip the e1/e2 reference solves");
  app.add_option("--bodyloads", bodyloads_path,
                 "file with interior load coordinates (i j per line)");
  app.add_option("--csv", csv_path, "write CSV here instead of stdout");
  app.add_option("--level-csv", level_csv_path,
                 "write per-level accel diagnostics here");
  app.add_option("--config", config_path, "key=value problem configuration");
  app.add_option("--dump-root", dump_root_path,
                 "binary dump of the dense root Schur complement");

  try {
    // CLI11 wants argc/argv style, reversed
    std::vector<std::string> rargs(args.rbegin(), args.rend());
    app.parse(rargs);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 2;
  }

  if (!config_path.empty()) {
    try {
      const ProblemConfig cfg = read_config(config_path);
      if (app.count("--problem") == 0) problem = cfg.problem;
      if (app.count("--n") == 0) ns = std::to_string(cfg.n);
      if (app.count("--nleaf") == 0) n_leaf = cfg.n_leaf;
      if (app.count("--epsilon") == 0) epsilon = cfg.tolerance;
      if (app.count("--seed") == 0) seed = cfg.seed;
    } catch (const std::exception& e) {
      err << e.what() << "\n";
      return 2;
    }
  }

  std::vector<std::string> problems;
  if (problem == "all") {
    problems = catalog_names();
  } else {
    std::istringstream ss(problem);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) problems.push_back(item);
    }
  }
  std::vector<int> sizes =
      ns.empty() ? std::vector<int>{64, 128, 256, 512} : parse_ints(ns);
  std::vector<std::string> engines;
  if (engine == "both") {
    engines = {"dense", "accel"};
  } else {
    engines = {engine};
  }

  std::ofstream csv_file, level_file;
  if (!csv_path.empty()) {
    csv_file.open(csv_path);
    if (!csv_file) {
      err << "cannot open " << csv_path << "\n";
      return 2;
    }
  }
  std::ostream& csv = csv_path.empty() ? out : csv_file;
  if (!level_csv_path.empty()) {
    level_file.open(level_csv_path);
    if (!level_file) {
      err << "cannot open " << level_csv_path << "\n";
      return 2;
    }
    level_file << "problem,n,engine,level,max_rank,bytes,seconds\n";
  }

  csv << kHeader << "\n";
  int exit_code = 0;

  for (const auto& pname : problems) {
    for (const int n : sizes) {
      ProblemSpec spec;
      DiscreteOperator op;
      BoxTree tree;
      BodyLoadSet loads;
      try {
        spec = catalog(pname, n, seed);
        op = discretize(spec);
        tree = build_tree(n, n_leaf);
        if (!bodyloads_path.empty()) {
          loads = read_load_set(bodyloads_path, op.lattice());
        }
      } catch (const std::exception& e) {
        err << e.what() << "\n";
        return 2;
      }

      for (const auto& ename : engines) {
        Row row;
        row.problem = pname;
        row.n = n;
        row.engine = ename;
        row.epsilon = epsilon;
        row.crossover = (ename == "dense") ? 0 : crossover;

        AccelOptions opt;
        opt.epsilon = epsilon;
        opt.crossover = crossover;
        opt.threads = threads;

        SolutionOperator built;
        try {
          std::vector<double> builds;
          for (int r = 0; r < std::max(1, repeats); ++r) {
            const auto t0 = Clock::now();
            built = build_with_loads(
                op, tree, loads,
                ename == "dense" ? Engine::dense : Engine::accel, opt);
            builds.push_back(
                std::chrono::duration<double>(Clock::now() - t0).count());
          }
          row.t_build = median(builds);
        } catch (const FactorizationError& e) {
          err << e.what() << "\n";
          row.status = "singular";
          csv << row.csv() << "\n";
          exit_code = 3;
          continue;
        }

        {
          const Vector g =
              random_unit_boundary(built.boundary_size(), seed + 1);
          std::vector<double> solves;
          for (int r = 0; r < 3; ++r) {
            const auto t0 = Clock::now();
            const Vector v = apply_dtn(built, g);
            solves.push_back(
                std::chrono::duration<double>(Clock::now() - t0).count());
          }
          row.t_solve = median(solves);
        }
        row.m_bytes = built.memory_bytes();
        row.max_rank = built.S_hbs ? built.S_hbs->max_rank() : 0;

        if (!no_metrics) {
          const ErrorMetrics em = error_metrics(built, op, seed);
          row.e1 = em.e1;
          row.e2 = em.e2;
          if (check && em.e1 > check_tol) {
            row.status = "check_failed";
            exit_code = std::max(exit_code, 4);
          }
        }

        if (!dump_root_path.empty() && ename == "dense") {
          SchurData root;
          root.S = built.S_dense;
          root.boundary = built.boundary;
          dump_schur(root, dump_root_path);
        }
        if (level_file.is_open() && ename == "accel") {
          for (const auto& ls : built.level_stats) {
            level_file << pname << ',' << n << ',' << ename << ','
                       << (ls.level < 0 ? std::string("root")
                                        : std::to_string(ls.level))
                       << ',' << ls.max_rank << ',' << ls.bytes << ','
                       << fmt(ls.seconds) << "\n";
          }
        }
        csv << row.csv() << "\n";
      }
    }
  }
  return exit_code;
}

}  // namespace dtn
