// Acceptance suite: one pass/fail line per criterion, nonzero exit when a
// required criterion fails. Timing criteria warn instead of failing (they
// depend on shared hardware).

#include "dtn/accel_nd.hpp"
#include "dtn/bodyload.hpp"
#include "dtn/hbs_ops.hpp"
#include "dtn/problems.hpp"
#include "dtn/reference.hpp"

#include <Eigen/SVD>

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

using namespace dtn;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int criterion, bool pass, const std::string& what,
            bool advisory = false) {
  const char* tag = pass ? "PASS" : (advisory ? "WARN" : "FAIL");
  std::printf("[%s] criterion %d: %s\n", tag, criterion, what.c_str());
  std::fflush(stdout);
  if (!pass && !advisory) ++failures;
}

double rel_fro(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / b.norm();
}

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Matrix kernel_matrix(Index m, std::mt19937_64& rng) {
  Matrix h(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      h(i, j) = 1.0 / (1.0 + std::abs(double(i - j)));
    }
  }
  h += 5.0 * Matrix::Identity(m, m);
  h += 0.01 * random_matrix(m, m, rng) / double(m);
  return h;
}

AccelOptions accel_options() {
  AccelOptions opt;
  opt.epsilon = 1e-7;
  opt.crossover = 32;
  return opt;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------

void criterion1_oracle_equivalence() {
  double worst = 0.0;
  std::string worst_case;
  for (int n : {8, 16, 32}) {
    for (const auto& name : catalog_names()) {
      const auto op = discretize(catalog(name, n, 1));
      const BoxTree tree = build_tree(n, 16);
      const DenseRoot root = build_root_dense(op, tree);
      // brute-force Schur complement of the assembled sparse matrix
      const auto& rb = tree.root();
      const Index nb = Index(rb.boundary.size()),
                  ni = Index(rb.interior.size());
      Matrix abb(nb, nb), abi(nb, ni), aib(ni, nb), aii(ni, ni);
      for (Index r = 0; r < nb; ++r) {
        for (Index c = 0; c < nb; ++c) {
          abb(r, c) = op.coeff(rb.boundary[r], rb.boundary[c]);
        }
        for (Index c = 0; c < ni; ++c) {
          abi(r, c) = op.coeff(rb.boundary[r], rb.interior[c]);
        }
      }
      for (Index r = 0; r < ni; ++r) {
        for (Index c = 0; c < nb; ++c) {
          aib(r, c) = op.coeff(rb.interior[r], rb.boundary[c]);
        }
        for (Index c = 0; c < ni; ++c) {
          aii(r, c) = op.coeff(rb.interior[r], rb.interior[c]);
        }
      }
      const Matrix brute = abb - abi * aii.partialPivLu().solve(aib);
      const double err = rel_fro(root.root.S, brute);
      if (err > worst) {
        worst = err;
        worst_case = name + " n=" + std::to_string(n);
      }
    }
  }
  report(1, worst <= 1e-10,
         "oracle equivalence (exact tier): max rel Frobenius " +
             std::to_string(worst) + " at " + worst_case + " (bound 1e-10)");
}

void criterion2_engine_equivalence() {
  bool pass = true;
  double worst_regular = 0.0, worst_resonant = 0.0;
  std::string detail;
  for (int n : {32, 64, 128}) {
    const BoxTree tree = build_tree(n, 1024);
    for (const auto& name : catalog_names()) {
      const auto op = discretize(catalog(name, n, 1));
      const SolutionOperator dense = build_root_dense_op(op, tree);
      const SolutionOperator accel =
          build_root_accel(op, tree, accel_options());
      const double err = rel_fro(densify_dtn(accel), dense.G_dense);
      const double bound = (name == "helmholtz3") ? 1e-2 : 1e-4;
      if (name == "helmholtz3") {
        worst_resonant = std::max(worst_resonant, err);
      } else {
        worst_regular = std::max(worst_regular, err);
      }
      if (err > bound) {
        pass = false;
        detail += " " + name + "@n=" + std::to_string(n) + " err " +
                  std::to_string(err) + ";";
      }
    }
  }
  report(2, pass,
         "engine equivalence (compressed tier): max rel Frobenius " +
             std::to_string(worst_regular) + " (bound 1e-4), helmholtz3 " +
             std::to_string(worst_resonant) + " (bound 1e-2)" +
             (detail.empty() ? "" : " -- exceeded:" + detail));
}

void criterion3_error_reproduction() {
  const int n = 256;
  const auto op = discretize(catalog("laplace", n));
  const BoxTree tree = build_tree(n, 1024);
  const SolutionOperator built = build_root_accel(op, tree, accel_options());
  const ErrorMetrics em = error_metrics(built, op, 1);
  report(3, em.e1 <= 1e-5 && em.e2 <= 1e-5,
         "paper error reproduction: laplace n=256 e1 " + std::to_string(em.e1) +
             ", e2 " + std::to_string(em.e2) + " (bounds 1e-5)");
}

void criterion4_memory_scaling() {
  auto bytes_for = [&](const char* name, int n) {
    const auto op = discretize(catalog(name, n, 1));
    const SolutionOperator built =
        build_root_accel(op, build_tree(n, 1024), accel_options());
    return double(built.memory_bytes());
  };
  const double lap256 = bytes_for("laplace", 256);
  const double lap512 = bytes_for("laplace", 512);
  const double lap1024 = bytes_for("laplace", 1024);
  const double r1 = lap512 / lap256;
  const double r2 = lap1024 / lap512;
  const double h512 = bytes_for("helmholtz4", 512);
  const double h1024 = bytes_for("helmholtz4", 1024);
  const double rh = h1024 / h512;
  const bool pass = r1 >= 1.5 && r1 <= 2.5 && r2 >= 1.5 && r2 <= 2.5 &&
                    rh > r2;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "memory scaling: laplace M(512)/M(256) = %.3f, "
                "M(1024)/M(512) = %.3f (bounds [1.5, 2.5]); helmholtz4 "
                "M(1024)/M(512) = %.3f > laplace %.3f",
                r1, r2, rh, r2);
  report(4, pass, buf);
}

void criterion5_time_scaling() {
  auto times_for = [&](int n) {
    const auto op = discretize(catalog("laplace", n, 1));
    const BoxTree tree = build_tree(n, 1024);
    std::vector<double> builds, solves;
    SolutionOperator built;
    for (int r = 0; r < 3; ++r) {
      const auto t0 = Clock::now();
      built = build_root_accel(op, tree, accel_options());
      builds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    const Vector g = random_unit_boundary(built.boundary_size(), 2);
    for (int r = 0; r < 3; ++r) {
      const auto t0 = Clock::now();
      const Vector v = apply_dtn(built, g);
      solves.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    return std::pair(median3(builds), median3(solves));
  };
  const auto [b256, s256] = times_for(256);
  const auto [b512, s512] = times_for(512);
  const double rb = b512 / b256, rs = s512 / s256;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "build/solve time scaling (advisory): T_build(512)/T_build(256)"
                " = %.2f (bound 5), T_solve ratio = %.2f (bound 3)",
                rb, rs);
  report(5, rb <= 5.0 && rs <= 3.0, buf, /*advisory=*/true);
}

void criterion6_hbs_property_suite() {
  std::mt19937_64 rng(99);
  const double eps = 1e-7;
  bool pass = true;
  std::string detail;
  auto record = [&](const char* what, double worst, double bound) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), " %s %.3g (bound %.3g);", what, worst,
                  bound);
    detail += buf;
    if (!(worst <= bound)) pass = false;
  };

  {  // roundtrip and apply consistency, 100 trials
    double worst_rt = 0.0, worst_ap = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index m = 64 + Index(rng() % 128);
      const Matrix h = kernel_matrix(m, rng);
      const HbsMatrix c = compress(h, eps, 16);
      const double budget = 10.0 * eps * double(c.tree.depth + 1);
      worst_rt = std::max(worst_rt, rel_fro(reconstruct(c), h) / budget);
      const Matrix x = random_matrix(m, 1, rng);
      const double h2 = Eigen::BDCSVD<Matrix>(h).singularValues()(0);
      const double ap = (apply(c, x) - h * x).norm() /
                        (budget * h2 * x.norm());
      worst_ap = std::max(worst_ap, ap);
    }
    record("roundtrip/budget", worst_rt, 1.0);
    record("apply/budget", worst_ap, 1.0);
  }

  {  // one-level Woodbury identity, 100 trials
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      BlockSeparable bs;
      const Index p = 3 + Index(rng() % 3), m = 4 + Index(rng() % 4), k = 2;
      bs.coupling = Matrix::Zero(k * p, k * p);
      for (Index i = 0; i < p; ++i) {
        bs.D.push_back(random_matrix(m, m, rng) +
                       4.0 * double(m) * Matrix::Identity(m, m));
        const Matrix qu = random_matrix(m, k, rng);
        const Matrix qv = random_matrix(m, k, rng);
        bs.U.push_back(Eigen::HouseholderQR<Matrix>(qu).householderQ() *
                       Matrix::Identity(m, k));
        bs.V.push_back(Eigen::HouseholderQR<Matrix>(qv).householderQ() *
                       Matrix::Identity(m, k));
        for (Index j = 0; j < p; ++j) {
          if (i != j) {
            bs.coupling.block(i * k, j * k, k, k) = random_matrix(k, k, rng);
          }
        }
      }
      const Matrix prod = invert_bs_onelevel(bs).dense() * bs.dense();
      worst = std::max(worst, (prod - Matrix::Identity(prod.rows(), prod.cols()))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    record("woodbury identity", worst, 1e-9);
  }

  {  // multi-level inversion residual on compressed Schur complements
    double worst = 0.0;
    for (int n : {32, 64}) {
      const auto op = discretize(catalog("laplace", n));
      const Matrix s = build_root_dense(op, build_tree(n, 4096)).root.S;
      const HbsMatrix h = compress(s, eps, 32);
      const InverseFactors inv = invert_hbs(h);
      for (int trial = 0; trial < 50; ++trial) {
        const Matrix x = random_matrix(s.rows(), 1, rng);
        const Matrix back = apply(h, apply_inverse(inv, x));
        worst = std::max(worst, (back - x).norm() / x.norm());
      }
    }
    record("inversion residual", worst, 100.0 * eps);
  }

  {  // addition, 100 trials
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index m = 48 + Index(rng() % 96);
      const IndexTree tree = build_index_tree(m, 16);
      const Matrix a = kernel_matrix(m, rng), b = kernel_matrix(m, rng);
      const HbsMatrix sum =
          add_hbs(compress(a, tree, eps), compress(b, tree, eps), eps);
      worst = std::max(worst, rel_fro(reconstruct(sum), a + b));
    }
    record("addition", worst, 10.0 * eps);
  }

  {  // low-rank conversion, 100 trials
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index m = 32 + Index(rng() % 96);
      const Index k = Index(rng() % 4);
      const IndexTree tree = build_index_tree(m, 8);
      const Matrix q = random_matrix(m, k, rng), r = random_matrix(k, m, rng);
      const HbsMatrix conv = lowrank_to_bs(q, r, tree);
      const Matrix want = q * r;
      const double scale = std::max(1.0, want.norm());
      worst = std::max(worst, (reconstruct(conv) - want).norm() / scale);
    }
    record("lowrank conversion", worst, 1e-12);
  }

  report(6, pass, "HBS algebra property suite:" + detail);
}

void criterion7_body_loads() {
  const int n = 128;
  const auto spec = catalog("random1", n, 7);
  const auto op = discretize(spec);
  const BoxTree tree = build_tree(n, 1024);
  const Lattice lat{n};

  auto loads_of = [&](int count) {
    std::vector<GridPoint> pts;
    for (int k = 0; k < count; ++k) {
      pts.push_back({n / 2 - 6 + k % 12, n / 2 - 4 + k / 12});
    }
    return make_load_set(lat, pts);
  };

  auto build_time = [&](const BodyLoadSet& loads, SolutionOperator* out) {
    std::vector<double> times;
    for (int r = 0; r < 3; ++r) {
      const auto t0 = Clock::now();
      SolutionOperator built =
          build_with_loads(op, tree, loads, Engine::accel, accel_options());
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
      if (out) *out = std::move(built);
    }
    return median3(times);
  };

  const double t0 = build_time(BodyLoadSet{}, nullptr);
  double worst_err = 0.0;
  double t10 = 0.0;
  for (int count : {10, 100}) {
    const BodyLoadSet loads = loads_of(count);
    SolutionOperator built;
    const double t = build_time(loads, &built);
    if (count == 10) t10 = t;
    const Vector g = random_unit_boundary(built.boundary_size(), 3);
    const Vector fhat = random_unit_boundary(loads.count(), 4);
    const Vector v = solve_with_load(built, g, fhat);
    Vector rhs = Vector::Zero(op.A.rows());
    for (std::size_t i = 0; i < built.boundary.size(); ++i) {
      rhs(built.boundary[i]) = g(Index(i));
    }
    for (Index j = 0; j < loads.count(); ++j) {
      rhs(loads.ids[std::size_t(j)]) += fhat(j);
    }
    const Vector x = full_solve(op, rhs).x;
    Vector ref(built.boundary_size());
    for (std::size_t i = 0; i < built.boundary.size(); ++i) {
      ref(Index(i)) = x(built.boundary[i]);
    }
    worst_err = std::max(worst_err, (v - ref).norm() / ref.norm());
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "body loads: worst solution error %.3g (bound 1e-5), "
                "T_build(10)/T_build(0) = %.2f (bound 1.5)",
                worst_err, t10 / t0);
  report(7, worst_err <= 1e-5 && t10 <= 1.5 * t0, buf);
}

void criterion8_resonance() {
  const int n = 256;
  const BoxTree tree = build_tree(n, 1024);
  bool built_ok = true;
  double e2_h3 = 0.0, e2_lap = 0.0;
  try {
    const auto op3 = discretize(catalog("helmholtz3", n));
    const SolutionOperator b3 = build_root_accel(op3, tree, accel_options());
    e2_h3 = error_metrics(b3, op3, 1).e2;
    const auto opl = discretize(catalog("laplace", n));
    const SolutionOperator bl = build_root_accel(opl, tree, accel_options());
    e2_lap = error_metrics(bl, opl, 1).e2;
  } catch (const std::exception& e) {
    built_ok = false;
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "resonance behavior: helmholtz3 n=256 builds %s, e2 = %.3g vs "
                "laplace e2 = %.3g (ratio >= 10 required)",
                built_ok ? "ok" : "CRASHED", e2_h3, e2_lap);
  report(8, built_ok && e2_h3 >= 10.0 * e2_lap, buf);
}

}  // namespace

int main() {
  criterion1_oracle_equivalence();
  criterion2_engine_equivalence();
  criterion3_error_reproduction();
  criterion4_memory_scaling();
  criterion5_time_scaling();
  criterion6_hbs_property_suite();
  criterion7_body_loads();
  criterion8_resonance();
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
