#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <random>

#include "oracles.hpp"
#include "topopt/fea.hpp"
#include "topopt/grid.hpp"

using namespace topopt;

namespace {

int zero_mode_count(const Eigen::MatrixXd& k) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  const double cut = 1e-10 * k.norm();
  int count = 0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    if (std::abs(eig.eigenvalues()[i]) < cut) ++count;
  return count;
}

}  // namespace

TEST_CASE("Q4 element stiffness") {
  const ElementStiffness ke = element_stiffness_q4(0.3);

  SECTION("rigid translations produce no force") {
    Eigen::VectorXd tx(8), ty(8);
    tx << 1, 0, 1, 0, 1, 0, 1, 0;
    ty << 0, 1, 0, 1, 0, 1, 0, 1;
    REQUIRE((ke.full * tx).norm() <= 1e-14 * ke.full.norm());
    REQUIRE((ke.full * ty).norm() <= 1e-14 * ke.full.norm());
  }
  SECTION("matrix is exactly symmetric") {
    REQUIRE((ke.full - ke.full.transpose()).norm() == 0.0);
  }
  SECTION("exactly three zero-energy modes") { REQUIRE(zero_mode_count(ke.full) == 3); }
  SECTION("lower coefficients match the quadrature oracle") {
    const Eigen::MatrixXd ref = oracles::q4_quadrature(0.3);
    std::int64_t t = 0;
    for (int j = 0; j < 8; ++j)
      for (int i = j; i < 8; ++i) {
        REQUIRE(ke.lower[t] == Catch::Approx(ref(i, j)).epsilon(1e-12).margin(1e-13));
        ++t;
      }
  }
  SECTION("Poisson ratio is validated") {
    REQUIRE_THROWS_AS(element_stiffness_q4(0.5), std::invalid_argument);
    REQUIRE_THROWS_AS(element_stiffness_q4(-1.0), std::invalid_argument);
  }
}

TEST_CASE("H8 element stiffness") {
  const ElementStiffness ke = element_stiffness_h8(0.3);

  SECTION("rigid translations produce no force") {
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::VectorXd t = Eigen::VectorXd::Zero(24);
      for (int node = 0; node < 8; ++node) t[3 * node + axis] = 1.0;
      REQUIRE((ke.full * t).norm() <= 1e-13 * ke.full.norm());
    }
  }
  SECTION("positive trace and six zero-energy modes") {
    REQUIRE(ke.full.trace() > 0);
    REQUIRE(zero_mode_count(ke.full) == 6);
  }
  SECTION("all 300 lower coefficients match the quadrature oracle") {
    REQUIRE(ke.lower.size() == 300);
    const Eigen::MatrixXd ref = oracles::h8_quadrature(0.3);
    std::int64_t t = 0;
    for (int j = 0; j < 24; ++j)
      for (int i = j; i < 24; ++i) {
        REQUIRE(ke.lower[t] == Catch::Approx(ref(i, j)).epsilon(1e-12).margin(1e-13));
        ++t;
      }
  }
}

TEST_CASE("SIMP interpolation") {
  const SimpParams prm{1.0, 1e-9, 3.0};
  Eigen::VectorXd x(3);
  x << 1.0, 0.0, 0.5;
  const SimpField f = simp_interpolate(x, prm);
  REQUIRE(f.sK[0] == Catch::Approx(1.0));
  REQUIRE(f.sK[1] == Catch::Approx(1e-9));
  REQUIRE(f.sK[2] == Catch::Approx(1e-9 + 0.125 * (1.0 - 1e-9)));
  REQUIRE(f.dsK[2] == Catch::Approx(3.0 * 0.25 * (1.0 - 1e-9)));
}

TEST_CASE("lower-triangle assembly") {
  const ElementStiffness ke = element_stiffness_q4(0.3);

  SECTION("a single unit-modulus element reproduces the element matrix") {
    const StructuredGrid grid{1, 1, 0};
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    const auto K = assemble_lower(pairs, ke, Eigen::VectorXd::Ones(1), grid.numDofs());
    const Eigen::MatrixXd full = oracles::mirror_lower(Eigen::MatrixXd(K.lower));
    const auto row = conn.row(0);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b)
        REQUIRE(full(row[a], row[b]) ==
                Catch::Approx(ke.full(a, b)).epsilon(1e-14).margin(1e-15));
  }

  SECTION("random moduli match the dense full scatter") {
    std::mt19937 rng(3);
    const StructuredGrid grid{2, 2, 0};
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    const Eigen::VectorXd sK = oracles::random_vector(rng, 4, 0.1, 2.0);

    std::vector<Eigen::MatrixXd> mats;
    for (int e = 0; e < 4; ++e) mats.push_back(sK[e] * ke.full);
    const Eigen::MatrixXd ref = oracles::dense_full_scatter(conn, mats, grid.numDofs());

    const auto K = assemble_lower(pairs, ke, sK, grid.numDofs());
    const Eigen::MatrixXd full = oracles::mirror_lower(Eigen::MatrixXd(K.lower));
    REQUIRE((full - ref).norm() <= 1e-14 * ref.norm());
  }

  SECTION("assembly is linear in the moduli") {
    std::mt19937 rng(5);
    const StructuredGrid grid{3, 2, 0};
    const auto pairs = build_symmetric_index_pairs(build_connectivity(grid));
    const Eigen::VectorXd sK = oracles::random_vector(rng, 6, 0.1, 1.0);
    const auto K1 = assemble_lower(pairs, ke, sK, grid.numDofs());
    const auto K2 = assemble_lower(pairs, ke, 2.5 * sK, grid.numDofs());
    REQUIRE((Eigen::MatrixXd(K2.lower) - 2.5 * Eigen::MatrixXd(K1.lower)).norm() <=
            1e-14 * Eigen::MatrixXd(K2.lower).norm());
  }

  SECTION("mirror identity holds for 3D assembly") {
    std::mt19937 rng(11);
    const ElementStiffness keh = element_stiffness_h8(0.3);
    const StructuredGrid grid{2, 2, 2};
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    const Eigen::VectorXd sK = oracles::random_vector(rng, 8, 0.1, 2.0);
    std::vector<Eigen::MatrixXd> mats;
    for (int e = 0; e < 8; ++e) mats.push_back(sK[e] * keh.full);
    const Eigen::MatrixXd ref = oracles::dense_full_scatter(conn, mats, grid.numDofs());
    const auto K = assemble_lower(pairs, keh, sK, grid.numDofs());
    const Eigen::MatrixXd full = oracles::mirror_lower(Eigen::MatrixXd(K.lower));
    REQUIRE((full - ref).norm() <= 1e-14 * ref.norm());
  }
}

namespace {

struct SmallSystem {
  StructuredGrid grid;
  Connectivity conn;
  IndexPairs pairs;
  SymmetricSparseMatrix K;
  LoadCase load;
};

SmallSystem make_cantilever_2d(int nelx, int nely, const Eigen::VectorXd& sK) {
  SmallSystem sys;
  sys.grid = {nelx, nely, 0};
  sys.conn = build_connectivity(sys.grid);
  sys.pairs = build_symmetric_index_pairs(sys.conn);
  const ElementStiffness ke = element_stiffness_q4(0.3);
  sys.K = assemble_lower(sys.pairs, ke, sK, sys.grid.numDofs());
  sys.load.f = Eigen::VectorXd::Zero(sys.grid.numDofs());
  sys.load.f[2 * sys.grid.node(0, nelx) + 1] = -1.0;
  for (int i = 0; i <= nely; ++i) {
    sys.load.fixed.push_back(std::int32_t(2 * sys.grid.node(i, 0)));
    sys.load.fixed.push_back(std::int32_t(2 * sys.grid.node(i, 0) + 1));
  }
  std::sort(sys.load.fixed.begin(), sys.load.fixed.end());
  return sys;
}

}  // namespace

TEST_CASE("equilibrium solve") {
  SECTION("zero load gives zero displacement") {
    auto sys = make_cantilever_2d(3, 2, Eigen::VectorXd::Ones(6));
    sys.load.f.setZero();
    REQUIRE(solve_equilibrium(sys.K, sys.load).norm() == 0.0);
  }

  SECTION("single element against a dense solve") {
    const StructuredGrid grid{1, 1, 0};
    const ElementStiffness ke = element_stiffness_q4(0.3);
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    const auto K = assemble_lower(pairs, ke, Eigen::VectorXd::Ones(1), grid.numDofs());

    LoadCase load;
    load.f = Eigen::VectorXd::Zero(8);
    // fix the two left-edge nodes, load one free DOF
    load.fixed = {std::int32_t(2 * grid.node(0, 0)), std::int32_t(2 * grid.node(0, 0) + 1),
                  std::int32_t(2 * grid.node(1, 0)), std::int32_t(2 * grid.node(1, 0) + 1)};
    std::sort(load.fixed.begin(), load.fixed.end());
    const std::int32_t loaded = std::int32_t(2 * grid.node(0, 1) + 1);
    load.f[loaded] = 1.0;

    const Eigen::VectorXd u = solve_equilibrium(K, load);

    // dense oracle built from the full scatter in global numbering
    const Eigen::MatrixXd global = oracles::dense_full_scatter(conn, {ke.full}, 8);
    std::vector<int> freeDofs;
    for (int d = 0; d < 8; ++d)
      if (!std::binary_search(load.fixed.begin(), load.fixed.end(), d)) freeDofs.push_back(d);
    Eigen::MatrixXd kf(freeDofs.size(), freeDofs.size());
    Eigen::VectorXd ff(freeDofs.size());
    for (size_t a = 0; a < freeDofs.size(); ++a) {
      ff[Eigen::Index(a)] = load.f[freeDofs[a]];
      for (size_t b = 0; b < freeDofs.size(); ++b)
        kf(Eigen::Index(a), Eigen::Index(b)) = global(freeDofs[a], freeDofs[b]);
    }
    const Eigen::VectorXd uf = kf.ldlt().solve(ff);
    for (size_t a = 0; a < freeDofs.size(); ++a)
      REQUIRE(u[freeDofs[a]] == Catch::Approx(uf[Eigen::Index(a)]).epsilon(1e-12).margin(1e-14));
    for (auto d : load.fixed) REQUIRE(u[d] == 0.0);
  }

  SECTION("relative residual stays below 1e-10 and compliance is nonnegative") {
    std::mt19937 rng(17);
    const Eigen::VectorXd sK = oracles::random_vector(rng, 12, 1e-3, 1.0);
    auto sys = make_cantilever_2d(4, 3, sK);
    const Eigen::VectorXd u = solve_equilibrium(sys.K, sys.load);

    const Eigen::MatrixXd full = oracles::mirror_lower(Eigen::MatrixXd(sys.K.lower));
    Eigen::VectorXd residual = full * u - sys.load.f;
    for (auto d : sys.load.fixed) residual[d] = 0.0;  // reactions live on the fixed set
    REQUIRE(residual.norm() <= 1e-10 * sys.load.f.norm());
    REQUIRE(u.dot(sys.load.f) >= 0.0);
  }

  SECTION("missing supports raise a factorization error") {
    const StructuredGrid grid{2, 2, 0};
    const ElementStiffness ke = element_stiffness_q4(0.3);
    const auto pairs = build_symmetric_index_pairs(build_connectivity(grid));
    const auto K = assemble_lower(pairs, ke, Eigen::VectorXd::Ones(4), grid.numDofs());
    LoadCase load;
    load.f = Eigen::VectorXd::Zero(grid.numDofs());
    load.f[1] = 1.0;  // no fixed DOFs at all
    REQUIRE_THROWS_AS(solve_equilibrium(K, load), std::runtime_error);
  }
}

TEST_CASE("compliance and volume sensitivities") {
  const ElementStiffness ke = element_stiffness_q4(0.3);
  const SimpParams prm{1.0, 1e-9, 3.0};

  SECTION("zero displacement field") {
    const StructuredGrid grid{2, 2, 0};
    const Connectivity conn = build_connectivity(grid);
    const auto part = partition_domain(grid, {}, {});
    const auto res = compliance_and_sensitivity(Eigen::VectorXd::Zero(grid.numDofs()), conn,
                                                Eigen::VectorXd::Constant(4, 0.5), prm, ke, part);
    REQUIRE(res.c == 0.0);
    REQUIRE(res.dc.norm() == 0.0);
  }

  SECTION("gradient is nonpositive and matches finite differences on a 3x3 mesh") {
    std::mt19937 rng(23);
    const StructuredGrid grid{3, 3, 0};
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    const auto part = partition_domain(grid, {}, {});
    Eigen::VectorXd xhat = oracles::random_vector(rng, 9, 0.2, 0.95);

    LoadCase load;
    load.f = Eigen::VectorXd::Zero(grid.numDofs());
    load.f[2 * grid.node(0, 3) + 1] = -1.0;
    for (int i = 0; i <= 3; ++i) {
      load.fixed.push_back(std::int32_t(2 * grid.node(i, 0)));
      load.fixed.push_back(std::int32_t(2 * grid.node(i, 0) + 1));
    }
    std::sort(load.fixed.begin(), load.fixed.end());

    auto complianceOf = [&](const Eigen::VectorXd& xh) {
      const SimpField law = simp_interpolate(xh, prm);
      const auto K = assemble_lower(pairs, ke, law.sK, grid.numDofs());
      const Eigen::VectorXd u = solve_equilibrium(K, load);
      return u.dot(load.f);
    };

    const SimpField law = simp_interpolate(xhat, prm);
    const auto K = assemble_lower(pairs, ke, law.sK, grid.numDofs());
    const Eigen::VectorXd u = solve_equilibrium(K, load);
    const auto res = compliance_and_sensitivity(u, conn, xhat, prm, ke, part);

    REQUIRE((res.dc.array() <= 0.0).all());

    Eigen::VectorXd fd(9);
    const double h = 1e-6;
    for (int e = 0; e < 9; ++e) {
      Eigen::VectorXd xp = xhat, xm = xhat;
      xp[e] += h;
      xm[e] -= h;
      fd[e] = (complianceOf(xp) - complianceOf(xm)) / (2 * h);
    }
    REQUIRE((fd - res.dc).norm() <= 1e-4 * fd.norm());
  }

  SECTION("compliance never increases when an element stiffens") {
    const StructuredGrid grid{2, 2, 0};
    const Connectivity conn = build_connectivity(grid);
    const auto pairs = build_symmetric_index_pairs(conn);
    LoadCase load;
    load.f = Eigen::VectorXd::Zero(grid.numDofs());
    load.f[2 * grid.node(0, 2) + 1] = -1.0;
    for (int i = 0; i <= 2; ++i) {
      load.fixed.push_back(std::int32_t(2 * grid.node(i, 0)));
      load.fixed.push_back(std::int32_t(2 * grid.node(i, 0) + 1));
    }
    std::sort(load.fixed.begin(), load.fixed.end());

    Eigen::VectorXd xhat = Eigen::VectorXd::Constant(4, 0.4);
    double prev = std::numeric_limits<double>::infinity();
    for (double step = 0.0; step <= 0.6001; step += 0.15) {
      Eigen::VectorXd xh = xhat;
      xh[2] += step;
      const SimpField law = simp_interpolate(xh, SimpParams{1.0, 1e-9, 3.0});
      const auto K = assemble_lower(pairs, element_stiffness_q4(0.3), law.sK, grid.numDofs());
      const double c = solve_equilibrium(K, load).dot(load.f);
      REQUIRE(c <= prev + 1e-12);
      prev = c;
    }
  }

  SECTION("volume identities") {
    const StructuredGrid grid{4, 2, 0};
    const auto part = partition_domain(grid, {0, 1}, {7});
    Eigen::VectorXd xhat = Eigen::VectorXd::Constant(8, 0.3);
    xhat[0] = xhat[1] = 1.0;
    xhat[7] = 0.0;

    const auto res = volume_and_sensitivity(xhat, part);
    double activeSum = 0;
    for (auto e : part.act) activeSum += xhat[e];
    const double split = (double(part.pasS.size()) + activeSum) / 8.0;
    REQUIRE(std::abs(res.v - split) <= 1e-15);
    for (auto e : part.act) REQUIRE(res.dv[e] == Catch::Approx(1.0 / 8.0));
    for (auto e : part.pasS) REQUIRE(res.dv[e] == 0.0);

    const auto uniform =
        volume_and_sensitivity(Eigen::VectorXd::Constant(8, 0.35), partition_domain(grid, {}, {}));
    REQUIRE(uniform.v == Catch::Approx(0.35));
    REQUIRE(volume_and_sensitivity(Eigen::VectorXd::Ones(8), partition_domain(grid, {}, {})).v ==
            Catch::Approx(1.0));
  }
}

TEST_CASE("pattern-reusing solver matches the one-shot path") {
  std::mt19937 rng(31);
  const StructuredGrid grid{3, 2, 0};
  const Connectivity conn = build_connectivity(grid);
  const auto pairs = build_symmetric_index_pairs(conn);
  const ElementStiffness ke = element_stiffness_q4(0.3);

  LoadCase load;
  load.f = Eigen::VectorXd::Zero(grid.numDofs());
  load.f[2 * grid.node(0, 3) + 1] = -1.0;
  for (int i = 0; i <= 2; ++i) {
    load.fixed.push_back(std::int32_t(2 * grid.node(i, 0)));
    load.fixed.push_back(std::int32_t(2 * grid.node(i, 0) + 1));
  }
  std::sort(load.fixed.begin(), load.fixed.end());

  EquilibriumSolver solver(pairs, ke, grid.numDofs(), load.fixed);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::VectorXd sK = oracles::random_vector(rng, 6, 1e-3, 1.0);
    const auto K = assemble_lower(pairs, ke, sK, grid.numDofs());
    const Eigen::VectorXd uRef = solve_equilibrium(K, load);
    const Eigen::VectorXd u = solver.solve(sK, load.f);
    REQUIRE((u - uRef).norm() <= 1e-12 * (uRef.norm() + 1.0));
  }
}
