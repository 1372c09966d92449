#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "oracles.hpp"
#include "topopt/grid.hpp"

using namespace topopt;

TEST_CASE("connectivity covers a single element completely") {
  const StructuredGrid grid{1, 1, 0};
  const Connectivity conn = build_connectivity(grid);
  REQUIRE(conn.numElements == 1);
  REQUIRE(conn.dofsPerElement == 8);

  std::set<std::int32_t> dofs(conn.dofs.begin(), conn.dofs.end());
  REQUIRE(dofs.size() == 8);
  REQUIRE(*dofs.begin() == 0);
  REQUIRE(*dofs.rbegin() == 7);
}

TEST_CASE("neighboring elements share the two common node DOFs") {
  const StructuredGrid grid{2, 1, 0};
  const Connectivity conn = build_connectivity(grid);
  const auto r0 = conn.row(0);
  const auto r1 = conn.row(1);
  std::set<std::int32_t> a(r0.begin(), r0.end()), b(r1.begin(), r1.end());
  std::vector<std::int32_t> shared;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
  REQUIRE(shared.size() == 4);
}

TEST_CASE("connectivity of a 3x2 grid matches hand enumeration") {
  const StructuredGrid grid{3, 2, 0};
  const Connectivity conn = build_connectivity(grid);
  const std::int32_t expected[6][8] = {
      {2, 3, 8, 9, 6, 7, 0, 1},       {4, 5, 10, 11, 8, 9, 2, 3},
      {8, 9, 14, 15, 12, 13, 6, 7},   {10, 11, 16, 17, 14, 15, 8, 9},
      {14, 15, 20, 21, 18, 19, 12, 13}, {16, 17, 22, 23, 20, 21, 14, 15}};
  for (int e = 0; e < 6; ++e) {
    const auto row = conn.row(e);
    for (int a = 0; a < 8; ++a) REQUIRE(row[a] == expected[e][a]);
  }
}

TEST_CASE("oversized grids are rejected before allocation") {
  const StructuredGrid grid{40000, 40000, 0};
  REQUIRE(grid.numDofs() > std::int64_t(std::numeric_limits<std::int32_t>::max()));
  REQUIRE_THROWS_AS(build_connectivity(grid), std::overflow_error);
}

TEST_CASE("index pair counts follow d(d+1)/2 per element") {
  SECTION("single Q4 element") {
    const auto pairs = build_symmetric_index_pairs(build_connectivity({1, 1, 0}));
    REQUIRE(pairs.numPairs() == 36);
    for (std::int64_t t = 0; t < pairs.numPairs(); ++t) REQUIRE(pairs.iK[t] >= pairs.jK[t]);
  }
  SECTION("single H8 element") {
    const auto pairs = build_symmetric_index_pairs(build_connectivity({1, 1, 1}));
    REQUIRE(pairs.numPairs() == 300);
    for (std::int64_t t = 0; t < pairs.numPairs(); ++t) REQUIRE(pairs.iK[t] >= pairs.jK[t]);
  }
  SECTION("120x120 grid entry count") {
    const auto pairs = build_symmetric_index_pairs(build_connectivity({120, 120, 0}));
    REQUIRE(pairs.iK.size() + pairs.jK.size() == 1036800);
  }
  SECTION("8x8x8 grid entry count") {
    const auto pairs = build_symmetric_index_pairs(build_connectivity({8, 8, 8}));
    REQUIRE(pairs.iK.size() + pairs.jK.size() == 307200);
  }
}

TEST_CASE("partition splits the element set") {
  const StructuredGrid grid{4, 3, 0};

  SECTION("no passives leaves everything active") {
    const auto part = partition_domain(grid, {}, {});
    REQUIRE(part.act.size() == 12);
    REQUIRE(part.pasS.empty());
    REQUIRE(part.pasV.empty());
  }
  SECTION("overlap is rejected") {
    REQUIRE_THROWS_AS(partition_domain(grid, {0}, {0}), std::invalid_argument);
  }
  SECTION("out-of-range index is rejected") {
    REQUIRE_THROWS_AS(partition_domain(grid, {12}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(partition_domain(grid, {}, {-1}), std::invalid_argument);
  }
  SECTION("set sizes always add up to m") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::int32_t> s, v;
      for (int e = 0; e < 12; ++e) {
        const int r = int(rng() % 4);
        if (r == 0) s.push_back(e);
        if (r == 1) v.push_back(e);
      }
      const auto part = partition_domain(grid, s, v);
      REQUIRE(part.act.size() + part.pasS.size() + part.pasV.size() == 12);
    }
  }
}

TEST_CASE("lower-triangle scatter plus mirroring equals the full scatter") {
  std::mt19937 rng(42);
  for (int nelx = 1; nelx <= 4; ++nelx)
    for (int nely = 1; nely <= 4; ++nely) {
      const StructuredGrid grid{nelx, nely, 0};
      const Connectivity conn = build_connectivity(grid);
      const IndexPairs pairs = build_symmetric_index_pairs(conn);
      const std::int64_t n = grid.numDofs();
      const std::int64_t m = grid.numElements();

      // arbitrary symmetric element matrices from random lower-triangle vectors
      std::vector<Eigen::VectorXd> lowers;
      std::vector<Eigen::MatrixXd> fulls;
      for (std::int64_t e = 0; e < m; ++e) {
        const Eigen::VectorXd low = oracles::random_vector(rng, 36, -1.0, 1.0);
        Eigen::MatrixXd full(8, 8);
        std::int64_t t = 0;
        for (int j = 0; j < 8; ++j)
          for (int i = j; i < 8; ++i) {
            full(i, j) = low[t];
            full(j, i) = low[t];
            ++t;
          }
        lowers.push_back(low);
        fulls.push_back(full);
      }

      Eigen::MatrixXd lowerScatter = Eigen::MatrixXd::Zero(n, n);
      std::int64_t t = 0;
      for (std::int64_t e = 0; e < m; ++e)
        for (std::int64_t q = 0; q < 36; ++q, ++t)
          lowerScatter(pairs.iK[t], pairs.jK[t]) += lowers[size_t(e)][q];

      const Eigen::MatrixXd viaPairs = oracles::mirror_lower(lowerScatter);
      const Eigen::MatrixXd viaFull = oracles::dense_full_scatter(conn, fulls, n);
      REQUIRE((viaPairs - viaFull).norm() <= 1e-13 * viaFull.norm());
    }
}
