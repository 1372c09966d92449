#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace topopt {

/// Regular mesh of unit-edge elements: Q4 quadrilaterals in 2D (nelz == 0),
/// H8 hexahedra in 3D. Nodes and elements are numbered column-major with the
/// y index running fastest, then z (3D only), then x. Each node carries
/// dim consecutive degrees of freedom.
struct StructuredGrid {
  int nelx = 0;
  int nely = 0;
  int nelz = 0;  // 0 selects a 2D grid

  bool is3d() const { return nelz > 0; }
  int dim() const { return is3d() ? 3 : 2; }
  int dofsPerElement() const { return is3d() ? 24 : 8; }

  std::int64_t numElements() const {
    return std::int64_t(nelx) * nely * (is3d() ? nelz : 1);
  }
  std::int64_t numNodes() const {
    std::int64_t nn = std::int64_t(nelx + 1) * (nely + 1);
    return is3d() ? nn * (nelz + 1) : nn;
  }
  std::int64_t numDofs() const { return dim() * numNodes(); }

  // y index i in [0, nely], x index j in [0, nelx], z index k in [0, nelz]
  std::int64_t node(int i, int j) const {
    return std::int64_t(j) * (nely + 1) + i;
  }
  std::int64_t node(int i, int k, int j) const {
    return (std::int64_t(j) * (nelz + 1) + k) * (nely + 1) + i;
  }
  std::int64_t element(int i, int j) const { return std::int64_t(j) * nely + i; }
  std::int64_t element(int i, int k, int j) const {
    return (std::int64_t(j) * nelz + k) * nely + i;
  }
};

/// Element-to-DOF map: one row of d global DOF indices per element, nodes
/// listed counter-clockwise from the lower-left corner (bottom face first
/// for H8), with the per-node DOFs consecutive.
struct Connectivity {
  std::int64_t numElements = 0;
  int dofsPerElement = 0;
  std::vector<std::int32_t> dofs;  // flat, numElements x dofsPerElement

  std::span<const std::int32_t> row(std::int64_t e) const {
    return {dofs.data() + e * dofsPerElement, size_t(dofsPerElement)};
  }
};

/// Lower-triangle scatter indices: one (iK, jK) pair per element-matrix
/// coefficient with iK >= jK, ordered per element as the column-major
/// traversal of the lower triangle (column j, rows j..d-1).
struct IndexPairs {
  std::vector<std::int32_t> iK;
  std::vector<std::int32_t> jK;

  std::int64_t numPairs() const { return std::int64_t(iK.size()); }
};

/// Disjoint split of the element set into active design elements and
/// passive solid / passive void elements.
struct DomainPartition {
  std::int64_t numElements = 0;
  std::vector<std::int32_t> act;
  std::vector<std::int32_t> pasS;
  std::vector<std::int32_t> pasV;
};

namespace detail {

inline void validate_grid(const StructuredGrid& grid) {
  if (grid.nelx < 1 || grid.nely < 1 || grid.nelz < 0)
    throw std::invalid_argument("grid: element counts must be >= 1 per active axis");
}

}  // namespace detail

inline Connectivity build_connectivity(const StructuredGrid& grid) {
  detail::validate_grid(grid);
  if (grid.numDofs() > std::numeric_limits<std::int32_t>::max())
    throw std::overflow_error("grid: DOF count " + std::to_string(grid.numDofs()) +
                              " exceeds 32-bit index range");

  Connectivity conn;
  conn.numElements = grid.numElements();
  conn.dofsPerElement = grid.dofsPerElement();
  conn.dofs.resize(size_t(conn.numElements) * conn.dofsPerElement);

  auto* out = conn.dofs.data();
  if (!grid.is3d()) {
    for (int j = 0; j < grid.nelx; ++j)
      for (int i = 0; i < grid.nely; ++i) {
        // counter-clockwise from the lower-left corner (y measured upward)
        const std::int32_t nodes[4] = {
            std::int32_t(grid.node(i + 1, j)), std::int32_t(grid.node(i + 1, j + 1)),
            std::int32_t(grid.node(i, j + 1)), std::int32_t(grid.node(i, j))};
        for (int a = 0; a < 4; ++a) {
          *out++ = 2 * nodes[a];
          *out++ = 2 * nodes[a] + 1;
        }
      }
  } else {
    for (int j = 0; j < grid.nelx; ++j)
      for (int k = 0; k < grid.nelz; ++k)
        for (int i = 0; i < grid.nely; ++i) {
          // bottom face (z = k) counter-clockwise, then top face (z = k+1)
          const std::int32_t nodes[8] = {
              std::int32_t(grid.node(i + 1, k, j)),     std::int32_t(grid.node(i + 1, k, j + 1)),
              std::int32_t(grid.node(i, k, j + 1)),     std::int32_t(grid.node(i, k, j)),
              std::int32_t(grid.node(i + 1, k + 1, j)), std::int32_t(grid.node(i + 1, k + 1, j + 1)),
              std::int32_t(grid.node(i, k + 1, j + 1)), std::int32_t(grid.node(i, k + 1, j))};
          for (int a = 0; a < 8; ++a) {
            *out++ = 3 * nodes[a];
            *out++ = 3 * nodes[a] + 1;
            *out++ = 3 * nodes[a] + 2;
          }
        }
  }
  return conn;
}

inline IndexPairs build_symmetric_index_pairs(const Connectivity& conn) {
  const int d = conn.dofsPerElement;
  const std::int64_t perElement = std::int64_t(d) * (d + 1) / 2;
  IndexPairs pairs;
  pairs.iK.resize(size_t(conn.numElements * perElement));
  pairs.jK.resize(size_t(conn.numElements * perElement));

  std::size_t t = 0;
  for (std::int64_t e = 0; e < conn.numElements; ++e) {
    const auto row = conn.row(e);
    for (int jl = 0; jl < d; ++jl)
      for (int il = jl; il < d; ++il) {
        const std::int32_t a = row[il];
        const std::int32_t b = row[jl];
        pairs.iK[t] = std::max(a, b);
        pairs.jK[t] = std::min(a, b);
        ++t;
      }
  }
  return pairs;
}

inline DomainPartition partition_domain(const StructuredGrid& grid,
                                        std::vector<std::int32_t> pasS,
                                        std::vector<std::int32_t> pasV) {
  detail::validate_grid(grid);
  const std::int64_t m = grid.numElements();

  auto sanitize = [m](std::vector<std::int32_t>& ids, const char* name) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (!ids.empty() && (ids.front() < 0 || ids.back() >= m))
      throw std::invalid_argument(std::string("partition: ") + name +
                                  " contains an element index outside [0, m)");
  };
  sanitize(pasS, "pasS");
  sanitize(pasV, "pasV");

  std::vector<char> state(size_t(m), 0);
  for (auto e : pasS) state[e] = 1;
  for (auto e : pasV) {
    if (state[e] != 0)
      throw std::invalid_argument("partition: passive solid and void sets overlap at element " +
                                  std::to_string(e));
    state[e] = 2;
  }

  DomainPartition part;
  part.numElements = m;
  part.pasS = std::move(pasS);
  part.pasV = std::move(pasV);
  part.act.reserve(size_t(m) - part.pasS.size() - part.pasV.size());
  for (std::int64_t e = 0; e < m; ++e)
    if (state[size_t(e)] == 0) part.act.push_back(std::int32_t(e));
  return part;
}

}  // namespace topopt
