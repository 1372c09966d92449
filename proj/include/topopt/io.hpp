#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "topopt/driver.hpp"

namespace topopt {

namespace detail {

inline std::ofstream open_output(const std::string& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("io: cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

/// 8-bit binary PGM of a 2D density field; solid (density 1) prints black.
inline void write_pgm(const std::string& path, int nelx, int nely,
                      const Eigen::VectorXd& xPhys) {
  if (xPhys.size() != std::int64_t(nelx) * nely)
    throw std::invalid_argument("pgm: field size does not match nelx x nely");
  auto out = detail::open_output(path, std::ios::binary);
  out << "P5\n" << nelx << " " << nely << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(nelx));
  for (int i = 0; i < nely; ++i) {  // top row of the domain first
    for (int j = 0; j < nelx; ++j) {
      const double v = std::clamp(xPhys[std::int64_t(j) * nely + i], 0.0, 1.0);
      row[size_t(j)] = static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)));
    }
    out.write(reinterpret_cast<const char*>(row.data()), nelx);
  }
  if (!out) throw std::runtime_error("io: write failed for '" + path + "'");
}

/// Legacy-text VTK structured-points file carrying the element densities as
/// point data, written in the x-fastest scanline order of the format.
inline void write_vtk(const std::string& path, int nelx, int nely, int nelz,
                      const Eigen::VectorXd& xPhys) {
  const StructuredGrid grid{nelx, nely, nelz};
  if (xPhys.size() != grid.numElements())
    throw std::invalid_argument("vtk: field size does not match the grid");
  auto out = detail::open_output(path, std::ios::out);
  out << "# vtk DataFile Version 3.0\n"
      << "topopt density field\n"
      << "ASCII\n"
      << "DATASET STRUCTURED_POINTS\n"
      << "DIMENSIONS " << nelx << " " << nely << " " << nelz << "\n"
      << "ORIGIN 0 0 0\n"
      << "SPACING 1 1 1\n"
      << "POINT_DATA " << grid.numElements() << "\n"
      << "SCALARS density double 1\n"
      << "LOOKUP_TABLE default\n";
  out << std::setprecision(9);
  for (int k = 0; k < nelz; ++k)
    for (int py = 0; py < nely; ++py) {
      for (int j = 0; j < nelx; ++j)
        out << xPhys[grid.element(nely - 1 - py, k, j)] << (j + 1 < nelx ? ' ' : '\n');
    }
  if (!out) throw std::runtime_error("io: write failed for '" + path + "'");
}

/// Reads back a voxel file produced by write_vtk.
inline Eigen::VectorXd read_vtk(const std::string& path, int& nelx, int& nely, int& nelz) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "' for reading");
  std::string line;
  nelx = nely = nelz = 0;
  std::int64_t count = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "DIMENSIONS") ls >> nelx >> nely >> nelz;
    if (word == "POINT_DATA") ls >> count;
    if (word == "LOOKUP_TABLE") break;
  }
  if (nelx <= 0 || nely <= 0 || nelz <= 0 || count != std::int64_t(nelx) * nely * nelz)
    throw std::runtime_error("io: '" + path + "' is not a recognized voxel file");
  const StructuredGrid grid{nelx, nely, nelz};
  Eigen::VectorXd field(count);
  for (int k = 0; k < nelz; ++k)
    for (int py = 0; py < nely; ++py)
      for (int j = 0; j < nelx; ++j) {
        double v;
        if (!(in >> v)) throw std::runtime_error("io: truncated voxel data in '" + path + "'");
        field[grid.element(nely - 1 - py, k, j)] = v;
      }
  return field;
}

inline void write_csv(const std::string& path, const std::vector<IterationRecord>& history) {
  auto out = detail::open_output(path, std::ios::out);
  out << "loop,c,V,resnorm,mND,p,beta,eta,nbisect\n";
  out << std::setprecision(10);
  for (const auto& rec : history)
    out << rec.loop << ',' << rec.c << ',' << rec.v << ',' << rec.resnorm << ',' << rec.mnd << ','
        << rec.penal << ',' << rec.beta << ',' << rec.eta << ',' << rec.bisections << '\n';
  if (!out) throw std::runtime_error("io: write failed for '" + path + "'");
}

struct OutputBundle {
  std::string densityImage;  // 2D runs
  std::string voxelField;    // 3D runs
  std::string log;
  std::string summaryPath;
  std::string summary;
};

inline OutputBundle write_outputs(const RunResult& result, const RunConfig& cfg,
                                  const std::string& prefix) {
  OutputBundle bundle;
  if (cfg.nelz > 0) {
    bundle.voxelField = prefix + ".vtk";
    write_vtk(bundle.voxelField, cfg.nelx, cfg.nely, cfg.nelz, result.field.xPhys);
  } else {
    bundle.densityImage = prefix + ".pgm";
    write_pgm(bundle.densityImage, cfg.nelx, cfg.nely, result.field.xPhys);
  }
  bundle.log = prefix + ".csv";
  write_csv(bundle.log, result.history);

  std::ostringstream sum;
  sum << std::setprecision(10);
  const bool ran = !result.history.empty();
  sum << "iterations " << result.history.size() << "\n"
      << "compliance " << (ran ? result.history.back().c : 0.0) << "\n"
      << "volume " << result.field.xPhys.mean() << "\n"
      << "non_discreteness " << nondiscreteness(result.field.x) << "\n"
      << "converged " << (result.converged ? 1 : 0) << "\n"
      << "wall_seconds " << result.wallSeconds << "\n";
  bundle.summary = sum.str();
  bundle.summaryPath = prefix + "_summary.txt";
  auto out = detail::open_output(bundle.summaryPath, std::ios::out);
  out << bundle.summary;
  if (!out) throw std::runtime_error("io: write failed for '" + bundle.summaryPath + "'");
  return bundle;
}

}  // namespace topopt
