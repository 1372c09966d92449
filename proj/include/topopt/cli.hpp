#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "topopt/driver.hpp"
#include "topopt/io.hpp"

namespace topopt {

/// Axis-aligned passive box in element coordinates, bounds inclusive.
struct PassiveBox {
  bool solid = true;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;
};

struct CliInvocation {
  RunConfig config;
  std::string preset = "mbb";
  int frameDir = 1;
  std::vector<PassiveBox> boxes;
  std::string outPrefix;
  bool quiet = false;
};

namespace detail {

inline PassiveBox parse_passive_box(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw CLI::ValidationError("passive", "expected kind:x0,x1,y0,y1[,z0,z1]");
  const std::string kind = text.substr(0, colon);
  PassiveBox box;
  if (kind == "solid")
    box.solid = true;
  else if (kind == "void")
    box.solid = false;
  else
    throw CLI::ValidationError("passive", "kind must be 'solid' or 'void'");

  std::vector<int> vals;
  std::string rest = text.substr(colon + 1);
  size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string tok = rest.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      vals.push_back(std::stoi(tok));
    } catch (...) {
      throw CLI::ValidationError("passive", "non-integer bound '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (vals.size() != 4 && vals.size() != 6)
    throw CLI::ValidationError("passive", "expected 4 (2D) or 6 (3D) bounds");
  box.x0 = vals[0];
  box.x1 = vals[1];
  box.y0 = vals[2];
  box.y1 = vals[3];
  if (vals.size() == 6) {
    box.z0 = vals[4];
    box.z1 = vals[5];
  }
  return box;
}

inline std::vector<std::int32_t> box_elements(const StructuredGrid& grid, const PassiveBox& box) {
  std::vector<std::int32_t> ids;
  const int zLo = grid.is3d() ? box.z0 : 0;
  const int zHi = grid.is3d() ? box.z1 : 0;
  for (int j = std::max(0, box.x0); j <= std::min(grid.nelx - 1, box.x1); ++j)
    for (int k = std::max(0, zLo); k <= std::min(std::max(grid.nelz - 1, 0), zHi); ++k)
      for (int i = std::max(0, box.y0); i <= std::min(grid.nely - 1, box.y1); ++i)
        ids.push_back(std::int32_t(grid.is3d() ? grid.element(i, k, j) : grid.element(i, j)));
  return ids;
}

}  // namespace detail

/// Wires every run option onto a CLI11 app. A plain key=value config file
/// (--config) may supply any of them; command-line flags win on conflict.
inline void attach_cli(CLI::App& app, CliInvocation& inv) {
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "key=value run configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  app.add_option("--preset", inv.preset, "problem preset")
      ->check(CLI::IsMember({"mbb", "frame", "cant3d"}));
  app.add_option("--nelx", inv.config.nelx, "elements along x")->required()->check(CLI::PositiveNumber);
  app.add_option("--nely", inv.config.nely, "elements along y")->required()->check(CLI::PositiveNumber);
  app.add_option("--nelz", inv.config.nelz, "elements along z (3D presets)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--volfrac", inv.config.volfrac, "target volume fraction")
      ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)));
  app.add_option("--penal", inv.config.penal, "SIMP penalization exponent")
      ->check(CLI::Range(1.0, 16.0));
  app.add_option("--rmin", inv.config.rmin, "filter radius in elements")
      ->required()
      ->check(CLI::Range(1.0, 1e6));
  app.add_option("--ft", inv.config.ft, "1 density filter, 2 projection, 3 volume-preserving projection")
      ->check(CLI::IsMember({1, 2, 3}));
  app.add_option_function<std::string>(
         "--ftbc",
         [&inv](const std::string& v) {
           inv.config.ftBC = (v == "D") ? FilterBC::Dirichlet : FilterBC::Neumann;
         },
         "filter boundary condition: N (zero-Neumann) or D (zero-Dirichlet)")
      ->check(CLI::IsMember({"N", "D"}))
      ->default_str("N");
  app.add_option("--eta", inv.config.eta, "projection threshold")->check(CLI::Range(0.0, 1.0));
  app.add_option("--beta", inv.config.beta, "projection sharpness")->check(CLI::PositiveNumber);
  app.add_option("--move", inv.config.move, "OC move limit")
      ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)));
  app.add_option("--maxit", inv.config.maxit, "maximum redesign steps")->check(CLI::NonNegativeNumber);
  app.add_option("--tol", inv.config.tol, "residual convergence tolerance")->check(CLI::PositiveNumber);

  auto parseCont = [](const std::vector<double>& v) {
    return ContinuationSchedule{int(v[0]), v[1], int(v[2]), v[3]};
  };
  app.add_option_function<std::vector<double>>(
         "--penal-cont",
         [&inv, parseCont](const std::vector<double>& v) { inv.config.penalCont = parseCont(v); },
         "penalization continuation: istart maxPar isteps deltaPar")
      ->expected(4);
  app.add_option_function<std::vector<double>>(
         "--beta-cont",
         [&inv, parseCont](const std::vector<double>& v) { inv.config.betaCont = parseCont(v); },
         "projection continuation: istart maxPar isteps deltaPar")
      ->expected(4);

  app.add_flag("--accel", inv.config.accel.enabled, "enable periodic Anderson extrapolation");
  app.add_option("--accel-q", inv.config.accel.q, "acceleration period")->check(CLI::PositiveNumber);
  app.add_option("--accel-depth", inv.config.accel.depth, "residual history depth")
      ->check(CLI::PositiveNumber);
  app.add_option("--accel-q0", inv.config.accel.q0, "first accelerated loop")
      ->check(CLI::PositiveNumber);
  app.add_option("--accel-alpha", inv.config.accel.alpha, "relaxation on plain steps")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--accel-zeta", inv.config.accel.zeta, "damping on extrapolated steps")
      ->check(CLI::Range(0.0, 1.0));

  app.add_option_function<std::string>(
         "--update",
         [&inv](const std::string& v) {
           inv.config.update =
               (v == "primal-dual") ? UpdateStrategy::PrimalDual : UpdateStrategy::Bisection;
         },
         "multiplier strategy: bisection or primal-dual")
      ->check(CLI::IsMember({"bisection", "primal-dual"}))
      ->default_str("bisection");

  app.add_option("--frame-dir", inv.frameDir, "frame preset: horizontal load orientation (+1/-1)")
      ->check(CLI::IsMember({1, -1}));
  app.add_option_function<std::vector<std::string>>(
      "--passive",
      [&inv](const std::vector<std::string>& texts) {
        for (const auto& t : texts) inv.boxes.push_back(detail::parse_passive_box(t));
      },
      "extra passive box, kind:x0,x1,y0,y1[,z0,z1] (inclusive element bounds)");

  app.add_option("--out", inv.outPrefix, "output file prefix (.pgm/.vtk, .csv, _summary.txt)");
  app.add_flag("--quiet", inv.quiet, "suppress per-iteration console output");
}

inline Problem make_problem(const CliInvocation& inv) {
  Problem prob;
  if (inv.preset == "mbb") {
    prob = preset_mbb_2d(inv.config.nelx, inv.config.nely);
  } else if (inv.preset == "frame") {
    prob = preset_frame_2d(inv.config.nelx, inv.config.nely, inv.frameDir);
  } else if (inv.preset == "cant3d") {
    if (inv.config.nelz < 1)
      throw CLI::ValidationError("--nelz", "the cant3d preset needs nelz >= 1");
    prob = preset_cantilever_3d(inv.config.nelx, inv.config.nely, inv.config.nelz);
  } else {
    throw CLI::ValidationError("--preset", "unknown preset '" + inv.preset + "'");
  }

  if (!inv.boxes.empty()) {
    std::vector<std::int32_t> pasS = prob.part.pasS;
    std::vector<std::int32_t> pasV = prob.part.pasV;
    for (const auto& box : inv.boxes) {
      auto ids = detail::box_elements(prob.grid, box);
      auto& dst = box.solid ? pasS : pasV;
      dst.insert(dst.end(), ids.begin(), ids.end());
    }
    prob.part = partition_domain(prob.grid, std::move(pasS), std::move(pasV));
  }
  return prob;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"compliance topology optimization on structured grids"};
  CliInvocation inv;
  attach_cli(app, inv);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (const char* threads = std::getenv("TOPOPT_THREADS")) {
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));
    setenv("OPENBLAS_NUM_THREADS", threads, 0);  // caps the factorization kernels
  }

  try {
    const Problem prob = make_problem(inv);
    RecordSink sink;
    if (!inv.quiet) {
      sink = [](const IterationRecord& rec) {
        std::printf("It.:%5d C:%11.4f V:%7.3f ch.:%0.2e p:%5.2f beta:%5.1f eta:%5.2f nbs:%3d\n",
                    rec.loop, rec.c, rec.v, rec.resnorm, rec.penal, rec.beta, rec.eta,
                    rec.bisections);
      };
    }
    const RunResult result = run_optimization(inv.config, prob, sink);
    if (!inv.outPrefix.empty()) {
      const OutputBundle bundle = write_outputs(result, inv.config, inv.outPrefix);
      std::printf("%s", bundle.summary.c_str());
    } else if (!result.history.empty()) {
      std::printf("final: c=%.6g V=%.6g mND=%.6g iterations=%zu converged=%d\n",
                  result.history.back().c, result.field.xPhys.mean(),
                  nondiscreteness(result.field.x), result.history.size(),
                  result.converged ? 1 : 0);
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace topopt
