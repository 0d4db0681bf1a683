#pragma once
// Self-contained primal-dual interior-point solver for small-to-medium
// semidefinite programs:
//
//   minimize    <C, X> + f'u
//   subject to  <A_k, X> + F_k'u = b_k   (k = 1..m)
//               X block-diagonal PSD, u free
//
// Algorithm: homogeneous self-dual embedding, Nesterov-Todd scaling,
// Mehrotra predictor-corrector, dense linear algebra per block.  The Schur
// complement is assembled and factored per connected component of the
// block/constraint incidence graph, so many small independent cones inside
// one problem never form a large dense system.

#include <Eigen/Dense>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace funnelcert {

// One coefficient of a symmetric constraint (or objective) matrix: the value
// sits at (row, col) and (col, row) of the named block; row <= col required.
struct SdpEntry {
  int block = 0;
  int row = 0;
  int col = 0;
  double value = 0.0;
};

// <A_k, X> + sum_j free_terms[j].second * u_{free_terms[j].first} = rhs
struct SdpConstraint {
  std::vector<SdpEntry> entries;
  std::vector<std::pair<int, double>> free_terms;
  double rhs = 0.0;
};

struct SdpProblem {
  std::vector<int> block_dims;
  int n_free = 0;
  std::vector<SdpEntry> objective_entries;  // C
  std::vector<double> objective_free;       // f; empty means all-zero
  std::vector<SdpConstraint> constraints;

  int n_constraints() const { return static_cast<int>(constraints.size()); }
  // Throws std::invalid_argument on out-of-range indices, row > col, or
  // non-positive block dimensions.
  void validate() const;
};

enum class SdpStatus {
  kOptimal,
  kPrimalInfeasible,
  kDualInfeasible,
  kMaxIterations,
  kNumericalFailure,
};

const char* to_string(SdpStatus s);

struct SolverOptions {
  int max_iters = 100;
  double feas_tol = 1e-8;      // primal/dual feasibility tolerance
  double gap_tol = 1e-8;       // relative duality-gap tolerance
  double step_fraction = 0.98; // fraction of the distance to the cone boundary
};

struct SdpSolution {
  SdpStatus status = SdpStatus::kNumericalFailure;
  std::vector<Eigen::MatrixXd> X;  // primal blocks; improving ray when dual-infeasible
  Eigen::VectorXd free_vars;       // u; part of the ray when dual-infeasible
  Eigen::VectorXd y;               // multipliers; Farkas ray when primal-infeasible
  std::vector<Eigen::MatrixXd> Z;  // dual slacks; -adjoint(y) of the ray when primal-infeasible
  double primal_objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string trace;  // one diagnostic line per iteration
};

struct KktResiduals {
  double primal = 0.0;  // ||A(X) + Fu - b|| / (1 + ||b||)
  double dual = 0.0;    // ||adjoint(y) + Z - C|| and ||F'y - f||, relative
  double gap = 0.0;     // |<C,X> + f'u - b'y| / (1 + |pobj| + |dobj|)
};

// Standard KKT residuals, usable on any candidate solution (not just ones
// produced by solve_sdp).
KktResiduals residuals(const SdpProblem& prob, const std::vector<Eigen::MatrixXd>& X,
                       const Eigen::VectorXd& free_vars, const Eigen::VectorXd& y,
                       const std::vector<Eigen::MatrixXd>& Z);
KktResiduals residuals(const SdpProblem& prob, const SdpSolution& sol);

SdpSolution solve_sdp(const SdpProblem& prob, const SolverOptions& opts = {});

// Sparse text format (block sizes + triplet entries), round-trip exact.
void write_sdp(std::ostream& os, const SdpProblem& prob);
SdpProblem read_sdp(std::istream& is);

}  // namespace funnelcert
