#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mletpf/cost_ledger.hpp"

namespace mletpf::transport {

struct CouplingEntry {
  int row = 0;
  int col = 0;
  double mass = 0.0;
};

/// Sparse non-negative matrix with prescribed row/column marginals.
/// Vertex solutions of the transportation LP carry at most 2N-1 entries;
/// every stored mass is strictly positive.
struct Coupling {
  int size = 0;
  std::vector<CouplingEntry> entries;
  Eigen::VectorXd row_marginals;
  Eigen::VectorXd col_marginals;

  double objective(const Eigen::MatrixXd& cost) const;
  /// Largest |row sum - row marginal| or |col sum - col marginal|.
  double max_marginal_gap() const;
};

/// Distance taper over state components; identity when radius is zero.
struct LocalisationMatrix {
  int dimension = 0;
  double radius = 0.0;
  Eigen::MatrixXd values;
};

/// Periodic component separation min(|m-n-d|, |m-n|, |m-n+d|), 0-based indices.
int periodic_separation(int m, int n, int d);

LocalisationMatrix localisation_matrix(int d, double r_loc);

/// Diagonal likelihood taper of radius r_loc centred at component m.
Eigen::VectorXd localisation_taper(int d, int m, double r_loc);

/// Monotone (cumulative-mass) coupling between a sorted weighted ensemble and
/// uniform marginals 1/N. Caller supplies weights already permuted into
/// ascending particle-value order; the result minimises the squared-distance
/// transport cost for sorted univariate particles.
Coupling monotone_coupling(const Eigen::VectorXd& sorted_weights,
                           metrics::CostLedger* ledger = nullptr);

/// Exact vertex optimum plus its optimality certificate (dual potentials).
struct TransportSolution {
  Coupling coupling;
  double objective = 0.0;
  Eigen::VectorXd row_duals;
  Eigen::VectorXd col_duals;
  int iterations = 0;
};

TransportSolution solve_transport(const Eigen::MatrixXd& cost,
                                  const Eigen::VectorXd& row_marginals,
                                  const Eigen::VectorXd& col_marginals,
                                  metrics::CostLedger* ledger = nullptr);

Coupling lp_transport(const Eigen::MatrixXd& cost,
                      const Eigen::VectorXd& row_marginals,
                      const Eigen::VectorXd& col_marginals,
                      metrics::CostLedger* ledger = nullptr);

/// Minimum-cost assignment: returns sigma with sigma[j] = row paired with
/// column j, minimising sum_j cost(sigma[j], j). Equivalent to the vertex
/// coupling T(sigma[j], j) = 1/N under uniform marginals.
std::vector<int> assignment_coupling(const Eigen::MatrixXd& cost,
                                     metrics::CostLedger* ledger = nullptr);

/// Pairwise cost for the component-m transport problem:
/// entry (i,j) = sum_n C(m,n) (x_i(n) - x_j(n))^2.
Eigen::MatrixXd localised_cost(const Eigen::MatrixXd& particles, int m,
                               const LocalisationMatrix& C);

/// Localised cost between two ensembles (rows of a vs rows of b), used by the
/// per-component multilevel coupling with r_loc_c > 0.
Eigen::MatrixXd localised_cross_cost(const Eigen::MatrixXd& a,
                                     const Eigen::MatrixXd& b, int m,
                                     const LocalisationMatrix& C);

}  // namespace mletpf::transport
