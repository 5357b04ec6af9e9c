#include "mletpf/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mletpf::transport {

namespace {

constexpr double kMarginalTol = 1e-10;

void check_probability_vector(const Eigen::VectorXd& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0)) {
      throw std::invalid_argument(std::string(what) + ": negative entry at index " +
                                  std::to_string(i));
    }
  }
  const double sum = v.sum();
  if (std::abs(sum - 1.0) > kMarginalTol) {
    throw std::invalid_argument(std::string(what) + ": entries sum to " +
                                std::to_string(sum) + ", expected 1 within 1e-10");
  }
}

}  // namespace

double Coupling::objective(const Eigen::MatrixXd& cost) const {
  double value = 0.0;
  for (const auto& e : entries) value += e.mass * cost(e.row, e.col);
  return value;
}

double Coupling::max_marginal_gap() const {
  Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(size);
  Eigen::VectorXd col_sum = Eigen::VectorXd::Zero(size);
  for (const auto& e : entries) {
    row_sum[e.row] += e.mass;
    col_sum[e.col] += e.mass;
  }
  const double row_gap = (row_sum - row_marginals).cwiseAbs().maxCoeff();
  const double col_gap = (col_sum - col_marginals).cwiseAbs().maxCoeff();
  return std::max(row_gap, col_gap);
}

int periodic_separation(int m, int n, int d) {
  if (m < 0 || n < 0 || m >= d || n >= d) {
    throw std::invalid_argument("periodic_separation: index out of range");
  }
  const int diff = m - n;
  return std::min({std::abs(diff - d), std::abs(diff), std::abs(diff + d)});
}

LocalisationMatrix localisation_matrix(int d, double r_loc) {
  if (d < 1) throw std::invalid_argument("localisation_matrix: d must be >= 1");
  if (r_loc < 0.0 || std::isnan(r_loc)) {
    throw std::invalid_argument("localisation_matrix: negative radius");
  }
  LocalisationMatrix C;
  C.dimension = d;
  C.radius = r_loc;
  if (r_loc == 0.0) {
    // The taper formula degenerates to 0/0 on the diagonal; radius zero means
    // d univariate transport problems, i.e. the identity.
    C.values = Eigen::MatrixXd::Identity(d, d);
    return C;
  }
  C.values.resize(d, d);
  for (int m = 0; m < d; ++m) {
    for (int n = 0; n < d; ++n) {
      const double s = static_cast<double>(periodic_separation(m, n, d));
      C.values(m, n) = (s / r_loc <= 2.0) ? 1.0 - 0.5 * (s / r_loc) : 0.0;
    }
  }
  return C;
}

Eigen::VectorXd localisation_taper(int d, int m, double r_loc) {
  if (m < 0 || m >= d) throw std::invalid_argument("localisation_taper: bad component");
  if (r_loc < 0.0 || std::isnan(r_loc)) {
    throw std::invalid_argument("localisation_taper: negative radius");
  }
  Eigen::VectorXd taper = Eigen::VectorXd::Zero(d);
  if (r_loc == 0.0) {
    taper[m] = 1.0;
    return taper;
  }
  for (int n = 0; n < d; ++n) {
    const double s = static_cast<double>(periodic_separation(m, n, d));
    taper[n] = (s / r_loc <= 2.0) ? 1.0 - 0.5 * (s / r_loc) : 0.0;
  }
  return taper;
}

Coupling monotone_coupling(const Eigen::VectorXd& sorted_weights,
                           metrics::CostLedger* ledger) {
  const int n = static_cast<int>(sorted_weights.size());
  if (n == 0) throw std::invalid_argument("monotone_coupling: empty weights");
  check_probability_vector(sorted_weights, "monotone_coupling weights");

  // Cumulative-mass two-pointer sweep. Working off cumulative breakpoints
  // keeps per-row mass sums telescoping instead of drifting.
  Eigen::VectorXd row_cum(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += sorted_weights[i];
    row_cum[i] = acc;
  }
  row_cum[n - 1] = 1.0;

  Coupling out;
  out.size = n;
  out.row_marginals = sorted_weights;
  out.col_marginals = Eigen::VectorXd::Constant(n, 1.0 / n);
  out.entries.reserve(2 * n - 1);

  int i = 0, j = 0;
  double prev = 0.0;
  while (i < n && j < n) {
    const double col_cum = (j == n - 1) ? 1.0 : static_cast<double>(j + 1) / n;
    const double hi = std::min(row_cum[i], col_cum);
    const double mass = hi - prev;
    if (mass > 0.0) out.entries.push_back({i, j, mass});
    const bool advance_row = row_cum[i] <= col_cum;
    const bool advance_col = col_cum <= row_cum[i];
    if (advance_row) ++i;
    if (advance_col) ++j;
    prev = hi;
  }
  if (ledger) ledger->transform_ops += out.entries.size();
  return out;
}

// ---------------------------------------------------------------------------
// Transportation simplex.
//
// Basis = spanning tree over row nodes [0,m) and column nodes [m, m+n).
// North-west-corner start, dual recomputation by tree traversal, Dantzig
// pricing with lexicographic tie-break. If the objective stalls (degenerate
// pivots), switch to Bland's lowest-index rule, which cannot cycle. Flows are
// recomputed exactly from the final tree by leaf stripping so marginal sums
// hold to ~N*eps.
// ---------------------------------------------------------------------------

namespace {

struct BasisEdge {
  int row;
  int col;
  double flow;
};

class TransportSimplex {
 public:
  TransportSimplex(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                   const Eigen::VectorXd& b, metrics::CostLedger* ledger)
      : cost_(cost),
        a_(a),
        b_(b),
        m_(static_cast<int>(a.size())),
        n_(static_cast<int>(b.size())),
        ledger_(ledger) {}

  TransportSolution solve() {
    northwest_start();
    const double cost_scale = 1.0 + cost_.cwiseAbs().maxCoeff();
    const double tol = 1e-12 * cost_scale;

    const long max_iters = 200L * (m_ + n_) * (m_ + n_) + 1000;
    long stall = 0;
    bool bland = false;
    double last_objective = std::numeric_limits<double>::infinity();
    int iterations = 0;

    while (true) {
      if (iterations > max_iters) {
        throw std::runtime_error("solve_transport: pivot limit exceeded");
      }
      compute_duals();
      int ei = -1, ej = -1;
      if (!price(tol, bland, ei, ej)) break;
      pivot(ei, ej);
      ++iterations;

      if (!bland && iterations % (m_ + n_) == 0) {
        const double obj = objective();
        if (obj >= last_objective - tol) {
          if (++stall >= 3) bland = true;  // degenerate stall: anti-cycling rule
        } else {
          stall = 0;
        }
        last_objective = obj;
      }
    }

    recompute_flows_exactly();

    TransportSolution sol;
    sol.coupling.size = std::max(m_, n_);
    sol.coupling.row_marginals = a_;
    sol.coupling.col_marginals = b_;
    for (const auto& e : edges_) {
      if (e.flow > 0.0) sol.coupling.entries.push_back({e.row, e.col, e.flow});
    }
    std::sort(sol.coupling.entries.begin(), sol.coupling.entries.end(),
              [](const CouplingEntry& x, const CouplingEntry& y) {
                return x.row != y.row ? x.row < y.row : x.col < y.col;
              });
    sol.objective = sol.coupling.objective(cost_);
    compute_duals();
    sol.row_duals = u_;
    sol.col_duals = v_;
    sol.iterations = iterations;
    if (ledger_) ledger_->transform_ops += sol.coupling.entries.size();
    return sol;
  }

 private:
  double objective() const {
    double obj = 0.0;
    for (const auto& e : edges_) obj += e.flow * cost_(e.row, e.col);
    return obj;
  }

  void northwest_start() {
    edges_.clear();
    edges_.reserve(m_ + n_ - 1);
    int i = 0, j = 0;
    double ra = a_[0], rb = b_[0];
    while (true) {
      const double t = std::min(ra, rb);
      edges_.push_back({i, j, t});
      ra -= t;
      rb -= t;
      if (i == m_ - 1 && j == n_ - 1) break;
      // Advance exactly one index per step so the basis has m+n-1 cells,
      // keeping zero-flow (degenerate) cells in the tree.
      if (ra <= rb && i < m_ - 1) {
        ++i;
        ra = a_[i];
      } else if (j < n_ - 1) {
        ++j;
        rb = b_[j];
      } else {
        ++i;
        ra = a_[i];
      }
    }
    rebuild_adjacency();
  }

  void rebuild_adjacency() {
    adj_.assign(m_ + n_, {});
    for (int e = 0; e < static_cast<int>(edges_.size()); ++e) {
      adj_[edges_[e].row].push_back(e);
      adj_[m_ + edges_[e].col].push_back(e);
    }
  }

  // Tree traversal from row node 0 with u[0] = 0; u_i + v_j = c_ij on basis.
  void compute_duals() {
    u_.setConstant(m_, std::numeric_limits<double>::quiet_NaN());
    v_.setConstant(n_, std::numeric_limits<double>::quiet_NaN());
    u_[0] = 0.0;
    stack_.clear();
    stack_.push_back(0);
    while (!stack_.empty()) {
      const int node = stack_.back();
      stack_.pop_back();
      for (const int e : adj_[node]) {
        const auto& edge = edges_[e];
        if (node < m_) {
          if (std::isnan(v_[edge.col])) {
            v_[edge.col] = cost_(edge.row, edge.col) - u_[edge.row];
            stack_.push_back(m_ + edge.col);
          }
        } else {
          if (std::isnan(u_[edge.row])) {
            u_[edge.row] = cost_(edge.row, edge.col) - v_[edge.col];
            stack_.push_back(edge.row);
          }
        }
      }
    }
    if (ledger_) ledger_->transform_ops += static_cast<std::uint64_t>(m_) + n_;
  }

  bool price(double tol, bool bland, int& ei, int& ej) const {
    if (ledger_) {
      ledger_->transform_ops += static_cast<std::uint64_t>(m_) * n_;
    }
    if (bland) {
      for (int i = 0; i < m_; ++i) {
        for (int j = 0; j < n_; ++j) {
          if (cost_(i, j) - u_[i] - v_[j] < -tol) {
            ei = i;
            ej = j;
            return true;
          }
        }
      }
      return false;
    }
    double best = -tol;
    ei = -1;
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) {
        const double r = cost_(i, j) - u_[i] - v_[j];
        if (r < best) {
          best = r;
          ei = i;
          ej = j;
        }
      }
    }
    return ei >= 0;
  }

  // The unique tree path from the entering cell's column node back to its row
  // node; alternating +/- along the cycle starting with + on the entering cell.
  void pivot(int ei, int ej) {
    parent_edge_.assign(m_ + n_, -1);
    parent_node_.assign(m_ + n_, -1);
    stack_.clear();
    stack_.push_back(ei);
    parent_node_[ei] = ei;
    while (!stack_.empty()) {
      const int node = stack_.back();
      stack_.pop_back();
      if (node == m_ + ej) break;
      for (const int e : adj_[node]) {
        const auto& edge = edges_[e];
        const int other = (node < m_) ? m_ + edge.col : edge.row;
        if (parent_node_[other] < 0) {
          parent_node_[other] = node;
          parent_edge_[other] = e;
          stack_.push_back(other);
        }
      }
    }

    // Walk back from the column node; odd positions on the path lose flow.
    cycle_minus_.clear();
    cycle_plus_.clear();
    int node = m_ + ej;
    bool minus = true;
    while (node != ei) {
      const int e = parent_edge_[node];
      (minus ? cycle_minus_ : cycle_plus_).push_back(e);
      minus = !minus;
      node = parent_node_[node];
    }
    if (ledger_) {
      ledger_->transform_ops += cycle_minus_.size() + cycle_plus_.size();
    }

    double theta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    for (const int e : cycle_minus_) {
      const auto& edge = edges_[e];
      if (edge.flow < theta ||
          (edge.flow == theta && leaving >= 0 &&
           (edge.row < edges_[leaving].row ||
            (edge.row == edges_[leaving].row && edge.col < edges_[leaving].col)))) {
        theta = edge.flow;
        leaving = e;
      }
    }

    for (const int e : cycle_minus_) edges_[e].flow -= theta;
    for (const int e : cycle_plus_) edges_[e].flow += theta;
    edges_[leaving] = {ei, ej, theta};
    rebuild_adjacency();
  }

  // Flows are uniquely determined by the tree and the marginals; recompute
  // them by peeling leaves so accumulated pivot rounding is discarded.
  void recompute_flows_exactly() {
    std::vector<double> residual(m_ + n_);
    for (int i = 0; i < m_; ++i) residual[i] = a_[i];
    for (int j = 0; j < n_; ++j) residual[m_ + j] = b_[j];
    std::vector<int> degree(m_ + n_, 0);
    for (const auto& e : edges_) {
      ++degree[e.row];
      ++degree[m_ + e.col];
    }
    std::vector<char> used(edges_.size(), 0);
    stack_.clear();
    for (int node = 0; node < m_ + n_; ++node) {
      if (degree[node] == 1) stack_.push_back(node);
    }
    while (!stack_.empty()) {
      const int node = stack_.back();
      stack_.pop_back();
      if (degree[node] != 1) continue;
      for (const int e : adj_[node]) {
        if (used[e]) continue;
        used[e] = 1;
        edges_[e].flow = std::max(residual[node], 0.0);
        const int other = (node < m_) ? m_ + edges_[e].col : edges_[e].row;
        residual[other] -= residual[node];
        residual[node] = 0.0;
        --degree[node];
        if (--degree[other] == 1) stack_.push_back(other);
        break;
      }
    }
  }

  const Eigen::MatrixXd& cost_;
  const Eigen::VectorXd& a_;
  const Eigen::VectorXd& b_;
  const int m_;
  const int n_;
  metrics::CostLedger* ledger_;

  std::vector<BasisEdge> edges_;
  std::vector<std::vector<int>> adj_;
  Eigen::VectorXd u_, v_;
  std::vector<int> stack_, parent_edge_, parent_node_, cycle_minus_, cycle_plus_;
};

}  // namespace

TransportSolution solve_transport(const Eigen::MatrixXd& cost,
                                  const Eigen::VectorXd& row_marginals,
                                  const Eigen::VectorXd& col_marginals,
                                  metrics::CostLedger* ledger) {
  if (cost.rows() != row_marginals.size() || cost.cols() != col_marginals.size()) {
    throw std::invalid_argument("solve_transport: cost shape does not match marginals");
  }
  if (!cost.allFinite()) {
    throw std::invalid_argument("solve_transport: non-finite cost entry");
  }
  check_probability_vector(row_marginals, "solve_transport row marginals");
  check_probability_vector(col_marginals, "solve_transport col marginals");
  if (std::abs(row_marginals.sum() - col_marginals.sum()) > kMarginalTol) {
    throw std::invalid_argument("solve_transport: infeasible marginals");
  }
  return TransportSimplex(cost, row_marginals, col_marginals, ledger).solve();
}

Coupling lp_transport(const Eigen::MatrixXd& cost, const Eigen::VectorXd& row_marginals,
                      const Eigen::VectorXd& col_marginals,
                      metrics::CostLedger* ledger) {
  return solve_transport(cost, row_marginals, col_marginals, ledger).coupling;
}

std::vector<int> assignment_coupling(const Eigen::MatrixXd& cost,
                                     metrics::CostLedger* ledger) {
  if (cost.rows() != cost.cols()) {
    throw std::invalid_argument("assignment_coupling: cost matrix must be square");
  }
  if (!cost.allFinite()) {
    throw std::invalid_argument("assignment_coupling: non-finite cost entry");
  }
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};

  // Shortest augmenting path with potentials, O(n^3). 1-based work arrays;
  // p[j] = row currently assigned to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
      if (ledger) ledger->transform_ops += static_cast<std::uint64_t>(n);
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> sigma(n);
  for (int j = 1; j <= n; ++j) sigma[j - 1] = p[j] - 1;
  return sigma;
}

Eigen::MatrixXd localised_cost(const Eigen::MatrixXd& particles, int m,
                               const LocalisationMatrix& C) {
  if (C.dimension != particles.cols()) {
    throw std::invalid_argument("localised_cost: taper dimension mismatch");
  }
  return localised_cross_cost(particles, particles, m, C);
}

Eigen::MatrixXd localised_cross_cost(const Eigen::MatrixXd& a,
                                     const Eigen::MatrixXd& b, int m,
                                     const LocalisationMatrix& C) {
  const int d = static_cast<int>(a.cols());
  if (C.dimension != d || b.cols() != d) {
    throw std::invalid_argument("localised_cross_cost: dimension mismatch");
  }
  if (m < 0 || m >= d) {
    throw std::invalid_argument("localised_cross_cost: component out of range");
  }
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(a.rows(), b.rows());
  for (int n = 0; n < d; ++n) {
    const double w = C.values(m, n);
    if (w == 0.0) continue;
    const auto an = a.col(n);
    const auto bn = b.col(n);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        const double diff = an[i] - bn[j];
        cost(i, j) += w * diff * diff;
      }
    }
  }
  return cost;
}

}  // namespace mletpf::transport
