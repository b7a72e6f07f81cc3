#pragma once

#include "ftopinn/basis.hpp"
#include "ftopinn/problems.hpp"

#include <chrono>
#include <exception>
#include <limits>
#include <sstream>
#include <memory>
#include <optional>
#include <thread>

namespace ftopinn {

/// Overdetermined system rho*A*alpha ~ rho*b. `rho` holds the diagonal of
/// the row scaling, sqrt(rho_j / N_group) = 1 / ||row_j||.
struct WeightedSystem {
    Matrix A;
    Vector b;
    Vector rho;
    std::vector<RowTag> group;

    [[nodiscard]] Eigen::Index rows() const { return A.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return A.cols(); }
    [[nodiscard]] Matrix weighted_A() const { return rho.asDiagonal() * A; }
    [[nodiscard]] Vector weighted_b() const { return rho.cwiseProduct(b); }
};

struct SolveDiagnostics {
    double residual_norm = 0.0;  // ||rho (A alpha - b)||_2 of the last solve
    Eigen::Index rank = 0;
    double sigma_max = 0.0;
    double assembly_seconds = 0.0;
    double solve_seconds = 0.0;
    int newton_steps = 0;
    bool diverged = false;
};

/// Fitted coefficients over one basis, or over two bases joined at an
/// interface (alpha = [alpha_1; alpha_2]).
struct Solution {
    Vector alpha;
    std::shared_ptr<const BasisSet> basis;
    std::shared_ptr<const BasisSet> basis2;
    std::optional<family::AstroidGeometry> geometry;
    SolveDiagnostics diagnostics;

    [[nodiscard]] bool is_interface() const { return basis2 != nullptr; }
    [[nodiscard]] Vector alpha1() const { return alpha.head(basis->size()); }
    [[nodiscard]] Vector alpha2() const { return alpha.tail(basis2->size()); }
};

struct LlsqOptions {
    double rcond = 1e-10;
    int threads = 1;
};

namespace detail {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Runs fn(begin, end) over [0, n) in contiguous blocks. Each index is
/// handled by exactly one call, so results do not depend on `threads`.
template <typename Fn>
void parallel_blocks(std::size_t n, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n < 2 * workers) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        const std::size_t block = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * block;
            const std::size_t end = std::min(n, begin + block);
            if (begin >= end) break;
            pool.emplace_back([&fn, &errors, w, begin, end] {
                try {
                    fn(begin, end);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct LstsqResult {
    Vector x;
    Eigen::Index rank = 0;
    double sigma_max = 0.0;
};

/// min ||M x - rhs||_2 by truncated SVD: Householder QR of M, then a
/// divide-and-conquer SVD of R, dropping singular values below
/// rcond * sigma_max.
inline LstsqResult lstsq(const Matrix& M, const Vector& rhs, double rcond) {
    if (!M.allFinite() || !rhs.allFinite()) {
        throw NumericalError("least-squares system contains non-finite entries");
    }
    const Eigen::Index m = M.rows();
    const Eigen::Index n = M.cols();
    Matrix core;
    Vector c;
    if (m > n) {
        const Eigen::HouseholderQR<Matrix> qr(M);
        c = (qr.householderQ().adjoint() * rhs).head(n);
        core = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    } else {
        core = M;
        c = rhs;
    }
    const Eigen::BDCSVD<Matrix> svd(core, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    LstsqResult out;
    out.sigma_max = s.size() > 0 ? s[0] : 0.0;
    while (out.rank < s.size() && s[out.rank] > rcond * out.sigma_max) {
        ++out.rank;
    }
    if (out.rank == 0) {
        throw NumericalError("least-squares system has numerical rank 0");
    }
    const auto k = out.rank;
    const Vector coeff = (svd.matrixU().leftCols(k).transpose() * c).cwiseQuotient(s.head(k));
    out.x = svd.matrixV().leftCols(k) * coeff;
    return out;
}

} // namespace detail

/// Collocation points together with the basis jets they need; shared by
/// the linear assembly, Newton iterations and residual evaluation.
struct EvaluatedCollocation {
    std::vector<CollocationPoint> points;
    JetBatch jets;
    JetBatch partner_jets;             // rows follow `partner_index`
    std::vector<Eigen::Index> partner_index;  // -1 when a point has no partner
    JetBatch jets2;                    // second basis, interface problems only
};

inline EvaluatedCollocation evaluate_collocation(const BasisSet& basis, const CollocationSet& set,
                                                 const BasisSet* basis2 = nullptr, int threads = 1) {
    EvaluatedCollocation ec;
    ec.points = set.all();
    const auto P = ec.points.size();
    std::vector<Point> xs(P);
    std::vector<Point> partners;
    ec.partner_index.assign(P, -1);
    for (std::size_t p = 0; p < P; ++p) {
        xs[p] = ec.points[p].x;
        if (ec.points[p].partner.size() > 0) {
            ec.partner_index[p] = static_cast<Eigen::Index>(partners.size());
            partners.push_back(ec.points[p].partner);
        }
    }
    auto eval_all = [threads](const BasisSet& b, const std::vector<Point>& pts) {
        JetBatch out(static_cast<Eigen::Index>(pts.size()), b.size(), b.input_dim());
        const auto chunk = static_cast<std::size_t>(detail::kJetChunk);
        const std::size_t chunks = (pts.size() + chunk - 1) / chunk;
        detail::parallel_blocks(chunks, threads, [&](std::size_t c0, std::size_t c1) {
            for (std::size_t c = c0; c < c1; ++c) {
                const auto start = c * chunk;
                const auto n = std::min(chunk, pts.size() - start);
                out.place(b.eval_batch(std::span(pts).subspan(start, n)), static_cast<Eigen::Index>(start));
            }
        });
        return out;
    };
    ec.jets = eval_all(basis, xs);
    if (!partners.empty()) {
        ec.partner_jets = eval_all(basis, partners);
    }
    if (basis2 != nullptr) {
        ec.jets2 = eval_all(*basis2, xs);
    }
    return ec;
}

namespace detail {

inline void set_weight(WeightedSystem& sys, Eigen::Index r, const CollocationPoint& pt) {
    const double norm = sys.A.row(r).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "row of group '" << to_string(pt.tag) << "' at point (" << pt.x.transpose()
            << ") has zero or non-finite norm; penalty weight undefined";
        throw NumericalError(msg.str());
    }
    sys.rho[r] = 1.0 / norm;
}

template <typename RowFn>
WeightedSystem build_rows(const EvaluatedCollocation& ec, Eigen::Index cols, int threads, RowFn&& row_fn) {
    const auto P = static_cast<Eigen::Index>(ec.points.size());
    if (cols >= P) {
        throw ConfigError("basis size " + std::to_string(cols) + " must be smaller than the number of rows " +
                          std::to_string(P));
    }
    WeightedSystem sys;
    sys.A.resize(P, cols);
    sys.b.resize(P);
    sys.rho.resize(P);
    sys.group.resize(static_cast<std::size_t>(P));
    parallel_blocks(static_cast<std::size_t>(P), threads, [&](std::size_t p0, std::size_t p1) {
        std::vector<Jet2> jets, partner, jets2;
        for (auto p = static_cast<Eigen::Index>(p0); p < static_cast<Eigen::Index>(p1); ++p) {
            const auto& pt = ec.points[static_cast<std::size_t>(p)];
            ec.jets.jets_at(p, jets);
            const auto pi = ec.partner_index[static_cast<std::size_t>(p)];
            if (pi >= 0) {
                ec.partner_jets.jets_at(pi, partner);
            } else {
                partner.clear();
            }
            if (ec.jets2.members() > 0) {
                ec.jets2.jets_at(p, jets2);
            }
            auto [coeffs, rhs] = row_fn(pt, jets, partner, jets2);
            sys.A.row(p) = coeffs.transpose();
            sys.b[p] = rhs;
            sys.group[static_cast<std::size_t>(p)] = pt.tag;
            set_weight(sys, p, pt);
        }
    });
    return sys;
}

} // namespace detail

/// Weights an explicit system so that every row of rho*A has unit norm.
inline WeightedSystem rescale_rows(Matrix A, Vector b, std::vector<RowTag> group = {}) {
    if (A.rows() != b.size()) {
        throw DimensionError("system has " + std::to_string(A.rows()) + " rows but rhs length " +
                             std::to_string(b.size()));
    }
    if (group.empty()) {
        group.assign(static_cast<std::size_t>(A.rows()), RowTag::interior);
    }
    WeightedSystem sys{std::move(A), std::move(b), Vector(), std::move(group)};
    sys.rho.resize(sys.A.rows());
    for (Eigen::Index r = 0; r < sys.A.rows(); ++r) {
        const double norm = sys.A.row(r).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericalError("row " + std::to_string(r) + " of group '" +
                                 to_string(sys.group[static_cast<std::size_t>(r)]) +
                                 "' has zero or non-finite norm; penalty weight undefined");
        }
        sys.rho[r] = 1.0 / norm;
    }
    return sys;
}

/// Rows of a linear single-domain problem, each scaled to unit norm.
inline WeightedSystem assemble(const ProblemSpec& problem, const EvaluatedCollocation& ec, int threads = 1) {
    return detail::build_rows(ec, ec.jets.members(), threads,
                              [&](const CollocationPoint& pt, const auto& jets, const auto& partner, const auto&) {
                                  auto row = linear_rows(problem, jets, pt, partner);
                                  return std::pair{std::move(row.coefficients), row.rhs};
                              });
}

inline WeightedSystem assemble(const ProblemSpec& problem, const BasisSet& basis, const CollocationSet& set,
                               int threads = 1) {
    return assemble(problem, evaluate_collocation(basis, set, nullptr, threads), threads);
}

/// Block system over [alpha_1; alpha_2] for the two-subdomain interface problem.
inline WeightedSystem assemble_interface(const ProblemSpec& problem, const EvaluatedCollocation& ec,
                                         int threads = 1) {
    return detail::build_rows(ec, ec.jets.members() + ec.jets2.members(), threads,
                              [&](const CollocationPoint& pt, const auto& j1, const auto&, const auto& j2) {
                                  auto row = interface_rows(problem, j1, j2, pt);
                                  return std::pair{std::move(row.coefficients), row.rhs};
                              });
}

/// Jacobian rows J(alpha) with b = -r(alpha), so that the least-squares
/// solution of the system is the Newton increment.
inline WeightedSystem assemble_linearized(const ProblemSpec& problem, const EvaluatedCollocation& ec,
                                          const Vector& alpha, int threads = 1) {
    return detail::build_rows(ec, ec.jets.members(), threads,
                              [&](const CollocationPoint& pt, const auto& jets, const auto& partner, const auto&) {
                                  auto row = nonlinear_residual_and_jacobian(problem, jets, pt, alpha, partner);
                                  return std::pair{std::move(row.jacobian), -row.residual};
                              });
}

/// Weighted least-squares solution via truncated SVD.
inline Solution solve_llsq(const WeightedSystem& system, const LlsqOptions& opts = {}) {
    if (!(system.rho.array() > 0.0).all() || !system.rho.allFinite()) {
        throw NumericalError("row weights must be positive and finite");
    }
    detail::Stopwatch sw;
    const Matrix Aw = system.weighted_A();
    const Vector bw = system.weighted_b();
    auto res = detail::lstsq(Aw, bw, opts.rcond);
    Solution sol;
    sol.alpha = std::move(res.x);
    sol.diagnostics.rank = res.rank;
    sol.diagnostics.sigma_max = res.sigma_max;
    sol.diagnostics.residual_norm = (Aw * sol.alpha - bw).norm();
    sol.diagnostics.solve_seconds = sw.seconds();
    return sol;
}

/// ||rho (r(alpha))||_2 where r is the stacked residual vector. Weights are
/// taken from `rho` when given, otherwise from the Jacobian rows at alpha.
inline double weighted_residual(const ProblemSpec& problem, const EvaluatedCollocation& ec, const Vector& alpha,
                                const Vector* rho = nullptr, int threads = 1) {
    const auto lin = assemble_linearized(problem, ec, alpha, threads);
    const Vector& w = rho != nullptr ? *rho : lin.rho;
    return w.cwiseProduct(lin.b).norm();
}

struct NewtonOptions {
    int steps = 1;
    double rcond = 1e-10;
    int threads = 1;
};

/// Newton iteration with each linearised step solved as a row-rescaled
/// least-squares problem. Stops early if the weighted residual grows on two
/// consecutive steps.
inline Solution newton_llsq(const ProblemSpec& problem, std::shared_ptr<const BasisSet> basis,
                            const CollocationSet& set, Vector alpha0, const NewtonOptions& opts = {}) {
    if (opts.steps < 1) {
        throw ConfigError("Newton-LLSQ needs at least one step");
    }
    if (alpha0.size() != basis->size()) {
        throw DimensionError("alpha0 length " + std::to_string(alpha0.size()) + " != basis size " +
                             std::to_string(basis->size()));
    }
    detail::Stopwatch assembly_clock;
    const auto ec = evaluate_collocation(*basis, set, nullptr, opts.threads);
    double assembly = assembly_clock.seconds();
    double solve = 0.0;

    Solution sol;
    sol.basis = basis;
    Vector alpha = std::move(alpha0);
    double previous = std::numeric_limits<double>::infinity();
    int growth = 0;
    int taken = 0;
    for (int k = 0; k < opts.steps; ++k) {
        detail::Stopwatch a;
        const auto lin = assemble_linearized(problem, ec, alpha, opts.threads);
        assembly += a.seconds();
        const double current = lin.rho.cwiseProduct(lin.b).norm();
        if (current > previous) {
            if (++growth >= 2) {
                sol.diagnostics.diverged = true;
                break;
            }
        } else {
            growth = 0;
        }
        previous = current;
        detail::Stopwatch s;
        detail::LstsqResult step;
        try {
            step = detail::lstsq(lin.weighted_A(), lin.weighted_b(), opts.rcond);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("Newton-LLSQ step ") + std::to_string(k) + ": " + e.what());
        }
        solve += s.seconds();
        alpha += step.x;
        sol.diagnostics.rank = step.rank;
        sol.diagnostics.sigma_max = step.sigma_max;
        sol.diagnostics.residual_norm = (lin.weighted_A() * step.x - lin.weighted_b()).norm();
        ++taken;
    }
    sol.alpha = std::move(alpha);
    sol.diagnostics.newton_steps = taken;
    sol.diagnostics.assembly_seconds = assembly;
    sol.diagnostics.solve_seconds = solve;
    return sol;
}

/// Phase-1 solve of a linear single-domain problem.
inline Solution fit_linear(const ProblemSpec& problem, std::shared_ptr<const BasisSet> basis,
                           const CollocationSet& set, const LlsqOptions& opts = {}) {
    detail::Stopwatch a;
    const auto sys = assemble(problem, *basis, set, opts.threads);
    const double assembly = a.seconds();
    auto sol = solve_llsq(sys, opts);
    sol.basis = std::move(basis);
    sol.diagnostics.assembly_seconds = assembly;
    return sol;
}

/// Phase-1 solve of the interface problem with one basis per subdomain.
inline Solution fit_interface(const ProblemSpec& problem, std::shared_ptr<const BasisSet> basis1,
                              std::shared_ptr<const BasisSet> basis2, const CollocationSet& set,
                              const LlsqOptions& opts = {}) {
    const auto* ip = std::get_if<family::EllipticInterface>(&problem.family);
    if (ip == nullptr) {
        throw ConfigError("fit_interface requires an elliptic interface problem");
    }
    detail::Stopwatch a;
    const auto ec = evaluate_collocation(*basis1, set, basis2.get(), opts.threads);
    const auto sys = assemble_interface(problem, ec, opts.threads);
    const double assembly = a.seconds();
    auto sol = solve_llsq(sys, opts);
    sol.basis = std::move(basis1);
    sol.basis2 = std::move(basis2);
    sol.geometry = ip->geometry;
    sol.diagnostics.assembly_seconds = assembly;
    return sol;
}

/// Dispatches on linearity: LLSQ for linear problems, Newton-LLSQ otherwise.
inline Solution fit(const ProblemSpec& problem, std::shared_ptr<const BasisSet> basis, const CollocationSet& set,
                    const NewtonOptions& opts = {}, std::optional<Vector> alpha0 = std::nullopt) {
    if (problem.linearity() == Linearity::linear) {
        return fit_linear(problem, std::move(basis), set, LlsqOptions{opts.rcond, opts.threads});
    }
    Vector start = alpha0 ? *alpha0 : Vector::Zero(basis->size());
    return newton_llsq(problem, std::move(basis), set, std::move(start), opts);
}

struct Evaluation {
    Vector values;
    std::size_t ambiguous = 0;  // points within 1e-12 of the interface, assigned to Omega_2
};

/// u(x) = sum_i alpha_i t_i(x); piecewise by subdomain for interface solutions.
inline Evaluation evaluate_solution(const Solution& sol, std::span<const Point> points) {
    Evaluation out;
    if (!sol.is_interface()) {
        out.values = sol.basis->eval_values(points) * sol.alpha;
        return out;
    }
    std::vector<Point> in1, in2;
    std::vector<std::size_t> idx1, idx2;
    for (std::size_t p = 0; p < points.size(); ++p) {
        const double lv = sol.geometry->level(points[p]);
        if (std::abs(lv) <= 1e-12) {
            ++out.ambiguous;
        }
        if (lv < -1e-12) {
            in1.push_back(points[p]);
            idx1.push_back(p);
        } else {
            in2.push_back(points[p]);
            idx2.push_back(p);
        }
    }
    out.values.resize(static_cast<Eigen::Index>(points.size()));
    if (!in1.empty()) {
        const Vector v = sol.basis->eval_values(in1) * sol.alpha1();
        for (std::size_t k = 0; k < idx1.size(); ++k) out.values[static_cast<Eigen::Index>(idx1[k])] = v[static_cast<Eigen::Index>(k)];
    }
    if (!in2.empty()) {
        const Vector v = sol.basis2->eval_values(in2) * sol.alpha2();
        for (std::size_t k = 0; k < idx2.size(); ++k) out.values[static_cast<Eigen::Index>(idx2[k])] = v[static_cast<Eigen::Index>(k)];
    }
    return out;
}

} // namespace ftopinn
