#pragma once

#include "ftopinn/jet.hpp"
#include "ftopinn/problems.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace ftopinn {

using Function1D = std::function<double(double)>;
using Function2D = std::function<double(double, double)>;

/// Values on a uniform space-time grid; values(i, n) = u(x_i, t_n).
struct GridSolution {
    Vector x;
    Vector t;
    Matrix values;
    std::string scheme;

    [[nodiscard]] Eigen::Index nx() const { return x.size(); }
    [[nodiscard]] Eigen::Index nt() const { return t.size(); }
    [[nodiscard]] double dx() const { return (x[nx() - 1] - x[0]) / static_cast<double>(nx() - 1); }
    [[nodiscard]] double dt() const { return (t[nt() - 1] - t[0]) / static_cast<double>(nt() - 1); }

    /// Bilinear interpolation; exact at grid nodes.
    [[nodiscard]] double operator()(double xq, double tq) const {
        auto locate = [](const Vector& g, double q, double h) {
            const double s = std::clamp((q - g[0]) / h, 0.0, static_cast<double>(g.size() - 1));
            auto i = static_cast<Eigen::Index>(std::floor(s));
            i = std::min<Eigen::Index>(i, g.size() - 2);
            return std::pair{i, s - static_cast<double>(i)};
        };
        const auto [i, fx] = locate(x, xq, dx());
        const auto [n, ft] = locate(t, tq, dt());
        const double a = values(i, n) * (1 - fx) + values(i + 1, n) * fx;
        const double b = values(i, n + 1) * (1 - fx) + values(i + 1, n + 1) * fx;
        return a * (1 - ft) + b * ft;
    }

    [[nodiscard]] Vector at(std::span<const Point> points) const {
        Vector out(static_cast<Eigen::Index>(points.size()));
        for (std::size_t p = 0; p < points.size(); ++p) {
            out[static_cast<Eigen::Index>(p)] = (*this)(points[p][0], points[p][1]);
        }
        return out;
    }
};

namespace detail {

inline void check_grid(int nx, int nt) {
    if (nx < 3 || nt < 2) {
        throw ConfigError("reference grid needs nx >= 3 and nt >= 2");
    }
}

inline GridSolution make_grid(int nx, int nt, double t_end, std::string scheme) {
    GridSolution g;
    g.x = Vector::LinSpaced(nx, 0.0, 1.0);
    g.t = Vector::LinSpaced(nt, 0.0, t_end);
    g.values = Matrix::Zero(nx, nt);
    g.scheme = std::move(scheme);
    return g;
}

/// Thomas algorithm for sub/main/super diagonals a, b, c (a[0], c[n-1] unused).
inline Vector solve_tridiagonal(const Vector& a, const Vector& b, const Vector& c, const Vector& d) {
    const auto n = b.size();
    Vector cp(n), dp(n), x(n);
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for (Eigen::Index i = 1; i < n; ++i) {
        const double m = b[i] - a[i] * cp[i - 1];
        if (m == 0.0 || !std::isfinite(m)) {
            throw NumericalError("tridiagonal solve hit a zero pivot");
        }
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    x[n - 1] = dp[n - 1];
    for (Eigen::Index i = n - 2; i >= 0; --i) x[i] = dp[i] - cp[i] * x[i + 1];
    return x;
}

/// Cyclic tridiagonal system (corners a[0] and c[n-1]) by Sherman-Morrison.
inline Vector solve_cyclic_tridiagonal(const Vector& a, const Vector& b, const Vector& c, const Vector& d) {
    const auto n = b.size();
    const double alpha = c[n - 1];  // A(n-1, 0)
    const double beta = a[0];       // A(0, n-1)
    const double gamma = -b[0];
    Vector bb = b;
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    const Vector x = solve_tridiagonal(a, bb, c, d);
    Vector u = Vector::Zero(n);
    u[0] = gamma;
    u[n - 1] = alpha;
    const Vector z = solve_tridiagonal(a, bb, c, u);
    const double factor = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    return x - factor * z;
}

} // namespace detail

struct AdvectionGrid {
    int nx = 513;
    int nt = 513;
    int substeps = 0;  // time steps per output interval; 0 picks the smallest CFL-stable count
    bool periodic = false;
    double t_end = 1.0;
    Function1D initial = [](double x) { return std::sin(kPi * x); };
    Function1D inflow = [](double t) { return std::sin(0.5 * kPi * t); };
};

/// Lax-Wendroff for u_t + a(x) u_x = 0:
/// u_j += -(lam a_j / 2)(u_{j+1} - u_{j-1})
///        + (lam^2 a_j / 2)(a_{j+1/2}(u_{j+1} - u_j) - a_{j-1/2}(u_j - u_{j-1})).
/// Inflow data at x = 0 and linear extrapolation at the outflow end, or a
/// periodic domain when requested.
inline GridSolution solve_advection_lw(const Function1D& a, const AdvectionGrid& grid) {
    detail::check_grid(grid.nx, grid.nt);
    auto sol = detail::make_grid(grid.nx, grid.nt, grid.t_end, "lax_wendroff");
    const auto nx = sol.nx();
    const double dx = sol.dx();
    const double out_dt = sol.dt();
    Vector av(nx), ah(nx);  // a at nodes and at midpoints x_{j+1/2}
    for (Eigen::Index j = 0; j < nx; ++j) {
        av[j] = a(sol.x[j]);
        ah[j] = a(sol.x[j] + 0.5 * dx);
        if (!(av[j] > 0.0) || !std::isfinite(av[j])) {
            throw ConfigError("advection coefficient must be positive and finite on the grid");
        }
    }
    const double amax = std::max(av.maxCoeff(), ah.maxCoeff());
    int substeps = grid.substeps;
    if (substeps <= 0) {
        substeps = static_cast<int>(std::ceil(amax * out_dt / dx - 1e-12));
        substeps = std::max(1, substeps);
    }
    const double dt = out_dt / substeps;
    const double lam = dt / dx;
    if (amax * lam > 1.0 + 1e-12) {
        std::ostringstream msg;
        msg << "CFL number " << amax * lam << " exceeds 1; refine the time grid or raise substeps";
        throw ConfigError(msg.str());
    }

    Vector u = sol.x.unaryExpr(grid.initial);
    if (grid.periodic) u[nx - 1] = u[0];
    else u[0] = grid.inflow(0.0);
    sol.values.col(0) = u;
    Vector next(nx);
    const Eigen::Index n_unique = nx - 1;  // periodic: node nx-1 duplicates node 0
    auto step_node = [&](Eigen::Index j, Eigen::Index jm, Eigen::Index jp, double a_minus) {
        return u[j] - 0.5 * lam * av[j] * (u[jp] - u[jm]) +
               0.5 * lam * lam * av[j] * (ah[j] * (u[jp] - u[j]) - a_minus * (u[j] - u[jm]));
    };
    double time = 0.0;
    for (Eigen::Index n = 1; n < sol.nt(); ++n) {
        for (int s = 0; s < substeps; ++s) {
            time += dt;
            if (grid.periodic) {
                for (Eigen::Index j = 0; j < n_unique; ++j) {
                    const Eigen::Index jm = (j + n_unique - 1) % n_unique;
                    const Eigen::Index jp = (j + 1) % n_unique;
                    next[j] = step_node(j, jm, jp, ah[jm]);
                }
                next[nx - 1] = next[0];
            } else {
                for (Eigen::Index j = 1; j < nx - 1; ++j) next[j] = step_node(j, j - 1, j + 1, ah[j - 1]);
                next[0] = grid.inflow(time);
                next[nx - 1] = 2.0 * next[nx - 2] - next[nx - 3];
            }
            u.swap(next);
        }
        time = sol.t[n];
        sol.values.col(n) = u;
    }
    if (!sol.values.allFinite()) {
        throw NumericalError("Lax-Wendroff produced non-finite values");
    }
    return sol;
}

struct ImplicitGrid {
    int nx = 513;
    int nt = 513;
    double t_end = 1.0;
    int max_newton = 50;
};

/// Crank-Nicolson for u_t = D u_xx + k u^2 + f(x, t) with zero initial and
/// boundary data; the source is taken at t_{n+1/2} and the quadratic term is
/// resolved by Newton iteration at every step.
inline GridSolution solve_diffusion_reaction(const Function2D& f, double D, double k, const ImplicitGrid& grid) {
    detail::check_grid(grid.nx, grid.nt);
    if (!(D > 0.0)) {
        throw ConfigError("diffusion coefficient must be positive");
    }
    auto sol = detail::make_grid(grid.nx, grid.nt, grid.t_end, "crank_nicolson");
    const Eigen::Index m = sol.nx() - 2;  // interior unknowns
    const double dx = sol.dx();
    const double dt = sol.dt();
    const double r = D / (dx * dx);
    auto explicit_part = [&](const Vector& u) {
        // D u_xx + k u^2 on interior nodes, zero Dirichlet data.
        Vector out(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double left = i > 0 ? u[i - 1] : 0.0;
            const double right = i + 1 < m ? u[i + 1] : 0.0;
            out[i] = r * (left - 2.0 * u[i] + right) + k * u[i] * u[i];
        }
        return out;
    };
    Vector u = Vector::Zero(m);
    Vector lower = Vector::Constant(m, -0.5 * dt * r);
    Vector upper = lower;
    for (Eigen::Index n = 1; n < sol.nt(); ++n) {
        const double t_mid = 0.5 * (sol.t[n - 1] + sol.t[n]);
        Vector src(m);
        for (Eigen::Index i = 0; i < m; ++i) src[i] = f(sol.x[i + 1], t_mid);
        const Vector known = u + 0.5 * dt * explicit_part(u) + dt * src;
        Vector v = u;
        bool converged = false;
        for (int it = 0; it < grid.max_newton; ++it) {
            const Vector G = v - 0.5 * dt * explicit_part(v) - known;
            const Vector diag = (1.0 + dt * r - dt * k * v.array()).matrix();
            const Vector delta = detail::solve_tridiagonal(lower, diag, upper, G);
            v -= delta;
            if (delta.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, v.cwiseAbs().maxCoeff())) {
                converged = true;
                break;
            }
        }
        if (!converged || !v.allFinite()) {
            throw NumericalError("diffusion-reaction Newton solve did not converge at step " + std::to_string(n));
        }
        u = v;
        sol.values.col(n).segment(1, m) = u;
    }
    return sol;
}

/// Crank-Nicolson for u_t + (u^2/2)_x = mu u_xx on the unit torus with
/// central differences; Newton with a cyclic tridiagonal Jacobian.
inline GridSolution solve_burgers(const Function1D& u0, double mu, const ImplicitGrid& grid) {
    detail::check_grid(grid.nx, grid.nt);
    if (!(mu > 0.0)) {
        throw ConfigError("viscosity must be positive");
    }
    auto sol = detail::make_grid(grid.nx, grid.nt, grid.t_end, "crank_nicolson_burgers");
    const Eigen::Index m = sol.nx() - 1;  // periodic unknowns x_0 .. x_{m-1}
    const double dx = sol.dx();
    const double dt = sol.dt();
    const double c = 1.0 / (4.0 * dx);
    const double r = mu / (dx * dx);
    auto rhs = [&](const Vector& u) {
        Vector F(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            const double um = u[(j + m - 1) % m];
            const double up = u[(j + 1) % m];
            F[j] = c * (up * up - um * um) - r * (up - 2.0 * u[j] + um);
        }
        return F;
    };
    Vector u(m);
    for (Eigen::Index j = 0; j < m; ++j) u[j] = u0(sol.x[j]);
    sol.values.col(0).head(m) = u;
    sol.values(m, 0) = u[0];
    Vector a(m), b(m), cc(m);
    for (Eigen::Index n = 1; n < sol.nt(); ++n) {
        const Vector known = u - 0.5 * dt * rhs(u);
        Vector v = u;
        bool converged = false;
        for (int it = 0; it < grid.max_newton; ++it) {
            const Vector G = v + 0.5 * dt * rhs(v) - known;
            for (Eigen::Index j = 0; j < m; ++j) {
                const double um = v[(j + m - 1) % m];
                const double up = v[(j + 1) % m];
                a[j] = 0.5 * dt * (-2.0 * c * um - r);
                cc[j] = 0.5 * dt * (2.0 * c * up - r);
                b[j] = 1.0 + dt * r;
            }
            const Vector delta = detail::solve_cyclic_tridiagonal(a, b, cc, G);
            v -= delta;
            if (delta.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, v.cwiseAbs().maxCoeff())) {
                converged = true;
                break;
            }
        }
        if (!converged || !v.allFinite()) {
            throw NumericalError("Burgers Newton solve did not converge at step " + std::to_string(n));
        }
        u = v;
        sol.values.col(n).head(m) = u;
        sol.values(m, n) = u[0];
    }
    return sol;
}

/// Exact solution of the elliptic interface benchmark: c / (1 + m |x|^2)
/// with c = 1 in Omega_1 and c = 2 in Omega_2, a1 = 2, a2 = 1.
struct InterfaceExact {
    double u = 0.0;   // piecewise by subdomain
    double u1 = 0.0;  // Omega_1 branch
    double u2 = 0.0;  // Omega_2 branch
    double f1 = 0.0;
    double f2 = 0.0;
    double g_d = 0.0;
    double g_n = 0.0;
    double h = 0.0;
};

/// Jet of c / (1 + m |x|^2).
inline Jet2 interface_branch_jet(double m, double c, const Point& x) {
    const double r2 = x.squaredNorm();
    const double q = 1.0 + m * r2;
    Jet2 j(2);
    j.value = c / q;
    j.grad = (-2.0 * c * m / (q * q)) * x;
    for (Eigen::Index a = 0; a < 2; ++a) {
        for (Eigen::Index b = 0; b < 2; ++b) {
            j.hess(a, b) = 8.0 * c * m * m * x[a] * x[b] / (q * q * q) - (a == b ? 2.0 * c * m / (q * q) : 0.0);
        }
    }
    return j;
}

inline InterfaceExact interface_exact(double m, const Point& x, const family::AstroidGeometry& geometry = {},
                                      std::optional<Point> normal = std::nullopt) {
    if (!(m > 0.0)) {
        throw ConfigError("interface parameter m must be positive");
    }
    const double a1 = 2.0, a2 = 1.0;
    const Jet2 j1 = interface_branch_jet(m, 1.0, x);
    const Jet2 j2 = interface_branch_jet(m, 2.0, x);
    InterfaceExact e;
    e.u1 = j1.value;
    e.u2 = j2.value;
    e.u = geometry.level(x) < -1e-12 ? e.u1 : e.u2;
    e.f1 = -a1 * j1.laplacian();
    e.f2 = -a2 * j2.laplacian();
    e.g_d = e.u2 - e.u1;
    e.g_n = normal ? a2 * j2.grad.dot(*normal) - a1 * j1.grad.dot(*normal) : 0.0;
    e.h = e.u2;
    return e;
}

/// The interface problem whose data come from the exact solution with parameter m.
inline ProblemSpec make_interface_problem(double m) {
    if (!(m > 0.0)) {
        throw ConfigError("interface parameter m must be positive");
    }
    family::EllipticInterface ip;
    ip.f1 = [m](const Point& x) { return interface_exact(m, x).f1; };
    ip.f2 = [m](const Point& x) { return interface_exact(m, x).f2; };
    ip.g_d = [m](const Point& x) { return interface_exact(m, x).g_d; };
    // a2 grad u2 - a1 grad u1 = (2 a2 - a1) grad(1/q) vanishes for a1 = 2 a2,
    // whatever the normal.
    ip.g_n = [](const Point&) { return 0.0; };
    ip.h = [m](const Point& x) { return interface_exact(m, x).h; };
    return ProblemSpec{ip};
}

// Serialization. CSV: one "# key=value,..." header line, then nt lines of nx
// comma-separated values (row n holds u(x_0..x_{nx-1}, t_n)). Binary: magic
// "FTOG", int32 nx, nt, float64 x0, x1, t0, t1, then values in the same order.

inline void write_grid_csv(const std::string& path, const GridSolution& g) {
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write " + path);
    }
    os << std::setprecision(17) << "# scheme=" << g.scheme << ",nx=" << g.nx() << ",nt=" << g.nt()
       << ",x0=" << g.x[0] << ",x1=" << g.x[g.nx() - 1] << ",t0=" << g.t[0] << ",t1=" << g.t[g.nt() - 1]
       << '\n';
    for (Eigen::Index n = 0; n < g.nt(); ++n) {
        for (Eigen::Index i = 0; i < g.nx(); ++i) {
            os << (i ? "," : "") << g.values(i, n);
        }
        os << '\n';
    }
}

inline GridSolution read_grid_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot read " + path);
    }
    std::string header;
    std::getline(is, header);
    if (header.rfind("# ", 0) != 0) {
        throw ConfigError(path + ": missing grid header");
    }
    std::map<std::string, std::string> kv;
    std::stringstream hs(header.substr(2));
    for (std::string item; std::getline(hs, item, ',');) {
        const auto eq = item.find('=');
        if (eq != std::string::npos) kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    try {
        const int nx = std::stoi(kv.at("nx"));
        const int nt = std::stoi(kv.at("nt"));
        GridSolution g;
        g.scheme = kv.at("scheme");
        g.x = Vector::LinSpaced(nx, std::stod(kv.at("x0")), std::stod(kv.at("x1")));
        g.t = Vector::LinSpaced(nt, std::stod(kv.at("t0")), std::stod(kv.at("t1")));
        g.values.resize(nx, nt);
        std::string line;
        for (int n = 0; n < nt; ++n) {
            if (!std::getline(is, line)) throw ConfigError(path + ": truncated grid data");
            std::stringstream ls(line);
            std::string cell;
            for (int i = 0; i < nx; ++i) {
                if (!std::getline(ls, cell, ',')) throw ConfigError(path + ": short grid row");
                g.values(i, n) = std::stod(cell);
            }
        }
        return g;
    } catch (const std::out_of_range&) {
        throw ConfigError(path + ": incomplete grid header");
    } catch (const std::invalid_argument&) {
        throw ConfigError(path + ": malformed number");
    }
}

inline void write_grid_binary(const std::string& path, const GridSolution& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ConfigError("cannot write " + path);
    }
    const std::int32_t dims[2] = {static_cast<std::int32_t>(g.nx()), static_cast<std::int32_t>(g.nt())};
    const double bounds[4] = {g.x[0], g.x[g.nx() - 1], g.t[0], g.t[g.nt() - 1]};
    os.write("FTOG", 4);
    os.write(reinterpret_cast<const char*>(dims), sizeof dims);
    os.write(reinterpret_cast<const char*>(bounds), sizeof bounds);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = g.values.transpose();
    os.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
}

inline GridSolution read_grid_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    char magic[4] = {};
    std::int32_t dims[2] = {};
    double bounds[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "FTOG", 4) != 0) {
        throw ConfigError(path + ": not a binary grid file");
    }
    if (!is.read(reinterpret_cast<char*>(dims), sizeof dims) ||
        !is.read(reinterpret_cast<char*>(bounds), sizeof bounds) || dims[0] < 2 || dims[1] < 2) {
        throw ConfigError(path + ": bad binary grid header");
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(dims[1], dims[0]);
    if (!is.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)))) {
        throw ConfigError(path + ": truncated binary grid");
    }
    GridSolution g;
    g.scheme = "binary";
    g.x = Vector::LinSpaced(dims[0], bounds[0], bounds[1]);
    g.t = Vector::LinSpaced(dims[1], bounds[2], bounds[3]);
    g.values = rm.transpose();
    return g;
}

} // namespace ftopinn
