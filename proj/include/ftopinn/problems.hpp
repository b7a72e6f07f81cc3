#pragma once

#include "ftopinn/common.hpp"
#include "ftopinn/jet.hpp"

#include <functional>
#include <optional>
#include <span>
#include <variant>

namespace ftopinn {

/// Scalar function of a point. For time-dependent families the point is (x, t).
using ScalarField = std::function<double(const Point&)>;

/// Which loss term a collocation row belongs to.
enum class RowTag {
    interior,
    dirichlet,
    initial,
    periodic_value,
    periodic_slope,
    pde1,
    pde2,
    outer_boundary,
    jump_value,
    jump_flux,
};

inline const char* to_string(RowTag t) {
    switch (t) {
    case RowTag::interior: return "interior";
    case RowTag::dirichlet: return "dirichlet";
    case RowTag::initial: return "initial";
    case RowTag::periodic_value: return "periodic_value";
    case RowTag::periodic_slope: return "periodic_slope";
    case RowTag::pde1: return "pde1";
    case RowTag::pde2: return "pde2";
    case RowTag::outer_boundary: return "outer_boundary";
    case RowTag::jump_value: return "jump_value";
    case RowTag::jump_flux: return "jump_flux";
    }
    return "unknown";
}

struct CollocationPoint {
    Point x;
    RowTag tag = RowTag::interior;
    Point normal;   // unit outward normal of Omega_1, jump_flux only
    Point partner;  // opposite periodic end, periodic rows only
};

/// Scattered points in the domain, on the outer boundary and on the interface.
struct CollocationSet {
    std::vector<CollocationPoint> interior;
    std::vector<CollocationPoint> boundary;
    std::vector<CollocationPoint> interface;

    [[nodiscard]] std::size_t total() const { return interior.size() + boundary.size() + interface.size(); }

    /// All points in assembly order: interior, boundary, interface.
    [[nodiscard]] std::vector<CollocationPoint> all() const {
        std::vector<CollocationPoint> out;
        out.reserve(total());
        out.insert(out.end(), interior.begin(), interior.end());
        out.insert(out.end(), boundary.begin(), boundary.end());
        out.insert(out.end(), interface.begin(), interface.end());
        return out;
    }
};

namespace family {

/// u_t + a(x) u_x = 0 on (0,1)^2, u(0,t) = inflow(t), u(x,0) = initial(x).
struct Advection {
    ScalarField a;
    ScalarField initial;
    ScalarField inflow;
};

/// u_t = D u_xx + k u^2 + f(x) with zero initial and boundary data.
struct DiffusionReaction {
    double D = 0.01;
    double k = 0.01;
    ScalarField f;
};

/// u_t + u u_x - mu u_xx = 0, periodic in x, u(x,0) = u0(x).
struct Burgers {
    double mu = 0.01;
    ScalarField u0;
};

/// Astroid interface (R cos^3, R sin^3) inside [-1,1]^2.
struct AstroidGeometry {
    double radius = 0.65;

    /// Negative inside Omega_1, zero on the interface, positive outside.
    [[nodiscard]] double level(const Point& x) const {
        return std::cbrt(std::pow(std::abs(x[0]) / radius, 2.0)) +
               std::cbrt(std::pow(std::abs(x[1]) / radius, 2.0)) - 1.0;
    }

    [[nodiscard]] Point point(double theta) const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        return make_point(radius * c * c * c, radius * s * s * s);
    }

    [[nodiscard]] Point tangent(double theta) const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        return make_point(-3.0 * radius * c * c * s, 3.0 * radius * s * s * c);
    }

    /// Unit outward normal. At the four cusps the one-sided limits are
    /// opposite, so the symmetric outward axis direction is returned there.
    [[nodiscard]] Point normal(double theta, double tangent_tol = 1e-8) const {
        const Point t = tangent(theta);
        const double len = t.norm();
        if (len < tangent_tol) {
            const Point p = point(theta);
            return p / p.norm();
        }
        return make_point(t[1] / len, -t[0] / len);
    }
};

/// -div(a_i grad u) = f_i in Omega_i with value and flux jumps g_d, g_n on
/// the interface and u = h on the outer boundary. Coefficients are
/// piecewise constant, so L_i = -a_i Laplace.
struct EllipticInterface {
    double a1 = 2.0;
    double a2 = 1.0;
    ScalarField f1;
    ScalarField f2;
    ScalarField g_d;
    ScalarField g_n;
    ScalarField h;
    AstroidGeometry geometry;
};

} // namespace family

enum class Linearity { linear, nonlinear };

struct ProblemSpec {
    std::variant<family::Advection, family::DiffusionReaction, family::Burgers, family::EllipticInterface> family;

    [[nodiscard]] Linearity linearity() const {
        if (std::holds_alternative<family::DiffusionReaction>(family)) {
            return std::get<family::DiffusionReaction>(family).k == 0.0 ? Linearity::linear : Linearity::nonlinear;
        }
        return std::holds_alternative<family::Burgers>(family) ? Linearity::nonlinear : Linearity::linear;
    }

    [[nodiscard]] bool is_interface() const {
        return std::holds_alternative<family::EllipticInterface>(family);
    }

    [[nodiscard]] std::string name() const {
        static constexpr const char* names[] = {"advection", "diffusion_reaction", "burgers", "elliptic_interface"};
        return names[family.index()];
    }

    /// Lower and upper corner of the rectangular domain.
    [[nodiscard]] std::pair<double, double> domain_bounds() const {
        return is_interface() ? std::pair{-1.0, 1.0} : std::pair{0.0, 1.0};
    }
};

inline ProblemSpec make_advection(ScalarField a) {
    family::Advection adv;
    adv.a = std::move(a);
    adv.initial = [](const Point& x) { return std::sin(kPi * x[0]); };
    adv.inflow = [](const Point& x) { return std::sin(0.5 * kPi * x[1]); };
    return ProblemSpec{std::move(adv)};
}

inline ProblemSpec make_diffusion_reaction(ScalarField f, double D = 0.01, double k = 0.01) {
    if (!(D > 0.0)) {
        throw ConfigError("diffusion coefficient D must be positive");
    }
    return ProblemSpec{family::DiffusionReaction{D, k, std::move(f)}};
}

inline ProblemSpec make_burgers(ScalarField u0, double mu = 0.01) {
    if (!(mu > 0.0)) {
        throw ConfigError("viscosity mu must be positive");
    }
    return ProblemSpec{family::Burgers{mu, std::move(u0)}};
}

/// One row of the (unweighted) least-squares system with its right-hand side.
struct ResidualRow {
    Vector coefficients;
    double rhs = 0.0;
    RowTag group = RowTag::interior;
};

/// Residual of one collocation condition at alpha and its gradient w.r.t. alpha.
struct NonlinearRow {
    double residual = 0.0;
    Vector jacobian;
    RowTag group = RowTag::interior;
};

namespace detail {

inline constexpr Eigen::Index kX = 0;  // spatial coordinate
inline constexpr Eigen::Index kT = 1;  // time coordinate

[[noreturn]] inline void bad_tag(const ProblemSpec& p, RowTag t) {
    throw ConfigError(std::string("row tag '") + to_string(t) + "' is not valid for problem family " + p.name());
}

inline double boundary_rhs(const ProblemSpec& p, const CollocationPoint& pt) {
    return std::visit(
        [&](const auto& fam) -> double {
            using F = std::decay_t<decltype(fam)>;
            if constexpr (std::is_same_v<F, family::Advection>) {
                if (pt.tag == RowTag::dirichlet) return fam.inflow(pt.x);
                if (pt.tag == RowTag::initial) return fam.initial(pt.x);
            } else if constexpr (std::is_same_v<F, family::DiffusionReaction>) {
                if (pt.tag == RowTag::dirichlet || pt.tag == RowTag::initial) return 0.0;
            } else if constexpr (std::is_same_v<F, family::Burgers>) {
                if (pt.tag == RowTag::initial) return fam.u0(pt.x);
                if (pt.tag == RowTag::periodic_value || pt.tag == RowTag::periodic_slope) return 0.0;
            }
            bad_tag(p, pt.tag);
        },
        p.family);
}

inline void require_size(std::span<const Jet2> jets, std::span<const Jet2> partner, RowTag tag) {
    if ((tag == RowTag::periodic_value || tag == RowTag::periodic_slope) && partner.size() != jets.size()) {
        throw ConfigError("periodic rows need partner jets of the same length");
    }
}

/// Linear boundary-type row: value, or value/slope difference across the periodic pair.
inline Vector boundary_coefficients(std::span<const Jet2> jets, std::span<const Jet2> partner, RowTag tag) {
    const auto I = static_cast<Eigen::Index>(jets.size());
    Vector row(I);
    for (Eigen::Index i = 0; i < I; ++i) {
        const auto& j = jets[static_cast<std::size_t>(i)];
        switch (tag) {
        case RowTag::periodic_value:
            row[i] = j.value - partner[static_cast<std::size_t>(i)].value;
            break;
        case RowTag::periodic_slope:
            row[i] = j.grad[kX] - partner[static_cast<std::size_t>(i)].grad[kX];
            break;
        default:
            row[i] = j.value;
        }
    }
    return row;
}

} // namespace detail

/// Row of A (and entry of b) for a linear condition. PDE rows are only
/// available for linear families; boundary rows for every single-domain family.
inline ResidualRow linear_rows(const ProblemSpec& problem, std::span<const Jet2> jets, const CollocationPoint& pt,
                               std::span<const Jet2> partner = {}) {
    using namespace detail;
    if (problem.is_interface()) {
        throw ConfigError("interface problems use interface_rows");
    }
    require_size(jets, partner, pt.tag);
    ResidualRow out;
    out.group = pt.tag;
    const auto I = static_cast<Eigen::Index>(jets.size());
    if (pt.tag != RowTag::interior) {
        out.coefficients = boundary_coefficients(jets, partner, pt.tag);
        out.rhs = boundary_rhs(problem, pt);
        return out;
    }
    if (const auto* adv = std::get_if<family::Advection>(&problem.family)) {
        const double a = adv->a(pt.x);
        if (!(a > 0.0)) {
            throw NumericalError("advection coefficient a(x) must be positive");
        }
        out.coefficients.resize(I);
        for (Eigen::Index i = 0; i < I; ++i) {
            const auto& g = jets[static_cast<std::size_t>(i)].grad;
            out.coefficients[i] = g[kT] + a * g[kX];
        }
        out.rhs = 0.0;
        return out;
    }
    if (const auto* dr = std::get_if<family::DiffusionReaction>(&problem.family); dr && dr->k == 0.0) {
        out.coefficients.resize(I);
        for (Eigen::Index i = 0; i < I; ++i) {
            const auto& j = jets[static_cast<std::size_t>(i)];
            out.coefficients[i] = j.grad[kT] - dr->D * j.hess(kX, kX);
        }
        out.rhs = dr->f(pt.x);
        return out;
    }
    throw ConfigError("PDE rows of the nonlinear family " + problem.name() + " need nonlinear_residual_and_jacobian");
}

/// Residual L(u_alpha)(x) - f(x) (or the boundary analogue) and its gradient
/// with respect to alpha, for u_alpha = sum_i alpha_i t_i.
inline NonlinearRow nonlinear_residual_and_jacobian(const ProblemSpec& problem, std::span<const Jet2> jets,
                                                    const CollocationPoint& pt, const Vector& alpha,
                                                    std::span<const Jet2> partner = {}) {
    using namespace detail;
    const auto I = static_cast<Eigen::Index>(jets.size());
    if (alpha.size() != I) {
        throw DimensionError("alpha length " + std::to_string(alpha.size()) + " != basis size " + std::to_string(I));
    }
    NonlinearRow out;
    out.group = pt.tag;
    const bool nonlinear_pde = pt.tag == RowTag::interior && problem.linearity() == Linearity::nonlinear;
    if (!nonlinear_pde) {
        auto row = linear_rows(problem, jets, pt, partner);
        out.residual = row.coefficients.dot(alpha) - row.rhs;
        out.jacobian = std::move(row.coefficients);
        return out;
    }
    double u = 0.0, ux = 0.0, ut = 0.0, uxx = 0.0;
    for (Eigen::Index i = 0; i < I; ++i) {
        const auto& j = jets[static_cast<std::size_t>(i)];
        u += alpha[i] * j.value;
        ux += alpha[i] * j.grad[kX];
        ut += alpha[i] * j.grad[kT];
        uxx += alpha[i] * j.hess(kX, kX);
    }
    out.jacobian.resize(I);
    if (const auto* dr = std::get_if<family::DiffusionReaction>(&problem.family)) {
        out.residual = ut - dr->D * uxx - dr->k * u * u - dr->f(pt.x);
        for (Eigen::Index i = 0; i < I; ++i) {
            const auto& j = jets[static_cast<std::size_t>(i)];
            out.jacobian[i] = j.grad[kT] - dr->D * j.hess(kX, kX) - 2.0 * dr->k * u * j.value;
        }
        return out;
    }
    if (const auto* bg = std::get_if<family::Burgers>(&problem.family)) {
        out.residual = ut + u * ux - bg->mu * uxx;
        for (Eigen::Index i = 0; i < I; ++i) {
            const auto& j = jets[static_cast<std::size_t>(i)];
            out.jacobian[i] = j.grad[kT] + u * j.grad[kX] + ux * j.value - bg->mu * j.hess(kX, kX);
        }
        return out;
    }
    bad_tag(problem, pt.tag);
}

/// Row over the concatenated coefficients (alpha_1, alpha_2) of the
/// two-subdomain system: block signs follow the value/flux jump definitions.
inline ResidualRow interface_rows(const ProblemSpec& problem, std::span<const Jet2> jets1,
                                  std::span<const Jet2> jets2, const CollocationPoint& pt) {
    const auto* ip = std::get_if<family::EllipticInterface>(&problem.family);
    if (ip == nullptr) {
        throw ConfigError("interface_rows requires an elliptic interface problem");
    }
    const auto n1 = static_cast<Eigen::Index>(jets1.size());
    const auto n2 = static_cast<Eigen::Index>(jets2.size());
    ResidualRow out;
    out.group = pt.tag;
    out.coefficients = Vector::Zero(n1 + n2);
    auto c1 = out.coefficients.head(n1);
    auto c2 = out.coefficients.tail(n2);
    auto flux = [&](const Jet2& j) {
        if (pt.normal.size() != j.dim()) {
            throw ConfigError("jump_flux row requires an interface normal");
        }
        return j.grad.dot(pt.normal);
    };
    switch (pt.tag) {
    case RowTag::pde1:
        for (Eigen::Index i = 0; i < n1; ++i) c1[i] = -ip->a1 * jets1[static_cast<std::size_t>(i)].laplacian();
        out.rhs = ip->f1(pt.x);
        break;
    case RowTag::pde2:
        for (Eigen::Index i = 0; i < n2; ++i) c2[i] = -ip->a2 * jets2[static_cast<std::size_t>(i)].laplacian();
        out.rhs = ip->f2(pt.x);
        break;
    case RowTag::outer_boundary:
        for (Eigen::Index i = 0; i < n2; ++i) c2[i] = jets2[static_cast<std::size_t>(i)].value;
        out.rhs = ip->h(pt.x);
        break;
    case RowTag::jump_value:
        for (Eigen::Index i = 0; i < n1; ++i) c1[i] = -jets1[static_cast<std::size_t>(i)].value;
        for (Eigen::Index i = 0; i < n2; ++i) c2[i] = jets2[static_cast<std::size_t>(i)].value;
        out.rhs = ip->g_d(pt.x);
        break;
    case RowTag::jump_flux:
        if (pt.normal.size() == 0) {
            throw ConfigError("jump_flux row requires an interface normal");
        }
        for (Eigen::Index i = 0; i < n1; ++i) c1[i] = -ip->a1 * flux(jets1[static_cast<std::size_t>(i)]);
        for (Eigen::Index i = 0; i < n2; ++i) c2[i] = ip->a2 * flux(jets2[static_cast<std::size_t>(i)]);
        out.rhs = ip->g_n(pt.x);
        break;
    default:
        detail::bad_tag(problem, pt.tag);
    }
    return out;
}

/// Number of collocation sites per region.
struct CollocationCounts {
    std::size_t interior = 0;
    std::size_t boundary = 0;   // Dirichlet sites or periodic pairs (two rows each)
    std::size_t initial = 0;
    std::size_t interface = 0;

    /// Defaults matching the published setups of the four benchmark families.
    static CollocationCounts defaults_for(const ProblemSpec& p) {
        if (std::holds_alternative<family::Burgers>(p.family)) {
            return {2000, 1000, 101, 0};
        }
        if (p.is_interface()) {
            return {2000, 1000, 0, 1000};
        }
        return {4000, 2000, 2000, 0};
    }
};

/// Uniform random collocation points, reproducible from `seed`.
inline CollocationSet sample_collocation(const ProblemSpec& problem, const CollocationCounts& counts,
                                         std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto open_unit = [&] {
        double v = 0.0;
        do {
            v = unit(rng);
        } while (v <= 0.0);
        return v;
    };
    CollocationSet set;

    if (const auto* ip = std::get_if<family::EllipticInterface>(&problem.family)) {
        const auto& geo = ip->geometry;
        std::uniform_real_distribution<double> box(-1.0, 1.0);
        while (set.interior.size() < counts.interior) {
            const Point x = make_point(box(rng), box(rng));
            if (std::abs(x[0]) >= 1.0 || std::abs(x[1]) >= 1.0) continue;
            const double lv = geo.level(x);
            if (std::abs(lv) <= 1e-12) continue;
            set.interior.push_back({x, lv < 0.0 ? RowTag::pde1 : RowTag::pde2, {}, {}});
        }
        for (std::size_t i = 0; i < counts.boundary; ++i) {
            const int side = static_cast<int>(unit(rng) * 4.0) % 4;
            const double s = box(rng);
            Point x = side == 0 ? make_point(-1.0, s) : side == 1 ? make_point(1.0, s)
                    : side == 2 ? make_point(s, -1.0)
                                : make_point(s, 1.0);
            set.boundary.push_back({x, RowTag::outer_boundary, {}, {}});
        }
        std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
        while (set.interface.size() < 2 * counts.interface) {
            const double theta = angle(rng);
            if (geo.tangent(theta).norm() < 1e-8) continue;
            const Point x = geo.point(theta);
            const Point n = geo.normal(theta);
            set.interface.push_back({x, RowTag::jump_value, n, {}});
            set.interface.push_back({x, RowTag::jump_flux, n, {}});
        }
        return set;
    }

    for (std::size_t i = 0; i < counts.interior; ++i) {
        double x = 0.0, t = 0.0;
        do {
            x = open_unit();
            t = open_unit();
        } while (x >= 1.0 || t >= 1.0);
        set.interior.push_back({make_point(x, t), RowTag::interior, {}, {}});
    }
    const bool periodic = std::holds_alternative<family::Burgers>(problem.family);
    const bool two_sided = std::holds_alternative<family::DiffusionReaction>(problem.family);
    for (std::size_t i = 0; i < counts.boundary; ++i) {
        const double t = open_unit();
        if (periodic) {
            set.boundary.push_back({make_point(0.0, t), RowTag::periodic_value, {}, make_point(1.0, t)});
            set.boundary.push_back({make_point(0.0, t), RowTag::periodic_slope, {}, make_point(1.0, t)});
        } else {
            const double side = (two_sided && i % 2 == 1) ? 1.0 : 0.0;
            set.boundary.push_back({make_point(side, t), RowTag::dirichlet, {}, {}});
        }
    }
    for (std::size_t i = 0; i < counts.initial; ++i) {
        set.boundary.push_back({make_point(unit(rng), 0.0), RowTag::initial, {}, {}});
    }
    return set;
}

} // namespace ftopinn
