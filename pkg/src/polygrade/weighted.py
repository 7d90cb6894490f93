"""Weighted Sobolev norms, corner singular functions, Hardy-Poincare estimates.

The weighted norms carry powers of the distance to the singular set; elements
touching that set are internally subdivided geometrically toward it (ratio 1/2,
default depth 6) before the standard quadrature is applied, and every norm is
reported together with its change under one extra subdivision depth.  Failure
to stabilize under that sweep is how non-membership shows up; it is reported,
never raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import Domain, NumericalError, ValidationError, singular_distance
from .fem import (
    ScalarField,
    SimplicialMesh,
    apply_dirichlet,
    assemble,
    quadrature,
    reference_basis,
    solve_cg,
)

TOUCH_TOL_FACTOR = 1e-9


# ---------------------------------------------------------------------------
# cutoff and corner singular functions
# ---------------------------------------------------------------------------

def cutoff_c2(r, r1: float, r2: float):
    """Quintic cutoff: 1 on [0, r1], 0 on [r2, inf), C^2 across both joints.

    Returns (chi, chi', chi'')."""
    r = np.asarray(r, dtype=float)
    t = np.clip((r - r1) / (r2 - r1), 0.0, 1.0)
    chi = 1.0 - (10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5)
    d1 = -30.0 * t ** 2 * (1.0 - t) ** 2 / (r2 - r1)
    d2 = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (r2 - r1) ** 2
    inside = (r > r1) & (r < r2)
    d1 = np.where(inside, d1, 0.0)
    d2 = np.where(inside, d2, 0.0)
    return chi, d1, d2


@dataclass(frozen=True)
class CornerSingularFunction:
    """r^(pi/alpha) sin(pi theta/alpha) times a radial C^2 cutoff at corner P.

    theta is measured from the corner's first leg (`leg_angle`), increasing
    into the domain (`orientation` +1 counterclockwise, -1 clockwise), so the
    pure part vanishes on both legs.
    """

    corner: tuple
    alpha: float
    r1: float
    r2: float
    leg_angle: float = 0.0
    orientation: int = 1

    @property
    def exponent(self) -> float:
        return math.pi / self.alpha

    def polar(self, pts: np.ndarray):
        p = np.atleast_2d(pts)[:, :2] - np.asarray(self.corner, dtype=float)[:2]
        ca, sa = math.cos(self.leg_angle), math.sin(self.leg_angle)
        x = ca * p[:, 0] + sa * p[:, 1]
        y = -sa * p[:, 0] + ca * p[:, 1]
        if self.orientation < 0:
            y = -y
        r = np.hypot(x, y)
        theta = np.arctan2(y, x) % (2.0 * math.pi)
        return r, theta


def eval_singular(sf: CornerSingularFunction, pts: np.ndarray):
    """Value, gradient, and Laplacian of the cut-off corner singular function.

    The pure part s = r^g sin(g theta), g = pi/alpha, is harmonic, so
    Lap(s chi) = 2 grad(s).grad(chi) + s Lap(chi) with radial chi.  At the
    corner itself the value is 0; the gradient is unbounded for g < 1 and is
    reported as nan there.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    g = sf.exponent
    r, th = sf.polar(pts)
    chi, dchi, ddchi = cutoff_c2(r, sf.r1, sf.r2)
    safe = r > 0
    rs = np.where(safe, r, 1.0)
    s = rs ** g * np.sin(g * th)
    s_r = g * rs ** (g - 1.0) * np.sin(g * th)  # ds/dr
    s_t = g * rs ** (g - 1.0) * np.cos(g * th)  # (1/r) ds/dtheta
    value = np.where(safe, s * chi, 0.0)

    # gradient in the local rotated frame, then back to global coordinates
    u_r = s_r * chi + s * dchi
    u_t = s_t * chi
    cth, sth = np.cos(th), np.sin(th)
    gx = u_r * cth - u_t * sth
    gy = u_r * sth + u_t * cth
    if sf.orientation < 0:
        gy = -gy
    ca, sa = math.cos(sf.leg_angle), math.sin(sf.leg_angle)
    grad = np.stack([ca * gx - sa * gy, sa * gx + ca * gy], axis=1)
    if g < 1.0:
        grad[~safe] = np.nan
    else:
        grad[~safe] = 0.0

    lap = 2.0 * s_r * dchi + s * (ddchi + np.where(safe, dchi / rs, 0.0))
    lap = np.where(safe, lap, 0.0)
    return value, grad, lap


def singular_field(sf: CornerSingularFunction) -> ScalarField:
    def value(p):
        return eval_singular(sf, p)[0]

    def gradient(p):
        return eval_singular(sf, p)[1]

    def laplacian(p):
        return eval_singular(sf, p)[2]

    def hessian(p):
        # exact closed form is noisy to write; central differences of the
        # gradient suffice for the K^2_a quadrature sweeps
        p = np.atleast_2d(p)
        h = 1e-6 * max(sf.r2, 1.0)
        out = np.empty((len(p), 2, 2))
        for d in range(2):
            step = np.zeros(2)
            step[d] = h
            gp = eval_singular(sf, p + step)[1]
            gm = eval_singular(sf, p - step)[1]
            out[:, :, d] = (gp - gm) / (2 * h)
        return 0.5 * (out + np.transpose(out, (0, 2, 1)))

    return ScalarField(value=value, gradient=gradient, laplacian=laplacian,
                       hessian=hessian)


def manufactured_problem(corner, alpha: float, r1: float, r2: float,
                         leg_angle: float = 0.0, orientation: int = 1):
    """(u, f) with u the cut-off corner singular function and f = -Lap(u).

    u vanishes on both corner legs and outside radius r2, so g = 0 on the
    whole boundary whenever the cutoff ball stays inside the domain; f is
    smooth and supported in the annulus r1 < r < r2.
    """
    if not (0.0 < r1 < r2):
        raise ValidationError(f"need 0 < R1 < R2, got {r1}, {r2}")
    sf = CornerSingularFunction(tuple(corner), alpha, r1, r2, leg_angle, orientation)
    u = singular_field(sf)
    f = ScalarField(value=lambda p: -eval_singular(sf, p)[2])
    return u, f, sf


def pure_corner_problem(corner, alpha: float, leg_angle: float = 0.0,
                        orientation: int = 1):
    """(u, f=0): the uncut harmonic singular solution r^(pi/a) sin(pi th/a).

    u vanishes on the corner legs and is imposed as Dirichlet data (its exact
    trace) on the rest of the boundary; the whole H^1 error then comes from
    the corner singularity.
    """
    g = math.pi / alpha
    sf = CornerSingularFunction(tuple(corner), alpha, 1e12, 2e12,
                                leg_angle, orientation)

    def value(p):
        r, th = sf.polar(p)
        return r ** g * np.sin(g * th)

    def gradient(p):
        _, grad, _ = eval_singular(sf, p)
        return grad

    u = ScalarField(value=value, gradient=gradient,
                    laplacian=lambda p: np.zeros(len(np.atleast_2d(p))))
    f = ScalarField(value=lambda p: np.zeros(len(np.atleast_2d(p))))
    return u, f, sf


def wedge_problem(alpha: float, r1: float, r2: float, leg_angle: float = 0.0,
                  orientation: int = 1):
    """3D edge-singular manufactured solution on a prismatic wedge.

    u(x, y, z) = s(r, theta) chi(r) w(z) with (r, theta) around the z-axis
    edge and w(z) = z (1 - z); -Lap u = -[w Lap2(s chi) - 2 s chi].
    """
    sf = CornerSingularFunction((0.0, 0.0), alpha, r1, r2, leg_angle, orientation)

    def parts(p):
        p = np.atleast_2d(p)
        v2, g2, l2 = eval_singular(sf, p[:, :2])
        w = p[:, 2] * (1.0 - p[:, 2])
        dw = 1.0 - 2.0 * p[:, 2]
        return v2, g2, l2, w, dw

    def value(p):
        v2, _, _, w, _ = parts(p)
        return v2 * w

    def gradient(p):
        v2, g2, _, w, dw = parts(p)
        return np.stack([g2[:, 0] * w, g2[:, 1] * w, v2 * dw], axis=1)

    def laplacian(p):
        v2, _, l2, w, _ = parts(p)
        return w * l2 - 2.0 * v2

    u = ScalarField(value=value, gradient=gradient, laplacian=laplacian)
    f = ScalarField(value=lambda p: -laplacian(p))
    return u, f, sf


def pure_wedge_problem(alpha: float, leg_angle: float = 0.0,
                       orientation: int = 1):
    """(u, f): uncut edge-singular solution s(r, theta) z (1 - z) on a wedge.

    -Lap u = 2 s since s is harmonic in the cross-section; u vanishes on the
    wedge faces and on z in {0, 1}, and its exact trace is imposed on the
    outer boundary.
    """
    g = math.pi / alpha
    sf = CornerSingularFunction((0.0, 0.0), alpha, 1e12, 2e12,
                                leg_angle, orientation)

    def s_values(p):
        r, th = sf.polar(p[:, :2])
        return r ** g * np.sin(g * th)

    def value(p):
        p = np.atleast_2d(p)
        return s_values(p) * p[:, 2] * (1.0 - p[:, 2])

    def gradient(p):
        p = np.atleast_2d(p)
        _, g2, _ = eval_singular(sf, p[:, :2])
        w = p[:, 2] * (1.0 - p[:, 2])
        dw = 1.0 - 2.0 * p[:, 2]
        return np.stack([g2[:, 0] * w, g2[:, 1] * w, s_values(p) * dw], axis=1)

    def laplacian(p):
        return -2.0 * s_values(np.atleast_2d(p))

    u = ScalarField(value=value, gradient=gradient, laplacian=laplacian)
    f = ScalarField(value=lambda p: 2.0 * s_values(np.atleast_2d(p)))
    return u, f, sf


def smooth_sine_problem(dim: int):
    """Smooth baseline: u = prod sin(pi x_i), f = dim pi^2 u."""

    def value(p):
        out = np.ones(len(p))
        for d in range(dim):
            out = out * np.sin(math.pi * p[:, d])
        return out

    def gradient(p):
        cols = []
        for d in range(dim):
            col = np.full(len(p), math.pi)
            for d2 in range(dim):
                if d2 == d:
                    col = col * np.cos(math.pi * p[:, d2])
                else:
                    col = col * np.sin(math.pi * p[:, d2])
            cols.append(col)
        return np.stack(cols, axis=1)

    u = ScalarField(value=value, gradient=gradient,
                    laplacian=lambda p: -dim * math.pi ** 2 * value(p))
    f = ScalarField(value=lambda p: dim * math.pi ** 2 * value(p))
    return u, f


# ---------------------------------------------------------------------------
# graded quadrature toward the singular set
# ---------------------------------------------------------------------------

@dataclass
class WeightedNormSpec:
    m: int  # derivative order, 0..2
    a: float  # weight index
    depth: int = 6  # near-singularity subdivision depth
    order: int = 6  # base quadrature order

    def __post_init__(self):
        if self.m not in (0, 1, 2):
            raise ValidationError(f"weighted norm order m={self.m} not in 0..2")


def _subdivide_simplex(pts: np.ndarray):
    """Uniform refinement of one simplex into 4 (2D) or 8 (3D) children."""
    if len(pts) == 3:
        a, b, c = pts
        ab, ac, bc = (a + b) / 2, (a + c) / 2, (b + c) / 2
        return [
            np.array([a, ab, ac]), np.array([ab, b, bc]),
            np.array([ac, bc, c]), np.array([ab, bc, ac]),
        ]
    a, b, c, d = pts
    m = {}
    idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    for i, j in idx:
        m[(i, j)] = (pts[i] + pts[j]) / 2
    out = [
        np.array([a, m[(0, 1)], m[(0, 2)], m[(0, 3)]]),
        np.array([b, m[(0, 1)], m[(1, 2)], m[(1, 3)]]),
        np.array([c, m[(0, 2)], m[(1, 2)], m[(2, 3)]]),
        np.array([d, m[(0, 3)], m[(1, 3)], m[(2, 3)]]),
    ]
    octa = [m[(0, 1)], m[(0, 2)], m[(0, 3)], m[(1, 2)], m[(1, 3)], m[(2, 3)]]
    centre = np.mean(octa, axis=0)
    faces = [
        (m[(0, 1)], m[(0, 2)], m[(0, 3)]), (m[(0, 1)], m[(1, 2)], m[(1, 3)]),
        (m[(0, 2)], m[(1, 2)], m[(2, 3)]), (m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        (m[(0, 1)], m[(0, 2)], m[(1, 2)]), (m[(0, 1)], m[(0, 3)], m[(1, 3)]),
        (m[(0, 2)], m[(0, 3)], m[(2, 3)]), (m[(1, 2)], m[(1, 3)], m[(2, 3)]),
    ]
    out += [np.array([centre, *f]) for f in faces]
    return out


def graded_pieces(cell_pts: np.ndarray, domain: Domain, depth: int, tol: float):
    """Split a cell touching the singular set geometrically toward it.

    Returns a list of sub-simplices; pieces no longer touching the set stop
    subdividing early, touching pieces stop at `depth`.
    """
    pieces = []
    active = [np.asarray(cell_pts, dtype=float)]
    for _ in range(depth):
        nxt = []
        for cp in active:
            for child in _subdivide_simplex(cp):
                if singular_distance(child, domain).min() <= tol:
                    nxt.append(child)
                else:
                    pieces.append(child)
        active = nxt
        if not active:
            break
    pieces.extend(active)
    return pieces


def _simplex_measure(pts: np.ndarray) -> float:
    d = pts.shape[1]
    j = pts[1:] - pts[0]
    return abs(np.linalg.det(j)) / math.factorial(d)


def _integrate_pieces(pieces, qp, qw, integrand):
    total = 0.0
    for cp in pieces:
        jac = cp[1:] - cp[0]
        xq = cp[0][None, :] + qp @ jac
        total += float(np.dot(qw, integrand(xq))) * abs(np.linalg.det(jac))
    return total


def _derivative_terms(u: ScalarField, pts, m: int):
    """List of (|beta|, |d^beta u|^2 summed over multi-indices of that order)."""
    out = [(0, u.value(pts) ** 2)]
    if m >= 1:
        g = u.gradient(pts)
        out.append((1, np.sum(g ** 2, axis=1)))
    if m >= 2:
        h = u.hessian(pts)
        dim = h.shape[1]
        acc = np.zeros(len(pts))
        for i in range(dim):
            for j in range(i, dim):
                acc = acc + h[:, i, j] ** 2
        out.append((2, acc))
    return out


def weighted_norm(u: ScalarField, domain: Domain, mesh: SimplicialMesh,
                  spec: WeightedNormSpec):
    """Babuska-Kondratiev norm ||u||_{K^m_a} by graded per-element quadrature.

    Returns (value, rel_change) where rel_change is the relative difference
    against one extra subdivision depth; lack of stabilization signals that u
    is outside the space (reported, not raised).
    """
    v_deep = _weighted_norm_sq(u, domain, mesh, spec, spec.depth + 1)
    v_base = _weighted_norm_sq(u, domain, mesh, spec, spec.depth)
    value = math.sqrt(v_deep)
    base = math.sqrt(v_base)
    rel = abs(value - base) / value if value > 0 else 0.0
    return value, rel


def _weighted_norm_sq(u, domain, mesh, spec, depth):
    dim = mesh.dim
    qp, qw = quadrature(spec.order, dim)
    tol = TOUCH_TOL_FACTOR * domain.diameter

    def integrand(pts):
        r = singular_distance(pts, domain)
        acc = np.zeros(len(pts))
        for k, term in _derivative_terms(u, pts, spec.m):
            acc = acc + r ** (2.0 * (k - spec.a)) * term
        return acc

    cellpts = mesh.points[mesh.cells]
    touch = np.array([
        singular_distance(cp, domain).min() <= tol for cp in cellpts
    ])
    total = 0.0
    # far cells: single base rule, vectorized per cell via shared reference rule
    far = cellpts[~touch]
    if len(far):
        jac = far[:, 1:, :] - far[:, :1, :]
        det = np.abs(np.linalg.det(jac))
        xq = far[:, None, 0, :] + np.einsum("qd,cde->cqe", qp, jac)
        vals = integrand(xq.reshape(-1, dim)).reshape(len(far), len(qw))
        total += float(np.einsum("cq,q,c->", vals, qw, det))
    for cp in cellpts[touch]:
        pieces = graded_pieces(cp, domain, depth, tol)
        total += _integrate_pieces(pieces, qp, qw, integrand)
    return total


def weighted_norm_sweep(u, domain, mesh, m: int, a: float, depths):
    """Norm values across subdivision depths: rows (depth, value, rel_change)."""
    rows = []
    prev = None
    for depth in depths:
        v = math.sqrt(_weighted_norm_sq(
            u, domain, mesh, WeightedNormSpec(m=m, a=a, depth=depth), depth))
        rel = abs(v - prev) / v if prev is not None else float("nan")
        rows.append((depth, v, rel))
        prev = v
    return rows


# ---------------------------------------------------------------------------
# Hardy-Poincare smallest eigenvalue
# ---------------------------------------------------------------------------

def assemble_hardy_mass(mesh: SimplicialMesh, domain: Domain, m: int = 1,
                        depth: int = 6, order: int = None):
    """Mass matrix with weight r^-2, graded quadrature near the singular set.

    Entries attached to dofs sitting exactly on the singular set are large but
    finite (quadrature nodes are interior); they are eliminated or interpreted
    by the caller.
    """
    order = order if order is not None else 2 * m + 2
    weight = lambda p: singular_distance(p, domain) ** -2.0
    sys = assemble(mesh, m, None, weight=weight, kind="mass", quad_order=order)
    a = sys.matrix.tolil()

    # redo cells touching the singular set with graded subdivision
    tol = TOUCH_TOL_FACTOR * domain.diameter
    basis = reference_basis(m, mesh.dim)
    qp, qw = quadrature(order, mesh.dim)
    cellpts = mesh.points[mesh.cells]
    touch = np.flatnonzero(np.array([
        singular_distance(cp, domain).min() <= tol for cp in cellpts
    ]))
    for ci in touch:
        cp = cellpts[ci]
        dofs = sys.dofmap.cell_dofs[ci]
        jac = cp[1:] - cp[0]
        inv = np.linalg.inv(jac)
        # subtract the plain-rule contribution, add the graded one
        xq = cp[0][None, :] + qp @ jac
        w = qw * abs(np.linalg.det(jac)) * weight(xq)
        phi = basis.eval(qp)
        elem = -np.einsum("q,qb,qe->be", w, phi, phi)
        for cpiece in graded_pieces(cp, domain, depth, tol):
            pj = cpiece[1:] - cpiece[0]
            xq = cpiece[0][None, :] + qp @ pj
            ref = (xq - cp[0][None, :]) @ inv
            phi = basis.eval(ref)
            w = qw * abs(np.linalg.det(pj)) * weight(xq)
            elem += np.einsum("q,qb,qe->be", w, phi, phi)
        a[np.ix_(dofs, dofs)] = a[np.ix_(dofs, dofs)].toarray() + elem
    sys.matrix = a.tocsr()
    return sys


def hardy_min_eigenvalue(mesh: SimplicialMesh, domain: Domain, m: int = 1,
                         depth: int = 6, rtol: float = 1e-8,
                         max_sweeps: int = 200, cg_rtol: float = 1e-10) -> float:
    """Smallest eigenvalue of K v = lambda M_w v on the free (non-Dirichlet) dofs.

    Inverse power iteration with CG inner solves; the start vector is all ones
    on the free dofs, so runs are deterministic.  1/lambda estimates the
    Hardy-Poincare constant; lambda decaying across levels is the adjacent
    Neumann failure mode.
    """
    stiff = assemble(mesh, m, None)
    mass = assemble_hardy_mass(mesh, domain, m=m, depth=depth)
    mask = stiff.dofmap.dirichlet_mask
    if not mask.any():
        raise ValidationError("Hardy estimator requires a nonempty Dirichlet set")
    free = np.flatnonzero(~mask)
    k = stiff.matrix[free][:, free].tocsr()
    mw = mass.matrix[free][:, free].tocsr()

    v = np.ones(len(free))
    lam_prev = None
    for sweep in range(max_sweeps):
        rhs = mw @ v
        w = solve_cg(k, rhs, rtol=cg_rtol)
        denom = float(w @ (mw @ w))
        if denom <= 0:
            raise NumericalError("weighted mass lost positivity")
        v = w / math.sqrt(denom)
        lam = float(v @ (k @ v)) / float(v @ (mw @ v))
        if lam_prev is not None and abs(lam - lam_prev) <= rtol * abs(lam):
            return lam
        lam_prev = lam
    raise NumericalError(
        f"inverse power iteration did not settle in {max_sweeps} sweeps "
        f"(last lambda {lam_prev})"
    )
