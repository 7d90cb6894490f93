"""Study drivers: refinement sweeps, convergence rates, Hardy tables, exports.

Each command is deterministic given its configuration: fixed iteration orders,
no time-based seeds, and CSV output with repr-faithful floats.  Convergence
CSVs carry exactly the report columns (level, dofs, h_min, L2_error, H1_error,
rate_dofs, rate_level, seconds); least-squares fitted rates are appended as
`#` comment lines and interpolation errors go to a companion `*_interp.csv`.
"""

from __future__ import annotations

import configparser
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    Domain,
    GradingSpec,
    NumericalError,
    ValidationError,
    corner_exponent,
    load_domain,
)
from .fem import (
    FEFunction,
    ScalarField,
    SimplicialMesh,
    build_dofmap,
    error_h1,
    interpolate,
    solve_poisson,
)
from .fixtures import builtin_domain
from .mesh_io import (
    decomposition_from_text,
    decomposition_to_text,
    mesh_to_plain,
    mesh_to_vtk,
    plain_to_simplicial,
)
from .refine2d import check_mesh2, initial_mesh2, refine_mesh2
from .refine3d import check_conformity, refine_decomposition, tetrahedralize
from .weighted import (
    pure_corner_problem,
    pure_wedge_problem,
    hardy_min_eigenvalue,
    manufactured_problem,
    smooth_sine_problem,
    wedge_problem,
    weighted_norm_sweep,
    singular_field,
    CornerSingularFunction,
)


@dataclass
class StudyConfig:
    builtin: str = ""
    domain_path: str = ""
    decomposition_path: str = ""
    degree: int = 1
    a: float = 0.5
    kappa: float | None = None
    levels: int = 4
    rtol: float = 1e-9
    out: str = "out"
    problem: str = "auto"  # corner | edge | smooth | reference | auto
    r1: float = 0.3
    r2: float = 0.9
    norm_m: int = 2
    norm_a: float = 1.5
    depths: tuple = (2, 3, 4, 5, 6)
    neumann: tuple = ()
    hardy_rtol: float = 1e-6

    def __post_init__(self):
        if self.levels < 2:
            raise ValidationError("levels must be >= 2 (rates need differences)")

    def grading(self) -> GradingSpec:
        return GradingSpec(m=self.degree, a=self.a, kappa=self.kappa)


def load_config(path: str, overrides: dict = None) -> StudyConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    sec = parser["study"] if parser.has_section("study") else parser["DEFAULT"]
    kwargs = {}
    for key in ("builtin", "out", "problem"):
        if sec.get(key):
            kwargs[key] = sec.get(key)
    if sec.get("domain"):
        kwargs["domain_path"] = sec.get("domain")
    if sec.get("decomposition"):
        kwargs["decomposition_path"] = sec.get("decomposition")
    for key, cast in (("degree", int), ("levels", int), ("norm_m", int)):
        if sec.get(key):
            kwargs[key] = cast(sec.get(key))
    for key in ("a", "kappa", "rtol", "r1", "r2", "norm_a", "hardy_rtol"):
        if sec.get(key):
            kwargs[key] = float(sec.get(key))
    if sec.get("depths"):
        kwargs["depths"] = tuple(int(t) for t in sec.get("depths").split(","))
    if sec.get("neumann"):
        kwargs["neumann"] = tuple(int(t) for t in sec.get("neumann").split(","))
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig(**kwargs)


def resolve_domain(config: StudyConfig):
    """(domain, boxcomplex-or-None) from builtin name or spec file."""
    if config.builtin:
        if config.builtin == "square2d" and config.neumann:
            from .fixtures import square2d

            return square2d(config.neumann), None
        return builtin_domain(config.builtin)
    if config.domain_path:
        with open(config.domain_path) as fh:
            return load_domain(fh.read()), None
    raise ValidationError("config needs `builtin` or `domain`")


# ---------------------------------------------------------------------------
# level generation
# ---------------------------------------------------------------------------

def generate_levels(config: StudyConfig):
    """Yield (level, mesh, extra) for level = 0..levels.

    2D: extra is the Mesh2; 3D: extra is the Decomposition T'_n and mesh is
    the tetrahedralized T_n.
    """
    domain, box = resolve_domain(config)
    grading = config.grading()
    if domain.dimension == 2:
        m2 = initial_mesh2(domain)
        yield 0, m2.to_simplicial(), m2, domain
        for lvl in range(1, config.levels + 1):
            m2 = refine_mesh2(m2, grading, domain)
            yield lvl, m2.to_simplicial(), m2, domain
        return
    if config.decomposition_path:
        with open(config.decomposition_path) as fh:
            d = decomposition_from_text(fh.read(), domain)
    elif box is not None:
        d = box.initial_decomposition()
    else:
        raise ValidationError("3D study needs a builtin fixture or decomposition")
    yield 0, tetrahedralize(d), d, domain
    for lvl in range(1, config.levels + 1):
        d = refine_decomposition(d, grading)
        yield lvl, tetrahedralize(d), d, domain


# ---------------------------------------------------------------------------
# manufactured problems per domain
# ---------------------------------------------------------------------------

def _corner_frame(domain: Domain, vid: int):
    """(leg angle, orientation) for the singular function at polygon vertex vid."""
    from .domain import _boundary_loop

    loop = _boundary_loop(domain.boundary_facets, len(domain.vertices))
    p = domain.vertices[loop]
    q = domain.vertices[np.roll(loop, -1)]
    if np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]) < 0:
        loop = loop[::-1]
    k = int(np.flatnonzero(loop == vid)[0])
    w = domain.vertices[loop[(k + 1) % len(loop)]]
    v = domain.vertices[vid]
    return math.atan2(w[1] - v[1], w[0] - v[0]), +1


def study_problem(config: StudyConfig, domain: Domain):
    """(u, f, kind): exact solution and load for the configured study."""
    kind = config.problem
    if kind == "auto":
        if domain.dimension == 2:
            openings = domain.corner_openings
            kind = "corner" if any(a > math.pi + 1e-9 for a in openings.values()) \
                else "smooth"
        else:
            edge_open = [domain.corner_openings[e] for e in domain.singular_edges]
            kind = "edge" if any(a > math.pi + 1e-9 for a in edge_open) else "smooth"
            if config.builtin == "fichera3d":
                kind = "reference"
    if kind == "smooth":
        u, f = smooth_sine_problem(domain.dimension)
        return u, f, kind
    if kind in ("corner", "corner_cutoff"):
        vid, alpha = max(
            ((v, a) for v, a in domain.corner_openings.items()
             if isinstance(v, (int, np.integer))),
            key=lambda t: t[1],
        )
        leg, orient = _corner_frame(domain, int(vid))
        corner = tuple(domain.vertices[int(vid)])
        if kind == "corner":
            # exactly-known harmonic singular solution, imposed by its trace
            u, f, _ = pure_corner_problem(corner, alpha, leg_angle=leg,
                                          orientation=orient)
        else:
            u, f, _ = manufactured_problem(corner, alpha, config.r1, config.r2,
                                           leg_angle=leg, orientation=orient)
        return u, f, kind
    if kind in ("edge", "edge_cutoff"):
        edge, alpha = max(
            ((e, a) for e, a in domain.corner_openings.items()
             if isinstance(e, tuple)),
            key=lambda t: t[1],
        )
        if kind == "edge":
            u, f, _ = pure_wedge_problem(alpha)
        else:
            u, f, _ = wedge_problem(alpha, config.r1, config.r2)
        return u, f, kind
    if kind == "reference":
        return None, None, kind
    raise ValidationError(f"unknown problem kind {config.problem!r}")


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    rows: list  # dicts: level, dofs, h_min, L2_error, H1_error, rate_dofs,
    #             rate_level, seconds
    interp_rows: list  # dicts: level, dofs, interp_H1, ratio
    fit_rate_dofs: float
    fit_rate_level: float
    galerkin_ok: bool
    kind: str

    COLUMNS = ("level", "dofs", "h_min", "L2_error", "H1_error",
               "rate_dofs", "rate_level", "seconds")

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            lines.append(",".join(_csv_cell(r.get(c)) for c in self.COLUMNS))
        lines.append(f"# fit_rate_H1_dofs = {_csv_cell(self.fit_rate_dofs)}")
        lines.append(f"# fit_rate_H1_level = {_csv_cell(self.fit_rate_level)}")
        lines.append(f"# galerkin_orthogonality_ok = {self.galerkin_ok}")
        lines.append(f"# problem = {self.kind}")
        return "\n".join(lines) + "\n"

    def interp_csv(self) -> str:
        lines = ["level,dofs,interp_H1,ratio"]
        for r in self.interp_rows:
            lines.append(",".join(_csv_cell(r.get(c))
                                  for c in ("level", "dofs", "interp_H1", "ratio")))
        return "\n".join(lines) + "\n"


def _csv_cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def fit_rate(dofs, errors, window: int = 3) -> float:
    """Least-squares slope of log(error) against log(dofs), last `window` rows."""
    d = np.log(np.asarray(dofs[-window:], dtype=float))
    e = np.log(np.asarray(errors[-window:], dtype=float))
    if len(d) < 2:
        return float("nan")
    slope = np.polyfit(d, e, 1)[0]
    return float(-slope)


def cmd_convergence(config: StudyConfig, skip_levels: int = 2) -> ConvergenceReport:
    """Interpolation + Galerkin errors and observed rates per level.

    Levels below `skip_levels` are generated (the sequence is inductive) but
    not solved.  With an exact solution, errors are exact-vs-FE; the fichera
    fixture falls back to errors against the finest-level solution, excluding
    the three finest levels from rate fits.
    """
    domain, _ = resolve_domain(config)
    u, f, kind = study_problem(config, domain)
    if kind == "reference":
        return _reference_convergence(config)
    m = config.degree
    rows, irows = [], []
    galerkin_ok = True
    prev = None
    for lvl, mesh, _extra, dom in generate_levels(config):
        if lvl < skip_levels:
            continue
        t0 = time.time()
        coeffs, dofmap = solve_poisson(mesh, m, f, g=u, rtol=config.rtol)
        l2, h1 = error_h1(coeffs, mesh, m, u, dofmap)
        ui = interpolate(u, mesh, m, dofmap)
        _, h1i = error_h1(ui, mesh, m, u, dofmap)
        if h1 > h1i * (1.0 + 1e-8) + 1e-14:
            galerkin_ok = False
        secs = time.time() - t0
        row = {
            "level": lvl, "dofs": dofmap.n_dofs, "h_min": mesh.h_min(),
            "L2_error": l2, "H1_error": h1, "rate_dofs": None,
            "rate_level": None, "seconds": secs,
        }
        irow = {"level": lvl, "dofs": dofmap.n_dofs, "interp_H1": h1i,
                "ratio": None}
        if prev is not None:
            row["rate_dofs"] = (math.log(prev["H1_error"] / h1)
                                / math.log(dofmap.n_dofs / prev["dofs"]))
            row["rate_level"] = math.log2(prev["H1_error"] / h1)
            irow["ratio"] = h1i / prev["interp_H1"]
        rows.append(row)
        irows.append(irow)
        prev = {"H1_error": h1, "dofs": dofmap.n_dofs, "interp_H1": h1i}
    dofs = [r["dofs"] for r in rows]
    errs = [r["H1_error"] for r in rows]
    lvls = [float(r["level"]) for r in rows]
    fit_d = fit_rate(dofs, errs)
    fit_l = fit_rate([2.0 ** l for l in lvls], errs)
    return ConvergenceReport(rows=rows, interp_rows=irows, fit_rate_dofs=fit_d,
                             fit_rate_level=fit_l, galerkin_ok=galerkin_ok,
                             kind=kind)


def _reference_convergence(config: StudyConfig) -> ConvergenceReport:
    """Errors against the finest-level FE solution (no exact solution)."""
    m = config.degree
    levels = list(generate_levels(config))
    _, fine_mesh, _, domain = levels[-1]
    f = ScalarField(value=lambda p: np.ones(len(p)))
    zero = ScalarField(value=lambda p: np.zeros(len(p)),
                       gradient=lambda p: np.zeros((len(p), domain.dimension)))
    t0 = time.time()
    fine_coeffs, fine_dofmap = solve_poisson(fine_mesh, m, f, g=zero,
                                             rtol=config.rtol)
    fine_secs = time.time() - t0
    fine_fn = FEFunction(fine_coeffs, fine_mesh, m, fine_dofmap)
    locator = _CellLocator(fine_mesh)
    rows = []
    prev = None
    for lvl, mesh, _extra, _dom in levels[:-1]:
        t0 = time.time()
        coeffs, dofmap = solve_poisson(mesh, m, f, g=zero, rtol=config.rtol)
        coarse_fn = FEFunction(coeffs, mesh, m, dofmap)
        l2, h1 = _fe_difference(coarse_fn, fine_fn, locator)
        secs = time.time() - t0
        row = {
            "level": lvl, "dofs": dofmap.n_dofs, "h_min": mesh.h_min(),
            "L2_error": l2, "H1_error": h1, "rate_dofs": None,
            "rate_level": None, "seconds": secs,
        }
        if prev is not None and h1 > 0:
            row["rate_dofs"] = (math.log(prev["H1_error"] / h1)
                                / math.log(dofmap.n_dofs / prev["dofs"]))
            row["rate_level"] = math.log2(prev["H1_error"] / h1)
        rows.append(row)
        prev = {"H1_error": h1, "dofs": dofmap.n_dofs}
    rows.append({
        "level": levels[-1][0], "dofs": fine_dofmap.n_dofs,
        "h_min": fine_mesh.h_min(), "L2_error": 0.0, "H1_error": 0.0,
        "rate_dofs": None, "rate_level": None, "seconds": fine_secs,
    })
    # the three finest levels are excluded from fits
    fit_rows = rows[:-3]
    if len(fit_rows) >= 2:
        fit_d = fit_rate([r["dofs"] for r in fit_rows],
                         [r["H1_error"] for r in fit_rows],
                         window=min(3, len(fit_rows)))
    else:
        fit_d = float("nan")
    return ConvergenceReport(rows=rows, interp_rows=[], fit_rate_dofs=fit_d,
                             fit_rate_level=float("nan"), galerkin_ok=True,
                             kind="reference")


class _CellLocator:
    """Uniform-grid point location over a simplicial mesh."""

    def __init__(self, mesh: SimplicialMesh, cells_per_axis: int = 32):
        self.mesh = mesh
        pts = mesh.points
        self.lo = pts.min(axis=0)
        self.hi = pts.max(axis=0)
        self.n = cells_per_axis
        self.buckets = {}
        cellpts = pts[mesh.cells]
        cl = self._key_arr(cellpts.min(axis=1))
        ch = self._key_arr(cellpts.max(axis=1))
        for c in range(len(mesh.cells)):
            for key in np.ndindex(*(ch[c] - cl[c] + 1)):
                self.buckets.setdefault(tuple(cl[c] + np.array(key)), []).append(c)
        self.x0 = cellpts[:, 0, :]
        self.jac_inv = np.linalg.inv(
            cellpts[:, 1:, :] - cellpts[:, :1, :])

    def _key_arr(self, pts):
        scale = (self.hi - self.lo)
        scale[scale == 0] = 1.0
        k = ((pts - self.lo) / scale * (self.n - 1e-12)).astype(int)
        return np.clip(k, 0, self.n - 1)

    def locate(self, pts: np.ndarray) -> np.ndarray:
        """Cell index containing each point (tolerant barycentric test)."""
        out = np.full(len(pts), -1, dtype=np.int64)
        keys = self._key_arr(pts)
        for i, (p, key) in enumerate(zip(pts, keys)):
            for c in self.buckets.get(tuple(key), ()):
                ref = (p - self.x0[c]) @ self.jac_inv[c]
                if np.all(ref >= -1e-9) and ref.sum() <= 1.0 + 1e-9:
                    out[i] = c
                    break
        return out


def _fe_difference(coarse: FEFunction, fine: FEFunction, locator: _CellLocator):
    """L2/H1 norms of (coarse - fine) over the coarse mesh's quadrature."""
    from .fem import quadrature, reference_basis, _cell_geometry

    mesh = coarse.mesh
    m = coarse.m
    qp, qw = quadrature(2 * m + 2, mesh.dim)
    basis = reference_basis(m, mesh.dim)
    phi = basis.eval(qp)
    gphi = basis.grad(qp)
    l2 = h1 = 0.0
    chunk = 20_000
    for start in range(0, len(mesh.cells), chunk):
        cells = mesh.cells[start:start + chunk]
        dofs = coarse.dofmap.cell_dofs[start:start + chunk]
        x0, jac, det, inv = _cell_geometry(mesh, cells)
        adet = np.abs(det)
        xq = x0[:, None, :] + np.einsum("qd,cde->cqe", qp, jac)
        flat = xq.reshape(-1, mesh.dim)
        c = coarse.coeffs[dofs]
        uh = np.einsum("cb,qb->cq", c, phi).ravel()
        p = np.einsum("qbd,ced->cqbe", gphi, inv)
        guh = np.einsum("cb,cqbd->cqd", c, p).reshape(-1, mesh.dim)
        uf, guf = _fe_eval(fine, locator, flat)
        w = (qw[None, :] * adet[:, None]).ravel()
        l2 += float(np.sum(w * (uh - uf) ** 2))
        h1 += float(np.sum(w * np.sum((guh - guf) ** 2, axis=1)))
    return math.sqrt(l2), math.sqrt(h1)


def _fe_eval(fn: FEFunction, locator: _CellLocator, pts: np.ndarray):
    cells = locator.locate(pts)
    if np.any(cells < 0):
        raise NumericalError(
            f"{int(np.sum(cells < 0))} points not located in the fine mesh"
        )
    mesh = fn.mesh
    x0 = mesh.points[mesh.cells[cells, 0]]
    jac = mesh.points[mesh.cells[cells, 1:]] - x0[:, None, :]
    inv = np.linalg.inv(jac)
    ref = np.einsum("nd,nde->ne", pts - x0, inv)
    vals = np.empty(len(pts))
    grads = np.empty((len(pts), mesh.dim))
    # group by cell to reuse basis evaluations cheaply
    order = np.argsort(cells, kind="stable")
    basis = fn.basis
    i = 0
    while i < len(order):
        j = i
        c = cells[order[i]]
        while j < len(order) and cells[order[j]] == c:
            j += 1
        idx = order[i:j]
        phi = basis.eval(ref[idx])
        gphi = basis.grad(ref[idx])
        dofs = fn.dofmap.cell_dofs[c]
        coeff = fn.coeffs[dofs]
        vals[idx] = phi @ coeff
        g = np.einsum("qbd,ed->qbe", gphi, inv[idx[0]])
        grads[idx] = np.einsum("b,qbe->qe", coeff, g)
        i = j
    return vals, grads


# ---------------------------------------------------------------------------
# other commands
# ---------------------------------------------------------------------------

def cmd_refine(config: StudyConfig, out_dir: str = None) -> list:
    """Write T'_n and T_n per level with conformity reports; returns paths."""
    out = out_dir or config.out
    os.makedirs(out, exist_ok=True)
    written = []
    reports = []
    for lvl, mesh, extra, domain in generate_levels(config):
        if domain.dimension == 2:
            rep = check_mesh2(extra, domain)
            ok = rep["conforming"]
            rep_text = f"level {lvl}: conforming={ok} " + repr(rep)
        else:
            drep = check_conformity(extra)
            dec_path = os.path.join(out, f"Tprime_{lvl}.txt")
            with open(dec_path, "w") as fh:
                fh.write(decomposition_to_text(extra))
            written.append(dec_path)
            vtk_path = os.path.join(out, f"Tprime_{lvl}.vtk")
            with open(vtk_path, "w") as fh:
                fh.write(mesh_to_vtk(extra, title=f"Tprime level {lvl}"))
            written.append(vtk_path)
            ok = drep.ok
            rep_text = f"level {lvl} T': " + str(drep)
        mesh_path = os.path.join(out, f"T_{lvl}.txt")
        with open(mesh_path, "w") as fh:
            fh.write(mesh_to_plain(mesh))
        written.append(mesh_path)
        vtk_path = os.path.join(out, f"T_{lvl}.vtk")
        with open(vtk_path, "w") as fh:
            fh.write(mesh_to_vtk(mesh, title=f"T level {lvl}"))
        written.append(vtk_path)
        if not ok:
            raise ValidationError(f"level {lvl}: refinement not conforming:\n{rep_text}")
        reports.append(rep_text)
    rep_path = os.path.join(out, "conformity.txt")
    with open(rep_path, "w") as fh:
        fh.write("\n".join(reports) + "\n")
    written.append(rep_path)
    return written


def cmd_hardy(config: StudyConfig):
    """(rows, verdict): lambda_min per level and STABLE-POSITIVE | DECAYING."""
    rows = []
    for lvl, mesh, _extra, domain in generate_levels(config):
        if lvl < 1:
            continue
        lam = hardy_min_eigenvalue(mesh, domain, m=config.degree,
                                   rtol=config.hardy_rtol)
        dofs = build_dofmap(mesh, config.degree).n_dofs
        rows.append({"level": lvl, "dofs": dofs, "lambda_min": lam})
    lams = [r["lambda_min"] for r in rows]
    rel = abs(lams[-1] - lams[-2]) / lams[-1]
    verdict = "STABLE-POSITIVE" if rel < 0.05 else "DECAYING"
    return rows, verdict


def hardy_csv(rows, verdict) -> str:
    lines = ["level,dofs,lambda_min"]
    for r in rows:
        lines.append(",".join(_csv_cell(r[c]) for c in ("level", "dofs", "lambda_min")))
    lines.append(f"# verdict = {verdict}")
    return "\n".join(lines) + "\n"


def cmd_norms(config: StudyConfig):
    """Weighted-norm quadrature sweep rows for the domain's singular solution.

    Uses the cut-off singular field (K-norm membership is local at the corner
    and the sweep needs second derivatives in closed/differencable form).
    """
    domain, _ = resolve_domain(config)
    cutoff_config = StudyConfig(**{**config.__dict__, "problem": "corner_cutoff"})
    u, _f, kind = study_problem(cutoff_config, domain)
    if kind == "smooth":
        raise ValidationError("norms sweep needs a singular manufactured solution")
    grading = config.grading()
    if domain.dimension == 2:
        m2 = initial_mesh2(domain)
        for _ in range(min(config.levels, 3)):
            m2 = refine_mesh2(m2, grading, domain)
        mesh = m2.to_simplicial()
    else:
        raise ValidationError("norms sweep is a 2D diagnostic")
    return weighted_norm_sweep(u, domain, mesh, m=config.norm_m,
                               a=config.norm_a, depths=config.depths)


def norms_csv(rows) -> str:
    lines = ["depth,norm_value,rel_change"]
    for depth, value, rel in rows:
        lines.append(",".join((_csv_cell(depth), _csv_cell(value), _csv_cell(rel))))
    return "\n".join(lines) + "\n"


def cmd_export(mesh_path: str, out_path: str, fmt: str) -> str:
    with open(mesh_path) as fh:
        mesh = plain_to_simplicial(fh.read())
    if fmt == "vtk":
        text = mesh_to_vtk(mesh)
    elif fmt == "plain":
        text = mesh_to_plain(mesh)
    else:
        raise ValidationError(f"unknown export format {fmt!r}")
    with open(out_path, "w") as fh:
        fh.write(text)
    return out_path
