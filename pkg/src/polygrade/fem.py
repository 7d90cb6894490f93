"""Continuous Lagrange P1..P3 finite elements on triangles and tetrahedra.

Quadrature is built from collapsed (Duffy) Gauss-Jacobi tensor rules, which
have strictly positive weights and interior nodes at every order.  Assembly is
vectorized over cells in fixed-size chunks; the solver is hand-rolled
Jacobi-preconditioned conjugate gradients so results are deterministic across
scipy versions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .domain import NumericalError, ValidationError

_ASSEMBLY_CHUNK = 200_000


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass
class SimplicialMesh:
    """Conforming triangle or tetrahedron mesh with flagged boundary facets."""

    points: np.ndarray  # (nv, dim)
    cells: np.ndarray  # (nc, dim+1) int
    boundary_facets: np.ndarray  # (nb, dim) int
    dirichlet: np.ndarray  # (nb,) bool
    level: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.boundary_facets = np.asarray(self.boundary_facets, dtype=np.int64)
        self.dirichlet = np.asarray(self.dirichlet, dtype=bool)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def cell_volumes(self) -> np.ndarray:
        x = self.points[self.cells]
        j = x[:, 1:, :] - x[:, :1, :]
        det = np.linalg.det(j)
        return det / math.factorial(self.dim)

    def h_min(self) -> float:
        return float(np.sqrt(self._edge_len2().min()))

    def h_max(self) -> float:
        return float(np.sqrt(self._edge_len2().max()))

    def _edge_len2(self) -> np.ndarray:
        pairs = _local_edges(self.dim)
        a = self.points[self.cells[:, pairs[:, 0]]]
        b = self.points[self.cells[:, pairs[:, 1]]]
        return np.sum((a - b) ** 2, axis=2)


def _local_edges(dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([[0, 1], [0, 2], [1, 2]])
    return np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def unique_edges(cells: np.ndarray, dim: int):
    """Sorted unique vertex-id pairs over all cell edges, plus inverse map."""
    pairs = _local_edges(dim)
    e = cells[:, pairs]  # (nc, ne_local, 2)
    e = np.sort(e.reshape(-1, 2), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    return uniq, inv.reshape(cells.shape[0], len(pairs))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _gauss01(n: int, alpha: int):
    """Gauss-Jacobi nodes/weights on [0,1] for weight (1-u)^alpha."""
    if alpha == 0:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    u = (x + 1.0) / 2.0
    w = w / 2.0 ** (alpha + 1)
    return u, w


def quadrature(order: int, simplex_dim: int):
    """Nodes and weights on the reference simplex, exact to `order`.

    Returns (points (nq, dim), weights (nq,)); weights are positive and sum to
    the reference measure (1/2 for the triangle, 1/6 for the tetrahedron).
    """
    if not (0 <= order <= 10):
        raise ValidationError(f"unsupported quadrature order {order}")
    if simplex_dim not in (2, 3):
        raise ValidationError(f"unsupported simplex dimension {simplex_dim}")
    n = order // 2 + 1
    if simplex_dim == 2:
        xi, wx = _gauss01(n, 1)
        eta, we = _gauss01(n, 0)
        pts = np.empty((n * n, 2))
        wts = np.empty(n * n)
        k = 0
        for i in range(n):
            for j in range(n):
                pts[k] = (xi[i], eta[j] * (1.0 - xi[i]))
                wts[k] = wx[i] * we[j]
                k += 1
        return pts, wts
    xi, wx = _gauss01(n, 2)
    eta, we = _gauss01(n, 1)
    zeta, wz = _gauss01(n, 0)
    pts = np.empty((n ** 3, 3))
    wts = np.empty(n ** 3)
    k = 0
    for i in range(n):
        for j in range(n):
            for l in range(n):
                x = xi[i]
                y = eta[j] * (1.0 - x)
                z = zeta[l] * (1.0 - x) * (1.0 - eta[j])
                pts[k] = (x, y, z)
                wts[k] = wx[i] * we[j] * wz[l]
                k += 1
    return pts, wts


# ---------------------------------------------------------------------------
# reference Lagrange bases
# ---------------------------------------------------------------------------

def _monomials(dim: int, degree: int):
    """All exponent tuples of total degree <= degree."""
    out = []
    if dim == 2:
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                out.append((a, b))
    else:
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                for c in range(degree + 1 - a - b):
                    out.append((a, b, c))
    return out


def _eval_monomials(pts: np.ndarray, expos) -> np.ndarray:
    cols = [np.prod([pts[:, d] ** e[d] for d in range(pts.shape[1])], axis=0)
            for e in expos]
    return np.stack(cols, axis=1)


def _eval_monomial_grads(pts: np.ndarray, expos) -> np.ndarray:
    n, dim = pts.shape
    out = np.zeros((n, len(expos), dim))
    for k, e in enumerate(expos):
        for d in range(dim):
            if e[d] == 0:
                continue
            term = np.full(n, float(e[d]))
            for d2 in range(dim):
                p = e[d2] - 1 if d2 == d else e[d2]
                if p:
                    term = term * pts[:, d2] ** p
            out[:, k, d] = term
    return out


class ReferenceBasis:
    """Lagrange shape functions on equispaced nodes of the reference simplex.

    Nodes are ordered: vertices, then edge nodes (per sorted local vertex pair,
    walking toward the higher vertex), then face nodes (3D), then interior.
    `node_classes` records that structure for the dof map.
    """

    def __init__(self, m: int, dim: int):
        if m not in (1, 2, 3):
            raise ValidationError(f"unsupported polynomial degree m={m}")
        if dim not in (2, 3):
            raise ValidationError(f"unsupported dimension {dim}")
        self.m = m
        self.dim = dim
        self.nodes, self.node_classes = _lagrange_nodes(m, dim)
        self._expos = _monomials(dim, m)
        v = _eval_monomials(self.nodes, self._expos)
        if v.shape[0] != v.shape[1]:
            raise AssertionError("node count must match monomial count")
        self._coeffs = np.linalg.inv(v)  # column k = coefficients of phi_k

    @property
    def n_basis(self) -> int:
        return len(self.nodes)

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """(npts, n_basis) values."""
        return _eval_monomials(np.atleast_2d(pts), self._expos) @ self._coeffs

    def grad(self, pts: np.ndarray) -> np.ndarray:
        """(npts, n_basis, dim) reference gradients."""
        g = _eval_monomial_grads(np.atleast_2d(pts), self._expos)
        return np.einsum("nkd,kb->nbd", g, self._coeffs)

    def hess(self, pts: np.ndarray) -> np.ndarray:
        """(npts, n_basis, dim, dim) reference second derivatives."""
        pts = np.atleast_2d(pts)
        n, dim = pts.shape
        h = np.zeros((n, len(self._expos), dim, dim))
        for k, e in enumerate(self._expos):
            for d1 in range(dim):
                for d2 in range(dim):
                    ee = list(e)
                    coef = ee[d1]
                    if coef == 0:
                        continue
                    ee[d1] -= 1
                    coef *= ee[d2]
                    if coef == 0:
                        continue
                    ee[d2] -= 1
                    term = np.full(n, float(coef))
                    for d3 in range(dim):
                        if ee[d3]:
                            term = term * pts[:, d3] ** ee[d3]
                    h[:, k, d1, d2] = term
        return np.einsum("nkde,kb->nbde", h, self._coeffs)


def _lagrange_nodes(m: int, dim: int):
    nv = dim + 1
    entries = []  # (sort key, reference point, class record)
    for beta in _barycentric_indices(m, nv):
        support = tuple(i for i, b in enumerate(beta) if b > 0)
        point = np.array([beta[i] / m for i in range(1, nv)], dtype=float)
        if len(support) == 1:
            cls = ("v", support[0], 0)
            key = (0, support[0], 0)
        elif len(support) == 2:
            a, b = support
            cls = ("e", (a, b), beta[b])
            key = (1, support, beta[b])
        elif len(support) == 3 and dim == 3:
            cls = ("f", support, tuple(beta[i] for i in support[1:]))
            key = (2, support, tuple(beta))
        else:
            cls = ("c", tuple(beta), 0)
            key = (3, tuple(beta), 0)
        entries.append((key, point, cls))
    entries.sort(key=lambda t: t[0])
    nodes = np.array([e[1] for e in entries])
    classes = [e[2] for e in entries]
    return nodes, classes


def _barycentric_indices(m: int, nv: int):
    if nv == 1:
        yield (m,)
        return
    for head in range(m + 1):
        for tail in _barycentric_indices(m - head, nv - 1):
            yield (head,) + tail


def reference_basis(m: int, dim: int) -> ReferenceBasis:
    return ReferenceBasis(m, dim)


# ---------------------------------------------------------------------------
# degrees of freedom
# ---------------------------------------------------------------------------

@dataclass
class DofMap:
    m: int
    n_dofs: int
    cell_dofs: np.ndarray  # (nc, n_basis) global dof per local node
    coords: np.ndarray  # (n_dofs, dim) Lagrange node coordinates
    dirichlet_mask: np.ndarray  # (n_dofs,) bool


def build_dofmap(mesh: SimplicialMesh, m: int) -> DofMap:
    """Global Lagrange numbering: vertices, then edges, faces, cell interiors.

    Shared nodes receive identical indices from every adjacent cell: edge
    nodes are keyed by the sorted vertex pair with positions counted toward
    the larger vertex id, which fixes orientation for m=3.
    """
    dim = mesh.dim
    basis = reference_basis(m, dim)
    cells = mesh.cells
    nv = len(mesh.points)
    nc = len(cells)

    edge_ids, cell_edge = unique_edges(cells, dim)
    ne = len(edge_ids)
    pairs = _local_edges(dim)
    pair_index = {tuple(p): k for k, p in enumerate(pairs)}

    face_ids = np.zeros((0, 3), dtype=np.int64)
    cell_face = None
    if dim == 3:
        local_faces = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
        f = np.sort(cells[:, local_faces].reshape(-1, 3), axis=1)
        face_ids, finv = np.unique(f, axis=0, return_inverse=True)
        cell_face = finv.reshape(nc, 4)

    per_edge = m - 1
    n_face_nodes = 1 if (m == 3 and dim == 3) else 0
    n_cell_nodes = {2: {1: 0, 2: 0, 3: 1}, 3: {1: 0, 2: 0, 3: 0}}[dim][m]
    base_e = nv
    base_f = base_e + len(edge_ids) * per_edge
    base_c = base_f + len(face_ids) * n_face_nodes
    n_dofs = base_c + nc * n_cell_nodes

    cell_dofs = np.empty((nc, basis.n_basis), dtype=np.int64)
    cell_cursor = np.zeros(nc, dtype=np.int64)
    face_sorted = None
    for k, cls in enumerate(basis.node_classes):
        kind = cls[0]
        if kind == "v":
            cell_dofs[:, k] = cells[:, cls[1]]
        elif kind == "e":
            (a, b), pos = cls[1], cls[2]
            eidx = cell_edge[:, pair_index[(a, b)]]
            ga, gb = cells[:, a], cells[:, b]
            toward_hi = np.where(gb > ga, pos, m - pos)
            cell_dofs[:, k] = base_e + eidx * per_edge + (toward_hi - 1)
        elif kind == "f":
            # single centroid node per face for m=3 in 3D: orientation-free
            support = cls[1]
            if face_sorted is None:
                face_sorted = {}
            tri = np.sort(cells[:, list(support)], axis=1)
            # locate each face in face_ids via the cell_face table
            local_faces = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
            opp = [i for i in range(4) if i not in support][0]
            fidx = cell_face[:, opp]
            cell_dofs[:, k] = base_f + fidx
        else:
            cell_dofs[:, k] = base_c + np.arange(nc) * n_cell_nodes + cell_cursor
            cell_cursor += 1

    coords = np.zeros((n_dofs, dim))
    # map reference nodes through each cell; later writes repeat identical values
    x0 = mesh.points[cells[:, 0]]
    jac = mesh.points[cells[:, 1:]] - x0[:, None, :]
    phys = x0[:, None, :] + np.einsum("nd,cde->cne", basis.nodes, jac)
    coords[cell_dofs.ravel()] = phys.reshape(-1, dim)

    mask = _dirichlet_mask(mesh, m, n_dofs, base_e, per_edge, base_f,
                           n_face_nodes, edge_ids, face_ids)
    return DofMap(m=m, n_dofs=n_dofs, cell_dofs=cell_dofs, coords=coords,
                  dirichlet_mask=mask)


def _dirichlet_mask(mesh, m, n_dofs, base_e, per_edge, base_f, n_face_nodes,
                    edge_ids, face_ids):
    mask = np.zeros(n_dofs, dtype=bool)
    dfacets = mesh.boundary_facets[mesh.dirichlet]
    if len(dfacets) == 0:
        return mask
    mask[np.unique(dfacets)] = True
    if per_edge > 0:
        if mesh.dim == 2:
            bedges = np.sort(dfacets, axis=1)
        else:
            sub = dfacets[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2)
            bedges = np.unique(np.sort(sub, axis=1), axis=0)
        lookup = {tuple(e): i for i, e in enumerate(edge_ids)}
        for e in bedges:
            idx = lookup.get(tuple(e))
            if idx is not None:
                mask[base_e + idx * per_edge: base_e + (idx + 1) * per_edge] = True
    if n_face_nodes and mesh.dim == 3:
        lookup = {tuple(f): i for i, f in enumerate(face_ids)}
        for f in np.sort(dfacets, axis=1):
            idx = lookup.get(tuple(f))
            if idx is not None:
                mask[base_f + idx] = True
    return mask


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass
class ScalarField:
    """Closed-form scalar field: value, gradient, and optional Laplacian/Hessian.

    All callables take (n, dim) arrays; value returns (n,), gradient (n, dim),
    laplacian (n,), hessian (n, dim, dim).
    """

    value: callable
    gradient: callable = None
    laplacian: callable = None
    hessian: callable = None

    def __call__(self, pts):
        return self.value(np.atleast_2d(pts))


def constant_field(c: float, dim: int) -> ScalarField:
    return ScalarField(
        value=lambda p: np.full(len(p), float(c)),
        gradient=lambda p: np.zeros((len(p), dim)),
        laplacian=lambda p: np.zeros(len(p)),
        hessian=lambda p: np.zeros((len(p), dim, dim)),
    )


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_dofs: int
    dofmap: DofMap = None


def _cell_geometry(mesh, cells_slice):
    x = mesh.points[cells_slice]
    x0 = x[:, 0, :]
    jac = x[:, 1:, :] - x0[:, None, :]
    det = np.linalg.det(jac)
    inv = np.linalg.inv(jac)
    return x0, jac, det, inv


def assemble(mesh: SimplicialMesh, m: int, f: ScalarField,
             weight: callable = None, kind: str = "stiffness",
             quad_order: int = None) -> SparseSystem:
    """Assemble the stiffness (or mass) matrix and the load vector.

    kind='stiffness': A_ij = sum_K int_K grad(phi_i).grad(phi_j) [* weight]
    kind='mass':      A_ij = sum_K int_K phi_i phi_j [* weight]
    Load: b_i = sum_K int_K f phi_i, with quadrature order 2m by default.
    """
    dim = mesh.dim
    basis = reference_basis(m, dim)
    order = quad_order if quad_order is not None else 2 * m
    qp, qw = quadrature(order, dim)
    phi = basis.eval(qp)  # (nq, nb)
    gphi = basis.grad(qp)  # (nq, nb, dim)
    dofmap = build_dofmap(mesh, m)

    nb = basis.n_basis
    rows, cols, vals = [], [], []
    b = np.zeros(dofmap.n_dofs)
    nc = len(mesh.cells)
    for start in range(0, nc, _ASSEMBLY_CHUNK):
        cells_slice = mesh.cells[start:start + _ASSEMBLY_CHUNK]
        dslice = dofmap.cell_dofs[start:start + _ASSEMBLY_CHUNK]
        x0, jac, det, inv = _cell_geometry(mesh, cells_slice)
        if np.any(det == 0.0) or np.any(np.abs(det) < 1e-300):
            raise NumericalError(
                f"degenerate cell Jacobian near cell {start + int(np.argmin(np.abs(det)))}"
            )
        adet = np.abs(det)
        xq = x0[:, None, :] + np.einsum("qd,cde->cqe", qp, jac)
        wq = qw[None, :] * adet[:, None]
        if weight is not None:
            wq = wq * weight(xq.reshape(-1, dim)).reshape(xq.shape[:2])
        if kind == "stiffness":
            # physical gradient: G_ref @ J^{-T}
            p = np.einsum("qbd,ced->cqbe", gphi, inv)
            elem = np.einsum("cq,cqbd,cqed->cbe", wq, p, p)
        elif kind == "mass":
            elem = np.einsum("cq,qb,qe->cbe", wq, phi, phi)
        else:
            raise ValidationError(f"unknown assembly kind {kind!r}")
        if f is not None:
            fv = f.value(xq.reshape(-1, dim)).reshape(xq.shape[:2])
            lw = qw[None, :] * adet[:, None]
            belem = np.einsum("cq,cq,qb->cb", lw, fv, phi)
            np.add.at(b, dslice.ravel(), belem.ravel())
        rows.append(np.repeat(dslice, nb, axis=1).ravel())
        cols.append(np.tile(dslice, (1, nb)).ravel())
        vals.append(elem.ravel())
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.n_dofs, dofmap.n_dofs),
    ).tocsr()
    a.sum_duplicates()
    return SparseSystem(matrix=a, rhs=b, n_dofs=dofmap.n_dofs, dofmap=dofmap)


@dataclass
class ReducedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray  # indices of free dofs
    lift: np.ndarray  # full-length vector holding boundary values


def apply_dirichlet(system: SparseSystem, g: ScalarField = None,
                    values: np.ndarray = None) -> ReducedSystem:
    """Eliminate Dirichlet dofs symmetrically; remaining system is SPD."""
    dofmap = system.dofmap
    mask = dofmap.dirichlet_mask
    if not mask.any():
        raise ValidationError("empty Dirichlet set (pure Neumann unsupported)")
    lift = np.zeros(system.n_dofs)
    if values is not None:
        lift[mask] = values[mask]
    elif g is not None:
        lift[mask] = g.value(dofmap.coords[mask])
    free = np.flatnonzero(~mask)
    a = system.matrix
    corr = a @ lift
    aff = a[free][:, free].tocsr()
    bf = system.rhs[free] - corr[free]
    return ReducedSystem(matrix=aff, rhs=bf, free=free, lift=lift)


def expand_solution(reduced: ReducedSystem, x_free: np.ndarray) -> np.ndarray:
    full = reduced.lift.copy()
    full[reduced.free] = x_free
    return full


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def solve_cg(a: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-10,
             max_iter: int = 50_000, x0: np.ndarray = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients, deterministic.

    Stops when ||b - A x|| <= rtol * ||b||; raises NumericalError carrying the
    final relative residual if max_iter is exceeded.  An optional start vector
    (e.g. the interpolant of a known solution) shortens the iteration without
    changing the stopping criterion.
    """
    n = b.shape[0]
    if n == 0:
        return np.zeros(0)
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise NumericalError("system matrix has non-positive diagonal entries")
    dinv = 1.0 / diag
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)
    if x0 is not None:
        x = np.array(x0, dtype=float)
        r = b - a @ x
        if float(np.linalg.norm(r)) <= rtol * bnorm:
            return x
    else:
        x = np.zeros(n)
        r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(max_iter):
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= rtol * bnorm:
            return x
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalError(
        f"CG did not converge in {max_iter} iterations "
        f"(relative residual {rnorm / bnorm:.3e})"
    )


def solve_poisson(mesh: SimplicialMesh, m: int, f: ScalarField,
                  g: ScalarField = None, rtol: float = 1e-10):
    """Full pipeline: assemble, eliminate Dirichlet dofs, CG solve.

    Returns (coefficients over all dofs, dofmap).
    """
    system = assemble(mesh, m, f)
    reduced = apply_dirichlet(system, g=g)
    xf = solve_cg(reduced.matrix, reduced.rhs, rtol=rtol)
    return expand_solution(reduced, xf), system.dofmap


# ---------------------------------------------------------------------------
# interpolation and errors
# ---------------------------------------------------------------------------

def interpolate(u: ScalarField, mesh: SimplicialMesh, m: int,
                dofmap: DofMap = None) -> np.ndarray:
    """Nodal Lagrange interpolant coefficients of u."""
    if dofmap is None:
        dofmap = build_dofmap(mesh, m)
    vals = u.value(dofmap.coords)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericalError(f"non-finite nodal value at dof {bad}")
    return vals


def error_h1(coeffs: np.ndarray, mesh: SimplicialMesh, m: int, u: ScalarField,
             dofmap: DofMap = None, quad_order: int = None):
    """(L2 error, H1 seminorm error) of the FE function against u."""
    dim = mesh.dim
    basis = reference_basis(m, dim)
    order = quad_order if quad_order is not None else 2 * m + 2
    qp, qw = quadrature(order, dim)
    phi = basis.eval(qp)
    gphi = basis.grad(qp)
    if dofmap is None:
        dofmap = build_dofmap(mesh, m)
    l2 = 0.0
    h1 = 0.0
    nc = len(mesh.cells)
    for start in range(0, nc, _ASSEMBLY_CHUNK):
        cells_slice = mesh.cells[start:start + _ASSEMBLY_CHUNK]
        dslice = dofmap.cell_dofs[start:start + _ASSEMBLY_CHUNK]
        x0, jac, det, inv = _cell_geometry(mesh, cells_slice)
        adet = np.abs(det)
        xq = x0[:, None, :] + np.einsum("qd,cde->cqe", qp, jac)
        flat = xq.reshape(-1, dim)
        c = coeffs[dslice]  # (nc, nb)
        uh = np.einsum("cb,qb->cq", c, phi)
        uex = u.value(flat).reshape(uh.shape)
        l2 += float(np.einsum("cq,q,c->", (uh - uex) ** 2, qw, adet))
        p = np.einsum("qbd,ced->cqbe", gphi, inv)
        guh = np.einsum("cb,cqbd->cqd", c, p)
        gex = u.gradient(flat).reshape(guh.shape)
        diff = np.sum((guh - gex) ** 2, axis=2)
        h1 += float(np.einsum("cq,q,c->", diff, qw, adet))
    return math.sqrt(l2), math.sqrt(h1)


def fe_field(coeffs: np.ndarray, mesh: SimplicialMesh, m: int,
             dofmap: DofMap) -> "FEFunction":
    return FEFunction(coeffs, mesh, m, dofmap)


class FEFunction:
    """Piecewise-polynomial function with per-cell evaluation helpers."""

    def __init__(self, coeffs, mesh, m, dofmap):
        self.coeffs = coeffs
        self.mesh = mesh
        self.m = m
        self.dofmap = dofmap
        self.basis = reference_basis(m, mesh.dim)

    def eval_cells(self, cell_idx: np.ndarray, ref_pts: np.ndarray):
        """Values at the same reference points in each listed cell."""
        phi = self.basis.eval(ref_pts)
        c = self.coeffs[self.dofmap.cell_dofs[cell_idx]]
        return np.einsum("cb,qb->cq", c, phi)
