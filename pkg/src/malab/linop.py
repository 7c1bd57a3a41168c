"""Cofactor fields and the divergence-form operator -d_i(Phi^ij d_j .).

The cofactor of the Hessian is divergence-free row by row, so the
nondivergence operator -Phi^ij d_ij coincides with the flux form
-d_i(Phi^ij d_j .); the assembly here discretizes the flux form.  The
coefficient matrix is split over four lattice directions,

    Phi = a e1 e1^T + b e2 e2^T + (c/2) d+ d+^T - (c/2) d- d-^T,

with d+ = (1,1), d- = (1,-1): axis faces carry the diagonal entries and the
cross entry is split evenly between the two mixed-difference orientations.
Face coefficients are arithmetic averages of the nodal values, which makes
the assembled matrix symmetric exactly.  Boundary-crossing axis faces carry
the Dirichlet data into a lifting vector; boundary-crossing diagonal faces
are dropped (their energy has no sign, and the axis cut faces already carry
the data).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateFieldError
from .grid import (AXIS_DIRS, DIAG_DIRS, Grid, ScalarField, SymmetricMatrixField,
                   VectorField, gradient)
from .linalg import Factorization, pcg

_FAMILIES = AXIS_DIRS + DIAG_DIRS


def cofactor(hess: SymmetricMatrixField) -> SymmetricMatrixField:
    """2D cofactor: [[m22, -m12], [-m12, m11]]."""
    return SymmetricMatrixField(hess.grid, hess.m22.copy(), -hess.m12, hess.m11.copy())


def _gamma_fields(cof: SymmetricMatrixField) -> dict:
    return {
        (1, 0): cof.m11,
        (0, 1): cof.m22,
        (1, 1): 0.5 * cof.m12,
        (1, -1): -0.5 * cof.m12,
    }


class DivergenceFormOperator:
    """Sparse symmetric PSD discretization with Dirichlet lifting.

    ``matrix`` is in pointwise convention: applying it to nodal values
    approximates -d_i(Phi^ij d_j u) at the nodes (for Phi = I it is the
    five-point Laplacian scaled by 1/h^2).  The bilinear form
    a(u, v) = h^2 u^T matrix v plus cut-face terms equals the face-flux
    quadrature of the Dirichlet energy integral.
    """

    def __init__(self, grid: Grid, matrix, faces, cuts):
        self.grid = grid
        self.matrix = matrix
        self.faces = faces      # family dir -> (i, j, gamma_bar)
        self.cuts = cuts        # signed axis dir -> (i, gamma/theta, points)
        self._factor = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def factorize(self) -> "DivergenceFormOperator":
        if self._factor is None:
            self._factor = Factorization(self.matrix)
        return self

    def lifting(self, g) -> np.ndarray:
        """RHS carrying Dirichlet data g (callable on x, y) through cut faces."""
        b = np.zeros(self.n)
        h2 = self.grid.h ** 2
        for d, (rows, w, pts) in self.cuts.items():
            if rows.size:
                np.add.at(b, rows, w * np.asarray(g(pts[:, 0], pts[:, 1]), float) / h2)
        return b

    def load_energy(self, F: VectorField) -> np.ndarray:
        """Energy-convention load l(v) = integral F . grad v by face quadrature."""
        b = np.zeros(self.n)
        h = self.grid.h
        for axis, d in enumerate(AXIS_DIRS):
            comp = F.f1 if axis == 0 else F.f2
            i, j, _ = self.faces[d]
            fbar = 0.5 * (comp[i] + comp[j])
            np.add.at(b, j, h * fbar)
            np.add.at(b, i, -h * fbar)
            for sgn in (1, -1):
                sd = (sgn * d[0], sgn * d[1])
                rows, _, _ = self.cuts[sd]
                if rows.size:
                    np.add.at(b, rows, -sgn * h * comp[rows])
        return b

    def load(self, F: VectorField) -> np.ndarray:
        """Pointwise-convention load for the div F right-hand side."""
        return self.load_energy(F) / self.grid.h ** 2

    def solve(self, b: np.ndarray, rtol: float = 1e-10, method: str = "auto"):
        """Solve matrix . x = b; returns (x, info)."""
        if method == "auto":
            method = "factor" if self._factor is not None else "pcg"
        if method == "factor":
            x = self.factorize()._factor.solve(b)
            res = np.linalg.norm(self.matrix @ x - b)
            scale = np.linalg.norm(b)
            return x, {"residual": res / scale if scale else res, "flag": "ok",
                       "iterations": 0}
        x, info = pcg(self.matrix, b, rtol=rtol)
        return x, info

    def solve_many(self, B: np.ndarray) -> np.ndarray:
        """Columns of B solved against the factorized matrix."""
        self.factorize()
        return self._factor._lu.solve(np.asarray(B, float))

    def bilinear(self, u: np.ndarray, v: np.ndarray, u_cut=0.0, v_cut=0.0) -> float:
        """Face-flux quadrature of integral Phi grad u . grad v.

        ``u_cut``/``v_cut`` are the Dirichlet values at the axis cut faces
        (scalar, or per-cut arrays keyed like ``cuts``).
        """
        total = 0.0
        for d, (i, j, gbar) in self.faces.items():
            total += float(np.sum(gbar * (u[j] - u[i]) * (v[j] - v[i])))
        for sd, (rows, w, _) in self.cuts.items():
            if rows.size == 0:
                continue
            ub = u_cut[sd] if isinstance(u_cut, dict) else u_cut
            vb = v_cut[sd] if isinstance(v_cut, dict) else v_cut
            # w = gamma/theta already includes the shortened-arm weight
            total += float(np.sum(w * (ub - u[rows]) * (vb - v[rows])))
        return total

    def apply_pointwise(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u


def assemble(cof: SymmetricMatrixField, grid: Grid, psd_tol: float = 1e-9) -> DivergenceFormOperator:
    """Flux-form assembly of -d_i(Phi^ij d_j .) from a nodal cofactor field.

    Rejects a field whose smallest pointwise eigenvalue dips below -psd_tol
    relative to the field scale (signals a non-convex potential upstream).
    """
    scale = float(np.abs(cof.m11).max() + np.abs(cof.m22).max()) + 1e-300
    lam_min = cof.eig_min()
    worst = int(np.argmin(lam_min))
    if lam_min[worst] < -psd_tol * scale:
        raise DegenerateFieldError(
            f"cofactor field has eigenvalue {lam_min[worst]:.3e} at node {worst} "
            f"(x={grid.xy[worst, 0]:.4f}, y={grid.xy[worst, 1]:.4f})", node=worst)

    gammas = _gamma_fields(cof)
    n = grid.n_nodes
    h2 = grid.h ** 2
    rows, cols, vals = [], [], []
    faces, cuts = {}, {}

    for d in _FAMILIES:
        t = grid.arm(d)
        full = ~t.cut
        i = np.nonzero(full)[0]
        j = t.neighbor[i]
        gbar = 0.5 * (gammas[d][i] + gammas[d][j])
        faces[d] = (i, j, gbar)
        rows.extend([i, j, i, j])
        cols.extend([i, j, j, i])
        vals.extend([gbar, gbar, -gbar, -gbar])

    for d in AXIS_DIRS:
        for sgn in (1, -1):
            sd = (sgn * d[0], sgn * d[1])
            t = grid.arm(sd)
            i = np.nonzero(t.cut)[0]
            w = gammas[d][i] / t.theta[i]
            cuts[sd] = (i, w, t.point[i])
            rows.append(i)
            cols.append(i)
            vals.append(w)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals) / h2
    # each unordered node pair is touched by exactly one face, and its two
    # ordered entries receive the same value: the matrix is symmetric bit for bit
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return DivergenceFormOperator(grid, matrix, faces, cuts)


def divergence_free_residual(cof: SymmetricMatrixField) -> float:
    """Max central-difference divergence of the cofactor columns.

    Vanishes identically for constant fields and at second order in h for
    cofactors of smooth potentials; a large value flags an inconsistent field.
    """
    g = cof.grid
    h = g.h
    ax_p, ax_n = g.arm((1, 0)), g.arm((-1, 0))
    ay_p, ay_n = g.arm((0, 1)), g.arm((0, -1))
    ok = ~(ax_p.cut | ax_n.cut | ay_p.cut | ay_n.cut)
    worst = 0.0
    for col in ((cof.m11, cof.m12), (cof.m12, cof.m22)):
        cx, cy = col
        div = (cx[ax_p.neighbor[ok]] - cx[ax_n.neighbor[ok]]
               + cy[ay_p.neighbor[ok]] - cy[ay_n.neighbor[ok]]) / (2.0 * h)
        if div.size:
            worst = max(worst, float(np.abs(div).max()))
    return worst


def energy_lower_bound_check(cof: SymmetricMatrixField, hess: SymmetricMatrixField,
                             v: ScalarField, grad_tol: float = 1e-10) -> float:
    """Worst-node ratio of Phi grad v . grad v against det(D2 phi)|grad v|^2 / Lap(phi).

    The bound is a Cauchy-Schwarz fact for SPD 2x2 matrices, so the returned
    minimum must be >= 1 up to roundoff.
    """
    gx, gy = gradient(v)
    quad = cof.m11 * gx ** 2 + 2.0 * cof.m12 * gx * gy + cof.m22 * gy ** 2
    det = hess.det()
    lap = hess.trace()
    g2 = gx ** 2 + gy ** 2
    sel = v.grid.interior & (g2 > grad_tol) & (lap > 0) & (det > 0)
    if not sel.any():
        return np.inf
    ratio = quad[sel] * lap[sel] / (det[sel] * g2[sel])
    return float(ratio.min())


def export_operator(op: DivergenceFormOperator, buf) -> None:
    """Coordinate-format text export: `row col value` triplets, 0-indexed."""
    own = isinstance(buf, (str, bytes))
    fh = open(buf, "w") if own else buf
    try:
        fh.write(f"# n={op.n} h={op.grid.h:.12g}\n")
        coo = op.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for r, c, x in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {x:.12g}\n")
    finally:
        if own:
            fh.close()
