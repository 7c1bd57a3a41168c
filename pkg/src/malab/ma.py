"""Monotone wide-stencil Monge-Ampere solver and discrete Hessian utilities.

The discrete determinant is the minimum over orthogonal lattice direction
pairs of products of positive-part directional second differences (eight
directions: axes, diagonals, and the four knight moves), which selects the
convex solution.  Because that operator carries an O(1) directional
resolution error on anisotropic Hessians, the default solve adds a filtered
correction toward the centered-difference determinant: within a band around
the monotone value the residual follows the accurate operator, outside it
falls back to the monotone one.  Quadratic data is reproduced exactly by
both operators.

Directional second differences use unequal-arm (Shortley-Weller) formulas at
boundary-crossing arms, with Dirichlet data evaluated at the crossing points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PinchingError, SolverError
from .grid import (DIAG_DIRS, WIDE_DIRS, Grid, ScalarField, SymmetricMatrixField,
                   field_from_callable)
from . import linop

# orthogonal pairs as indices into WIDE_DIRS; second differences are even in
# the direction sign so (2,1) pairs with (1,-2) ~ (-1,2)
_PAIRS = ((0, 1), (2, 3), (4, 7), (5, 6))


@dataclass(frozen=True)
class PinchingBounds:
    """Two-sided bounds on the Monge-Ampere measure."""

    lam: float
    Lam: float

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam):
            raise PinchingError(f"need 0 < lambda <= Lambda, got ({self.lam}, {self.Lam})")


@dataclass
class MAOptions:
    tol: float = 1e-8
    convex_tol: float = 1e-6
    max_newton: int = 80
    max_halvings: int = 20
    scheme: str = "filtered"        # "filtered" | "monotone"
    filter_band: float = 0.5        # band relative to max f
    pinch_slack: float = 1e-9


@dataclass
class _DirData:
    d: tuple
    cp: np.ndarray     # weight on the forward arm value
    cn: np.ndarray     # weight on the backward arm value
    c0: np.ndarray     # weight on the node value
    idx_p: np.ndarray  # forward neighbor (clamped; cut entries masked)
    idx_n: np.ndarray
    cut_p: np.ndarray
    cut_n: np.ndarray
    bval_p: np.ndarray  # Dirichlet values at forward crossings
    bval_n: np.ndarray


def _direction_data(grid: Grid, boundary) -> list[_DirData]:
    h2 = grid.h ** 2
    out = []
    for d in WIDE_DIRS:
        ap, an = grid.arm(d), grid.arm((-d[0], -d[1]))
        L2 = h2 * (d[0] * d[0] + d[1] * d[1])
        thp, thn = ap.theta, an.theta
        cp = 2.0 / (L2 * thp * (thp + thn))
        cn = 2.0 / (L2 * thn * (thp + thn))
        c0 = -2.0 / (L2 * thp * thn)
        bval_p = np.zeros(grid.n_nodes)
        bval_n = np.zeros(grid.n_nodes)
        if ap.cut.any():
            p = ap.point[ap.cut]
            bval_p[ap.cut] = boundary(p[:, 0], p[:, 1])
        if an.cut.any():
            p = an.point[an.cut]
            bval_n[an.cut] = boundary(p[:, 0], p[:, 1])
        out.append(_DirData(d=d, cp=cp, cn=cn, c0=c0,
                            idx_p=np.maximum(ap.neighbor, 0),
                            idx_n=np.maximum(an.neighbor, 0),
                            cut_p=ap.cut, cut_n=an.cut,
                            bval_p=bval_p, bval_n=bval_n))
    return out


def _second_differences(u: np.ndarray, dirs: list[_DirData]) -> np.ndarray:
    D = np.empty((len(dirs), u.shape[0]))
    for k, dd in enumerate(dirs):
        up = np.where(dd.cut_p, dd.bval_p, u[dd.idx_p])
        un = np.where(dd.cut_n, dd.bval_n, u[dd.idx_n])
        D[k] = dd.cp * up + dd.cn * un + dd.c0 * u
    return D


def _monotone_value(D: np.ndarray):
    vals = []
    for a, b in _PAIRS:
        da, db = D[a], D[b]
        vals.append(np.maximum(da, 0.0) * np.maximum(db, 0.0)
                    + np.minimum(da, 0.0) + np.minimum(db, 0.0))
    stack = np.stack(vals)
    arg = np.argmin(stack, axis=0)
    return stack[arg, np.arange(D.shape[1])], arg


def _accurate_value(D: np.ndarray) -> np.ndarray:
    m12 = 0.5 * (D[2] - D[3])
    return D[0] * D[1] - m12 ** 2


class _Residual:
    """Filtered Monge-Ampere residual with its active-branch Jacobian."""

    def __init__(self, grid, dirs, f_vals, opts: MAOptions):
        self.grid = grid
        self.dirs = dirs
        self.f = f_vals
        self.opts = opts
        self.band = (opts.filter_band * float(np.abs(f_vals).max())
                     if opts.scheme == "filtered" else 0.0)

    def __call__(self, u: np.ndarray):
        D = self._D = _second_differences(u, self.dirs)
        mono, arg = _monotone_value(D)
        if self.band > 0:
            acc = _accurate_value(D)
            delta = np.clip(acc - mono, -self.band, self.band)
            res = mono + delta - self.f
            # the centered-determinant row degenerates on locally flat
            # iterates (interpolated warm starts); keep the monotone row there
            curv = D[0] + D[1]
            branch_a = (np.abs(acc - mono) < self.band) \
                & (curv > 1e-3 * math.sqrt(max(float(np.abs(self.f).max()), 1e-30)))
        else:
            res = mono - self.f
            branch_a = np.zeros(u.shape[0], dtype=bool)
        self._arg = arg
        self._branch_a = branch_a
        return res

    def jacobian(self, u: np.ndarray):
        D, arg, branch_a = self._D, self._arg, self._branch_a
        n = u.shape[0]
        w = np.zeros((len(self.dirs), n))
        mono_nodes = ~branch_a
        for p, (a, b) in enumerate(_PAIRS):
            sel = mono_nodes & (arg == p)
            if not sel.any():
                continue
            da, db = D[a][sel], D[b][sel]
            w[a][sel] += np.where(da > 0, np.maximum(db, 0.0), 1.0)
            w[b][sel] += np.where(db > 0, np.maximum(da, 0.0), 1.0)
        if branch_a.any():
            m12 = 0.5 * (D[2] - D[3])
            w[0][branch_a] += D[1][branch_a]
            w[1][branch_a] += D[0][branch_a]
            w[2][branch_a] += -m12[branch_a]
            w[3][branch_a] += m12[branch_a]

        rows, cols, vals = [], [], []
        all_nodes = np.arange(n)
        for k, dd in enumerate(self.dirs):
            wk = w[k]
            rows.append(all_nodes)
            cols.append(all_nodes)
            vals.append(wk * dd.c0)
            live = ~dd.cut_p
            rows.append(all_nodes[live])
            cols.append(dd.idx_p[live])
            vals.append((wk * dd.cp)[live])
            live = ~dd.cut_n
            rows.append(all_nodes[live])
            cols.append(dd.idx_n[live])
            vals.append((wk * dd.cn)[live])
        J = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        return J


def _poisson_init(grid: Grid, f_vals: np.ndarray, boundary) -> np.ndarray:
    """Start from the isotropic surrogate Lap(u) = 2 sqrt(f)."""
    ident = SymmetricMatrixField(grid, 1.0, 0.0, 1.0)
    op = linop.assemble(ident, grid)
    b = -2.0 * np.sqrt(f_vals) + op.lifting(boundary)
    x, _ = op.factorize().solve(b)
    return x


def _newton(res: _Residual, u0: np.ndarray, tol: float, opts: MAOptions):
    u = u0.copy()
    r = res(u)
    history = [float(np.abs(r).max())]
    for _ in range(opts.max_newton):
        if history[-1] <= tol:
            return u, history
        J = res.jacobian(u)
        try:
            delta = spla.splu(sp.csc_matrix(J)).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"Newton linearization is singular: {exc}",
                              residuals=history) from exc
        lam = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = u + lam * delta
            r_trial = res(trial)
            nrm = float(np.abs(r_trial).max())
            if nrm < history[-1]:
                u, r = trial, r_trial
                history.append(nrm)
                break
            lam *= 0.5
        else:
            raise SolverError(
                f"Newton stalled after {opts.max_halvings} halvings at residual "
                f"{history[-1]:.3e}", residuals=history)
    if history[-1] > tol:
        raise SolverError(
            f"Newton did not reach tol={tol:g} in {opts.max_newton} steps "
            f"(residual {history[-1]:.3e})", residuals=history)
    return u, history


def solve_ma(grid: Grid, f, boundary, bounds: PinchingBounds,
             opts: MAOptions | None = None, initial=None) -> ScalarField:
    """Solve det D2 phi = f with Dirichlet data on a convex domain.

    ``f`` may be a callable, nodal array, or ScalarField and must respect the
    pinching bounds; ``boundary`` is a callable evaluated at boundary
    crossings.  ``initial`` warm-starts Newton (fixed-point drivers);
    otherwise the iteration starts from the isotropic surrogate.  Returns the
    potential with its Dirichlet trace attached and the solve diagnostics in
    ``.residual_history``.
    """
    opts = opts or MAOptions()
    if callable(f):
        f_vals = np.broadcast_to(np.asarray(f(grid.xy[:, 0], grid.xy[:, 1]), float),
                                 (grid.n_nodes,)).copy()
    elif isinstance(f, ScalarField):
        f_vals = f.values.copy()
    else:
        f_vals = np.broadcast_to(np.asarray(f, float), (grid.n_nodes,)).copy()

    slack = opts.pinch_slack * max(bounds.Lam, 1.0)
    if f_vals.min() < bounds.lam - slack or f_vals.max() > bounds.Lam + slack:
        raise PinchingError(
            f"f range [{f_vals.min():.6g}, {f_vals.max():.6g}] violates "
            f"[{bounds.lam:g}, {bounds.Lam:g}]")

    dirs = _direction_data(grid, boundary)
    warm = initial is not None
    u = np.asarray(initial, float).copy() if warm \
        else _poisson_init(grid, f_vals, boundary)

    # monotone continuation settles the convexity pattern cheaply, then the
    # filtered operator converges quadratically to full tolerance; a warm
    # start skips the continuation
    mono_opts = MAOptions(**{**opts.__dict__, "scheme": "monotone"})
    res_m = _Residual(grid, dirs, f_vals, mono_opts)
    hist = []
    if opts.scheme == "filtered":
        if not warm:
            coarse_tol = max(opts.tol, 0.2 * float(np.abs(f_vals).max()))
            u, hist = _newton(res_m, u, coarse_tol, mono_opts)
        res = _Residual(grid, dirs, f_vals, opts)
        u, hist2 = _newton(res, u, opts.tol, opts)
        hist = hist + hist2
    else:
        u, hist2 = _newton(res_m, u, opts.tol, mono_opts)
        hist = hist + hist2

    D = _second_differences(u, dirs)
    worst = float(D.min())
    if worst < -opts.convex_tol * max(1.0, float(np.abs(D).max())):
        raise SolverError(
            f"converged iterate is not discretely convex: min directional "
            f"second difference {worst:.3e}", residuals=hist)

    phi = ScalarField(grid, u, name="phi")
    for d in WIDE_DIRS:
        for sd in (d, (-d[0], -d[1])):
            t = grid.arm(sd)
            vals = np.zeros(grid.n_nodes)
            if t.cut.any():
                p = t.point[t.cut]
                vals[t.cut] = boundary(p[:, 0], p[:, 1])
            phi.trace[sd] = vals
    phi.residual_history = hist
    return phi


def hessian(phi: ScalarField) -> SymmetricMatrixField:
    """Discrete Hessian: centered second differences, one-sided unequal-arm
    formulas at boundary-crossing arms (using the field's trace), and the
    cross entry from the two diagonal second differences."""
    grid = phi.grid
    u = phi.values
    h2 = grid.h ** 2
    D = {}
    for d in ((1, 0), (0, 1)) + DIAG_DIRS:
        ap, an = grid.arm(d), grid.arm((-d[0], -d[1]))
        L2 = h2 * (d[0] * d[0] + d[1] * d[1])
        thp, thn = ap.theta.copy(), an.theta.copy()
        up = u[np.maximum(ap.neighbor, 0)]
        un = u[np.maximum(an.neighbor, 0)]
        have_p = ~ap.cut
        have_n = ~an.cut
        tp = phi.trace.get(d)
        tn = phi.trace.get((-d[0], -d[1]))
        if tp is not None:
            up = np.where(ap.cut, tp, up)
            have_p |= ap.cut
        if tn is not None:
            un = np.where(an.cut, tn, un)
            have_n |= an.cut
        val = (2.0 * (up / (thp * (thp + thn)) + un / (thn * (thp + thn))
                      - u / (thp * thn)) / L2)
        ok = have_p & have_n
        val = np.where(ok, val, np.nan)
        D[d] = _fill_invalid(grid, val)
    m11, m22 = D[(1, 0)], D[(0, 1)]
    m12 = 0.5 * (D[(1, 1)] - D[(1, -1)])
    return SymmetricMatrixField(grid, m11, m12, m22)


def _fill_invalid(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """Replace nan entries by the nearest available neighbor value."""
    vals = vals.copy()
    for _ in range(8):
        bad = np.isnan(vals)
        if not bad.any():
            break
        acc = np.zeros(grid.n_nodes)
        cnt = np.zeros(grid.n_nodes)
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = grid.arm(d)
            nb = t.neighbor
            ok = bad & (nb >= 0)
            src = np.where(ok, np.maximum(nb, 0), 0)
            good = ok & ~np.isnan(vals[src])
            acc[good] += vals[src[good]]
            cnt[good] += 1.0
        fill = cnt > 0
        vals[fill] = acc[fill] / cnt[fill]
    return vals


def w21e_norm(hess: SymmetricMatrixField, epsilon: float) -> float:
    """Discrete integral of |D2 phi|_F^(1+epsilon) over the domain."""
    h2 = hess.grid.h ** 2
    return float(h2 * np.sum(hess.frobenius() ** (1.0 + epsilon)))


def empirical_epsilon_star(hessians: list[SymmetricMatrixField],
                           eps_ladder=(0.05, 0.1, 0.2, 0.4, 0.8),
                           stability: float = 0.25) -> float:
    """Largest epsilon whose norm stays stable across a refinement ladder.

    ``hessians`` come from the same problem at decreasing h; returns 0.0 when
    even the smallest epsilon drifts."""
    best = 0.0
    for eps in sorted(eps_ladder):
        norms = [w21e_norm(hs, eps) for hs in hessians]
        lo, hi = min(norms), max(norms)
        if hi <= (1.0 + stability) * lo:
            best = eps
    return best
