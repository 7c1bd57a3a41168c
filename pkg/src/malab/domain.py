"""Bounded convex domains with sampled boundaries.

A domain is stored as a closed convex curve sampled at N points with outward
unit normals, together with the structural constant ``rho``: the domain fits
in the ball of radius 1/rho about the origin and every boundary point admits
an interior tangent ball of radius rho.  Disks and ellipses keep analytic
inside/intersection tests; smoothed polygons fall back to supporting
half-plane tests against the samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvexInputError

_DEFAULT_SAMPLES = 256


@dataclass(frozen=True)
class ConvexDomain:
    """Convex region with boundary samples, normals, and structural data."""

    kind: str
    boundary: np.ndarray          # (N, 2) sample points, counterclockwise
    normals: np.ndarray           # (N, 2) outward unit normals at the samples
    rho: float                    # structural constant (tangent-ball radius cap)
    circumradius: float
    params: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.boundary.shape[0]

    @property
    def perimeter(self) -> float:
        pts = self.boundary
        seg = np.diff(np.vstack([pts, pts[:1]]), axis=0)
        return float(np.hypot(seg[:, 0], seg[:, 1]).sum())

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.params["radius"] ** 2
        if self.kind == "ellipse":
            return math.pi * self.params["a"] * self.params["b"]
        x, y = self.boundary[:, 0], self.boundary[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def inside(self, pts: np.ndarray) -> np.ndarray:
        """Closed-domain membership test for an (M, 2) array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "disk":
            r = self.params["radius"]
            return pts[:, 0] ** 2 + pts[:, 1] ** 2 <= r * r * (1.0 + 1e-14)
        if self.kind == "ellipse":
            a, b = self.params["a"], self.params["b"]
            return (pts[:, 0] / a) ** 2 + (pts[:, 1] / b) ** 2 <= 1.0 + 1e-14
        # intersection of supporting half-planes at the samples
        out = np.ones(pts.shape[0], dtype=bool)
        chunk = 1 << 18
        for lo in range(0, pts.shape[0], chunk):
            p = pts[lo:lo + chunk]
            s = (p[:, None, :] - self.boundary[None, :, :]) * self.normals[None, :, :]
            out[lo:lo + chunk] = (s.sum(axis=2) <= 1e-12).all(axis=1)
        return out

    def ray_cut(self, pts: np.ndarray, step: np.ndarray) -> np.ndarray:
        """Fraction theta in (0, 1] at which pts + theta*step crosses the boundary.

        Every input point must be inside and pts + step outside; callers
        guarantee this.  Returns one theta per point.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        step = np.broadcast_to(np.asarray(step, dtype=float), pts.shape)
        if self.kind in ("disk", "ellipse"):
            if self.kind == "disk":
                a = b = self.params["radius"]
            else:
                a, b = self.params["a"], self.params["b"]
            px, py = pts[:, 0] / a, pts[:, 1] / b
            dx, dy = step[:, 0] / a, step[:, 1] / b
            qa = dx * dx + dy * dy
            qb = px * dx + py * dy
            qc = px * px + py * py - 1.0
            disc = np.maximum(qb * qb - qa * qc, 0.0)
            theta = (-qb + np.sqrt(disc)) / qa
        else:
            # bisection against the half-plane test
            lo = np.zeros(pts.shape[0])
            hi = np.ones(pts.shape[0])
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                ok = self.inside(pts + mid[:, None] * step)
                lo = np.where(ok, mid, lo)
                hi = np.where(ok, hi, mid)
            theta = 0.5 * (lo + hi)
        return np.clip(theta, 1e-12, 1.0)

    def nearest_boundary(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest boundary sample and its distance, per point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        proj = np.empty_like(pts)
        dist = np.empty(pts.shape[0])
        chunk = 1 << 16
        for lo in range(0, pts.shape[0], chunk):
            p = pts[lo:lo + chunk]
            d2 = ((p[:, None, :] - self.boundary[None, :, :]) ** 2).sum(axis=2)
            idx = np.argmin(d2, axis=1)
            proj[lo:lo + chunk] = self.boundary[idx]
            dist[lo:lo + chunk] = np.sqrt(d2[np.arange(len(idx)), idx])
        return proj, dist

    def resample(self, n: int) -> "ConvexDomain":
        """Same domain with at least n boundary samples."""
        if n <= self.n_samples:
            return self
        return build_domain(self.kind, n_samples=n, **self.params)


def _ellipse_samples(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    pts = np.column_stack([a * np.cos(t), b * np.sin(t)])
    nrm = np.column_stack([np.cos(t) / a, np.sin(t) / b])
    nrm /= np.hypot(nrm[:, 0], nrm[:, 1])[:, None]
    return pts, nrm


def _check_convex_polygon(vertices: np.ndarray) -> None:
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        raise NonConvexInputError("polygon needs at least 3 vertices")
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    if np.any(np.abs(cross) < 1e-14):
        raise NonConvexInputError("polygon has collinear or repeated vertices")
    if not (np.all(cross > 0) or np.all(cross < 0)):
        bad = int(np.argmin(np.sign(cross) == np.sign(cross[0])))
        raise NonConvexInputError(f"polygon is not convex near vertex {bad}")


def _rounded_polygon_samples(vertices: np.ndarray, radius: float,
                             n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample a convex polygon with corners rounded by arcs of given radius."""
    v = np.asarray(vertices, dtype=float)
    _check_convex_polygon(v)
    e = np.roll(v, -1, axis=0) - v
    cross0 = e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0]
    if cross0 < 0:                       # force counterclockwise
        v = v[::-1]
        e = np.roll(v, -1, axis=0) - v
    m = v.shape[0]
    elen = np.hypot(e[:, 0], e[:, 1])
    tang = e / elen[:, None]
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]])   # outward for CCW

    # inner vertices: intersect the edge lines offset inward by `radius`
    centers = np.empty_like(v)
    for i in range(m):
        j = (i - 1) % m
        # lines: x . nrm[j] = c_j - r and x . nrm[i] = c_i - r
        A = np.array([nrm[j], nrm[i]])
        c = np.array([np.dot(v[i], nrm[j]) - radius, np.dot(v[i], nrm[i]) - radius])
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) < 1e-14:
            raise NonConvexInputError("corner rounding failed: near-parallel edges")
        centers[i] = np.linalg.solve(A, c)

    pieces_pts, pieces_nrm, lengths = [], [], []
    for i in range(m):
        j = (i + 1) % m
        # arc at vertex i from incoming normal to outgoing normal
        a0 = math.atan2(nrm[(i - 1) % m][1], nrm[(i - 1) % m][0])
        a1 = math.atan2(nrm[i][1], nrm[i][0])
        while a1 < a0:
            a1 += 2.0 * math.pi
        lengths.append(("arc", i, a0, a1, radius * (a1 - a0)))
        # straight piece along edge i between the two tangency points
        p0 = centers[i] + radius * nrm[i]
        p1 = centers[j] + radius * nrm[i]
        lengths.append(("seg", i, p0, p1, float(np.hypot(*(p1 - p0)))))

    total = sum(item[-1] for item in lengths)
    for item in lengths:
        k = max(2, int(round(n * item[-1] / total)))
        if item[0] == "arc":
            _, i, a0, a1, _ = item
            t = np.linspace(a0, a1, k, endpoint=False)
            nn = np.column_stack([np.cos(t), np.sin(t)])
            pieces_pts.append(centers[i] + radius * nn)
            pieces_nrm.append(nn)
        else:
            _, i, p0, p1, _ = item
            t = np.linspace(0.0, 1.0, k, endpoint=False)
            pieces_pts.append(p0 + t[:, None] * (p1 - p0))
            pieces_nrm.append(np.repeat(nrm[i][None, :], k, axis=0))
    return np.vstack(pieces_pts), np.vstack(pieces_nrm)


def _tangent_ball_rho(boundary: np.ndarray, normals: np.ndarray) -> float:
    """Largest r such that every boundary sample admits an interior tangent
    ball of radius r, estimated against the samples by bisection."""
    lo, hi = 0.0, float(np.hypot(boundary[:, 0], boundary[:, 1]).max())
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _ball_fits_everywhere(boundary, normals, mid):
            lo = mid
        else:
            hi = mid
    return lo


def _ball_fits_everywhere(boundary: np.ndarray, normals: np.ndarray, r: float) -> bool:
    centers = boundary - r * normals
    slack = _sampling_slack(boundary, r)
    chunk = 1 << 11
    for lo in range(0, centers.shape[0], chunk):
        c = centers[lo:lo + chunk]
        d2 = ((c[:, None, :] - boundary[None, :, :]) ** 2).sum(axis=2)
        if np.any(np.sqrt(d2.min(axis=1)) < r - slack):
            return False
    return True


def _sampling_slack(boundary: np.ndarray, r: float) -> float:
    # chord sagitta of the sampled curve bounds how far the polyline dips
    # inside the true boundary
    seg = np.diff(np.vstack([boundary, boundary[:1]]), axis=0)
    s = float(np.hypot(seg[:, 0], seg[:, 1]).max())
    return s * s / max(4.0 * r, 1e-12) + 1e-12


def build_domain(kind: str, *, radius: float | None = None, a: float | None = None,
                 b: float | None = None, vertices=None, corner_radius: float = 0.1,
                 n_samples: int = _DEFAULT_SAMPLES) -> ConvexDomain:
    """Construct a disk, ellipse, or smoothed convex polygon.

    ``rho`` is computed, never trusted from input: the minimum of the
    verified interior tangent-ball radius and 1/circumradius.
    """
    if kind == "disk":
        if radius is None or radius <= 0:
            raise NonConvexInputError("disk needs a positive radius")
        pts, nrm = _ellipse_samples(radius, radius, n_samples)
        circum = radius
        rho_ball = radius
        params = {"radius": float(radius)}
    elif kind == "ellipse":
        if a is None or b is None or a <= 0 or b <= 0:
            raise NonConvexInputError("ellipse needs positive semi-axes a, b")
        pts, nrm = _ellipse_samples(a, b, n_samples)
        circum = max(a, b)
        rho_ball = min(a, b) ** 2 / max(a, b)   # minimal curvature radius
        params = {"a": float(a), "b": float(b)}
    elif kind == "polygon":
        if vertices is None:
            raise NonConvexInputError("polygon needs vertices")
        if corner_radius <= 0:
            raise NonConvexInputError("polygon needs a positive corner-rounding radius")
        pts, nrm = _rounded_polygon_samples(np.asarray(vertices, float),
                                            corner_radius, n_samples)
        circum = float(np.hypot(pts[:, 0], pts[:, 1]).max())
        rho_ball = min(corner_radius, _tangent_ball_rho(pts, nrm))
        params = {"vertices": np.asarray(vertices, float).tolist(),
                  "corner_radius": float(corner_radius)}
    else:
        raise NonConvexInputError(f"unknown domain kind {kind!r}")

    rho = min(rho_ball, 1.0 / circum)
    return ConvexDomain(kind=kind, boundary=pts, normals=nrm, rho=float(rho),
                        circumradius=float(circum), params=params)


def check_uniform_interior_ball(domain: ConvexDomain, rho: float) -> tuple[bool, np.ndarray]:
    """True iff every boundary sample admits an interior tangent ball of
    radius rho; also returns the worst boundary point."""
    centers = domain.boundary - rho * domain.normals
    slack = _sampling_slack(domain.boundary, rho)
    worst_gap, worst_pt, ok = np.inf, domain.boundary[0], True
    chunk = 1 << 11
    for lo in range(0, centers.shape[0], chunk):
        c = centers[lo:lo + chunk]
        d2 = ((c[:, None, :] - domain.boundary[None, :, :]) ** 2).sum(axis=2)
        dmin = np.sqrt(d2.min(axis=1))
        gap = dmin - (rho - slack)
        i = int(np.argmin(gap))
        if gap[i] < worst_gap:
            worst_gap, worst_pt = float(gap[i]), domain.boundary[lo + i]
        if np.any(gap < 0):
            ok = False
    return ok, worst_pt


def check_quadratic_separation(boundary_pts: np.ndarray, phi_vals: np.ndarray,
                               grads: np.ndarray, rho: float):
    """Check two-sided quadratic separation of boundary data from its
    tangent planes over all boundary sample pairs.

    Tests rho*|x - x0|^2 <= phi(x) - phi(x0) - grad(x0).(x - x0)
    <= |x - x0|^2 / rho and returns (ok, worst_pair, worst_ratio) where the
    worst pair minimizes the lower-bound margin.
    """
    pts = np.asarray(boundary_pts, float)
    vals = np.asarray(phi_vals, float)
    g = np.asarray(grads, float)
    n = pts.shape[0]
    ok = True
    worst = (0, 0)
    worst_ratio = np.inf
    chunk = max(1, (1 << 22) // max(n, 1))
    for lo in range(0, n, chunk):
        x0 = pts[lo:lo + chunk]                     # (c, 2) base points
        dx = pts[None, :, :] - x0[:, None, :]       # (c, n, 2)
        d2 = (dx ** 2).sum(axis=2)
        sep = vals[None, :] - vals[lo:lo + chunk, None] - np.einsum("cnk,ck->cn", dx, g[lo:lo + chunk])
        mask = d2 > 1e-20
        ratio = np.where(mask, sep / np.where(mask, d2, 1.0), np.inf)
        low = ratio.min()
        high = np.where(mask, ratio, -np.inf).max()
        if low < worst_ratio:
            c_i, n_i = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
            worst_ratio = float(low)
            worst = (lo + int(c_i), int(n_i))
        if low < rho * (1.0 - 1e-9) or high > (1.0 / rho) * (1.0 + 1e-9):
            ok = False
    return ok, worst, worst_ratio
