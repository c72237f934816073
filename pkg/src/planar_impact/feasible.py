"""Energy ellipse geometry: which impulses a rigid point contact may apply.

An impulse ``p`` is admissible when it is compressive (``p_n >= 0``), leaves
the contact point separating or at rest in the normal direction, and does
not raise the contact-space kinetic energy ``v_c^T M_c v_c``.  The
admissible set is the energy ellipse clipped by two half-planes; it is
convex, which is what makes the projection below a small convex program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import BodyModel, ContactFrame, Impulse, PlanarState
from .errors import ZeroIncomingVelocity

DEFAULT_TOL = 1e-8


def _vec(p) -> np.ndarray:
    return p.as_array() if isinstance(p, Impulse) else np.asarray(p, dtype=float)


@dataclass(frozen=True)
class Line:
    """The set ``{p : normal . p = offset}`` with ``normal`` of unit length."""

    normal: np.ndarray
    offset: float
    tag: str = ""

    @property
    def direction(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])

    @property
    def anchor(self) -> np.ndarray:
        return self.normal * self.offset

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.anchor + np.multiply.outer(s, self.direction)

    def residual(self, p) -> float:
        return float(self.normal @ _vec(p) - self.offset)

    def intersect(self, other: "Line") -> np.ndarray:
        a = np.vstack([self.normal, other.normal])
        return np.linalg.solve(a, np.array([self.offset, other.offset]))


def _line(row, rhs, tag) -> Line:
    norm = float(np.hypot(*row))
    return Line(np.asarray(row, dtype=float) / norm, rhs / norm, tag)


@dataclass(frozen=True)
class AdmissibilityReport:
    alpha: float
    normal_impulse_ok: bool
    separation_ok: bool
    admissible: bool


class EnergyEllipse:
    """Feasible-impulse geometry of one contact frame."""

    def __init__(self, frame: ContactFrame):
        self.frame = frame
        self.w = np.asarray(frame.m_c_inv)
        self.m_c = np.asarray(frame.m_c)
        self.v = np.asarray(frame.v_c)
        self.energy = float(self.v @ self.m_c @ self.v)
        self.center = -self.m_c @ self.v

    def _require_impact(self):
        if self.energy < 1e-15:
            raise ZeroIncomingVelocity(
                f"incoming contact energy {self.energy:.3e} is too small for an impact"
            )

    def post_velocity(self, p) -> np.ndarray:
        return self.v + self.w @ _vec(p)

    def energy_fraction(self, p) -> float:
        self._require_impact()
        vf = self.post_velocity(p)
        return float(vf @ self.m_c @ vf / self.energy)

    def is_admissible(self, p, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
        alpha = self.energy_fraction(p)
        p_vec = _vec(p)
        normal_ok = bool(p_vec[1] >= -tol)
        separation_ok = bool(self.post_velocity(p_vec)[1] >= -tol)
        return AdmissibilityReport(
            alpha=alpha,
            normal_impulse_ok=normal_ok,
            separation_ok=separation_ok,
            admissible=bool(alpha <= 1 + tol and normal_ok and separation_ok),
        )

    def line_of_sticking(self) -> Line:
        return _line(self.w[0], -self.v[0], "sticking")

    def line_of_max_compression(self) -> Line:
        return _line(self.w[1], -self.v[1], "max_compression")

    def line_of_zero_normal_impulse(self) -> Line:
        return Line(np.array([0.0, 1.0]), 0.0, "zero_normal_impulse")

    # -- ellipse parametrisation -------------------------------------------
    # p(phi) = center + sqrt(E) L^-T (cos phi, sin phi), W = L L^T

    def _chol(self):
        return np.linalg.cholesky(self.w)

    def boundary_point(self, phi) -> np.ndarray:
        lt_inv = np.linalg.inv(self._chol().T)
        phi = np.asarray(phi, dtype=float)
        u = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        return self.center + np.sqrt(self.energy) * u @ lt_inv.T

    def _angle_of(self, p) -> float:
        u = self._chol().T @ (_vec(p) - self.center)
        return float(np.arctan2(u[1], u[0]))

    def line_ellipse_intersections(self, line: Line) -> list[np.ndarray]:
        d = line.direction
        p0 = line.anchor - self.center
        qa = d @ self.w @ d
        qb = 2 * d @ self.w @ p0
        qc = p0 @ self.w @ p0 - self.energy
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            return []
        root = np.sqrt(disc)
        return [line.point((-qb - root) / (2 * qa)), line.point((-qb + root) / (2 * qa))]

    def _line_feasible_interval(self, line: Line, others: list[Line]):
        """Parameter range of ``line`` inside the admissible set, or None."""
        pts = self.line_ellipse_intersections(line)
        if not pts:
            return None
        s = sorted(float((pt - line.anchor) @ line.direction) for pt in pts)
        lo, hi = s
        for other in others:
            # other.normal . (anchor + s d) >= other.offset
            slope = other.normal @ line.direction
            base = other.normal @ line.anchor - other.offset
            if abs(slope) < 1e-300:
                if base < 0:
                    return None
                continue
            bound = -base / slope
            if slope > 0:
                lo = max(lo, bound)
            else:
                hi = min(hi, bound)
        if lo > hi:
            return None
        return lo, hi

    def _halfplanes(self) -> list[Line]:
        return [self.line_of_zero_normal_impulse(), self.line_of_max_compression()]

    def admissible_arc(self) -> tuple[float, float]:
        """Angular interval ``[start, end]`` (end > start) of the admissible arc."""
        self._require_impact()
        lines = self._halfplanes()
        angles = []
        for line in lines:
            angles += [self._angle_of(p) for p in self.line_ellipse_intersections(line)]
        angles = np.sort(np.mod(angles, 2 * np.pi))
        breaks = np.concatenate([angles, [angles[0] + 2 * np.pi]])
        feasible = []
        for a0, a1 in zip(breaks[:-1], breaks[1:]):
            if a1 - a0 < 1e-15:
                continue
            mid = self.boundary_point(0.5 * (a0 + a1))
            ok = all(line.normal @ mid - line.offset >= 0 for line in lines)
            feasible.append((a0, a1, ok))
        # the admissible arc is connected, so merge consecutive feasible pieces
        n = len(feasible)
        start_idx = next(
            i for i in range(n) if feasible[i][2] and not feasible[i - 1][2]
        )
        start = feasible[start_idx][0]
        end = start
        i = start_idx
        while feasible[i % n][2] and i < start_idx + n:
            seg = feasible[i % n]
            end = seg[1] + (2 * np.pi if i >= n else 0.0)
            i += 1
        if end < start:
            end += 2 * np.pi
        return float(start), float(end)

    def boundary_polyline(self, n: int = 64) -> tuple[np.ndarray, list[str]]:
        """Closed outline of the admissible region as ``(points, tags)``.

        ``n`` points are placed on the energy ellipse (``alpha = 1``); the
        remaining points are corners where the clipping lines meet.
        """
        if n < 16:
            raise ValueError("boundary_polyline needs n >= 16")
        start, end = self.admissible_arc()
        arc = self.boundary_point(np.linspace(start, end, n))
        pts = list(arc)
        tags = ["ellipse"] * n
        lines = self._halfplanes()

        def nearest_line(p):
            return int(np.argmin([abs(line.residual(p)) for line in lines]))

        if nearest_line(arc[0]) != nearest_line(arc[-1]):
            pts.append(lines[0].intersect(lines[1]))
            tags.append("corner")
        return np.array(pts), tags

    # -- projection ----------------------------------------------------------

    def project(self, hessian, gradient, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Minimise ``p^T H p / 2 + g^T p`` over the admissible set.

        Active-set enumeration: the unconstrained optimum, the optimum on each
        clipping line, the optimum on the energy arc, and the region corners.
        """
        self._require_impact()
        h = np.asarray(hessian, dtype=float)
        g = np.asarray(gradient, dtype=float)

        def f(p):
            return 0.5 * p @ h @ p + g @ p

        candidates = [np.linalg.solve(h, -g)]
        lines = self._halfplanes()
        for i, line in enumerate(lines):
            others = lines[:i] + lines[i + 1:]
            interval = self._line_feasible_interval(line, others)
            if interval is None:
                continue
            d = line.direction
            curv = d @ h @ d
            slope = d @ (h @ line.anchor + g)
            s_star = -slope / curv if curv > 0 else interval[0]
            candidates += [line.point(np.clip(s_star, *interval)), line.point(interval[0]),
                           line.point(interval[1])]
        candidates.append(lines[0].intersect(lines[1]))

        start, end = self.admissible_arc()
        phis = np.linspace(start, end, 513)
        arc = self.boundary_point(phis)
        vals = 0.5 * np.einsum("ij,jk,ik->i", arc, h, arc) + arc @ g
        k = int(np.argmin(vals))
        lo, hi = phis[max(k - 1, 0)], phis[min(k + 1, len(phis) - 1)]
        if hi > lo:
            res = minimize_scalar(
                lambda phi: f(self.boundary_point(phi)),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-13},
            )
            candidates.append(self.boundary_point(res.x))
        candidates.append(arc[k])

        best, best_val = None, np.inf
        for p in candidates:
            if not np.all(np.isfinite(p)):
                continue
            if not self.is_admissible(p, tol).admissible:
                continue
            val = f(p)
            if val < best_val:
                best, best_val = p, val
        if best is None:
            # numerically the centre region always contains an admissible point
            best = arc[k]
        return np.asarray(best)


def energy_fraction(ellipse: EnergyEllipse, p) -> float:
    return ellipse.energy_fraction(p)


def is_admissible(ellipse: EnergyEllipse, p, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    return ellipse.is_admissible(p, tol)


def line_of_sticking(ellipse: EnergyEllipse) -> Line:
    return ellipse.line_of_sticking()


def line_of_max_compression(ellipse: EnergyEllipse) -> Line:
    return ellipse.line_of_max_compression()


def boundary_polyline(ellipse: EnergyEllipse, n: int = 64):
    return ellipse.boundary_polyline(n)


def velocity_weights(body: BodyModel) -> np.ndarray:
    """Diagonal that puts angular velocity in linear-velocity units."""
    return np.array([1.0, 1.0, body.radius_of_gyration])


def project_outcome(
    ellipse: EnergyEllipse,
    target_post_velocity,
    body: BodyModel,
    state: PlanarState,
    tol: float = DEFAULT_TOL,
) -> Impulse:
    """Admissible impulse whose outcome is closest to ``target_post_velocity``.

    Distance is measured on generalized velocities with the angular entry
    scaled by the radius of gyration.
    """
    frame = ellipse.frame
    d = velocity_weights(body)
    g_mat = d[:, None] * (body.mass_matrix_inv @ frame.jacobian.T)
    offset = d * (state.v - np.asarray(target_post_velocity, dtype=float))
    hessian = g_mat.T @ g_mat
    gradient = g_mat.T @ offset
    return Impulse.from_array(ellipse.project(hessian, gradient, tol))
