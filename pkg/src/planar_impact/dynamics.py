"""Planar rigid-body types and the kinematic maps between generalized and
contact-space quantities.

The ground is the horizontal line through the world origin: the contact
normal is world +y and the tangent is world +x.  Contact-space vectors are
ordered ``(tangential, normal)`` everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonPositiveDefinite


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def polygon_is_simple(vertices: np.ndarray) -> bool:
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        if np.allclose(a, b):
            return False
        for j in range(i + 1, n):
            # adjacent edges share a vertex and never count as crossing
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(a, b, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BodyModel:
    """Mass properties and outline of a planar rigid body.

    ``vertices`` are given in the body frame, whose origin is the centre of
    mass and whose orientation is the body angle ``theta``.
    """

    mass: float
    inertia: float
    vertices: np.ndarray
    name: str = "body"

    def __post_init__(self):
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not (self.inertia > 0 and np.isfinite(self.inertia)):
            raise ValueError(f"inertia must be positive, got {self.inertia}")
        verts = _frozen(self.vertices)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ValueError("shape needs at least 3 vertices of the form [x, y]")
        if not polygon_is_simple(verts):
            raise ValueError("shape polygon is self-intersecting")
        object.__setattr__(self, "vertices", verts)

    @property
    def radius_of_gyration(self) -> float:
        return float(np.sqrt(self.inertia / self.mass))

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.diag([self.mass, self.mass, self.inertia])

    @property
    def mass_matrix_inv(self) -> np.ndarray:
        return np.diag([1.0 / self.mass, 1.0 / self.mass, 1.0 / self.inertia])

    def world_vertices(self, q) -> np.ndarray:
        x, y, theta = q
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        return self.vertices @ rot.T + np.array([x, y])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mass": self.mass,
            "inertia": self.inertia,
            "vertices": self.vertices.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BodyModel":
        return cls(
            mass=float(data["mass"]),
            inertia=float(data["inertia"]),
            vertices=np.asarray(data["vertices"], dtype=float),
            name=data.get("name", "body"),
        )

    @classmethod
    def rectangle(cls, width, height, mass, name="rectangle") -> "BodyModel":
        """Uniform-density rectangle centred on its centre of mass."""
        w, h = width / 2.0, height / 2.0
        inertia = mass * (width**2 + height**2) / 12.0
        verts = [[-w, -h], [w, -h], [w, h], [-w, h]]
        return cls(mass, inertia, np.array(verts), name)

    @classmethod
    def regular_polygon(cls, n_sides, circumradius, mass, name="polygon") -> "BodyModel":
        """Uniform regular polygon with one vertex pointing straight down."""
        angles = -np.pi / 2 + 2 * np.pi * np.arange(n_sides) / n_sides
        verts = circumradius * np.column_stack([np.cos(angles), np.sin(angles)])
        # polar moment of a uniform regular n-gon about its centre
        inertia = mass * circumradius**2 / 6.0 * (1 + 2 * np.cos(np.pi / n_sides) ** 2)
        return cls(mass, inertia, verts, name)


def load_body(path) -> BodyModel:
    with open(path) as fh:
        return BodyModel.from_dict(json.load(fh))


def save_body(body: BodyModel, path) -> None:
    Path(path).write_text(json.dumps(body.to_dict(), indent=2))


@dataclass(frozen=True)
class PlanarState:
    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q, v = _frozen(self.q), _frozen(self.v)
        if q.shape != (3,) or v.shape != (3,):
            raise ValueError("q and v must both have 3 entries")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v)) and np.isfinite(self.t)):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    def with_velocity(self, v) -> "PlanarState":
        return PlanarState(self.q, v, self.t)


@dataclass(frozen=True)
class Impulse:
    p_t: float
    p_n: float

    def __post_init__(self):
        if not (np.isfinite(self.p_t) and np.isfinite(self.p_n)):
            raise ValueError("impulse entries must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_t, self.p_n])

    @classmethod
    def from_array(cls, p) -> "Impulse":
        return cls(float(p[0]), float(p[1]))

    def __neg__(self):
        return Impulse(-self.p_t, -self.p_n)


@dataclass(frozen=True)
class ContactFrame:
    """Everything an impact model needs about one point contact.

    ``m_c_inv`` is the contact-space compliance ``J M^-1 J^T`` and ``m_c`` the
    contact-space inertia.  ``v_c`` is the pre-impact contact-point velocity.
    """

    contact_point: np.ndarray
    jacobian: np.ndarray
    m_c_inv: np.ndarray
    m_c: np.ndarray
    v_c: np.ndarray
    lever: np.ndarray = field(default=None)

    @property
    def v_t(self) -> float:
        return float(self.v_c[0])

    @property
    def v_n(self) -> float:
        return float(self.v_c[1])

    @property
    def stick_impulse(self) -> np.ndarray:
        """Impulse that brings the contact point to rest."""
        return -self.m_c @ self.v_c

    @classmethod
    def from_compliance(cls, m_c_inv, v_c) -> "ContactFrame":
        """Frame built straight from contact-space data, without a body."""
        w = np.asarray(m_c_inv, dtype=float)
        m_c = _invert_spd(w)
        return cls(
            contact_point=_frozen([0.0, 0.0]),
            jacobian=None,
            m_c_inv=_frozen(w),
            m_c=_frozen(m_c),
            v_c=_frozen(v_c),
        )


def _invert_spd(w: np.ndarray) -> np.ndarray:
    if not np.allclose(w, w.T, rtol=0, atol=1e-12 * max(1.0, np.abs(w).max())):
        raise NonPositiveDefinite("contact compliance is not symmetric")
    try:
        chol = np.linalg.cholesky(w)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite(str(exc)) from exc
    if np.min(np.diag(chol)) <= 0:
        raise NonPositiveDefinite("contact compliance is singular")
    return np.linalg.inv(w)


def contact_jacobian(q, contact_point) -> np.ndarray:
    rx = contact_point[0] - q[0]
    ry = contact_point[1] - q[1]
    return np.array([[1.0, 0.0, -ry], [0.0, 1.0, rx]])


def build_contact_frame(state: PlanarState, body: BodyModel, contact_point) -> ContactFrame:
    r = np.asarray(contact_point, dtype=float)
    jac = contact_jacobian(state.q, r)
    w = jac @ body.mass_matrix_inv @ jac.T
    w = 0.5 * (w + w.T)
    m_c = _invert_spd(w)
    return ContactFrame(
        contact_point=_frozen(r),
        jacobian=_frozen(jac),
        m_c_inv=_frozen(w),
        m_c=_frozen(m_c),
        v_c=_frozen(jac @ state.v),
        lever=_frozen(r - state.q[:2]),
    )


def apply_impulse(state: PlanarState, body: BodyModel, frame: ContactFrame, p) -> PlanarState:
    p_vec = p.as_array() if isinstance(p, Impulse) else np.asarray(p, dtype=float)
    dv = body.mass_matrix_inv @ frame.jacobian.T @ p_vec
    return PlanarState(state.q, state.v + dv, state.t)


def contact_momentum(frame: ContactFrame) -> np.ndarray:
    """Pre-impact momentum seen at the contact point, ``M_c v_c``."""
    return frame.m_c @ frame.v_c
