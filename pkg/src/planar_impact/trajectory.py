"""From sampled configurations to impact events.

A trajectory is a sequence of ``(t, x, y, theta)`` samples.  Velocities are
never observed directly: they come from least-squares free-flight fits on
either side of an impact, where the flight model has its curvature fixed by
gravity (``y`` falls with ``-g/2 t^2``, ``x`` and ``theta`` are linear).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import BodyModel
from .errors import MonotonicityError, NotApproaching, ParseError, TooShort, WindowTooSmall
from .sysid import MEASURED, ImpactEvent

log = logging.getLogger(__name__)

HEADER = ("t", "x", "y", "theta")


@dataclass(frozen=True)
class PipelineConfig:
    g: float = 9.81
    sample_rate: float = 250.0
    spike_threshold_g: float = 5.0
    refractory: int = 5
    stencil: int = 1
    window: int = 25
    guard: int = 2
    min_window: int = 5
    min_samples: int = 50
    frame_drop_factor: float = 1.5
    energy_tol: float = 0.02
    deviation_tol: float = 2e-3
    flat_tol: float = 1e-6

    def __post_init__(self):
        if self.sample_rate <= 0 or self.g <= 0:
            raise ValueError("sample_rate and g must be positive")
        if self.window < self.min_window or self.min_window < 3:
            raise ValueError("window sizes are inconsistent")
        if self.stencil < 1 or self.refractory < 0 or self.guard < 0:
            raise ValueError("stencil must be >= 1; refractory and guard >= 0")

    @property
    def period(self) -> float:
        return 1.0 / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return PipelineConfig.from_dict(json.load(fh))


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


@dataclass(frozen=True)
class TrajectorySeries:
    """Configuration samples ``q[k] = (x, y, theta)`` at times ``t[k]``."""

    t: np.ndarray
    q: np.ndarray
    body_ref: str = "body"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        q = np.array(self.q, dtype=float).reshape(-1, 3)
        if t.ndim != 1 or len(t) != len(q):
            raise ValueError("t and q must have matching lengths")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("samples must be finite")
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise MonotonicityError("timestamps are not strictly increasing", int(bad[0]) + 2)
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return len(self.t)

    def drop_samples(self, indices) -> "TrajectorySeries":
        keep = np.setdiff1d(np.arange(len(self)), np.atleast_1d(indices))
        return TrajectorySeries(self.t[keep], self.q[keep], self.body_ref, dict(self.meta))

    def with_q(self, q) -> "TrajectorySeries":
        return TrajectorySeries(self.t, q, self.body_ref, dict(self.meta))


def save_trajectory(series: TrajectorySeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for t, (x, y, th) in zip(series.t, series.q):
            # repr gives the shortest string that round-trips exactly
            writer.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(th))])


def load_trajectory(path, body_ref: str = "body") -> TrajectorySeries:
    """Parse a ``t,x,y,theta`` CSV.  Row numbers in errors count the header as 1."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty", 0)
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}, got {','.join(header)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite value", lineno)
            rows.append(values)
    if not rows:
        raise ParseError("no samples", 1)
    data = np.array(rows)
    bad = np.flatnonzero(np.diff(data[:, 0]) <= 0)
    if bad.size:
        raise MonotonicityError("timestamps are not strictly increasing", int(bad[0]) + 3)
    return TrajectorySeries(data[:, 0], data[:, 1:], body_ref)


# ---------------------------------------------------------------------------
# impact detection
# ---------------------------------------------------------------------------


def acceleration(series: TrajectorySeries, stencil: int = 1) -> np.ndarray:
    """Second derivative by central differences on a possibly uneven grid.

    Samples within ``stencil`` of either end get NaN.  A wider stencil
    trades time resolution for noise suppression.
    """
    t, q = series.t, series.q
    s = stencil
    acc = np.full_like(q, np.nan)
    if len(t) <= 2 * s:
        return acc
    h1 = (t[s:-s] - t[:-2 * s])[:, None]
    h2 = (t[2 * s:] - t[s:-s])[:, None]
    d1 = (q[s:-s] - q[:-2 * s]) / h1
    d2 = (q[2 * s:] - q[s:-s]) / h2
    acc[s:-s] = 2.0 * (d2 - d1) / (h1 + h2)
    return acc


def spike_magnitude(series: TrajectorySeries, config: PipelineConfig, rho: float = 1.0) -> np.ndarray:
    acc = acceleration(series, config.stencil)
    dev = acc - np.array([0.0, -config.g, 0.0])
    dev[:, 2] *= rho
    return np.linalg.norm(dev, axis=1)


def detect_impacts(series: TrajectorySeries, config: PipelineConfig = PipelineConfig(), rho: float = 1.0) -> list[int]:
    """Sample indices where the acceleration departs from free fall.

    ``rho`` scales the angular channel so that all three share units.
    Exceedances closer than ``config.refractory`` samples are one impact,
    represented by its largest spike.
    """
    mag = spike_magnitude(series, config, rho)
    above = np.flatnonzero(np.nan_to_num(mag, nan=0.0) > config.spike_threshold_g * config.g)
    impacts = []
    cluster = []
    for i in above:
        if cluster and i - cluster[-1] > config.refractory:
            impacts.append(max(cluster, key=lambda k: mag[k]))
            cluster = []
        cluster.append(int(i))
    if cluster:
        impacts.append(max(cluster, key=lambda k: mag[k]))
    return impacts


# ---------------------------------------------------------------------------
# free-flight fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlightFit:
    """Free-flight model ``q(t) = q0 + v0 (t - t0) + gravity term``."""

    t0: float
    q0: np.ndarray
    v0: np.ndarray
    g: float
    residual_rms: float
    n: int
    q_se: np.ndarray | None = None
    v_se: np.ndarray | None = None

    def position(self, t) -> np.ndarray:
        tau = np.asarray(t, dtype=float) - self.t0
        q = self.q0 + np.multiply.outer(tau, self.v0)
        q[..., 1] -= 0.5 * self.g * tau**2
        return q

    def velocity(self, t) -> np.ndarray:
        tau = float(t) - self.t0
        return self.v0 - np.array([0.0, self.g * tau, 0.0])


def fit_flight(series: TrajectorySeries, window, g: float = 9.81, rho: float = 1.0, min_window: int = 5) -> FlightFit:
    """Least-squares free flight over the sample index range ``window``.

    The residual RMS combines ``x``, ``y`` and ``rho * theta``.
    """
    lo, hi = int(window[0]), int(window[1])
    if hi - lo < min_window:
        raise WindowTooSmall(f"window of {hi - lo} samples is below the minimum {min_window}")
    t = series.t[lo:hi]
    q = series.q[lo:hi].copy()
    t0 = float(t.mean())
    tau = t - t0
    q[:, 1] += 0.5 * g * tau**2
    design = np.column_stack([np.ones_like(tau), tau])
    coef, *_ = np.linalg.lstsq(design, q, rcond=None)
    resid = q - design @ coef
    n = hi - lo
    # standard errors; the centred design makes intercept and slope independent
    var = np.sum(resid**2, axis=0) / max(n - 2, 1)
    q_se = np.sqrt(var / n)
    v_se = np.sqrt(var / np.sum(tau**2))
    resid[:, 2] *= rho
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return FlightFit(t0, coef[0], coef[1], g, rms, n, q_se, v_se)


def fit_parabola(series: TrajectorySeries, window, g: float = 9.81, t_eval=None, edge: str = "end", rho: float = 1.0):
    """Velocity from a free-flight fit and the fit's residual RMS.

    The velocity is evaluated at ``t_eval`` if given, otherwise at the
    window's first or last sample (``edge``).
    """
    fit = fit_flight(series, window, g, rho)
    if t_eval is None:
        idx = int(window[1]) - 1 if edge == "end" else int(window[0])
        t_eval = series.t[idx]
    return fit.velocity(t_eval), fit.residual_rms


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    energy_ok: bool
    frame_drop_ok: bool
    deviation_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.energy_ok and self.frame_drop_ok and self.deviation_ok

    def to_dict(self) -> dict:
        return {"passed": self.passed, "energy_ok": self.energy_ok,
                "frame_drop_ok": self.frame_drop_ok, "deviation_ok": self.deviation_ok,
                "details": self.details}


def ballistic_segments(n: int, impacts, guard: int) -> list[tuple[int, int]]:
    """Index ranges ``[lo, hi)`` of flight between detected impacts."""
    bounds = [-guard - 1] + list(impacts) + [n + guard]
    segs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        lo, hi = max(a + guard + 1, 0), min(b - guard, n)
        if hi > lo:
            segs.append((lo, hi))
    return segs


def mechanical_energy(body: BodyModel, q, v, g: float) -> float:
    return float(0.5 * body.mass * (v[0] ** 2 + v[1] ** 2) + 0.5 * body.inertia * v[2] ** 2
                 + body.mass * g * q[1])


def _fit_energy(body: BodyModel, fit: FlightFit) -> tuple[float, float]:
    """Energy of a flight fit and its standard error from the fit noise."""
    e = mechanical_energy(body, fit.q0, fit.v0, fit.g)
    grad_v = np.array([body.mass * fit.v0[0], body.mass * fit.v0[1], body.inertia * fit.v0[2]])
    var = (body.mass * fit.g * fit.q_se[1]) ** 2 + float(np.sum((grad_v * fit.v_se) ** 2))
    return e, float(np.sqrt(var))


def validate(series: TrajectorySeries, body: BodyModel, config: PipelineConfig = PipelineConfig()) -> ValidationReport:
    """Frame-drop, energy and parabolic-deviation tests."""
    n = len(series)
    if n < config.min_samples:
        raise TooShort(f"{n} samples; validation needs at least {config.min_samples}")
    rho = body.radius_of_gyration
    gaps = np.diff(series.t)
    max_gap = float(gaps.max())
    frame_drop_ok = max_gap <= config.frame_drop_factor * config.period * (1 + 1e-9)

    impacts = detect_impacts(series, config, rho)
    segs = [s for s in ballistic_segments(n, impacts, config.guard) if s[1] - s[0] >= 2 * config.min_window]
    # energy changes are judged against energy_tol plus three standard errors
    energies, drift, worst_rms, energy_ok = [], 0.0, 0.0, True
    prev = None
    gains = []
    for lo, hi in segs:
        fit = fit_flight(series, (lo, hi), config.g, rho, config.min_window)
        worst_rms = max(worst_rms, fit.residual_rms)
        mid = (lo + hi) // 2
        (e1, s1), (e2, s2) = (_fit_energy(body, fit_flight(series, w, config.g, rho, config.min_window))
                              for w in ((lo, mid), (mid, hi)))
        e_seg, s_seg = _fit_energy(body, fit)
        scale = max(abs(e_seg), 1e-12)
        drift = max(drift, abs(e2 - e1) / scale)
        if abs(e2 - e1) > config.energy_tol * scale + 3.0 * np.hypot(s1, s2):
            energy_ok = False
        if prev is not None:
            e0, s0 = prev
            gains.append((e_seg - e0) / max(abs(e0), 1e-12))
            if e_seg - e0 > config.energy_tol * abs(e0) + 3.0 * np.hypot(s0, s_seg):
                energy_ok = False
        prev = (e_seg, s_seg)
        energies.append(e_seg)
    max_gain = max(gains, default=0.0)
    deviation_ok = worst_rms <= config.deviation_tol
    details = {
        "max_gap": max_gap,
        "n_impacts": len(impacts),
        "n_segments": len(segs),
        "segment_energies": energies,
        "max_in_flight_energy_drift": drift,
        "max_energy_gain": max_gain,
        "max_deviation_rms": worst_rms,
    }
    return ValidationReport(bool(energy_ok), bool(frame_drop_ok), bool(deviation_ok), details)


# ---------------------------------------------------------------------------
# event extraction
# ---------------------------------------------------------------------------


def lowest_vertex(body: BodyModel, q, flat_tol: float = 1e-6) -> tuple[np.ndarray, bool]:
    """World contact point and whether it sits on a flat (two-vertex) edge."""
    verts = body.world_vertices(q)
    order = np.argsort(verts[:, 1], kind="stable")
    if verts[order[1], 1] - verts[order[0], 1] <= flat_tol:
        return 0.5 * (verts[order[0]] + verts[order[1]]), True
    return verts[order[0]], False


def _min_height(body, fit: FlightFit, t) -> float:
    return float(body.world_vertices(fit.position(t))[:, 1].min())


def impact_time(body: BodyModel, pre: FlightFit, t_lo: float, t_hi: float, ground_y: float = 0.0) -> float | None:
    """First time in ``[t_lo, t_hi]`` at which the pre-impact flight touches the ground."""
    ts = np.linspace(t_lo, t_hi, 65)
    h = np.array([_min_height(body, pre, t) for t in ts]) - ground_y
    if h[0] <= 0:
        return None
    below = np.flatnonzero(h <= 0)
    if below.size == 0:
        return None
    a, b = ts[below[0] - 1], ts[below[0]]
    for _ in range(200):
        mid = 0.5 * (a + b)
        if _min_height(body, pre, mid) - ground_y > 0:
            a = mid
        else:
            b = mid
        if b - a < 1e-13:
            break
    return 0.5 * (a + b)


@dataclass(frozen=True)
class DroppedEvent:
    sample: int
    reason: str


def extract_events(
    series: TrajectorySeries,
    body: BodyModel,
    config: PipelineConfig = PipelineConfig(),
    dropped: list | None = None,
    ground_y: float = 0.0,
) -> list[ImpactEvent]:
    """Impact events with fitted velocities on either side of each impact.

    Both fits are evaluated at the impact time where the pre-impact flight
    reaches the ground; the configuration and contact point are taken from
    the pre-impact fit at that time.  Events that cannot be fitted or are
    not approaching the ground are skipped; the reasons go to ``dropped``
    and the log.
    """
    rho = body.radius_of_gyration
    impacts = detect_impacts(series, config, rho)
    n = len(series)
    events = []

    def skip(k, reason):
        log.info("impact at sample %d dropped: %s", k, reason)
        if dropped is not None:
            dropped.append(DroppedEvent(int(k), reason))

    for j, k in enumerate(impacts):
        prev_k = impacts[j - 1] if j > 0 else -config.guard - 1
        next_k = impacts[j + 1] if j + 1 < len(impacts) else n + config.guard
        pre_hi = k - config.guard + 1
        pre_lo = max(pre_hi - config.window, prev_k + config.guard + 1, 0)
        post_lo = k + config.guard
        post_hi = min(post_lo + config.window, next_k - config.guard, n)
        try:
            pre = fit_flight(series, (pre_lo, pre_hi), config.g, rho, config.min_window)
            post = fit_flight(series, (post_lo, post_hi), config.g, rho, config.min_window)
        except WindowTooSmall as exc:
            skip(k, f"fit window too small ({exc})")
            continue
        t_star = impact_time(body, pre, series.t[pre_hi - 1], series.t[post_lo], ground_y)
        flags = []
        if t_star is None:
            flags.append("impact_time_from_sample")
            t_star = float(series.t[k])
        q_star = pre.position(t_star)
        contact, flat = lowest_vertex(body, q_star, config.flat_tol)
        if flat:
            flags.append("flat_contact")
        try:
            event = ImpactEvent(
                q=q_star,
                v_pre=pre.velocity(t_star),
                v_post=post.velocity(t_star),
                contact_point=contact,
                body_ref=series.body_ref,
                source=MEASURED,
                t_impact=t_star,
                event_id=f"{series.meta.get('drop_id', 'drop')}:{j}",
                flags=tuple(flags),
            )
        except NotApproaching as exc:
            skip(k, f"not approaching ({exc})")
            continue
        events.append(event)
    return events


def save_events(events, path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in events], indent=2))


def load_events(path) -> list[ImpactEvent]:
    with open(path) as fh:
        return [ImpactEvent.from_dict(d) for d in json.load(fh)]
