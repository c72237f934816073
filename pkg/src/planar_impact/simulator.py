"""Rigid polygon drops onto a flat ground with a chosen impact model.

Between impacts the body flies ballistically in closed form.  Impacts are
located by scanning the lowest vertex height and bisecting the first
crossing.  Impulses come from :func:`planar_impact.models.predict`.

A truth event is kept only if the flights on both sides of it last at
least ``min_flight``, so every recorded impact has enough clean samples
around it for velocity fits.  The record ends just before the first impact
that breaks this rule.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import BodyModel, PlanarState, apply_impulse, build_contact_frame
from .errors import NotApproaching, StartsPenetrating
from .models import ALL_MODELS, ModelId, ModelParams, predict
from .sysid import SYNTHETIC, ImpactEvent
from .trajectory import TrajectorySeries, save_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    g: float = 9.81
    sample_rate: float = 250.0
    noise_sigma: float = 0.0
    noise_sigma_theta: float = 0.0
    max_time: float = 2.0
    min_flight: float = 0.06
    rest_speed_tol: float = 1e-2
    ground_y: float = 0.0
    flat_tol: float = 1e-9
    time_tol: float = 1e-12
    scan_substeps: int = 8
    max_impacts: int = 200

    def __post_init__(self):
        if self.sample_rate <= 0 or self.g <= 0 or self.max_time <= 0:
            raise ValueError("sample_rate, g and max_time must be positive")
        if self.noise_sigma < 0 or self.noise_sigma_theta < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def period(self) -> float:
        return 1.0 / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulator config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class DropRecord:
    series: TrajectorySeries
    truth_events: tuple
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Flight:
    t0: float
    q0: np.ndarray
    v0: np.ndarray

    def position(self, t, g) -> np.ndarray:
        tau = np.asarray(t, dtype=float) - self.t0
        q = self.q0 + np.multiply.outer(tau, self.v0)
        q[..., 1] -= 0.5 * g * tau**2
        return q

    def velocity(self, t, g) -> np.ndarray:
        return self.v0 - np.array([0.0, g * (float(t) - self.t0), 0.0])


def _vertex_heights(body: BodyModel, q) -> np.ndarray:
    """Heights of every vertex for configurations ``q`` of shape (..., 3)."""
    q = np.asarray(q, dtype=float)
    c, s = np.cos(q[..., 2]), np.sin(q[..., 2])
    vx, vy = body.vertices[:, 0], body.vertices[:, 1]
    return q[..., 1, None] + s[..., None] * vx + c[..., None] * vy


def _next_impact(body, flight: _Flight, t_start, t_stop, cfg: SimConfig):
    """First time in ``(t_start, t_stop]`` at which a vertex reaches the ground."""
    dt = cfg.period / cfg.scan_substeps
    lo = t_start
    chunk = 2048
    while lo < t_stop:
        ts = lo + dt * np.arange(1, chunk + 1)
        ts = ts[ts <= t_stop + dt]
        ts[-1] = min(ts[-1], t_stop)
        h = _vertex_heights(body, flight.position(ts, cfg.g)).min(axis=1) - cfg.ground_y
        below = np.flatnonzero(h <= 0)
        if below.size:
            i = below[0]
            a = ts[i - 1] if i > 0 else lo
            b = ts[i]
            while b - a > cfg.time_tol:
                mid = 0.5 * (a + b)
                if _vertex_heights(body, flight.position(mid, cfg.g)).min() - cfg.ground_y > 0:
                    a = mid
                else:
                    b = mid
            return 0.5 * (a + b)
        lo = ts[-1]
    return None


def _resolve_impact(body, model, params, state: PlanarState, cfg: SimConfig, event_base: str, n_done: int):
    """Apply the impact at ``state``.  Flat contacts become sequential point impacts."""
    heights = _vertex_heights(body, state.q)
    low = float(heights.min())
    touching = np.flatnonzero(heights - low <= cfg.flat_tol)
    flat = len(touching) > 1
    events = []
    for k, idx in enumerate(touching):
        contact = body.world_vertices(state.q)[idx]
        frame = build_contact_frame(state, body, contact)
        if frame.v_n >= 0:
            if k == 0:
                raise NotApproaching(f"vertex {idx} reached the ground with v_n = {frame.v_n:.3e}")
            continue
        p = predict(model, frame, params).impulse
        post = apply_impulse(state, body, frame, p)
        events.append(ImpactEvent(
            q=state.q, v_pre=state.v, v_post=post.v, contact_point=contact,
            body_ref=body.name, source=SYNTHETIC, true_model=model, true_params=params,
            t_impact=state.t, event_id=f"{event_base}:{n_done + len(events)}",
            flags=("flat_contact",) if flat else (),
        ))
        state = post
    return state, events, flat


def simulate_drop(
    body: BodyModel,
    initial: PlanarState,
    model,
    params: ModelParams,
    config: SimConfig = SimConfig(),
    seed: int | None = None,
    drop_id: str = "drop",
) -> DropRecord:
    """Sampled trajectory and ground-truth impacts for one drop."""
    model = ModelId.parse(model)
    cfg = config
    if _vertex_heights(body, initial.q).min() <= cfg.ground_y:
        raise StartsPenetrating("a vertex starts at or below the ground")
    t0 = float(initial.t)
    flights = [_Flight(t0, np.array(initial.q, dtype=float), np.array(initial.v, dtype=float))]
    events: list[ImpactEvent] = []
    impact_times: list[float] = []
    flat_count = 0
    end_reason = "max_time"
    t_end = t0 + cfg.max_time

    def cut_before_last():
        # the last impact lacks a clean flight after it: end the record before it
        nonlocal t_end
        t_last = impact_times.pop()
        while events and events[-1].t_impact == t_last:
            events.pop()
        t_end = np.nextafter(t_last, -np.inf)
        flights.pop()

    while True:
        fl = flights[-1]
        t_hit = _next_impact(body, fl, fl.t0, t0 + cfg.max_time, cfg)
        prev = impact_times[-1] if impact_times else t0
        if t_hit is None:
            if impact_times and t0 + cfg.max_time - prev < cfg.min_flight:
                cut_before_last()
            break
        if t_hit - prev < cfg.min_flight:
            end_reason = "short_flight"
            if impact_times:
                cut_before_last()
            else:
                t_end = np.nextafter(t_hit, -np.inf)
            break
        state = PlanarState(fl.position(t_hit, cfg.g), fl.velocity(t_hit, cfg.g), t_hit)
        state, new, flat = _resolve_impact(body, model, params, state, cfg, drop_id, len(events))
        flat_count += int(flat)
        impact_times.append(t_hit)
        events.extend(new)
        flights.append(_Flight(t_hit, np.array(state.q), np.array(state.v)))
        speed = np.linalg.norm(state.v * np.array([1.0, 1.0, body.radius_of_gyration]))
        if speed < cfg.rest_speed_tol:
            end_reason = "rest"
            cut_before_last()
            break
        if len(impact_times) >= cfg.max_impacts:
            end_reason = "max_impacts"
            cut_before_last()
            break

    n = int(np.floor((t_end - t0) * cfg.sample_rate + 1e-9)) + 1
    t = t0 + np.arange(n) * cfg.period
    t = t[t <= t_end]
    starts = np.array([f.t0 for f in flights])
    which = np.searchsorted(starts, t, side="right") - 1
    q = np.empty((len(t), 3))
    for k, fl in enumerate(flights):
        sel = which == k
        if sel.any():
            q[sel] = fl.position(t[sel], cfg.g)
    if cfg.noise_sigma > 0 or cfg.noise_sigma_theta > 0:
        rng = np.random.default_rng(seed)
        q[:, :2] += rng.normal(0.0, cfg.noise_sigma, (len(t), 2))
        q[:, 2] += rng.normal(0.0, cfg.noise_sigma_theta, len(t))
    meta = {
        "drop_id": drop_id,
        "model": model.value,
        "mu": params.mu,
        "eps": params.eps,
        "seed": seed,
        "body": body.name,
        "initial_q": list(map(float, initial.q)),
        "initial_v": list(map(float, initial.v)),
        "n_impacts": len(events),
        "flat_impacts": flat_count,
        "end_reason": end_reason,
        "config": cfg.to_dict(),
    }
    series = TrajectorySeries(t, q, body.name, {"drop_id": drop_id})
    return DropRecord(series, tuple(events), meta)


def sample_initial_state(body: BodyModel, rng: np.random.Generator, height=(0.2, 0.5), max_speed=1.0, max_spin=10.0) -> PlanarState:
    """Random release: lowest vertex height, velocity in a disc, spin and angle uniform."""
    theta = rng.uniform(0.0, 2 * np.pi)
    r, phi = max_speed * np.sqrt(rng.uniform()), rng.uniform(0.0, 2 * np.pi)
    omega = rng.uniform(-max_spin, max_spin)
    h = rng.uniform(*height)
    low = _vertex_heights(body, np.array([0.0, 0.0, theta])).min()
    return PlanarState(np.array([0.0, h - low, theta]), np.array([r * np.cos(phi), r * np.sin(phi), omega]), 0.0)


def generate_dataset(
    n: int,
    body: BodyModel,
    model=None,
    params: ModelParams | None = None,
    config: SimConfig = SimConfig(),
    seed: int = 0,
    mu_range=(0.1, 1.0),
    eps_range=(0.2, 0.8),
) -> list[DropRecord]:
    """``n`` reproducible drops.

    ``model=None`` draws the model per drop from all six; ``params=None``
    draws ``mu`` and ``eps`` uniformly from the given ranges.  A release that
    grazes the ground tangentially is redrawn.
    """
    root = np.random.SeedSequence(seed)
    records = []
    for i, child in enumerate(root.spawn(n)):
        rng = np.random.default_rng(child)
        noise_seed = int(rng.integers(2**63))
        for attempt in range(100):
            m = ModelId.parse(model) if model is not None else ALL_MODELS[rng.integers(len(ALL_MODELS))]
            p = params or ModelParams(rng.uniform(*mu_range), rng.uniform(*eps_range))
            init = sample_initial_state(body, rng)
            try:
                rec = simulate_drop(body, init, m, p, config, seed=noise_seed, drop_id=f"drop{i:05d}")
            except NotApproaching as exc:
                log.info("drop %d attempt %d redrawn: %s", i, attempt, exc)
                continue
            break
        else:
            raise NotApproaching(f"drop {i}: no valid release after 100 attempts")
        records.append(rec)
    return records


def write_dataset(records, out_dir) -> Path:
    """One CSV and one truth JSON per drop plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for rec in records:
        drop_id = rec.meta["drop_id"]
        save_trajectory(rec.series, out / f"{drop_id}.csv")
        (out / f"{drop_id}_truth.json").write_text(
            json.dumps({"meta": rec.meta, "events": [e.to_dict() for e in rec.truth_events]}, indent=2)
        )
        manifest.append({"drop_id": drop_id, "csv": f"{drop_id}.csv", "truth": f"{drop_id}_truth.json",
                         "model": rec.meta["model"], "n_impacts": rec.meta["n_impacts"]})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
