"""Controlled defects for exercising validation and coverage checks."""

from __future__ import annotations

import numpy as np

from .dynamics import BodyModel, apply_impulse, build_contact_frame
from .simulator import DropRecord
from .sysid import ImpactEvent, event_frame
from .trajectory import TrajectorySeries


def drop_frames(series: TrajectorySeries, indices) -> TrajectorySeries:
    """Remove samples, leaving a timestamp gap."""
    return series.drop_samples(indices)


def add_drift(series: TrajectorySeries, t_start: float, t_stop: float, amplitude: float = 0.01) -> TrajectorySeries:
    """Add a smooth half-sine bump to ``x`` between two times.

    The bump is too gentle to register as an impact but cannot be absorbed
    by a free-flight fit.
    """
    t = series.t
    sel = (t >= t_start) & (t <= t_stop)
    q = series.q.copy()
    q[sel, 0] += amplitude * np.sin(np.pi * (t[sel] - t_start) / (t_stop - t_start))
    return series.with_q(q)


def _kinetic(body: BodyModel, v) -> float:
    return 0.5 * (body.mass * (v[0] ** 2 + v[1] ** 2) + body.inertia * v[2] ** 2)


def gain_energy(record: DropRecord, body: BodyModel, event_index: int = 0, speed_gain: float = 1.05) -> TrajectorySeries:
    """Replay the flight after one impact with an energy-gaining rebound.

    The post-impact velocity is rescaled so its kinetic energy equals
    ``speed_gain**2`` times the pre-impact kinetic energy.  Samples after the
    following impact would be meaningless, so the series is cut there.
    """
    events = record.truth_events
    ev = events[event_index]
    later = [e.t_impact for e in events if e.t_impact > ev.t_impact]
    ke_pre, ke_post = _kinetic(body, ev.v_pre), _kinetic(body, ev.v_post)
    if ke_post <= 0:
        raise ValueError("the chosen impact leaves the body at rest")
    scale = speed_gain * np.sqrt(ke_pre / ke_post)
    series = record.series
    t = series.t
    keep = t < later[0] if later else np.ones(len(t), dtype=bool)
    after = keep & (t > ev.t_impact)
    q = series.q.copy()
    q[after] += np.multiply.outer(t[after] - ev.t_impact, (scale - 1.0) * ev.v_post)
    return TrajectorySeries(t[keep], q[keep], series.body_ref, dict(series.meta))


def reverse_spin(event: ImpactEvent, body: BodyModel, fraction: float = 0.5) -> ImpactEvent:
    """Same event with a post-impact slip opposite to the incoming slip.

    An extra contact impulse is applied so the outgoing contact slip is
    ``-fraction * |v_t|`` in the incoming direction.  No model in the
    library predicts such an outcome.
    """
    frame = event_frame(event, body)
    v_t_in = frame.v_t
    direction = np.sign(v_t_in) if v_t_in != 0 else 1.0
    post_state = event.state().with_velocity(event.v_post)
    post_frame = build_contact_frame(post_state, body, event.contact_point)
    target = -direction * fraction * max(abs(v_t_in), 1e-3)
    # change the slip only; the outgoing normal velocity is kept
    dp = frame.m_c @ np.array([target - post_frame.v_t, 0.0])
    new = apply_impulse(post_state, body, post_frame, dp)
    return ImpactEvent(
        q=event.q, v_pre=event.v_pre, v_post=new.v, contact_point=event.contact_point,
        body_ref=event.body_ref, source=event.source, true_model=event.true_model,
        true_params=event.true_params, t_impact=event.t_impact,
        event_id=event.event_id, flags=event.flags + ("spin_reversed",),
    )
