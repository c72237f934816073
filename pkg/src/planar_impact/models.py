"""Six two-parameter rigid impact models and the machinery around them.

Every model maps a contact frame and ``(mu, eps)`` to an impulse inside the
energy ellipse.  They differ in the restitution hypothesis (Newton velocity
ratio, Poisson impulse ratio, or energetic work ratio) and in whether the
friction law is applied once at the impulse level or incrementally along
the impact (Routh's method).

Shared conventions
------------------
* Contact-space vectors are ``(tangential, normal)``; ``a, b, c`` name the
  entries ``W_tt, W_tn, W_nn`` of the compliance ``W = M_c^-1``.
* No model with friction lets the tangential contact velocity change sign.
  Whenever the friction law would produce slip reversal, the outcome is
  clamped to the line of sticking.  With ``mu == 0`` there is no friction at
  all, the tangential impulse is zero and no clamp applies.
* ``Mode.STICK`` means the contact never slips under an active friction
  bound; ``SLIDE_THEN_STICK`` means slip halts no later than maximum
  compression; ``SLIDE`` means slip persists past maximum compression.
* The core routines broadcast over frames and parameters so that parameter
  sweeps evaluate in a single numpy pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .dynamics import ContactFrame, Impulse
from .errors import NoConsistentBranch, NotApproaching, StepTooCoarse

MU_MAX = 2.0
MU_S_TOL = 1e-6
STICK, SLIDE, SLIDE_THEN_STICK = 0, 1, 2


class ModelId(str, enum.Enum):
    DRUMWRIGHT_SHELL = "drumwright_shell"
    AP_POISSON = "ap_poisson"
    AP_NEWTON = "ap_newton"
    MIRTICH = "mirtich"
    WANG_MASON = "wang_mason"
    WHITTAKER = "whittaker"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def saturates(self) -> bool:
        """Whether predictions stop changing with ``mu`` once the contact sticks.

        The energetic termination depends on the work done while slipping,
        so for that model the sticking threshold does not bound the
        informative range of ``mu``.
        """
        return self is not ModelId.MIRTICH

    @classmethod
    def parse(cls, name) -> "ModelId":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        for model in cls:
            if key in (model.value, model.name.lower(), model.label.lower().replace(" ", "_")):
                return model
        raise ValueError(f"unknown model {name!r}; choose from {[m.value for m in cls]}")


_LABELS = {
    ModelId.DRUMWRIGHT_SHELL: "DrumShell",
    ModelId.AP_POISSON: "AP Poisson",
    ModelId.AP_NEWTON: "AP Newton",
    ModelId.MIRTICH: "Mirtich",
    ModelId.WANG_MASON: "Wang-Mason",
    ModelId.WHITTAKER: "Whittaker",
}

ALL_MODELS = tuple(ModelId)


class Mode(str, enum.Enum):
    STICK = "stick"
    SLIDE = "slide"
    SLIDE_THEN_STICK = "slide_then_stick"


_MODE_CODES = {STICK: Mode.STICK, SLIDE: Mode.SLIDE, SLIDE_THEN_STICK: Mode.SLIDE_THEN_STICK}


@dataclass(frozen=True)
class ModelParams:
    mu: float
    eps: float

    def __post_init__(self):
        if not (self.mu >= 0 and np.isfinite(self.mu)):
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")
        if not (0.0 <= self.eps <= 1.0):
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")


@dataclass(frozen=True)
class ImpulseResult:
    impulse: Impulse
    mode: Mode
    post_contact_velocity: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class Termination(enum.Enum):
    MAX_COMPRESSION = "max_compression"
    POISSON = "poisson"
    ENERGETIC = "energetic"


# ---------------------------------------------------------------------------
# broadcasting core
# ---------------------------------------------------------------------------


def frame_arrays(frames) -> tuple[np.ndarray, ...]:
    """``(a, b, c, v_t, v_n)`` arrays for one frame or a sequence of frames."""
    if isinstance(frames, ContactFrame):
        frames = [frames]
    w = np.array([f.m_c_inv for f in frames], dtype=float)
    v = np.array([f.v_c for f in frames], dtype=float)
    return w[:, 0, 0], w[:, 0, 1], w[:, 1, 1], v[:, 0], v[:, 1]


def _backspin(sgn, vtf, mu):
    # a zero incoming slip admits no outgoing slip either
    return (mu > 0) & ((sgn == 0) | (sgn * vtf < 0))


def _coulomb_on_line(a, b, c, vt, vn, mu, dvn):
    """Impulse-level Coulomb friction on the line ``v_n^f = v_n + dvn``.

    Along that line the outgoing slip grows monotonically with ``p_t``, so
    the complementarity solution is the stick impulse clipped to the part of
    the line inside the friction cone.  Returns ``(pt, pn, stuck, pt0, pn0)``
    where ``(pt0, pn0)`` is the stick impulse.
    """
    det = a * c - b * b
    pt0 = (-c * vt - b * dvn) / det
    pn0 = (b * vt + a * dvn) / det
    with np.errstate(divide="ignore", invalid="ignore"):
        up = c + mu * b
        dn = c - mu * b
        hi = np.where(up > 0, mu * dvn / np.where(up > 0, up, 1.0), np.inf)
        lo = np.where(dn > 0, -mu * dvn / np.where(dn > 0, dn, 1.0), -np.inf)
    pt = np.clip(pt0, lo, hi)
    pn = (dvn - b * pt) / c
    return pt, pn, pt == pt0, pt0, pn0


def _energy_cap(a, b, c, vt, vn, pt, pn, mu):
    """Pull a Newton-restitution outcome back inside the energy ellipse.

    Newton restitution can create energy once friction couples the two
    directions.  On the line of fixed outgoing normal velocity the ellipse
    cuts an interval of outgoing slip values; the slip moves to the nearest
    point of that interval that does not reverse the incoming slip.  When no
    such point exists the outcome is placed on the line of sticking with the
    largest normal rebound the energy bound allows.
    """
    det = a * c - b * b
    mtt, mtn, mnn = c / det, -b / det, a / det
    e_in = mtt * vt * vt + 2 * mtn * vt * vn + mnn * vn * vn
    x = vt + a * pt + b * pn
    y = vn + b * pt + c * pn
    e_out = mtt * x * x + 2 * mtn * x * y + mnn * y * y
    over = e_out > e_in
    root = np.sqrt(np.maximum(mtn * mtn * y * y - mtt * (mnn * y * y - e_in), 0.0))
    x_lo = (-mtn * y - root) / mtt
    x_hi = (-mtn * y + root) / mtt
    sgn = np.where(mu > 0, np.sign(vt), np.nan)
    # slip values allowed by the no-reversal rule form a half-line (or {0})
    lo = np.where(sgn > 0, np.maximum(x_lo, 0.0), np.where(sgn == 0, np.maximum(x_lo, 0.0), x_lo))
    hi = np.where(sgn < 0, np.minimum(x_hi, 0.0), np.where(sgn == 0, np.minimum(x_hi, 0.0), x_hi))
    feasible = lo <= hi
    x_new = np.where(feasible, np.clip(x, lo, hi), 0.0)
    y_new = np.where(feasible, y, np.sqrt(e_in / mnn))
    x_new = np.where(over, x_new, x)
    y_new = np.where(over, y_new, y)
    dvt, dvn = x_new - vt, y_new - vn
    pt_new = np.where(over, mtt * dvt + mtn * dvn, pt)
    pn_new = np.where(over, mtn * dvt + mnn * dvn, pn)
    return pt_new, pn_new, over, over & ~feasible


def _ap_newton(a, b, c, vt, vn, mu, eps):
    sgn = np.sign(vt)
    dvn = -(1 + eps) * vn
    pt, pn, stuck, pt0, pn0 = _coulomb_on_line(a, b, c, vt, vn, mu, dvn)
    clamp = _backspin(sgn, vt + a * pt + b * pn, mu)
    pt = np.where(clamp, pt0, pt)
    pn = np.where(clamp, pn0, pn)
    mode = np.where(stuck | clamp, STICK, SLIDE)
    pt, pn, capped, rest_cut = _energy_cap(a, b, c, vt, vn, pt, pn, mu)
    return pt, pn, mode, {"clamped": clamp, "energy_capped": capped, "restitution_capped": rest_cut}


def _whittaker(a, b, c, vt, vn, mu, eps):
    sgn = np.sign(vt)
    dvn = -(1 + eps) * vn
    den = c - mu * sgn * b
    with np.errstate(divide="ignore", invalid="ignore"):
        pn_slide = dvn / np.where(den > 0, den, 1.0)
    pt_slide = -mu * sgn * pn_slide
    det = a * c - b * b
    pt0 = (-c * vt - b * dvn) / det
    pn0 = (b * vt + a * dvn) / det
    vtf = vt + a * pt_slide + b * pn_slide
    clamp = (mu > 0) & ((den <= 0) | _backspin(sgn, vtf, mu))
    pt = np.where(clamp, pt0, pt_slide)
    pn = np.where(clamp, pn0, pn_slide)
    mode = np.where(clamp, STICK, SLIDE)
    pt, pn, capped, rest_cut = _energy_cap(a, b, c, vt, vn, pt, pn, mu)
    return pt, pn, mode, {"clamped": clamp, "energy_capped": capped, "restitution_capped": rest_cut}


def _two_phase_mode(stick_c, stick_r, p_rest):
    # slip that survives compression is friction-limited, whatever follows
    stuck = stick_c & np.where(p_rest > 0, stick_r, True)
    return np.where(stuck, STICK, SLIDE)


def _ap_poisson(a, b, c, vt, vn, mu, eps):
    sgn = np.sign(vt)
    pt_c, pn_c, stuck_c, pt0, pn0 = _coulomb_on_line(a, b, c, vt, vn, mu, -vn)
    clamp_c = _backspin(sgn, vt + a * pt_c + b * pn_c, mu)
    pt_c = np.where(clamp_c, pt0, pt_c)
    pn_c = np.where(clamp_c, pn0, pn_c)
    vt_c = vt + a * pt_c + b * pn_c
    p_rest = eps * pn_c
    pt_r0 = -(vt_c + b * p_rest) / a
    pt_r = np.clip(pt_r0, -mu * p_rest, mu * p_rest)
    clamp_r = _backspin(sgn, vt_c + a * pt_r + b * p_rest, mu)
    pt_r = np.where(clamp_r, pt_r0, pt_r)
    mode = _two_phase_mode(stuck_c | clamp_c, (pt_r == pt_r0) | clamp_r, p_rest)
    diag = {"compression_impulse_t": pt_c, "compression_impulse": pn_c,
            "clamped": clamp_c | clamp_r}
    return pt_c + pt_r, pn_c + p_rest, mode, diag


def _min_energy_on_segment(a, b, c, vt, vn, base_t, base_n, dir_t, dir_n, lo, hi):
    """Active-set solution of ``min KE(base + s*dir)`` for ``s`` in ``[lo, hi]``.

    KE is ``v_f^T M_c v_f`` with ``v_f = v + W p``; its gradient with respect
    to ``p`` is ``2 v_f``.  Returns ``(s_opt, s_free)`` where ``s_free`` is the
    unconstrained minimiser.
    """
    ut = vt + a * base_t + b * base_n
    un = vn + b * base_t + c * base_n
    wt = a * dir_t + b * dir_n
    wn = b * dir_t + c * dir_n
    curv = dir_t * wt + dir_n * wn
    slope = dir_t * ut + dir_n * un
    s_free = -slope / curv

    def ke(s):
        # energy up to the common positive factor; only comparisons matter
        return curv * s * s + 2 * slope * s

    # an infinite bound is never the minimiser of a convex quadratic
    cands = np.stack(np.broadcast_arrays(s_free, lo, hi))
    finite = np.isfinite(cands)
    feasible = finite.copy()
    feasible[0] &= (s_free >= lo) & (s_free <= hi)
    vals = np.where(feasible, ke(np.where(finite, cands, 0.0)), np.inf)
    best = np.argmin(vals, axis=0)
    s_opt = np.take_along_axis(cands, best[None], axis=0)[0]
    return s_opt, s_free


def _drumwright_shell(a, b, c, vt, vn, mu, eps):
    sgn = np.sign(vt)
    # compression: p on the line v_n^f = 0, parametrised by p_t
    dvn = -vn
    with np.errstate(divide="ignore", invalid="ignore"):
        up, dn = c + mu * b, c - mu * b
        hi = np.where(up > 0, mu * dvn / np.where(up > 0, up, 1.0), np.inf)
        lo = np.where(dn > 0, -mu * dvn / np.where(dn > 0, dn, 1.0), -np.inf)
    zero = np.zeros_like(vt * mu)
    s_c, s_free = _min_energy_on_segment(
        a, b, c, vt, vn, zero, dvn / c + zero, 1.0, -b / c, lo, hi
    )
    stick_c = s_c == s_free
    clamp_c = _backspin(sgn, vt + (a - b * b / c) * s_c + b * dvn / c, mu)
    s_c = np.where(clamp_c, s_free, s_c)
    pt_c = s_c
    pn_c = (dvn - b * s_c) / c
    # restitution: normal impulse fixed, tangential chosen inside its cone
    p_rest = eps * pn_c
    s_r, s_rfree = _min_energy_on_segment(
        a, b, c, vt, vn, pt_c, pn_c + p_rest, 1.0, 0.0, -mu * p_rest, mu * p_rest
    )
    vtf = vt + a * (pt_c + s_r) + b * (pn_c + p_rest)
    clamp_r = _backspin(sgn, vtf, mu)
    s_r = np.where(clamp_r, s_rfree, s_r)
    mode = _two_phase_mode(stick_c | clamp_c, (s_r == s_rfree) | clamp_r, p_rest)
    diag = {"compression_impulse_t": pt_c, "compression_impulse": pn_c,
            "clamped": clamp_c | clamp_r}
    return pt_c + s_r, pn_c + p_rest, mode, diag


def _routh_closed(a, b, c, vt, vn, mu, eps, termination: Termination):
    """Routh's incremental model integrated exactly segment by segment.

    The impulse path is piecewise linear in ``p_n``: slip along the friction
    cone edge until the slip vanishes, then stick.  With these closed-form
    segments the integral is exact; ``routh_integrate`` with a finite step is
    the explicit-stepping counterpart.
    """
    sgn = np.sign(vt)
    slope_t = -mu * sgn * a + b
    slope_n = -mu * sgn * b + c
    k_stick = c - b * b / a
    with np.errstate(divide="ignore", invalid="ignore"):
        decel = sgn * slope_t < 0
        d_stick = np.where(
            sgn == 0, 0.0, np.where(decel, -vt / np.where(decel, slope_t, 1.0), np.inf)
        )
        d_stick = np.where(mu > 0, d_stick, np.inf)
    finite = np.isfinite(d_stick)
    d_fin = np.where(finite, d_stick, 0.0)
    vn_at_stick = np.where(finite, vn + slope_n * d_fin, np.inf)

    def split(p):
        p1 = np.minimum(p, d_stick)
        p2 = np.where(finite, np.maximum(p - d_fin, 0.0), 0.0)
        return p1, p2

    def vn_at(p):
        p1, p2 = split(p)
        return vn + slope_n * p1 + k_stick * p2

    def integral(p):
        p1, p2 = split(p)
        return vn * p1 + 0.5 * slope_n * p1 * p1 + (vn + slope_n * p1) * p2 + 0.5 * k_stick * p2 * p2

    with np.errstate(divide="ignore", invalid="ignore"):
        ends_sliding = (slope_n > 0) & (~finite | (vn_at_stick >= 0))
        pc = np.where(
            ends_sliding,
            -vn / np.where(slope_n > 0, slope_n, 1.0),
            d_fin + np.where(finite, -vn_at_stick, 0.0) / k_stick,
        )
    w_comp = -integral(pc)

    if termination is Termination.MAX_COMPRESSION:
        pf = pc
    elif termination is Termination.POISSON:
        pf = (1 + eps) * pc
    else:
        target = eps * eps * w_comp
        avail = np.where(pc < d_stick, np.where(finite, integral(d_fin) - integral(pc), np.inf), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            in_slide = (pc < d_stick) & (target <= avail)
            pf_slide = pc + np.sqrt(2 * target / np.where(slope_n > 0, slope_n, 1.0))
            start = np.where(pc < d_stick, d_fin, pc)
            rest = np.where(pc < d_stick, target - np.where(np.isfinite(avail), avail, 0.0), target)
            rest = np.maximum(rest, 0.0)
            v0 = np.maximum(vn_at(start), 0.0)
            root = np.sqrt(v0 * v0 + 2 * k_stick * rest)
            denom = v0 + root
            pf_stick = start + np.where(denom > 0, 2 * rest / np.where(denom > 0, denom, 1.0), 0.0)
        pf = np.where(in_slide, pf_slide, pf_stick)

    p_slide, p_stuck = split(pf)
    pt = -mu * sgn * p_slide - (b / a) * p_stuck
    mode = np.where(
        (sgn == 0) & (mu > 0), STICK, np.where(d_stick <= pc, SLIDE_THEN_STICK, SLIDE)
    )
    diag = {
        "halts_in_restitution": (d_stick > pc) & (d_stick < pf),
        "compression_impulse": pc,
        "compression_work": w_comp,
        "restitution_work": integral(pf) - integral(pc),
        "clamped": (pf > d_stick) & (np.abs(b / a) > mu),
    }
    return pt, pf, mode, diag


def _mirtich(a, b, c, vt, vn, mu, eps):
    return _routh_closed(a, b, c, vt, vn, mu, eps, Termination.ENERGETIC)


def _wang_mason(a, b, c, vt, vn, mu, eps):
    return _routh_closed(a, b, c, vt, vn, mu, eps, Termination.POISSON)


_CORE = {
    ModelId.AP_NEWTON: _ap_newton,
    ModelId.AP_POISSON: _ap_poisson,
    ModelId.DRUMWRIGHT_SHELL: _drumwright_shell,
    ModelId.MIRTICH: _mirtich,
    ModelId.WANG_MASON: _wang_mason,
    ModelId.WHITTAKER: _whittaker,
}


def predict_arrays(model, a, b, c, vt, vn, mu, eps):
    """Broadcasting prediction: returns ``(p_t, p_n, mode_code, diagnostics)``."""
    arrays = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, vt, vn, mu, eps)))
    return _CORE[ModelId.parse(model)](*arrays)


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------


def _result(frame, pt, pn, mode, diag) -> ImpulseResult:
    p = np.array([float(pt), float(pn)])
    if not np.all(np.isfinite(p)):
        raise NoConsistentBranch("model produced a non-finite impulse")
    diagnostics = {k: float(np.asarray(v)) for k, v in diag.items()}
    return ImpulseResult(
        impulse=Impulse.from_array(p),
        mode=_MODE_CODES[int(mode)],
        post_contact_velocity=frame.v_c + frame.m_c_inv @ p,
        diagnostics=diagnostics,
    )


def _check(frame: ContactFrame, params: ModelParams):
    if not frame.v_n < 0:
        raise NotApproaching(f"contact normal velocity {frame.v_n:.3e} is not approaching")
    if not isinstance(params, ModelParams):
        params = ModelParams(*params)
    return params


def predict(model, frame: ContactFrame, params: ModelParams) -> ImpulseResult:
    params = _check(frame, params)
    a, b, c, vt, vn = (x[0] for x in frame_arrays(frame))
    out = predict_arrays(model, a, b, c, vt, vn, params.mu, params.eps)
    return _result(frame, *out)


def ap_newton(frame, params):
    return predict(ModelId.AP_NEWTON, frame, params)


def ap_poisson(frame, params):
    return predict(ModelId.AP_POISSON, frame, params)


def drumwright_shell(frame, params):
    return predict(ModelId.DRUMWRIGHT_SHELL, frame, params)


def mirtich(frame, params):
    return predict(ModelId.MIRTICH, frame, params)


def wang_mason(frame, params):
    return predict(ModelId.WANG_MASON, frame, params)


def whittaker(frame, params):
    return predict(ModelId.WHITTAKER, frame, params)


def default_step(frame: ContactFrame) -> float:
    return float(frame.m_c[1, 1] * abs(frame.v_n)) / 1e4


def routh_integrate(
    frame: ContactFrame,
    mu: float,
    termination: Termination = Termination.MAX_COMPRESSION,
    eps: float = 0.0,
    step: float | None = None,
) -> ImpulseResult:
    """Integrate the impact in normal-impulse increments of size ``step``.

    Velocity is advanced exactly (it is affine in the impulse within a
    step); slip and separation events are located inside the step by
    bisection.  Work is accumulated with the explicit rule
    ``dW = v_n(step start) * dp_n``, which is what makes the result depend
    on ``step``.  ``step=None`` selects the exact segment integration used
    by the models themselves.
    """
    if not frame.v_n < 0:
        raise NotApproaching(f"contact normal velocity {frame.v_n:.3e} is not approaching")
    termination = Termination(termination)
    if step is None:
        a, b, c, vt, vn = (x[0] for x in frame_arrays(frame))
        out = _routh_closed(a, b, c, vt, vn, np.float64(mu), np.float64(eps), termination)
        return _result(frame, *out)
    if step <= 0:
        raise ValueError("step must be positive")
    return _routh_stepped(frame, float(mu), termination, float(eps), float(step))


def _bisect_event(g, max_iter=64):
    """Smallest fraction ``f`` in ``(0, 1]`` with ``g(f) >= 0``, given g(0) < 0 <= g(1)."""
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15:
            return hi
    raise StepTooCoarse("event location did not converge")


def _routh_stepped(frame, mu, termination, eps, step):
    w = frame.m_c_inv
    a, b, c = float(w[0, 0]), float(w[0, 1]), float(w[1, 1])
    vt, vn = float(frame.v_t), float(frame.v_n)
    sgn = float(np.sign(vt))
    # without friction nothing can hold the contact point, so it never sticks
    sticking = sgn == 0 and mu > 0
    was_sliding = not sticking
    pt = pn = 0.0
    w_comp = w_rest = 0.0
    compressing = True
    pc = None
    max_steps = 10_000_000
    for _ in range(max_steps):
        if sticking:
            rt, rv_t, rv_n = -b / a, 0.0, c - b * b / a
        else:
            rt, rv_t, rv_n = -mu * sgn, -mu * sgn * a + b, -mu * sgn * b + c
        h = step
        events = []
        if not sticking and mu > 0 and sgn * (vt + rv_t * h) <= 0:
            events.append(("stick", lambda f: -sgn * (vt + rv_t * f * h)))
        if compressing and vn + rv_n * h >= 0:
            events.append(("separate", lambda f: vn + rv_n * f * h))
        if not compressing:
            if termination is Termination.POISSON:
                target = (1 + eps) * pc
                if pn + h >= target:
                    events.append(("end", lambda f: pn + f * h - target))
            elif termination is Termination.ENERGETIC:
                target = eps * eps * w_comp
                if w_rest + vn * h >= target:
                    events.append(("end", lambda f: w_rest + vn * f * h - target))
        frac, kind = 1.0, None
        for name, g in events:
            if g(0.0) >= 0:
                f = 0.0
            else:
                f = _bisect_event(g)
            if f < frac or kind is None:
                frac, kind = f, name
        dp = frac * h
        if compressing:
            w_comp += -vn * dp
        else:
            w_rest += vn * dp
        pt += rt * dp
        pn += dp
        vt += rv_t * dp
        vn += rv_n * dp
        if kind == "stick":
            vt = 0.0
            sticking = True
        elif kind == "separate":
            vn = 0.0
            compressing = False
            pc = pn
            if termination is Termination.MAX_COMPRESSION:
                break
            if termination is Termination.ENERGETIC and eps == 0:
                break
        elif kind == "end":
            break
    else:
        raise StepTooCoarse("integration did not terminate")
    if sticking:
        mode = STICK if not was_sliding else SLIDE_THEN_STICK
    else:
        mode = SLIDE
    diag = {"compression_impulse": pc if pc is not None else pn,
            "compression_work": w_comp, "restitution_work": w_rest}
    return _result(frame, pt, pn, mode, diag)


# ---------------------------------------------------------------------------
# sticking threshold and reachable regions
# ---------------------------------------------------------------------------


def mu_s_arrays(model, a, b, c, vt, vn, eps, mu_max=MU_MAX, tol=MU_S_TOL):
    """Vectorised bisection for the smallest sticking friction coefficient.

    Entries that do not stick at ``mu_max`` come back as ``inf``.
    """
    model = ModelId.parse(model)
    a, b, c, vt, vn, eps = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, vt, vn, eps)))

    def sticks(mu):
        mode = predict_arrays(model, a, b, c, vt, vn, mu, eps)[2]
        return mode != SLIDE

    lo = np.zeros_like(eps)
    hi = np.full_like(eps, float(mu_max))
    at_zero = sticks(lo)
    at_max = sticks(hi)
    n_iter = max(1, math.ceil(math.log2(mu_max / tol)) + 1)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        s = sticks(mid)
        hi = np.where(s, mid, hi)
        lo = np.where(s, lo, mid)
    out = np.where(at_zero, 0.0, hi)
    return np.where(at_max | at_zero, out, np.inf)


def mu_s(model, frame: ContactFrame, eps: float, mu_max: float = MU_MAX, tol: float = MU_S_TOL) -> float:
    if not frame.v_n < 0:
        raise NotApproaching(f"contact normal velocity {frame.v_n:.3e} is not approaching")
    a, b, c, vt, vn = (x[0] for x in frame_arrays(frame))
    return float(mu_s_arrays(model, a, b, c, vt, vn, eps, mu_max, tol))


@dataclass(frozen=True)
class RegionTrace:
    model: ModelId
    mu: np.ndarray
    eps: np.ndarray
    points: np.ndarray
    hull: np.ndarray

    @property
    def hull_area(self) -> float:
        return polygon_area(self.hull)


def polygon_area(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def region_trace(model, frame: ContactFrame, grid=(40, 40), mu_max: float = MU_MAX) -> RegionTrace:
    """Impulses predicted over the parameter box ``[0, mu_s(eps)] x [0, 1]``."""
    n_mu, n_eps = grid
    if n_mu < 8 or n_eps < 8:
        raise ValueError("region_trace needs at least an 8 x 8 grid")
    model = ModelId.parse(model)
    a, b, c, vt, vn = (x[0] for x in frame_arrays(frame))
    eps_axis = np.linspace(0.0, 1.0, n_eps)
    mu_top = mu_s_arrays(model, a, b, c, vt, vn, eps_axis, mu_max)
    mu_top = np.where(np.isfinite(mu_top), mu_top, mu_max)
    frac = np.linspace(0.0, 1.0, n_mu)
    mu = frac[:, None] * mu_top[None, :]
    eps = np.broadcast_to(eps_axis[None, :], mu.shape)
    pt, pn, _, _ = predict_arrays(model, a, b, c, vt, vn, mu, eps)
    points = np.column_stack([pt.ravel(), pn.ravel()])
    try:
        hull = points[ConvexHull(points).vertices]
    except Exception:  # degenerate (collinear) traces have no 2D hull
        hull = points[[0, -1]]
    return RegionTrace(model, mu.ravel(), eps.ravel(), points, hull)
