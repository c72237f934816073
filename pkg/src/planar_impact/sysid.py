"""Recovering contact impulses from measured velocities and fitting model
parameters to them.

Fits minimise the impulse-space distance between the recovered impulse and
a model's prediction.  Searches run on the unit square ``(mu / mu_max,
eps)``.  Many independent fits are solved together: every array below
carries a leading "problem" axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    BodyModel,
    ContactFrame,
    Impulse,
    PlanarState,
    apply_impulse,
    build_contact_frame,
    contact_jacobian,
)
from .errors import DegenerateJacobian, EmptyBatch, NotApproaching
from .feasible import EnergyEllipse, project_outcome
from .metrics import velocity_error
from .models import (
    ALL_MODELS,
    MU_MAX,
    ModelId,
    ModelParams,
    frame_arrays,
    mu_s_arrays,
    predict,
    predict_arrays,
)

MEASURED = "measured"
SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class ImpactEvent:
    """One impact: configuration at contact plus velocities either side."""

    q: np.ndarray
    v_pre: np.ndarray
    v_post: np.ndarray
    contact_point: np.ndarray
    body_ref: str = "body"
    source: str = MEASURED
    true_model: ModelId | None = None
    true_params: ModelParams | None = None
    t_impact: float = 0.0
    event_id: str = ""
    flags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(str(f) for f in self.flags))
        for name in ("q", "v_pre", "v_post", "contact_point"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.source not in (MEASURED, SYNTHETIC):
            raise ValueError(f"unknown event source {self.source!r}")
        jac = contact_jacobian(self.q, self.contact_point)
        v_n = float(jac[1] @ self.v_pre)
        if not v_n < 0:
            raise NotApproaching(f"pre-impact normal contact velocity {v_n:.3e} is not negative")

    def state(self) -> PlanarState:
        return PlanarState(self.q, self.v_pre, self.t_impact)

    def to_dict(self) -> dict:
        out = {
            "event_id": self.event_id,
            "body_ref": self.body_ref,
            "t_impact": self.t_impact,
            "q": self.q.tolist(),
            "v_pre": self.v_pre.tolist(),
            "v_post": self.v_post.tolist(),
            "contact_point": self.contact_point.tolist(),
            "source": self.source,
            "flags": list(self.flags),
        }
        if self.true_model is not None:
            out["true_model"] = ModelId(self.true_model).value
            out["true_params"] = {"mu": self.true_params.mu, "eps": self.true_params.eps}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ImpactEvent":
        truth = data.get("true_params")
        return cls(
            q=data["q"],
            v_pre=data["v_pre"],
            v_post=data["v_post"],
            contact_point=data["contact_point"],
            body_ref=data.get("body_ref", "body"),
            source=data.get("source", MEASURED),
            true_model=ModelId.parse(data["true_model"]) if data.get("true_model") else None,
            true_params=ModelParams(truth["mu"], truth["eps"]) if truth else None,
            t_impact=float(data.get("t_impact", 0.0)),
            event_id=str(data.get("event_id", "")),
            flags=tuple(data.get("flags", ())),
        )


def event_frame(event: ImpactEvent, body: BodyModel) -> ContactFrame:
    return build_contact_frame(event.state(), body, event.contact_point)


def synthetic_event(
    model, params: ModelParams, body: BodyModel, state: PlanarState, contact_point, event_id=""
) -> ImpactEvent:
    """Event whose post-impact velocity is exactly what ``model`` predicts."""
    model = ModelId.parse(model)
    frame = build_contact_frame(state, body, contact_point)
    p = predict(model, frame, params).impulse
    post = apply_impulse(state, body, frame, p)
    return ImpactEvent(
        q=state.q,
        v_pre=state.v,
        v_post=post.v,
        contact_point=contact_point,
        body_ref=body.name,
        source=SYNTHETIC,
        true_model=model,
        true_params=params,
        t_impact=state.t,
        event_id=event_id,
    )


# ---------------------------------------------------------------------------
# impulse recovery
# ---------------------------------------------------------------------------


def recover_impulse_with_residual(
    event: ImpactEvent, body: BodyModel, weights=None
) -> tuple[Impulse, float]:
    """Least-squares impulse for ``M (v_post - v_pre) = J^T p``.

    ``weights`` optionally scales the three momentum equations; the default
    treats them equally.  The second return value is the norm of the
    (weighted) equation residual.
    """
    jac = contact_jacobian(event.q, event.contact_point)
    w = np.ones(3) if weights is None else np.asarray(weights, dtype=float)
    a = w[:, None] * jac.T
    rhs = w * (body.mass_matrix @ (event.v_post - event.v_pre))
    normal = a.T @ a
    if abs(np.linalg.det(normal)) < 1e-12 * max(1.0, np.abs(normal).max()) ** 2:
        raise DegenerateJacobian("J J^T is singular")
    p = np.linalg.solve(normal, a.T @ rhs)
    return Impulse.from_array(p), float(np.linalg.norm(a @ p - rhs))


def recover_impulse(event: ImpactEvent, body: BodyModel, weights=None) -> Impulse:
    return recover_impulse_with_residual(event, body, weights)[0]


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    seed_grid: int = 32
    shrink: float = 0.5
    min_step: float = 1e-6
    mu_max: float = MU_MAX
    range_tol_fraction: float = 0.01
    n_starts: int = 8
    seed_lm_iters: int = 30
    max_iter: int = 5000
    weights: tuple | None = None


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    residual: float
    saturated_mu: bool
    within_range: bool
    mu_bound: float = float("inf")

    def __post_init__(self):
        if not self.residual >= 0:
            raise ValueError("residual must be non-negative")

    def to_dict(self) -> dict:
        return {
            "mu": self.params.mu,
            "eps": self.params.eps,
            "residual": self.residual,
            "saturated_mu": self.saturated_mu,
            "within_range": self.within_range,
        }


@dataclass(frozen=True)
class EnsembleFit:
    params_mean: ModelParams
    params_std: tuple[float, float]
    n_events: int
    resamples: int

    def __post_init__(self):
        if min(self.params_std) < 0:
            raise ValueError("standard deviations must be non-negative")


# pattern-search poll directions in (u, eps).  The compass is rotated by the
# golden angle every iteration so that, over time, the polled directions
# become dense; a fixed compass can stall on the floor of a narrow,
# non-smooth valley.
_N_POLL = 16
_GOLDEN = np.pi * (3.0 - np.sqrt(5.0))


def _poll(iteration: int) -> np.ndarray:
    ang = np.arange(_N_POLL) * (2 * np.pi / _N_POLL) + iteration * _GOLDEN
    return np.column_stack([np.cos(ang), np.sin(ang)])


_RESTART_GAP = 1e-3


def _unit_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    g = np.linspace(0.0, 1.0, n)
    gu, ge = np.meshgrid(g, g, indexing="ij")
    return gu.ravel(), ge.ravel()


def _pattern_search(cost, seeds: np.ndarray, opts: FitOptions):
    """Minimise ``cost(rows, U, E)`` on the unit square for every problem.

    ``seeds`` has shape ``(problems, candidates, 2)``.  ``cost`` receives the
    indices of the problems being evaluated and candidate arrays of shape
    ``(len(rows), n)``.  Every problem is refined from its ``opts.n_starts``
    best seeds; returns all refined starts as ``(x, fx)`` with shapes
    ``(problems, starts, 2)`` and ``(problems, starts)``.
    """
    n_problems, n_seeds, _ = seeds.shape
    rows = np.arange(n_problems)
    seed_cost = cost(rows, seeds[..., 0], seeds[..., 1])
    n_starts = min(opts.n_starts, n_seeds)
    k = _start_indices(seed_cost, opts.seed_grid, n_starts)
    owner = np.repeat(rows, n_starts)
    x = seeds[owner, k.ravel()].copy()
    fx = seed_cost[owner, k.ravel()]
    x, fx = _poll_search(cost, owner, x, fx, 1.0 / (opts.seed_grid - 1), opts)
    return x.reshape(n_problems, n_starts, 2), fx.reshape(n_problems, n_starts)


def _start_indices(seed_cost, n_grid: int, n_starts: int) -> np.ndarray:
    """Seed indices to refine: grid-local minima first, best first.

    Ranking seeds by cost alone tends to pick many points along one shallow
    valley; taking one seed per basin reaches the sharp minima too.
    """
    n_problems = len(seed_cost)
    c = seed_cost.reshape(n_problems, n_grid, n_grid)
    pad = np.pad(c, ((0, 0), (1, 1), (1, 1)), constant_values=np.inf)
    local = np.ones_like(c, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                local &= c <= pad[:, 1 + di:1 + di + n_grid, 1 + dj:1 + dj + n_grid]
    local = local.reshape(n_problems, -1)
    # local minima sort ahead of everything else, each group by cost
    key = np.where(local, seed_cost, np.inf)
    order = np.lexsort((seed_cost, key), axis=1)
    return order[:, :n_starts]


def _poll_search(cost, owner, x, fx, step0, opts: FitOptions):
    """Pattern search from the points ``x`` (one per row, problem ``owner``)."""
    x, fx = x.copy(), fx.copy()
    step = np.full(len(owner), float(step0))
    for it in range(opts.max_iter):
        active = np.flatnonzero(step >= opts.min_step)
        if active.size == 0:
            break
        poll = _poll(it)
        cand = np.clip(x[active, None, :] + step[active, None, None] * poll[None], 0.0, 1.0)
        fc = cost(owner[active], cand[..., 0], cand[..., 1])
        j = np.argmin(fc, axis=1)
        best = fc[np.arange(active.size), j]
        better = best < fx[active]
        moved = active[better]
        x[moved] = cand[better, j[better]]
        fx[moved] = best[better]
        step[active[~better]] *= opts.shrink
    return x, fx


def _best_start(x, fx):
    rows = np.arange(len(x))
    pick = np.argmin(fx, axis=1)
    return x[rows, pick], fx[rows, pick]


def _event_arrays(events, body, weights=None):
    frames = [event_frame(e, body) for e in events]
    a, b, c, vt, vn = frame_arrays(frames)
    meas = np.array([recover_impulse(e, body, weights).as_array() for e in events])
    stick = np.array([np.linalg.norm(f.m_c @ f.v_c) for f in frames])
    return (a, b, c, vt, vn), meas, stick


def _lm_polish(resid, x, fx, iters: int = 60, h: float = 1e-7):
    """Bounded Levenberg-Marquardt steps on ``resid`` that only accept descent.

    ``resid(x)`` maps ``(n, 2)`` points of the unit square to ``(n, 2)``
    impulse residuals.  Pattern search alone crawls along the narrow valleys
    these residuals produce; Gauss-Newton steps follow them directly.
    """
    lam = np.full(len(x), 1e-3)
    eye = np.eye(2)
    for _ in range(iters):
        r = resid(x)
        jac = np.empty((len(x), 2, 2))
        for k in range(2):
            sign = np.where(x[:, k] + h <= 1.0, 1.0, -1.0)
            xp = x.copy()
            xp[:, k] += sign * h
            jac[:, :, k] = (resid(xp) - r) / (sign * h)[:, None]
        jtj = np.einsum("nik,nil->nkl", jac, jac)
        damp = lam[:, None, None] * (jtj * eye + 1e-12 * eye)
        g = np.einsum("nik,ni->nk", jac, r)
        try:
            delta = -np.linalg.solve(jtj + damp, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        delta = np.where(np.isfinite(delta), delta, 0.0)
        xn = np.clip(x + delta, 0.0, 1.0)
        fn = np.linalg.norm(resid(xn), axis=1)
        better = fn < fx
        x[better] = xn[better]
        fx[better] = fn[better]
        lam = np.where(better, lam / 5.0, np.minimum(lam * 4.0, 1e12))
    return x, fx


def _fit_independent(model, arrs, meas, opts: FitOptions):
    """Separate fits over ``[0, mu_s(eps)] x [0, 1]`` for every event.

    For models whose predictions stop changing once the contact sticks,
    searching ``mu`` over ``[0, mu_max]`` and projecting the optimum onto
    ``[0, mu_s(eps*)]`` gives the same minimiser without evaluating the
    threshold inside the search.
    """
    n = len(meas)
    mu_max = opts.mu_max

    def cost(rows, u, e):
        sub = [x[rows, None] for x in arrs]
        pt, pn, _, _ = predict_arrays(model, *sub, u * mu_max, e)
        return np.hypot(pt - meas[rows, 0, None], pn - meas[rows, 1, None])

    # seeds fill the box [0, mu_s(eps)] x [0, 1]
    gu, ge = _unit_grid(opts.seed_grid)
    eps_axis = np.linspace(0.0, 1.0, opts.seed_grid)
    if model.saturates:
        col = mu_s_arrays(model, *[x[:, None] for x in arrs], eps_axis[None, :], mu_max)
        hi = np.minimum(col, mu_max) / mu_max
    else:
        hi = np.ones((n, opts.seed_grid))
    e_idx = np.rint(ge * (opts.seed_grid - 1)).astype(int)
    seeds = np.stack(np.broadcast_arrays(gu[None, :] * hi[:, e_idx], ge[None, :]), axis=-1)
    xs, fxs = _pattern_search(cost, seeds, opts)
    n_starts = xs.shape[1]
    owner = np.repeat(np.arange(n), n_starts)

    def resid_starts_rows(x, rows):
        sub = [a_[rows] for a_ in arrs]
        pt, pn, _, _ = predict_arrays(model, *sub, x[:, 0] * mu_max, x[:, 1])
        return np.column_stack([pt, pn]) - meas[rows]

    def resid_starts(x):
        return resid_starts_rows(x, owner)

    xp, fxp = _lm_polish(resid_starts, xs.reshape(-1, 2), fxs.ravel())
    if model.saturates:
        # beyond the sticking threshold the cost is flat in mu, so a start
        # that ends there cannot see a better optimum on the sliding side;
        # restart each such start just below the threshold
        mu_s_p = mu_s_arrays(model, *[a_[owner] for a_ in arrs], xp[:, 1], mu_max)
        stuck = np.isfinite(mu_s_p) & (xp[:, 0] * mu_max >= mu_s_p * (1 - 1e-9))
        if stuck.any():
            xr = np.column_stack([mu_s_p * (1 - _RESTART_GAP) / mu_max, xp[:, 1]])[stuck]
            rows = owner[stuck]
            fr = cost(rows, xr[:, :1], xr[:, 1:])[:, 0]
            xr, fr = _poll_search(lambda r, u, e: cost(rows[r], u, e), np.arange(len(rows)),
                                  xr, fr, _RESTART_GAP, opts)
            xr, fr = _lm_polish(lambda x_: resid_starts_rows(x_, rows), xr, fr)
            take = fr < fxp[stuck]
            idx = np.flatnonzero(stuck)[take]
            xp[idx], fxp[idx] = xr[take], fr[take]
    # every seed also gets a few Gauss-Newton steps: inside one smooth piece
    # of the prediction they converge fast, which catches optima lying in a
    # thin corner of a piece that no grid seed resolves
    n_seeds = seeds.shape[1]
    seed_owner = np.repeat(np.arange(n), n_seeds)
    xs_all = seeds.reshape(-1, 2).copy()
    fs_all = np.linalg.norm(resid_starts_rows(xs_all, seed_owner), axis=1)
    xs_all, fs_all = _lm_polish(lambda x_: resid_starts_rows(x_, seed_owner), xs_all, fs_all,
                                iters=opts.seed_lm_iters)
    xp = np.concatenate([xp.reshape(n, n_starts, 2), xs_all.reshape(n, n_seeds, 2)], axis=1)
    fxp = np.concatenate([fxp.reshape(n, n_starts), fs_all.reshape(n, n_seeds)], axis=1)
    x, fx = _best_start(xp, fxp)
    mu, eps = x[:, 0] * mu_max, x[:, 1]
    mu_s = mu_s_arrays(model, *arrs, eps, mu_max)
    top = np.minimum(mu_s, mu_max) if model.saturates else np.full(n, mu_max)
    saturated = model.saturates & np.isfinite(mu_s) & (mu >= top - opts.min_step * mu_max)
    mu = np.where(saturated, top, np.minimum(mu, top))
    return mu, eps, fx, saturated, mu_s


def _results(mu, eps, res, sat, mu_s, tol):
    return [
        FitResult(ModelParams(float(m), float(e)), float(r), bool(s), bool(r < t), float(b))
        for m, e, r, s, b, t in zip(mu, eps, res, sat, mu_s, tol)
    ]


def fit_many(model, events, body: BodyModel, opts: FitOptions = FitOptions()) -> list[FitResult]:
    """Independent single-event fits, solved together."""
    if len(events) == 0:
        raise EmptyBatch("no events to fit")
    model = ModelId.parse(model)
    arrs, meas, stick = _event_arrays(events, body, opts.weights)
    mu, eps, res, sat, mu_s = _fit_independent(model, arrs, meas, opts)
    return _results(mu, eps, res, sat, mu_s, opts.range_tol_fraction * stick)


def fit_single(model, event: ImpactEvent, body: BodyModel, opts: FitOptions = FitOptions()) -> FitResult:
    return fit_many(model, [event], body, opts)[0]


def _fit_sets(model, arrs, meas, subsets: np.ndarray, opts: FitOptions):
    """One shared ``(mu, eps)`` per row of ``subsets`` (event indices)."""
    mu_max = opts.mu_max

    def cost(rows, u, e):
        idx = subsets[rows]
        sub = [x[idx][:, None, :] for x in arrs]
        pt, pn, _, _ = predict_arrays(model, *sub, (u * mu_max)[..., None], e[..., None])
        m = meas[idx][:, None, :, :]
        return np.hypot(pt - m[..., 0], pn - m[..., 1]).sum(axis=-1)

    gu, ge = _unit_grid(opts.seed_grid)
    seeds = np.broadcast_to(np.column_stack([gu, ge])[None], (len(subsets), gu.size, 2))
    x, fx = _best_start(*_pattern_search(cost, seeds, opts))
    mu, eps = x[:, 0] * mu_max, x[:, 1]
    # beyond every event's sticking threshold the cost is flat; report the
    # smallest friction coefficient that reaches it
    mu_s = mu_s_arrays(model, *[x_[subsets] for x_ in arrs], eps[:, None], mu_max)
    top = mu_s.max(axis=1)
    saturated = model.saturates & np.isfinite(top) & (mu >= top - opts.min_step * max(mu_max, 1.0))
    mu = np.where(saturated, top, mu)
    return mu, eps, fx, saturated, top


def fit_batch(model, events, body: BodyModel, opts: FitOptions = FitOptions()) -> FitResult:
    """Single ``(mu, eps)`` minimising the summed impulse distance."""
    if len(events) == 0:
        raise EmptyBatch("no events to fit")
    model = ModelId.parse(model)
    if len(events) == 1:
        # the single-event solver adds a least-squares polish
        return fit_many(model, events, body, opts)[0]
    arrs, meas, stick = _event_arrays(events, body, opts.weights)
    subsets = np.arange(len(events))[None, :]
    mu, eps, res, sat, top = _fit_sets(model, arrs, meas, subsets, opts)
    tol = opts.range_tol_fraction * stick.sum()
    return _results(mu, eps, res, sat, top, [tol])[0]


@dataclass(frozen=True)
class ConvergenceRow:
    k: int
    mu_mean: float
    mu_std: float
    eps_mean: float
    eps_std: float
    resamples: int


def convergence_study(
    model,
    events,
    body: BodyModel,
    ks,
    resamples: int = 20,
    rng=None,
    opts: FitOptions = FitOptions(),
) -> list[ConvergenceRow]:
    """Batch fits on random subsets of each size in ``ks``."""
    if len(events) == 0:
        raise EmptyBatch("no events to fit")
    ks = [int(k) for k in ks]
    if min(ks) < 1 or max(ks) > len(events):
        raise ValueError(f"subset sizes must lie in [1, {len(events)}]")
    rng = np.random.default_rng(rng)
    model = ModelId.parse(model)
    arrs, meas, _ = _event_arrays(events, body, opts.weights)
    rows = []
    for k in ks:
        subsets = np.array([rng.choice(len(events), k, replace=False) for _ in range(resamples)])
        mu, eps, _, _, _ = _fit_sets(model, arrs, meas, subsets, opts)
        rows.append(ConvergenceRow(k, float(mu.mean()), float(mu.std()), float(eps.mean()),
                                   float(eps.std()), resamples))
    return rows


def ensemble_fit(
    model, events, body: BodyModel, k=None, resamples: int = 20, rng=None,
    opts: FitOptions = FitOptions(),
) -> EnsembleFit:
    """Mean and spread of batch fits on ``resamples`` random subsets of size ``k``."""
    k = len(events) if k is None else int(k)
    row = convergence_study(model, events, body, [k], resamples, rng, opts)[0]
    return EnsembleFit(ModelParams(row.mu_mean, row.eps_mean), (row.mu_std, row.eps_std),
                       k, resamples)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def model_post_velocity(model, params: ModelParams, event: ImpactEvent, body: BodyModel) -> np.ndarray:
    frame = event_frame(event, body)
    p = predict(model, frame, params).impulse
    return apply_impulse(event.state(), body, frame, p).v


def model_error(model, params: ModelParams, event: ImpactEvent, body: BodyModel) -> float:
    return velocity_error(model_post_velocity(model, params, event, body), event.v_post, body).value


@dataclass(frozen=True)
class PosthocResult:
    best: ModelId
    best_error: float
    worst: ModelId
    worst_error: float
    errors: dict = field(default_factory=dict)
    tie_tol: float = 1e-12

    def best_set(self) -> list[ModelId]:
        """Every model within ``tie_tol`` of the best error."""
        tol = self.tie_tol * max(1.0, self.best_error)
        return [m for m, e in self.errors.items() if e <= self.best_error + tol]

    def worst_set(self) -> list[ModelId]:
        tol = self.tie_tol * max(1.0, self.worst_error)
        return [m for m, e in self.errors.items() if e >= self.worst_error - tol]


def posthoc_best(event: ImpactEvent, body: BodyModel, ensemble: dict) -> PosthocResult:
    """Best and worst model for one event, each at its ensemble parameters.

    Ties go to the model listed first in the canonical model order; use
    ``best_set``/``worst_set`` to see every tied model.
    """
    if not ensemble:
        raise EmptyBatch("ensemble is empty")
    order = [m for m in ALL_MODELS if m in {ModelId.parse(k) for k in ensemble}]
    params = {ModelId.parse(k): v for k, v in ensemble.items()}
    errors = {m: model_error(m, _as_params(params[m]), event, body) for m in order}
    best = min(order, key=lambda m: errors[m])
    worst = max(order, key=lambda m: errors[m])
    return PosthocResult(best, errors[best], worst, errors[worst], errors)


def _as_params(p) -> ModelParams:
    if isinstance(p, ModelParams):
        return p
    if isinstance(p, EnsembleFit):
        return p.params_mean
    return ModelParams(*p)


def irb_bound(event: ImpactEvent, body: BodyModel) -> tuple[Impulse, float]:
    """Admissible impulse closest to the measured outcome, and its error."""
    frame = event_frame(event, body)
    state = event.state()
    p = project_outcome(EnergyEllipse(frame), event.v_post, body, state)
    post = apply_impulse(state, body, frame, p).v
    return p, velocity_error(post, event.v_post, body).value


def coverage_fraction(
    model, events, body: BodyModel, range_tol=None, opts: FitOptions = FitOptions()
) -> float:
    """Fraction of events some ``(mu, eps)`` of ``model`` reproduces.

    An event counts when its single-event fit residual is below
    ``range_tol`` (N s); by default the tolerance is a fraction
    ``opts.range_tol_fraction`` of that event's stick-impulse magnitude.
    """
    fits = fit_many(model, events, body, opts)
    if range_tol is None:
        inside = [f.within_range for f in fits]
    else:
        inside = [f.residual < range_tol for f in fits]
    return float(np.mean(inside))
