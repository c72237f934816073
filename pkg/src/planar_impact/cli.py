"""Command-line entry point: ``planar-impact <command> ...``.

Exit codes: 0 success, 1 validation or processing failure, 2 usage error.
The JSON config (``--config`` or ``$PLANAR_IMPACT_CONFIG``) may hold
``body``, ``sim``, ``pipeline``, ``sampler`` and ``frame`` sections.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .dynamics import BodyModel, PlanarState, build_contact_frame, load_body, save_body
from .errors import PlanarImpactError, TooShort
from .evaluation import (
    HEATMAP_HEADER,
    SCATTER_HEADER,
    error_distribution,
    evaluate,
    momentum_heatmap,
    parameter_scatter,
    write_csv,
)
from .feasible import EnergyEllipse
from .models import ALL_MODELS, ModelId, ModelParams, region_trace
from .simulator import SimConfig, generate_dataset, write_dataset
from .sysid import (
    EnsembleFit,
    FitOptions,
    convergence_study,
    coverage_fraction,
    ensemble_fit,
    fit_batch,
    fit_many,
)
from .trajectory import (
    PipelineConfig,
    detect_impacts,
    extract_events,
    load_events,
    load_trajectory,
    save_events,
    validate,
)

CONFIG_ENV = "PLANAR_IMPACT_CONFIG"
DEFAULT_BODY = BodyModel.rectangle(0.1, 0.06, 0.5, name="rectangle")
DEFAULT_FRAME = {"q": [0.0, 0.05, 0.3], "v": [0.5, -2.0, 3.0]}

log = logging.getLogger("planar_impact")


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _body(args, cfg) -> BodyModel:
    if getattr(args, "body", None):
        return load_body(args.body)
    entry = cfg.get("body")
    if entry is None:
        return DEFAULT_BODY
    if isinstance(entry, str):
        return load_body(entry)
    return BodyModel.from_dict(entry)


def _section(cls, cfg, key):
    try:
        return cls.from_dict(cfg.get(key, {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad '{key}' config: {exc}") from None


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    return path


def _models(names) -> list[ModelId]:
    if not names or names == ["all"]:
        return list(ALL_MODELS)
    try:
        return [ModelId.parse(n) for n in names]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _csv_inputs(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.csv")))
        elif p.suffix == ".json" and p.name == "manifest.json":
            out.extend(p.parent / row["csv"] for row in json.loads(p.read_text()))
        else:
            out.append(p)
    if not out:
        raise UsageError("no trajectory files given")
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    sim = _section(SimConfig, cfg, "sim")
    if args.noise is not None:
        sim = SimConfig.from_dict({**sim.to_dict(), "noise_sigma": args.noise,
                                   "noise_sigma_theta": args.noise / body.radius_of_gyration})
    sampler = cfg.get("sampler", {})
    model = None if args.model == "mixed" else _models([args.model])[0]
    params = ModelParams(args.mu, args.eps) if args.mu is not None and args.eps is not None else None
    records = generate_dataset(
        args.n, body, model, params, sim, seed=args.seed,
        mu_range=tuple(sampler.get("mu_range", (0.1, 1.0))),
        eps_range=tuple(sampler.get("eps_range", (0.2, 0.8))),
    )
    manifest = write_dataset(records, out)
    save_body(body, out / "body.json")
    save_events([e for r in records for e in r.truth_events], out / "truth_events.json")
    print(manifest)
    return 0


def cmd_validate(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    pc = _section(PipelineConfig, cfg, "pipeline")
    reports, ok = {}, True
    for path in _csv_inputs(args.inputs):
        try:
            rep = validate(load_trajectory(path, body.name), body, pc)
        except TooShort as exc:
            # too short to judge; reported but not counted as a failure
            reports[str(path)] = {"passed": None, "skipped": str(exc)}
            print(f"SKIP {path}: {exc}")
            continue
        reports[str(path)] = rep.to_dict()
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'} {path}")
    _write_json(out / "validation.json", reports)
    return 0 if ok else 1


def cmd_events(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    pc = _section(PipelineConfig, cfg, "pipeline")
    events, dropped = [], []
    for path in _csv_inputs(args.inputs):
        series = load_trajectory(path, body.name)
        series.meta["drop_id"] = path.stem
        skipped = []
        events.extend(extract_events(series, body, pc, skipped))
        dropped.extend({"file": str(path), "sample": d.sample, "reason": d.reason} for d in skipped)
        if args.plot:
            plotting.plot_trajectory(series, detect_impacts(series, pc, body.radius_of_gyration),
                                     out / f"{path.stem}_trajectory", args.svg)
    save_events(events, out / "events.json")
    _write_json(out / "dropped_events.json", dropped)
    print(f"{len(events)} events, {len(dropped)} dropped -> {out / 'events.json'}")
    return 0


def _fit_options(args) -> FitOptions:
    return FitOptions() if args.mu_max is None else FitOptions(mu_max=args.mu_max)


def cmd_identify(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    events = load_events(args.events)
    opts = _fit_options(args)
    result = {}
    for m in _models(args.model):
        if args.mode == "single":
            fits = fit_many(m, events, body, opts)
            rows = parameter_scatter(fits)
            write_csv(out / f"params_{m.value}.csv", SCATTER_HEADER, rows)
            plotting.plot_parameter_scatter(rows, title=m.value, stem=out / f"params_{m.value}", svg=args.svg)
            result[m.value] = [dict(f.to_dict(), event_id=e.event_id) for f, e in zip(fits, events)]
        elif args.mode == "batch":
            result[m.value] = fit_batch(m, events, body, opts).to_dict()
        else:
            ks = args.k or [k for k in (1, 2, 5, 10, 20, 50, 100) if k <= len(events)]
            rows = convergence_study(m, events, body, ks, args.resamples, args.seed, opts)
            write_csv(out / f"convergence_{m.value}.csv",
                      ("k", "mu_mean", "mu_std", "eps_mean", "eps_std", "resamples"),
                      [(r.k, r.mu_mean, r.mu_std, r.eps_mean, r.eps_std, r.resamples) for r in rows])
            plotting.plot_convergence(rows, m.value, out / f"convergence_{m.value}", args.svg)
            result[m.value] = [r.__dict__ for r in rows]
    path = _write_json(out / f"identify_{args.mode}.json", result)
    print(path)
    return 0


def _load_ensemble(path) -> dict:
    data = json.loads(Path(path).read_text())
    ens = {}
    for name, p in data.items():
        if "params" in p:
            p = p["params"]
        ens[ModelId.parse(name)] = EnsembleFit(ModelParams(p["mu"], p["eps"]),
                                               tuple(p.get("std", (0.0, 0.0))), 0, 0)
    return ens


def cmd_evaluate(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    events = load_events(args.events)
    models = _models(args.model)
    opts = _fit_options(args)
    if args.params:
        ens = _load_ensemble(args.params)
        missing = [m.value for m in models if m not in ens]
        if missing:
            raise UsageError(f"no parameters for {', '.join(missing)}")
        ens = {m: ens[m] for m in models}
    else:
        rng = np.random.default_rng(args.seed)
        ens = {m: ensemble_fit(m, events, body, args.k, args.resamples, rng, opts) for m in models}
    coverage = {m: coverage_fraction(m, events, body, opts=opts) for m in models} if args.coverage else None
    summary = evaluate(events, body, ens, coverage)
    summary.write(out)
    dists = {}
    for m in models:
        try:
            dists[m.value] = error_distribution(summary.errors[m], bins=args.bins)
        except PlanarImpactError as exc:
            log.warning("%s: %s", m.value, exc)
            continue
        dists[m.value].write(out / f"error_pdf_{m.value}")
        rows = momentum_heatmap(events, body, m, ens[m], (args.grid, args.grid))
        write_csv(out / f"heatmap_{m.value}.csv", HEATMAP_HEADER, rows)
        plotting.plot_heatmap(rows, m.value, out / f"heatmap_{m.value}", args.svg)
    if dists:
        plotting.plot_error_distributions(dists, out / "error_pdf", args.svg)
    _write_json(out / "summary.json", {
        "n_events": summary.n_events,
        "params": {m.value: {"mu": ens[m].params_mean.mu, "eps": ens[m].params_mean.eps,
                             "std": list(ens[m].params_std)} for m in models},
        "best": {m.value: summary.best[m] for m in models},
        "worst": {m.value: summary.worst[m] for m in models},
        "coverage": {m.value: v for m, v in summary.coverage.items()},
        "mean_error": {m.value: float(np.mean(summary.errors[m])) for m in models},
        "mean_posthoc_error": float(np.mean(summary.posthoc_errors)),
        "mean_irb_error": float(np.mean(summary.irb_errors)),
    })
    print(out / "table1.csv")
    return 0


def cmd_regions(args, cfg, out: Path) -> int:
    body = _body(args, cfg)
    fr = {**DEFAULT_FRAME, **cfg.get("frame", {})}
    state = PlanarState(np.array(fr["q"], float), np.array(fr["v"], float), 0.0)
    contact = fr.get("contact_point")
    if contact is None:
        verts = body.world_vertices(state.q)
        contact = verts[np.argmin(verts[:, 1])]
    frame = build_contact_frame(state, body, contact)
    ell = EnergyEllipse(frame)
    pts, tags = ell.boundary_polyline(args.n)
    write_csv(out / "ellipse.csv", ("p_t", "p_n", "tag"), [(p[0], p[1], t) for p, t in zip(pts, tags)])
    models = list(ALL_MODELS) if args.all else _models(args.model)
    traces = {}
    for m in models:
        tr = region_trace(m, frame, (args.grid, args.grid))
        write_csv(out / f"hull_{m.value}.csv", ("p_t", "p_n"), tr.hull)
        write_csv(out / f"trace_{m.value}.csv", ("model", "mu", "eps", "p_t", "p_n"),
                  [(m.value, mu, e, p[0], p[1]) for mu, e, p in zip(tr.mu, tr.eps, tr.points)])
        traces[m.value] = tr.hull
    lines = []
    for ln in (ell.line_of_sticking(), ell.line_of_max_compression()):
        seg = ell.line_ellipse_intersections(ln)
        if seg:
            lines.append((ln.tag.replace("_", " "), seg[0], seg[1]))
    write_csv(out / "lines.csv", ("p_t", "p_n", "tag"),
              [(p[0], p[1], tag) for tag, *ends in lines for p in ends])
    plotting.plot_regions(pts, traces, lines, out / "regions", args.svg)
    print(f"{len(traces)} hulls -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help=f"JSON config (default ${CONFIG_ENV})")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("--body", help="body JSON, overrides the config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="planar-impact", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic drop dataset")
    p.add_argument("--n", type=int, default=10, help="number of drops")
    p.add_argument("--model", default="mixed", help="impact model or 'mixed'")
    p.add_argument("--mu", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--noise", type=float, help="position noise sigma in m")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", parents=[common], help="check trajectories")
    p.add_argument("inputs", nargs="+", help="CSV files, directories or manifest.json")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("events", parents=[common], help="extract impact events")
    p.add_argument("inputs", nargs="+", help="CSV files, directories or manifest.json")
    p.add_argument("--plot", action="store_true", help="plot each trajectory")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("identify", parents=[common], help="fit model parameters")
    p.add_argument("--events", required=True)
    p.add_argument("--model", nargs="+", default=["all"])
    p.add_argument("--mode", choices=("single", "batch", "convergence"), default="batch")
    p.add_argument("--k", type=int, nargs="+", help="subset sizes for convergence")
    p.add_argument("--resamples", type=int, default=20)
    p.add_argument("--mu-max", type=float)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", parents=[common], help="compare models on events")
    p.add_argument("--events", required=True)
    p.add_argument("--model", nargs="+", default=["all"])
    p.add_argument("--params", help="JSON of per-model parameters; fitted if omitted")
    p.add_argument("--k", type=int, help="events per ensemble fit (default all)")
    p.add_argument("--resamples", type=int, default=20)
    p.add_argument("--coverage", action="store_true", help="also compute coverage fractions")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--grid", type=int, default=12, help="heat-map bins per axis")
    p.add_argument("--mu-max", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("regions", parents=[common], help="admissible region and model hulls")
    p.add_argument("--all", action="store_true", help="all six models")
    p.add_argument("--model", nargs="+", default=["all"])
    p.add_argument("--n", type=int, default=64, help="ellipse boundary points")
    p.add_argument("--grid", type=int, default=40, help="parameter grid per axis")
    p.set_defaults(func=cmd_regions)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PlanarImpactError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
