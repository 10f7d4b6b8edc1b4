"""Command-line entry point: ``rdsline <command> [--config FILE] ...``.

Every command writes ``report.json`` to the output directory; ``phi``,
``classify``, ``measure`` and ``monster`` also write CSV tables, and
``--plot`` adds SVG figures.  Exit status is 0 on success, 2 when the
requested construction is refused, 3 for configuration errors and 1 for a
failed ``--verify``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, rng
from .config import COMMANDS, ConfigError, RunConfig, canonical_json, classify_options, parse_config
from .harmonic import NotConverged, solve_phi_window
from .measure import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_CYCLES,
    DEFAULT_LADDER,
    Refusal,
    StoppingFunction,
    build_case2_semi,
    build_case3_radon,
    build_case4_measure,
)
from .monster import check_rank_lemmas, frequency_test, pooled_record_events, record_events, run_many
from .system import check_shiftability
from .walk import classify_system, estimate_phi_many

EXIT_OK, EXIT_VERIFY, EXIT_REFUSED, EXIT_CONFIG = 0, 1, 2, 3
POOL_SALT = 0x6A09E667F3BCC908
VOLATILE_KEYS = ("wall_time",)


@dataclass
class Artifacts:
    """Files produced by one command, kept in memory until written."""

    files: dict[str, bytes] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def csv(self, name: str, rows: list[dict]) -> None:
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        self.files[name] = buf.getvalue().encode()

    def svg(self, name: str, draw: Callable) -> None:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            self.notes.append(f"{name} skipped: matplotlib is not installed")
            return
        with matplotlib.rc_context({"svg.hashsalt": "rdsline", "svg.fonttype": "none"}):
            fig, ax = plt.subplots(figsize=(6, 4))
            draw(ax)
            fig.tight_layout()
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            plt.close(fig)
        self.files[name] = buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# commands; each returns (status, refusal, result) and fills artifacts

def cmd_check(cfg: RunConfig, art: Artifacts, workers):
    opts = cfg.block("check")
    window = tuple(opts.get("window", (-1000.0, 1000.0)))
    report = check_shiftability(cfg.system, window, opts.get("grid_points", 20001))
    return "ok", None, {"system": report.to_json()}


def cmd_phi(cfg: RunConfig, art: Artifacts, workers):
    opts = cfg.block("phi")
    if "points" in opts:
        xs = [float(x) for x in opts["points"]]
    else:
        a, b = opts.get("window", (-20.0, 20.0))
        step = opts.get("step", 1.0)
        xs = list(np.linspace(a, b, int(round((b - a) / step)) + 1))
    est = estimate_phi_many(cfg.system, xs, cfg.params, workers)
    rows = [e.to_row() for e in est]
    result = {"points": len(rows)}
    if opts.get("solver", False):
        win = tuple(opts.get("window", (-50.0, 50.0)))
        try:
            sol = solve_phi_window(cfg.system, win, opts.get("grid_size", 2000),
                                   opts.get("tol", 1e-8))
        except NotConverged as exc:
            return "refused", str(exc), result
        for r in rows:
            r["phi_window"] = float(sol(r["x"]))
        result["solver"] = {"window": list(win), "residual": sol.residual,
                            "iterations": sol.iterations}
    art.csv("phi.csv", rows)
    if cfg.plot:
        def draw(ax):
            ax.errorbar([r["x"] for r in rows], [r["phi_plus"] for r in rows],
                        yerr=[r["ci"] for r in rows], fmt="o", ms=3, label="Monte Carlo")
            if "phi_window" in rows[0]:
                ax.plot([r["x"] for r in rows], [r["phi_window"] for r in rows], label="window")
            ax.set_xlabel("x")
            ax.set_ylabel("P(tends to +inf)")
            ax.legend()
        art.svg("phi.svg", draw)
    return "ok", None, result


def _verdict(cfg, workers):
    return classify_system(cfg.system, params=cfg.params, workers=workers,
                           **classify_options(cfg))


def cmd_classify(cfg: RunConfig, art: Artifacts, workers):
    v = _verdict(cfg, workers)
    art.csv("phi_forward.csv", [e.to_row() for e in v.forward])
    art.csv("phi_inverse.csv", [e.to_row() for e in v.inverse])
    if cfg.plot and v.forward:
        def draw(ax):
            for side, ests in (("forward", v.forward), ("inverse", v.inverse)):
                ax.plot([e.x for e in ests], [e.phi_plus for e in ests], "o-", label=side)
            ax.set_xlabel("x")
            ax.set_ylabel("P(tends to +inf)")
            ax.legend()
        art.svg("classify.svg", draw)
    result = v.to_json()
    if v.refused:
        return "refused", v.refusal, result
    return "ok", None, result


def cmd_measure(cfg: RunConfig, art: Artifacts, workers):
    opts = cfg.block("measure")
    case = opts.get("case", "auto")
    v = classify_system(cfg.system, params=cfg.params.replace(trials=2000), workers=workers,
                        **classify_options(cfg))
    result = {"classification": {"class": v.klass, "refusal": v.refusal,
                                 "swapped": v.swapped,
                                 "orientation_reversed": v.orientation_reversed}}
    if v.refused:
        return "refused", v.refusal, result
    if case == "auto":
        case = {2: "2", 3: "3", 4: "4"}.get(v.klass)
        if case is None:
            return "refused", f"class {v.klass} has no recurrent side to build a measure on", result
    try:
        if case == "4":
            nu = build_case4_measure(cfg.system, cfg.params, tuple(opts.get("window", (-20, 20))),
                                     opts.get("step", 1.0), verdict=v, workers=workers)
            hist = None
        elif case == "2":
            nu = build_case2_semi(cfg.system, opts.get("y", -20.0), cfg.params,
                                  step=opts.get("step", 1.0),
                                  region_top=opts.get("region_top", 20.0), verdict=v,
                                  workers=workers)
            hist = None
        else:
            if v.klass != 3:
                return "refused", f"case 3 needs a class-3 system; got class {v.klass}", result
            ladder = [StoppingFunction(float(L)) for L in opts.get("ladder", DEFAULT_LADDER)]
            res = build_case3_radon(
                cfg.system, ladder, cfg.params.replace(trials=opts.get("chains", 64)),
                opts.get("x0", 0.0), opts.get("bin_width", DEFAULT_BIN_WIDTH),
                opts.get("cycles", DEFAULT_CYCLES), opts.get("burn", 1000), workers=workers)
            nu, hist = res.measure, res
    except Refusal as exc:
        return "refused", str(exc), result
    result["case"] = case
    result["measure"] = nu.header()
    result["within_tolerance"] = bool(nu.residual is not None and nu.tolerance is not None
                                      and nu.residual <= nu.tolerance)
    art.csv("measure.csv", nu.to_rows())
    if hist is not None:
        result["consistency"] = hist.consistency
        result["atoms"] = hist.atoms
        for lv in hist.levels:
            art.csv(f"histogram_L{lv.psi.plateau:g}.csv",
                    [{"center": float(c), "mass": float(m)} for c, m in zip(lv.centers, lv.mass)])
    if cfg.plot:
        def draw(ax):
            ax.step(nu.grid, nu.cdf, where="post" if nu.interpolation == "step" else "mid")
            ax.set_xlabel("x")
            ax.set_ylabel("distribution function")
        art.svg("measure.svg", draw)
    if hist is not None and not hist.consistent:
        return "refused", "cross-level inconsistency beyond tolerance; see histograms", result
    return "ok", None, result


def _log_points(n: int) -> np.ndarray:
    pts = np.unique(np.round(np.logspace(0, math.log10(n), 200)).astype(np.int64))
    return pts[(pts >= 1) & (pts <= n)]


def cmd_monster(cfg: RunConfig, art: Artifacts, workers):
    opts = cfg.block("monster")
    steps = int(opts.get("steps", 10**6))
    runs = int(opts.get("runs", 1))
    J = tuple(float(v) for v in opts.get("J", (-10.0, 10.0)))
    seeds = [cfg.master_seed + i for i in range(runs)]
    traces = run_many(cfg.system, steps, seeds, J, workers)
    per_seed, kn_rows = [], []
    recs, eqs, dbls = [], [], []
    for tr in traces:
        row = tr.summary()
        row.update({f"lemma_{k}": v for k, v in check_rank_lemmas(tr).to_json().items()
                    if k.startswith("last_")})
        per_seed.append(row)
        K = tr.running_max
        for n in _log_points(steps):
            kn_rows.append({"seed": tr.seed, "n": int(n), "K_n": int(K[n - 1])})
        r, e, d = record_events(tr.ranks)
        recs.append(r), eqs.append(e), dbls.append(d)
    pool_runs = int(opts.get("pool_runs", 0))
    if pool_runs:
        r, e, d = pooled_record_events(cfg.master_seed ^ POOL_SALT, pool_runs,
                                       int(opts.get("pool_steps", 10000)), workers)
        recs.append(r), eqs.append(e), dbls.append(d)
    rec, eq, dbl = (np.concatenate(x) for x in (recs, eqs, dbls))
    freq = frequency_test(rec, eq, dbl) if rec.size else None
    art.csv("monster.csv", [{k: v for k, v in r.items() if k != "J"} for r in per_seed])
    art.csv("kn.csv", kn_rows)
    if cfg.plot:
        def draw(ax):
            for tr in traces[:10]:
                pts = _log_points(steps)
                ax.loglog(pts, tr.running_max[pts - 1], lw=0.8)
            ax.loglog(_log_points(steps), np.sqrt(_log_points(steps)), "k--", label="sqrt(n)")
            ax.set_xlabel("n")
            ax.set_ylabel("K_n")
            ax.legend()
        art.svg("kn.svg", draw)
    late = sum(1 for r in per_seed if r["last_inside_step"] > 10**4)
    result = {
        "variant": cfg.system.variant, "steps": steps, "runs": runs, "J": list(J),
        "seeds": per_seed,
        "seeds_with_inside_after_1e4": late,
        "record_frequency": freq,
        "pooled_rank_only_runs": pool_runs,
    }
    return "ok", None, result


DISPATCH = {"check": cmd_check, "phi": cmd_phi, "classify": cmd_classify,
            "measure": cmd_measure, "monster": cmd_monster}


def execute(cfg: RunConfig, workers: int | None = None) -> tuple[int, dict, Artifacts]:
    """Run a command in memory; returns (exit code, report, artifacts)."""
    workers = workers if workers is not None else cfg.workers
    art = Artifacts()
    t0 = time.perf_counter()
    status, refusal, result = DISPATCH[cfg.command](cfg, art, workers)
    report = {
        "command": cfg.command,
        "status": status,
        "refusal": refusal,
        "config_hash": cfg.config_hash,
        "seed": cfg.master_seed,
        "generator": rng.GENERATOR_ID,
        "version": __version__,
        "system": cfg.system_json,
        "params": cfg.effective()["params"],
        "result": _jsonable(result),
        "artifacts": sorted(art.files) + ["report.json"],
        "notes": art.notes,
        "wall_time": round(time.perf_counter() - t0, 3),
    }
    return (EXIT_OK if status == "ok" else EXIT_REFUSED), report, art


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def run(cfg: RunConfig, out_dir: str | Path | None = None, workers: int | None = None) -> int:
    """Execute and write artifacts atomically; returns the exit code."""
    code, report, art = execute(cfg, workers)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    for name, data in sorted(art.files.items()):
        write_atomic(out / name, data)
    write_atomic(out / "report.json", report_bytes(report))
    return code


def strip_volatile(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


def diff_dirs(a: Path, b: Path) -> list[str]:
    """Names of artifacts that differ, ignoring wall time in report.json."""
    names = sorted({p.name for p in a.iterdir()} | {p.name for p in b.iterdir()})
    bad = []
    for n in names:
        pa, pb = a / n, b / n
        if not (pa.exists() and pb.exists()):
            bad.append(n)
        elif n == "report.json":
            ra, rb = json.loads(pa.read_text()), json.loads(pb.read_text())
            if canonical_json(strip_volatile(ra)) != canonical_json(strip_volatile(rb)):
                bad.append(n)
        elif pa.read_bytes() != pb.read_bytes():
            bad.append(n)
    return bad


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdsline", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--fixture", help="bundled system name instead of a config system")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--workers", type=int, help="worker threads (default: RDSLINE_WORKERS)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trials", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--escape", type=float)
    p.add_argument("--window", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--plot", action="store_true", help="also write SVG figures")
    p.add_argument("--verify", action="store_true", help="re-run and diff all artifacts")
    p.add_argument("--variant", help="monster variant")
    p.add_argument("--steps", type=int, help="monster steps per run")
    p.add_argument("--runs", type=int, help="monster runs (consecutive seeds)")
    p.add_argument("--case", choices=("auto", "2", "3", "4"), help="measure construction")
    return p


_WINDOW_KEY = {"check": ("check", "window"), "phi": ("phi", "window"),
               "measure": ("measure", "window"), "monster": ("monster", "J")}


def overrides_from_args(args) -> dict:
    o: dict = {"command": args.command}
    if args.fixture:
        o["fixture"] = args.fixture
    if args.seed is not None:
        o["master_seed"] = args.seed
    params = {k: getattr(args, k) for k in ("trials", "horizon", "escape")
              if getattr(args, k) is not None}
    if params:
        o["params"] = params
    if args.window is not None:
        if args.command not in _WINDOW_KEY:
            raise ConfigError(f"--window is not used by {args.command}")
        block, key = _WINDOW_KEY[args.command]
        o.setdefault(block, {})[key] = list(args.window)
    mon = {k: getattr(args, k) for k in ("variant", "steps", "runs") if getattr(args, k) is not None}
    if mon:
        if args.command != "monster":
            raise ConfigError("--variant/--steps/--runs only apply to monster")
        o.setdefault("monster", {}).update(mon)
    if args.case is not None:
        if args.command != "measure":
            raise ConfigError("--case only applies to measure")
        o.setdefault("measure", {})["case"] = args.case
    if args.plot:
        o["output"] = {"plot": True}
    return o


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = overrides_from_args(args)
        text, base = "{}", None
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise ConfigError(f"config file {args.config!r} does not exist")
            text, base = path.read_text(), path.parent
            cfg_cmd = json.loads(text).get("command") if text.strip() else None
            if cfg_cmd is not None and cfg_cmd != args.command:
                raise ConfigError(f"$.command: config says {cfg_cmd!r}, "
                                  f"command line says {args.command!r}")
        cfg = parse_config(text, base, overrides)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.out_dir)
    code = run(cfg, out, args.workers)
    report = json.loads((out / "report.json").read_text())
    line = f"{cfg.command}: {report['status']}"
    if report["refusal"]:
        line += f" ({report['refusal']})"
    print(line + f"; report at {out / 'report.json'}")
    if args.verify:
        with tempfile.TemporaryDirectory() as tmp:
            run(cfg, tmp, args.workers)
            bad = diff_dirs(out, Path(tmp))
        if bad:
            print("verify: artifacts differ: " + ", ".join(bad), file=sys.stderr)
            return EXIT_VERIFY
        print("verify: all artifacts reproduced")
    return code


if __name__ == "__main__":
    sys.exit(main())
