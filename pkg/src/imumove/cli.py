"""Command-line interface: ``imumove simulate|calibrate|detect|validate|report``.

Options come from an optional JSON config file (``--config``) and are
overridden by flags. Every output artifact embeds the resolved options.

Exit codes: 0 success, 1 validation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .axisest import NoConvergence, NotEnoughExcitation, Window
from .calib import SweepConfig, ThresholdTable, build_table, run_sweep, unit_to_rad
from .detector import DetectionSweepConfig, Detector, DetectorConfig, detection_sweep, evaluate
from .kinsim import (
    DEFAULT_RATE,
    MountingConfig,
    MovementEvent,
    TrajectoryFormatError,
    apply_movement,
    gen_gait,
    gen_movement,
    load_stream,
    save_stream,
    save_trajectory,
)
from .metrics import METRIC_IDS, WindowPair, time_metrics
from .validation import run_all

log = logging.getLogger("imumove")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

DEFAULTS = {
    "simulate": {
        "seed": 0,
        "duration": 90.0,
        "rate": DEFAULT_RATE,
        "noise_acc": 0.05,
        "noise_gyr": 0.005,
        "strict_hinge": False,
        "phi_units": 100.0,
        "t_move": 6000,
        "out": "sim",
    },
    "calibrate": {
        "seed": 0,
        "runs": 1000,
        "grid": "0:201:1",
        "intervals": "3000,5000",
        "window": 2000,
        "duration": 120.0,
        "n_gaits": 10,
        "noise_acc": 0.05,
        "noise_gyr": 0.005,
        "side": "thigh",
        "relative_metrics": "m2",
        "workers": 1,
        "trajectory": None,
        "sweep_csv": None,
        "out": "thresholds.json",
    },
    "detect": {
        "window": 2000,
        "interval": 3000,
        "hop": 200,
        "metrics": "m4,m5",
        "thresholds": None,
        "input": None,
        "truth": None,
        "side": "thigh",
        "no_correct": False,
        "timing": False,
        "metrics_csv": None,
        "report": "report.json",
    },
    "validate": {"seed": 0, "runs": 100, "out": None},
    "report": {
        "thresholds": None,
        "interval": 3000,
        "heldout_runs": 0,
        "seed": 1,
        "hop": 1000,
        "out": None,
    },
}


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imumove", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file with option values; flags win")
        return sp

    s = add("simulate", "write trajectory, IMU streams and ground truth")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="seconds")
    s.add_argument("--rate", type=float, help="Hz")
    s.add_argument("--noise-acc", dest="noise_acc", type=float)
    s.add_argument("--noise-gyr", dest="noise_gyr", type=float)
    s.add_argument("--strict-hinge", dest="strict_hinge", action="store_true")
    s.add_argument("--phi-units", dest="phi_units", type=float, help="movement magnitude in pi/200 units; 0 = none")
    s.add_argument("--t-move", dest="t_move", type=int, help="movement sample index")
    s.add_argument("--out", help="output directory")

    c = add("calibrate", "Monte-Carlo sweep and greedy thresholds")
    c.add_argument("--seed", type=int)
    c.add_argument("--runs", type=int)
    c.add_argument("--grid", help="start:stop:step or comma list, pi/200 units")
    c.add_argument("--intervals", help="comma list of window-start offsets")
    c.add_argument("--window", type=int)
    c.add_argument("--duration", type=float)
    c.add_argument("--n-gaits", dest="n_gaits", type=int)
    c.add_argument("--noise-acc", dest="noise_acc", type=float)
    c.add_argument("--noise-gyr", dest="noise_gyr", type=float)
    c.add_argument("--side", choices=("thigh", "both"))
    c.add_argument("--relative-metrics", dest="relative_metrics", help="metrics using the relative step")
    c.add_argument("--workers", type=int)
    c.add_argument("--trajectory", help="trajectory CSV to use instead of generated gaits")
    c.add_argument("--sweep-csv", dest="sweep_csv", help="prefix for per-interval sweep CSVs")
    c.add_argument("--out")

    d = add("detect", "run the online detector on a recorded stream pair")
    d.add_argument("--window", type=int)
    d.add_argument("--interval", type=int)
    d.add_argument("--hop", type=int)
    d.add_argument("--metrics")
    d.add_argument("--thresholds", help="threshold table JSON")
    d.add_argument("--input", help="thigh.csv,shank.csv")
    d.add_argument("--truth", help="ground-truth JSON from simulate")
    d.add_argument("--side", choices=("thigh", "both"))
    d.add_argument("--no-correct", dest="no_correct", action="store_true")
    d.add_argument("--timing", action="store_true", help="add per-metric timing (not reproducible)")
    d.add_argument("--metrics-csv", dest="metrics_csv", help="per-pair metric CSV")
    d.add_argument("--report")

    v = add("validate", "identity batteries on synthetic data")
    v.add_argument("--seed", type=int)
    v.add_argument("--runs", type=int)
    v.add_argument("--out")

    r = add("report", "threshold table and optional held-out detection rates")
    r.add_argument("--thresholds")
    r.add_argument("--interval", type=int)
    r.add_argument("--heldout-runs", dest="heldout_runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--hop", type=int)
    r.add_argument("--out")
    return p


def resolve(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "verbose")}
    path = getattr(ns, "config", None)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        doc = doc.get(command, doc) if isinstance(doc, dict) else None
        if not isinstance(doc, dict):
            raise InputError(f"config {path} must be a JSON object")
        unknown = set(doc) - set(cfg)
        if unknown:
            raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(doc)
    cfg.update(flags)
    return cfg


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _grid(text: str) -> tuple[int, ...]:
    try:
        if ":" in text:
            a, b, c = (int(x) for x in text.split(":"))
            return tuple(range(a, b, c))
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise InputError(f"bad grid {text!r}") from exc


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    traj = gen_gait(cfg["duration"], cfg["rate"], rng, strict_hinge=cfg["strict_hinge"])
    mount = MountingConfig.random(rng, cfg["noise_acc"], cfg["noise_gyr"])
    if not 0 <= cfg["t_move"] < len(traj):
        raise InputError(f"t_move {cfg['t_move']} outside the {len(traj)}-sample trajectory")
    event = gen_movement(unit_to_rad(cfg["phi_units"]), rng, cfg["t_move"])
    if event.phi_mag == 0:
        event = MovementEvent.identity(cfg["t_move"])
    thigh, shank = apply_movement(traj, mount, event, rng)
    save_trajectory(traj, out / "trajectory.csv")
    save_stream(thigh, out / "thigh.csv")
    save_stream(shank, out / "shank.csv")
    j_t, j_s = mount.true_axes()
    truth = {
        "config": cfg,
        "samples": len(traj),
        "j_thigh": j_t,
        "j_shank": j_s,
        "j_thigh_after": event.rot_move @ j_t,
        "t_move": event.t_move if event.phi_mag > 0 else None,
        "phi_mag": event.phi_mag,
        "phi": event.phi,
        "R_move": event.rot_move,
        "r_move": event.shift,
        "mounting": {
            "base": mount.base,
            "R_bs_thigh": mount.rot_bs_thigh,
            "R_bs_shank": mount.rot_bs_shank,
            "lever_thigh": mount.lever_thigh,
            "lever_shank": mount.lever_shank,
        },
    }
    _dump(truth, out / "truth.json")
    print(f"wrote {len(traj)} samples to {out}/")
    return EXIT_OK


def cmd_calibrate(cfg: dict) -> int:
    grid = _grid(str(cfg["grid"]))
    intervals = [int(i) for i in _csv_list(cfg["intervals"])]
    sweeps = {}
    for interval in intervals:
        scfg = SweepConfig(
            phi_units=grid, runs=cfg["runs"], window=cfg["window"], interval=interval,
            duration_s=cfg["duration"], n_gaits=cfg["n_gaits"], noise_std_acc=cfg["noise_acc"],
            noise_std_gyr=cfg["noise_gyr"], side=cfg["side"], seed=cfg["seed"],
            trajectory=cfg["trajectory"], workers=cfg["workers"],
        )
        sweep = run_sweep(scfg)
        sweeps[interval] = sweep
        if cfg["sweep_csv"]:
            sweep.to_csv(f"{cfg['sweep_csv']}_{interval}.csv")
        log.info("interval %d: %.2f%% failed runs", interval, 100 * sweep.failed_fraction)
    table = build_table(sweeps, tuple(_csv_list(cfg["relative_metrics"])))
    table.config = dict(cfg) | {"failed_fraction": {str(i): s.failed_fraction for i, s in sweeps.items()}}
    table.save(cfg["out"])
    print(table.format())
    return EXIT_OK


def _load_pair(text: str):
    parts = _csv_list(text)
    if len(parts) != 2:
        raise InputError("--input expects 'thigh.csv,shank.csv'")
    thigh = load_stream(parts[0], "thigh")
    shank = load_stream(parts[1], "shank")
    if len(thigh) != len(shank) or thigh.rate != shank.rate:
        raise InputError("thigh and shank streams differ in length or rate")
    return thigh, shank


def _pair_csv(path, evaluations, interval: int) -> None:
    with open(path, "w") as fh:
        fh.write("t_w1,t_w2," + ",".join(METRIC_IDS) + "\n")
        for ev in evaluations:
            vals = [repr(float(ev.values[m])) if m in ev.values else "" for m in METRIC_IDS]
            fh.write(f"{ev.start},{ev.start + interval}," + ",".join(vals) + "\n")


def cmd_detect(cfg: dict) -> int:
    if not cfg["input"] or not cfg["thresholds"]:
        raise InputError("detect needs --input and --thresholds")
    thigh, shank = _load_pair(cfg["input"])
    table = ThresholdTable.load(cfg["thresholds"])
    metrics = tuple(_csv_list(cfg["metrics"]))
    try:
        thresholds = {m: table.get(m, cfg["interval"]).threshold for m in metrics}
    except KeyError as exc:
        raise InputError(str(exc)) from exc
    dcfg = DetectorConfig(cfg["window"], cfg["interval"], cfg["hop"], metrics, thresholds,
                          cfg["side"], thigh.rate, auto_correct=not cfg["no_correct"])
    det = Detector(dcfg)
    det.extend(thigh, shank)
    t_moves = []
    if cfg["truth"]:
        truth = json.loads(Path(cfg["truth"]).read_text())
        if truth.get("t_move") is not None:
            t_moves = [int(truth["t_move"])]
    overall = evaluate(det.evaluations, t_moves)
    per_metric = {m: evaluate(det.evaluations, t_moves, m).to_dict() for m in metrics}
    for rep in per_metric.values():
        rep.pop("events")
    report = {
        "config": cfg,
        "thresholds": thresholds,
        "samples": len(thigh),
        "events": overall.events,
        "R_det": overall.r_det,
        "R_mis": overall.r_mis,
        "delay_percentiles": overall.delay_percentiles(),
        "n_windows": overall.n_windows,
        "per_metric": per_metric,
        "recalibrations": [{"t": t, "j_thigh": e.j_thigh, "j_shank": e.j_shank} for t, e in det.recalibrations],
        "failed_recalibrations": det.failed_recalibrations,
    }
    if cfg["timing"]:
        w = dcfg.window
        if len(thigh) >= dcfg.span:
            pair = WindowPair(Window.from_streams(thigh, shank, 0, w), Window.from_streams(thigh, shank, dcfg.interval, w))
            report["timing_ms"] = {m: {"mean": a, "std": b} for m, (a, b) in time_metrics(pair).items()}
    if cfg["metrics_csv"]:
        _pair_csv(cfg["metrics_csv"], det.evaluations, dcfg.interval)
    _dump(report, cfg["report"])
    print(f"{len(overall.events)} events, R_det={overall.r_det:.3f}, R_mis={overall.r_mis:.4f}")
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    res = run_all(cfg["runs"], cfg["seed"])
    res["config"] = cfg
    if cfg["out"]:
        _dump(res, cfg["out"])
    print(f"rate identity max |diff| = {res['rate_identity']['max_abs']:.3e} (mean {res['rate_identity']['mean']:.3e})")
    print(f"accel identity strict max |normalized| = {res['accel_identity']['strict']['max_abs']:.3e}")
    print(f"accel identity general raw mean = {res['accel_identity']['general_raw']['mean']:.3e} (reported only)")
    for c in res["closed_form"]["cases"]:
        print(f"closed form phi={c['phi']:.4f}: ratio {c['ratio']:.12f} vs {c['expected']:.12f}")
    print("PASS" if res["passed"] else "FAIL")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_report(cfg: dict) -> int:
    if not cfg["thresholds"]:
        raise InputError("report needs --thresholds")
    table = ThresholdTable.load(cfg["thresholds"])
    out = {"config": cfg, "table": [e.__dict__ for e in table.entries], "text": table.format()}
    print(table.format())
    if cfg["heldout_runs"] > 0:
        thresholds = table.thresholds(cfg["interval"])
        if not thresholds:
            raise InputError(f"no thresholds for interval {cfg['interval']}")
        scfg = DetectionSweepConfig(runs=cfg["heldout_runs"], interval=cfg["interval"], hop=cfg["hop"], seed=cfg["seed"])
        reports = detection_sweep(scfg, thresholds)
        out["heldout"] = {}
        for m, rep in reports.items():
            d = rep.to_dict()
            d.pop("events")
            d.pop("delays")
            out["heldout"][m] = d
            print(f"{m}: R_det={rep.r_det:.3f} R_mis={rep.r_mis:.4f}")
    if cfg["out"]:
        _dump(out, cfg["out"])
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except (InputError, TrajectoryFormatError, FileNotFoundError, KeyError, ValueError, NotEnoughExcitation,
            NoConvergence) as exc:
        print(f"imumove {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
