"""Command-line harness: fit, predict, sweep, selftest.

Exit codes are a stable contract: 0 success, 1 selftest failure,
2 invalid input, 3 I/O failure.  All files are accompanied by (or embed)
a run manifest; with --no-timestamps two runs of the same config are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .contamination import (
    ContaminatingDensity,
    ContaminationBudget,
    discrete_envelope_oracle,
    envelope_mass,
    lower_set_prob,
    predictive_envelopes,
    upper_set_prob,
)
from .experiments import (
    SweepConfig,
    Teacher,
    TeacherConfig,
    bias_variance_sweep,
    contamination_envelope_curves,
    derived_rng,
    misspecification_sweep,
    _S_DATA,
    _S_FEATURES,
    _S_TEACHER,
)
from .rf import (
    PredictiveGaussian,
    RandomFeatureRidge,
    gaussian_pdf,
    posterior_predictive,
    sample_sphere,
)
from .robust import (
    TruncationWindow,
    ihdr_outer,
    normal_cdf,
    normal_quantile,
    variance_chain,
)

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_INVALID = 2
EXIT_IO = 3

_FAULT_ENV = "CONTAMRF_SELFTEST_FAULT"
_THREADS_ENV = "CONTAMRF_THREADS"

DEFAULT_PSI1_GRID = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0]

DEFAULT_CONFIG = {
    "model": {"lambda": 1e-6, "phi": 1.0, "activation": "relu"},
    "teacher": {
        "kind": "rf_teacher",
        "d": 32,
        "beta0": 0.0,
        "beta": None,
        "teacher_features": None,   # null -> 2*d
        "teacher_activation": "tanh",
        "noise_sd": 0.5,
    },
    "sweep": {
        "psi2": 3.0,
        "psi1_grid": DEFAULT_PSI1_GRID,
        "trials": 40,
        "test_points": 200,
        "eta_levels": [0.05, 0.1, 0.2],
        "rho_levels": [0.0, 0.05, 0.1, 0.2],
        "outlier_amplitude": None,  # null -> 10 * noise_sd
        "truncation_k": 3.0,
        "envelope_variance": "estimator",  # or "predictive"
    },
    "fit": {"psi1": 2.0},
    "master_seed": 20260810,
    "threads": 1,
}


class ConfigError(ValueError):
    pass


def _deep_merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    """Read, default-fill, and validate a run configuration."""
    user = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = _deep_merge(DEFAULT_CONFIG, user)
    if seed_override is not None:
        cfg["master_seed"] = int(seed_override)
    _validate_config(cfg)
    return cfg


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _validate_config(cfg: dict) -> None:
    m, t, s = cfg["model"], cfg["teacher"], cfg["sweep"]
    _require(isinstance(cfg["master_seed"], int), "master_seed must be an integer")
    _require(m["lambda"] >= 0, "model.lambda must be >= 0")
    _require(m["phi"] > 0, "model.phi must be > 0")
    _require(m["activation"] in ("relu", "tanh"), "model.activation must be relu or tanh")
    _require(isinstance(t["d"], int) and t["d"] >= 1, "teacher.d must be a positive integer")
    _require(t["kind"] in ("linear", "rf_teacher"), "teacher.kind must be linear or rf_teacher")
    _require(t["noise_sd"] >= 0, "teacher.noise_sd must be >= 0")
    grid = s["psi1_grid"]
    _require(isinstance(grid, list) and len(grid) >= 1, "sweep.psi1_grid must be a nonempty list")
    _require(all(isinstance(p, (int, float)) and p > 0 for p in grid), "psi1 grid entries must be positive")
    _require(list(grid) == sorted(grid), "sweep.psi1_grid must be sorted ascending")
    _require(s["psi2"] > 0, "sweep.psi2 must be > 0")
    _require(isinstance(s["trials"], int) and s["trials"] >= 1, "sweep.trials must be a positive integer")
    _require(isinstance(s["test_points"], int) and s["test_points"] >= 1,
             "sweep.test_points must be a positive integer")
    _require(all(0 <= e <= 1 for e in s["eta_levels"]), "eta levels must lie in [0, 1]")
    _require(all(0 <= r <= 1 for r in s["rho_levels"]), "rho levels must lie in [0, 1]")
    _require(s["truncation_k"] >= 2 and s["truncation_k"] <= 40, "sweep.truncation_k must lie in [2, 40]")
    _require(s["envelope_variance"] in ("estimator", "predictive"),
             "sweep.envelope_variance must be 'estimator' or 'predictive'")
    _require(cfg["fit"]["psi1"] > 0, "fit.psi1 must be positive")


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def make_manifest(command: str, cfg: dict, with_timestamps: bool,
                  started_at: str | None = None) -> dict:
    manifest = {
        "command": command,
        "config_digest": config_digest(cfg),
        "master_seed": cfg["master_seed"],
        "tool_version": __version__,
    }
    if with_timestamps:
        manifest["started_at"] = started_at or _now()
        manifest["finished_at"] = _now()
    return manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _teacher_config(cfg: dict) -> TeacherConfig:
    t = cfg["teacher"]
    beta = None if t["beta"] is None else np.asarray(t["beta"], dtype=float)
    return TeacherConfig(d=t["d"], kind=t["kind"], beta0=float(t["beta0"]), beta=beta,
                         teacher_features=t["teacher_features"],
                         teacher_activation=t["teacher_activation"],
                         noise_sd=float(t["noise_sd"]))


def _sweep_config(cfg: dict, use_pinv: bool) -> SweepConfig:
    m, s = cfg["model"], cfg["sweep"]
    return SweepConfig(
        d=cfg["teacher"]["d"],
        psi2=float(s["psi2"]),
        psi1_grid=tuple(s["psi1_grid"]),
        lam=0.0 if use_pinv else float(m["lambda"]),
        phi=float(m["phi"]),
        trials=s["trials"],
        test_points=s["test_points"],
        master_seed=cfg["master_seed"],
        eta_levels=tuple(s["eta_levels"]),
        rho_levels=tuple(s["rho_levels"]),
        activation=m["activation"],
        truncation_k=float(s["truncation_k"]),
    )


def _resolve_threads(args, cfg: dict) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(_THREADS_ENV)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{_THREADS_ENV} must be an integer, got {env!r}") from exc
    return max(1, int(cfg.get("threads", 1)))


def _fmt(value) -> str:
    """Shortest round-trip decimal for floats; sentinel-free output."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if not math.isfinite(v):
        raise ValueError("refusing to write a non-finite value")
    return repr(v)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(args, name: str, text: str) -> None:
    sys.stdout.write(text)
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


def _read_xy_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "y":
            raise ConfigError("data CSV needs a header with feature columns and a final 'y' column")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError("data CSV has no rows")
    arr = np.asarray(rows, dtype=float)
    return arr[:, :-1], arr[:, -1]


def _synthetic_training_data(cfg: dict):
    """Teacher draw and one training set, from the fit-cell streams."""
    ms = cfg["master_seed"]
    teacher = Teacher.realize(_teacher_config(cfg), derived_rng(ms, _S_TEACHER))
    n = max(1, int(round(cfg["sweep"]["psi2"] * cfg["teacher"]["d"])))
    ds = teacher.sample(n, derived_rng(ms, _S_DATA, 0, 0))
    return teacher, ds


def _fit_estimator(cfg: dict, X: np.ndarray, y: np.ndarray, use_pinv: bool) -> RandomFeatureRidge:
    m = cfg["model"]
    d = X.shape[1]
    N = max(1, int(round(cfg["fit"]["psi1"] * d)))
    est = RandomFeatureRidge(
        n_features=N,
        penalty=float(m["lambda"]),
        noise_precision=float(m["phi"]),
        activation=m["activation"],
        use_pinv=use_pinv,
        random_state=derived_rng(cfg["master_seed"], _S_FEATURES, 0, 0),
    )
    return est.fit(X, y)


def cmd_fit(args) -> int:
    started = _now()
    cfg = load_config(args.config, args.seed)
    if args.data is not None:
        X, y = _read_xy_csv(args.data)
    else:
        _, ds = _synthetic_training_data(cfg)
        X, y = ds.X, ds.y
    est = _fit_estimator(cfg, X, y, args.pinv)
    resid = est.predict(X) - y
    report = {
        "coef_norm": float(np.linalg.norm(est.coef_)),
        "train_mse": float(np.mean(resid**2)),
        "n": int(X.shape[0]),
        "d": int(X.shape[1]),
        "n_features": int(est.model_.config.N),
        "ridgeless_pinv": bool(est.model_.ridgeless_pinv),
        "config": cfg,
        "manifest": make_manifest("fit", cfg, not args.no_timestamps, started),
    }
    _emit(args, "fit_summary.json", _dump_json(report))
    return EXIT_OK


def _probe_report(base: PredictiveGaussian, eta: float, u: ContaminatingDensity,
                  probe_points: int) -> dict:
    pair = predictive_envelopes(base, ContaminationBudget(epsilon=0.0, eta=eta), u)
    ys = np.linspace(base.mean - 4.0 * base.std, base.mean + 4.0 * base.std, probe_points)
    return {
        "y": [float(v) for v in ys],
        "base_pdf": [float(v) for v in gaussian_pdf(base, ys)],
        "lower_bound": [float(v) for v in pair.lower_bound_at(ys)],
        "upper_bound": [float(v) for v in pair.upper_bound_at(ys)],
    }


def cmd_predict(args) -> int:
    started = _now()
    cfg = load_config(args.config, args.seed)
    if not (0.0 <= args.eta <= 1.0 and 0.0 <= args.epsilon <= 1.0):
        raise ConfigError("--eta and --epsilon must lie in [0, 1]")
    if not (0.0 < args.alpha < 1.0):
        raise ConfigError("--alpha must lie in (0, 1)")
    if not (2.0 <= args.k <= 40.0):
        raise ConfigError("--k must lie in [2, 40]")

    if args.mean is not None or args.var is not None:
        if args.mean is None or args.var is None:
            raise ConfigError("--mean and --var must be given together")
        if args.var <= 0:
            raise ConfigError("--var must be positive")
        base = PredictiveGaussian(mean=args.mean, variance=args.var)
        ridgeless = False
    else:
        _, ds = _synthetic_training_data(cfg)
        est = _fit_estimator(cfg, ds.X, ds.y, args.pinv)
        if args.x is not None:
            x_new = np.asarray([float(v) for v in args.x.split(",")], dtype=float)
        else:
            x_new = sample_sphere(1, ds.X.shape[1], derived_rng(cfg["master_seed"], 99))[0]
        base = posterior_predictive(est.model_, x_new)
        ridgeless = est.model_.ridgeless_pinv

    window = TruncationWindow.symmetric(base, args.k)
    u = ContaminatingDensity.uniform(window.a, window.b)
    ihdr = ihdr_outer(base, args.alpha, args.eta)
    chain = variance_chain(base, args.eta, window)

    if ihdr.kind == "interval":
        z = np.array([ihdr.lo, ihdr.hi])
        interval_mass = float(np.diff(normal_cdf((z - base.mean) / base.std))[0])
    else:
        interval_mass = 1.0
    report = {
        "mean": base.mean,
        "variance": base.variance,
        "eta": args.eta,
        "epsilon": args.epsilon,
        "alpha": args.alpha,
        "k": args.k,
        "ridgeless_pinv": ridgeless,
        "probe": _probe_report(base, args.eta, u, args.probe_points),
        "ihdr": {
            "kind": ihdr.kind,
            "requested_alpha": ihdr.requested_alpha,
            "adjusted_level": ihdr.adjusted_level,
            "interval": ihdr.to_json_value(),
        },
        "ihdr_mass_bounds": {
            # set-probability envelope of the baseline interval mass under
            # epsilon-contamination of the predictive law
            "lower": lower_set_prob(interval_mass, args.epsilon, ihdr.kind == "whole_line"),
            "upper": upper_set_prob(interval_mass, args.epsilon),
        },
        "variance_chain": {
            "lower_bound": chain.lower_bound,
            "base": chain.base,
            "truncated_base": chain.truncated_base,
            "upper_bound": chain.upper_bound,
            "untruncated_upper_bound": chain.untruncated_upper_bound,
            "truncation_gap": chain.truncation_gap,
            "condition_ok": chain.condition_ok,
            "window": [window.a, window.b],
        },
        "manifest": make_manifest("predict", cfg, not args.no_timestamps, started),
    }
    _emit(args, "prediction.json", _dump_json(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = _now()
    cfg = load_config(args.config, args.seed)
    threads = _resolve_threads(args, cfg)
    out_dir = Path(args.out_dir if args.out_dir is not None else ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return EXIT_IO

    sweep = _sweep_config(cfg, args.pinv)
    teacher_cfg = _teacher_config(cfg)
    amplitude = cfg["sweep"]["outlier_amplitude"]
    if amplitude is None:
        amplitude = 10.0 * teacher_cfg.noise_sd

    rows = bias_variance_sweep(sweep, teacher_cfg, threads=threads)
    variance_kind = cfg["sweep"]["envelope_variance"]
    if variance_kind == "estimator":
        base_curve = [(r.psi1, r.variance) for r in rows]
    else:
        base_curve = [(r.psi1, r.pred_variance) for r in rows]
    env_rows = contamination_envelope_curves(base_curve, sweep.eta_levels,
                                             k=sweep.truncation_k)
    mis_rows = misspecification_sweep(sweep, teacher_cfg, amplitude, threads=threads)

    write_csv(out_dir / "bias_variance.csv",
              ["psi1", "N", "mse", "mse_se", "bias2", "variance", "failed_trials"],
              [(r.psi1, r.N, r.mse, r.mse_se, r.bias2, r.variance, r.failed_trials)
               for r in rows])
    write_csv(out_dir / "envelopes.csv",
              ["psi1", "eta", "base_variance", "lower_envelope", "upper_envelope", "argmax_flag"],
              [(r.psi1, r.eta, r.base_variance, r.lower_envelope, r.upper_envelope, r.argmax_flag)
               for r in sorted(env_rows, key=lambda r: (r.psi1, r.eta))])
    write_csv(out_dir / "misspecification.csv",
              ["psi1", "rho", "mse", "mse_se", "peak_flag"],
              [(r.psi1, r.rho, r.mse, r.mse_se, r.peak_flag) for r in mis_rows])
    manifest = make_manifest("sweep", cfg, not args.no_timestamps, started)
    (out_dir / "manifest.json").write_text(_dump_json(manifest), encoding="utf-8")
    print(f"wrote bias_variance.csv, envelopes.csv, misspecification.csv, manifest.json to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest


def _suite_quadrature(fault: bool) -> tuple[bool, str]:
    base = PredictiveGaussian(mean=0.4, variance=2.25)
    ok = True
    for eta in (0.0, 0.1, 0.3):
        u = ContaminatingDensity.uniform(-4.0, 5.0)
        pair = predictive_envelopes(base, ContaminationBudget(0.0, eta), u)
        lower, upper = envelope_mass(pair)
        cond = abs(lower - (1.0 - eta)) <= 1e-6 and abs(upper - 1.0) <= 1e-6
        if fault:
            cond = not cond  # test hook: flipped inequality
        ok = ok and cond
    return ok, "envelope masses integrate to (1-eta, 1)"


def _suite_quantile_roundtrip(fault: bool) -> tuple[bool, str]:
    rng = np.random.default_rng(1234)
    ps = rng.uniform(1e-6, 1.0 - 1e-6, size=1000)
    err = np.max(np.abs(normal_cdf([normal_quantile(p) for p in ps]) - ps))
    cond = err <= 1e-9
    if fault:
        cond = not cond
    return bool(cond), f"CDF(quantile(p)) round-trip error {err:.2e}"


def _suite_discrete_oracle(fault: bool) -> tuple[bool, str]:
    rng = np.random.default_rng(99)
    ok = True
    for _ in range(5):
        K = int(rng.integers(10, 60))
        grid = np.linspace(-5, 5, K + 1)
        masses = rng.random(K)
        masses /= masses.sum()
        query = rng.random(K) < 0.4
        if not query.any() or query.all():
            query[0] = True
            query[-1] = False
        base_mass = float(masses[query].sum())
        lo, hi = discrete_envelope_oracle(grid, masses, 0.05, 0.1, np.flatnonzero(query))
        cond = lo <= base_mass <= hi and lo <= (1 - 0.1) * base_mass
        if fault:
            cond = not cond
        ok = ok and cond
    return ok, "enumerated envelope interval contains the baseline mass"


def _suite_chain_ordering(fault: bool) -> tuple[bool, str]:
    ok = True
    for eta in (0.01, 0.05, 0.1, 0.2, 0.5):
        for s2 in (0.25, 1.0, 4.0):
            for k in (2.0, 2.5, 3.0):
                base = PredictiveGaussian(0.0, s2)
                chain = variance_chain(base, eta, TruncationWindow.symmetric(base, k))
                cond = chain.condition_ok and chain.exact_chain_ok
                if fault:
                    cond = not cond
                ok = ok and cond
    return ok, "variance chain ordering holds on the (eta, s2, k) grid"


_SELFTEST_SUITES = [
    ("quadrature", _suite_quadrature),
    ("quantile_roundtrip", _suite_quantile_roundtrip),
    ("discrete_oracle", _suite_discrete_oracle),
    ("chain_ordering", _suite_chain_ordering),
]


def cmd_selftest(args) -> int:
    fault_target = os.environ.get(_FAULT_ENV, "")
    failed = None
    for name, suite in _SELFTEST_SUITES:
        t0 = time.perf_counter()
        ok, detail = suite(fault=(fault_target == name))
        dt = time.perf_counter() - t0
        status = "ok" if ok else "FAIL"
        print(f"selftest {name}: {status} ({dt:.3f}s) - {detail}")
        if not ok and failed is None:
            failed = (name, detail)
    if failed is not None:
        print(f"selftest failed in suite {failed[0]!r}: {failed[1]}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config master seed")
    p.add_argument("--out-dir", default=None, help="directory for output files")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (fallback: ${_THREADS_ENV}, then config)")
    p.add_argument("--no-timestamps", action="store_true",
                   help="omit timestamps so outputs are byte-reproducible")
    p.add_argument("--pinv", action="store_true",
                   help="exact minimum-norm (zero-penalty) solves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contamrf",
        description="Contamination-robust random-feature regression harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model and report a summary")
    p_fit.add_argument("--config", default=None, help="JSON config file")
    p_fit.add_argument("--data", default=None, help="CSV with feature columns and a final y column")
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="robust predictive report at one input")
    p_pred.add_argument("--config", default=None)
    p_pred.add_argument("--x", default=None, help="comma-separated input vector")
    p_pred.add_argument("--mean", type=float, default=None,
                        help="bypass fitting: predictive mean")
    p_pred.add_argument("--var", type=float, default=None,
                        help="bypass fitting: predictive variance")
    p_pred.add_argument("--eta", type=float, default=0.1)
    p_pred.add_argument("--epsilon", type=float, default=0.0)
    p_pred.add_argument("--alpha", type=float, default=0.1)
    p_pred.add_argument("--k", type=float, default=3.0)
    p_pred.add_argument("--probe-points", type=int, default=41)
    _add_common(p_pred)
    p_pred.set_defaults(func=cmd_predict)

    p_sweep = sub.add_parser("sweep", help="run the ratio sweeps and write CSV tables")
    p_sweep.add_argument("--config", default=None)
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_self = sub.add_parser("selftest", help="run the embedded property suites")
    _add_common(p_self)
    p_self.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
