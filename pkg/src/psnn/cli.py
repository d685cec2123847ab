"""Command-line interface: ``psnn <command> [options]``.

Every command accepts ``--config FILE`` (a JSON object keyed by option name);
explicit flags override file values. Outputs are deterministic given their
inputs and seed. A resolved-config JSON is written next to the main output,
and timestamps go only to a ``.log`` file beside it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments
from . import integrators as integ
from . import metrics as me
from . import presets
from . import serialize as io
from .network import activation_from_name
from .systems import SYSTEM_NAMES, builtin, harmonic_flow
from .training import (
    DataGenerationError,
    TrainConfig,
    TrainingDiverged,
    generate_dataset,
    train,
)

log = logging.getLogger("psnn")

EXIT_USAGE = 2
EXIT_FAILURE = 1
EXIT_DIVERGED = 3


class UsageError(Exception):
    """Invalid option values, detected before any output is written."""


# ---------------------------------------------------------------------------
# option parsing helpers


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _interval(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        lo, hi = (float(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def env_seed() -> int:
    raw = os.environ.get("PSYM_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"PSYM_SEED must be an integer, got {raw!r}") from None


def _join_negative_values(argv: list[str]) -> list[str]:
    """``--region -2:2`` would be read as an option; rewrite it to ``--region=-2:2``."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in ("--region", "--y0", "--y", "--steps"):
            nxt = next(it, None)
            if nxt is None:
                out.append(tok)
            else:
                out.append(f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


# defaults per command, applied below config-file values and flags
DEFAULTS = {
    "gen-data": {"region": [(-2.0, 2.0)], "n": 15, "T": 0.01, "h_gen": 0.01},
    "train": {"epochs": 1500, "lr": 1e-2, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
              "h": 0.01, "width": 16, "S": 4, "activation": "pade"},
    "predict": {"h": 0.01, "horizon": 60.0},
    "evaluate": {"metric": "traj-error", "h": 0.01},
    "sympcheck": {"system": "modified_pendulum", "y": (1.0, 1.0),
                  "steps": (0.5, 0.35, 0.25), "K": 1, "integrator": "psrk"},
    "order-check": {"system": "pendulum", "y0": (1.0, 0.0),
                    "steps": (0.1, 0.05, 0.025, 0.0125), "t_final": 1.0, "integrator": "psrk"},
    "repro": {"example": "example1"},
}

# option names that are bookkeeping, not part of the resolved configuration
_META = {"command", "config", "func"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psnn", description="Pseudo-symplectic networks for Hamiltonian systems.")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_, argument_default=None)
        sp.add_argument("--config", type=Path, help="JSON file of option values")
        sp.add_argument("--seed", type=int, help="overrides PSYM_SEED")
        sp.set_defaults(func=func)
        return sp

    sp = command("gen-data", cmd_gen_data, "sample initial states and advance them by the midpoint rule")
    sp.add_argument("--system", choices=SYSTEM_NAMES)
    sp.add_argument("--region", type=_interval, action="append", help="lo:hi, once or per coordinate")
    sp.add_argument("--n", type=int, help="number of pairs")
    sp.add_argument("--T", type=float, help="observation interval")
    sp.add_argument("--h-gen", dest="h_gen", type=float, help="midpoint step for generation")
    sp.add_argument("--out", type=Path)

    sp = command("train", cmd_train, "fit a gradient network to a dataset")
    sp.add_argument("--data", type=Path)
    sp.add_argument("--out", type=Path, help="checkpoint JSON")
    sp.add_argument("--history", type=Path, help="loss-history CSV (default beside the checkpoint)")
    sp.add_argument("--h", type=float)
    sp.add_argument("--K", type=int, help="steps per interval (default T/h)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--beta1", type=float)
    sp.add_argument("--beta2", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--width", type=int)
    sp.add_argument("--S", type=int)
    sp.add_argument("--activation", choices=("pade", "pau", "taylor", "relu"))

    sp = command("predict", cmd_predict, "roll out a trained network from an initial state")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--y0", type=_floats)
    sp.add_argument("--h", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--out", type=Path)

    sp = command("evaluate", cmd_evaluate, "prediction error, trajectory error, or energy along a rollout")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--metric", choices=("pred-error", "traj-error", "energy"))
    sp.add_argument("--system", choices=SYSTEM_NAMES, help="default: the checkpoint's system")
    sp.add_argument("--y0", type=_floats)
    sp.add_argument("--h", type=float)
    sp.add_argument("--horizon", type=float, help="default 600 for traj-error, else 60")
    sp.add_argument("--out", type=Path)

    for name, func, help_ in (
        ("sympcheck", cmd_sympcheck, "symplecticity residual of the one-step map versus h"),
        ("order-check", cmd_order_check, "global error at a fixed time versus h"),
    ):
        sp = command(name, func, help_)
        sp.add_argument("--system", choices=SYSTEM_NAMES)
        sp.add_argument("--y" if name == "sympcheck" else "--y0", type=_floats)
        sp.add_argument("--steps", type=_floats)
        sp.add_argument(
            "--integrator",
            choices=("psrk", "midpoint", "exact"),
            help="exact is the analytic rotation, harmonic system only",
        )
        if name == "sympcheck":
            sp.add_argument("--K", type=int, help="compose K steps into one map")
        else:
            sp.add_argument("--t-final", dest="t_final", type=float)
        sp.add_argument("--out", type=Path)

    sp = command("repro", cmd_repro, "run a named example end to end")
    sp.add_argument("--example", choices=tuple(presets.EXPERIMENTS))
    sp.add_argument("--activation", choices=("pade", "pau", "taylor", "relu"))
    sp.add_argument("--n", type=int, help="training pairs (default per example)")
    sp.add_argument("--S", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--n-eval", dest="n_eval", type=int, help="trajectory-error steps (default 60000)")
    sp.add_argument("--outdir", type=Path)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < PSYM_SEED < config file < flags."""
    cfg = dict(DEFAULTS[args.command])
    cfg["seed"] = env_seed()
    known = {k for k in vars(args) if k not in _META}
    if args.config is not None:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(from_file) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(from_file)
    for k in known:
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    for k, v in cfg.items():
        if isinstance(v, Path):
            cfg[k] = str(v)
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _base(path) -> Path:
    """Output path without its extension; sibling files share this stem."""
    return Path(path).with_suffix("")


def _json_ready(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def _write_config(main_output, command: str, cfg: dict) -> None:
    io.write_json(Path(str(_base(main_output)) + ".config.json"), {"command": command, **_json_ready(cfg)})


def _attach_log(main_output) -> logging.Handler:
    handler = logging.FileHandler(str(_base(main_output)) + ".log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger("psnn").addHandler(handler)
    logging.getLogger("psnn").setLevel(logging.INFO)
    return handler


def _detach_log(handler: logging.Handler) -> None:
    logging.getLogger("psnn").removeHandler(handler)
    handler.close()


# ---------------------------------------------------------------------------
# commands; each validates, computes, then writes


def _region(cfg: dict, dim: int) -> np.ndarray:
    region = [tuple(r) for r in cfg["region"]]
    if len(region) == 1:
        region = region * dim
    if len(region) != dim:
        raise UsageError(f"--region needs 1 or {dim} lo:hi values, got {len(region)}")
    return np.array(region, dtype=float)


def cmd_gen_data(cfg: dict) -> int:
    _require(cfg, "system", "out")
    sys_ = builtin(cfg["system"])
    region = _region(cfg, sys_.dim)
    try:
        ds = generate_dataset(sys_, region, cfg["n"], cfg["T"], cfg["h_gen"], cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except DataGenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    cfg["region"] = region.tolist()
    io.save_dataset(cfg["out"], ds)
    _write_config(cfg["out"], "gen-data", cfg)
    print(f"wrote {len(ds)} pairs to {cfg['out']}")
    return 0


def _train_config(cfg: dict, T: float) -> TrainConfig:
    K = cfg.get("K")
    if K is None:
        K = max(1, int(round(T / cfg["h"])))
        cfg["K"] = K
    try:
        tc = TrainConfig(
            h=cfg["h"], K=K, epochs=cfg["epochs"], lr=cfg["lr"], beta1=cfg["beta1"],
            beta2=cfg["beta2"], eps=cfg["eps"], seed=cfg["seed"], width=cfg["width"],
            S=cfg["S"], activation=activation_from_name(cfg["activation"]),
        )
        tc.check_interval(T)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return tc


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out")
    try:
        ds = io.load_dataset(cfg["data"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load dataset {cfg['data']}: {exc}") from None
    tc = _train_config(cfg, ds.T)
    history_path = cfg.get("history") or str(_base(cfg["out"])) + ".history.csv"
    cfg["history"] = history_path
    handler = _attach_log(cfg["out"])
    try:
        net, history = train(ds, tc)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        _detach_log(handler)
    io.save_checkpoint(cfg["out"], net, ds.meta.get("system_name", ""), tc, tc.seed)
    io.write_series(history_path, ["epoch", "loss"], list(enumerate(history)))
    _write_config(cfg["out"], "train", cfg)
    final = history[-1] if history else float("nan")
    print(f"{net.n_params} parameters; final loss {final:.6e}")
    return 0


def _load_model(cfg: dict):
    try:
        net, doc = io.load_checkpoint(cfg["checkpoint"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {cfg['checkpoint']}: {exc}") from None
    return net, doc


def _y0(cfg: dict, key: str, system: str, dim: int) -> tuple:
    y0 = cfg.get(key)
    if y0 is None:
        y0 = me.DEFAULT_EVAL_Y0.get(system)
    if y0 is None or len(y0) != dim:
        raise UsageError(f"--{key.replace('_', '-')} needs {dim} comma-separated values")
    cfg[key] = tuple(float(v) for v in y0)
    return cfg[key]


def _steps(h: float, horizon: float) -> int:
    try:
        return integ._n_steps(horizon, h)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_predict(cfg: dict) -> int:
    _require(cfg, "checkpoint", "out")
    net, doc = _load_model(cfg)
    y0 = _y0(cfg, "y0", doc.get("system_name", ""), net.dim)
    n = _steps(cfg["h"], cfg["horizon"])
    traj = me.predicted_trajectory(net, y0, cfg["h"], n)
    header = ["t"] + [f"y_{i}" for i in range(1, net.dim + 1)]
    rows = [(cfg["h"] * i, *traj[i]) for i in range(n + 1)]
    io.write_series(cfg["out"], header, rows)
    _write_config(cfg["out"], "predict", cfg)
    print(f"wrote {n + 1} states to {cfg['out']}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "checkpoint", "out")
    net, doc = _load_model(cfg)
    system = cfg.get("system") or doc.get("system_name")
    if system not in SYSTEM_NAMES:
        raise UsageError(f"checkpoint has no known system; pass --system ({', '.join(SYSTEM_NAMES)})")
    cfg["system"] = system
    sys_ = builtin(system)
    if sys_.dim != net.dim:
        raise UsageError(f"system {system} has dimension {sys_.dim}, checkpoint has {net.dim}")
    y0 = _y0(cfg, "y0", system, sys_.dim)
    metric, h = cfg["metric"], cfg["h"]
    if cfg.get("horizon") is None:
        cfg["horizon"] = 600.0 if metric == "traj-error" else 60.0
    n = _steps(h, cfg["horizon"])
    if metric == "pred-error":
        curve = me.prediction_error_curve(net, sys_, y0, h, cfg["horizon"])
        summary = float(np.max(curve.values))
    elif metric == "traj-error":
        curve = me.trajectory_error_curve(net, sys_, y0, h, n)
        summary = float(np.mean(curve.values[1:])) if n else 0.0
    else:
        curve = me.energy_curve(net, sys_, y0, h, cfg["horizon"])
        summary = me.max_energy_drift(curve)
    io.write_series(cfg["out"], ["t", "value"], zip(curve.times, curve.values))
    io.write_json(
        io.sidecar(cfg["out"]),
        {
            "metric": metric,
            "system": system,
            "checkpoint_hash": io.file_hash(cfg["checkpoint"]),
            "y0": list(y0),
            "h": h,
            "summary": summary,
        },
    )
    _write_config(cfg["out"], "evaluate", cfg)
    label = {"pred-error": "max error", "traj-error": "trajectory error", "energy": "max energy drift"}
    print(f"{label[metric]} {summary:.6e}")
    return 0


def _stepper(name: str, system: str):
    if name == "psrk":
        return integ.ps_rk_step
    if name == "midpoint":
        return integ.implicit_midpoint_step
    if system != "harmonic":
        raise UsageError("--integrator exact is only available for the harmonic system")
    return lambda field, y, h: harmonic_flow(y, h)


def _order_command(cfg: dict, mode: str, point_key: str, command: str) -> int:
    _require(cfg, "out")
    sys_ = builtin(cfg["system"])
    y = _y0(cfg, point_key, cfg["system"], sys_.dim)
    steps = tuple(cfg["steps"])
    step = _stepper(cfg["integrator"], cfg["system"])
    if len(steps) < 3 or any(not 0 < h < 1 for h in steps):
        raise UsageError("--steps needs at least 3 values in (0, 1)")
    kwargs = {"K": cfg["K"]} if mode == "symplecticity" else {"t_final": cfg["t_final"]}
    if mode == "symplecticity" and cfg["K"] < 1:
        raise UsageError("--K must be positive")
    rows = integ.order_measurements(sys_, y, steps, mode, step=step, **kwargs)
    try:
        slope = integ.observed_order(sys_, y, steps, mode, step=step, **kwargs)
        summary = f"slope {slope:.4f}"
    except integ.NoiseFloorError as exc:
        slope, summary = None, f"below noise floor: {exc}"
    col = "residual" if mode == "symplecticity" else "error"
    io.write_series(cfg["out"], ["h", col], rows)
    with open(cfg["out"], "a") as fh:
        fh.write(f"# {summary}\n")
    _write_config(cfg["out"], command, cfg)
    print(summary)
    return 0 if slope is not None else EXIT_FAILURE


def cmd_sympcheck(cfg: dict) -> int:
    return _order_command(cfg, "symplecticity", "y", "sympcheck")


def cmd_order_check(cfg: dict) -> int:
    return _order_command(cfg, "convergence", "y0", "order-check")


def cmd_repro(cfg: dict) -> int:
    _require(cfg, "outdir")
    exp = presets.experiment(cfg["example"])
    act = cfg.get("activation") or exp.train.activation.kind
    # first comparison column for this activation unless overridden
    N, S = exp.comparison.get(act, [(exp.N, exp.train.S)])[0]
    exp = exp.with_activation(act, cfg.get("n") or N, cfg.get("S") or S)
    train_cfg = exp.train
    if cfg.get("epochs") is not None:
        train_cfg = replace(train_cfg, epochs=cfg["epochs"])
    if cfg.get("lr") is not None:
        train_cfg = replace(train_cfg, lr=cfg["lr"])
    exp = replace(exp, train=train_cfg)
    n_eval = cfg.get("n_eval") or 60000
    if n_eval < 1:
        raise UsageError("--n-eval must be positive")
    out = Path(cfg["outdir"])
    out.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out / "run")
    try:
        result = experiments.run(exp, cfg["seed"], n_eval=n_eval)
    finally:
        _detach_log(handler)
    io.save_dataset(out / "data.csv", result.dataset)
    if result.diverged:
        print(f"error: training diverged: {result.diverged}", file=sys.stderr)
        return EXIT_DIVERGED
    sys_ = builtin(exp.system)
    tc = replace(exp.train, seed=cfg["seed"])
    io.save_checkpoint(out / "checkpoint.json", result.net, sys_.name, tc, tc.seed)
    io.write_series(out / "history.csv", ["epoch", "loss"], list(enumerate(result.history)))
    for name, curve in (("energy.csv", result.energy), ("traj_error.csv", result.error_curve)):
        io.write_series(out / name, ["t", "value"], zip(curve.times, curve.values))
    reported = presets.REPORTED_ERRORS.get(exp.name, {}).get(act, [None])[0]
    summary = {
        **result.row(),
        "system": sys_.name,
        "eval_y0": list(exp.eval_y0),
        "reported_trajectory_error": reported,
        "checkpoint_hash": io.file_hash(out / "checkpoint.json"),
    }
    io.write_json(out / "summary.json", summary)
    _write_config(out / "run", "repro", {**cfg, "train_config": tc.to_json()})
    line = f"{exp.name} {act}: trajectory error {result.trajectory_error:.4f}"
    if reported is not None:
        line += f" (reported {reported})"
    print(line)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(argv))
    try:
        cfg = resolve(args)
        return args.func(cfg)
    except (UsageError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        parser.print_usage(sys.stderr)
        print(f"psnn {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"psnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
