"""JSON checkpoints, dataset CSV files, and metric CSV files.

Floats are written with 17 significant digits so every value round-trips
exactly, and output is byte-identical for identical inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .network import ActivationKind, GradientNet
from .training import Dataset, TrainConfig

SCHEMA_VERSION = 1


def fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x}")
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON encoder writing floats with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(
    net: GradientNet,
    system_name: str,
    train_config: TrainConfig | dict | None = None,
    seed: int | None = None,
) -> dict:
    if isinstance(train_config, TrainConfig):
        train_config = train_config.to_json()
    return {
        "schema_version": SCHEMA_VERSION,
        "system_name": system_name,
        "d": net.d,
        "l": net.l,
        "S": net.S,
        "activation": net.activation.to_json(),
        "weights": {
            "A": net.A,
            "B": net.B,
            "b": net.b,
            "activation_params": net.act_params,
        },
        "train_config": train_config or {},
        "seed": seed,
    }


def save_checkpoint(path, net: GradientNet, system_name: str, train_config=None, seed=None) -> None:
    write_json(path, checkpoint_dict(net, system_name, train_config, seed))


def checkpoint_from_dict(obj: dict) -> tuple[GradientNet, dict]:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {obj.get('schema_version')!r}")
    d, l, S = int(obj["d"]), int(obj["l"]), int(obj["S"])  # noqa: E741
    act = ActivationKind.from_json(obj["activation"])
    w = obj["weights"]
    A = np.array(w["A"], dtype=float).reshape(S, l, 2 * d)
    B = np.array(w["B"], dtype=float).reshape(S, l, 2 * d)
    b = np.array(w["b"], dtype=float).reshape(2 * d)
    ap = np.array(w["activation_params"], dtype=float).reshape(S, act.n_params())
    net = GradientNet(d, l, S, act, A, B, b, ap, meta={"seed": obj.get("seed")})
    return net, obj


def load_checkpoint(path) -> tuple[GradientNet, dict]:
    """Returns the network and the raw checkpoint document."""
    return checkpoint_from_dict(read_json(path))


# ---------------------------------------------------------------------------
# datasets


def dataset_header(dim: int) -> str:
    cols = [f"y0_{i}" for i in range(1, dim + 1)] + [f"y1_{i}" for i in range(1, dim + 1)]
    return ",".join(cols)


def save_dataset(path, ds: Dataset) -> Path:
    """Writes ``path`` (CSV) and ``<path>.meta.json``; returns the sidecar path."""
    path = Path(path)
    lines = [dataset_header(ds.dim)]
    for a, b in zip(ds.y0, ds.y1):
        lines.append(",".join(fmt(v) for v in np.concatenate([a, b])))
    path.write_text("\n".join(lines) + "\n")
    meta_path = sidecar(path)
    write_json(meta_path, {**ds.meta, "T": ds.T})
    return meta_path


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def load_dataset(path) -> Dataset:
    path = Path(path)
    text = path.read_text().splitlines()
    header = text[0].split(",")
    dim = len(header) // 2
    if header != dataset_header(dim).split(","):
        raise ValueError(f"{path}: unexpected dataset header")
    rows = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
    meta = read_json(sidecar(path))
    return Dataset(rows[:, :dim], rows[:, dim:], float(meta["T"]), meta)


# ---------------------------------------------------------------------------
# series


def write_series(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_series(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line and not line.startswith("#")]
    return header, np.array(rows)
