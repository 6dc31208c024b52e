"""Declarative experiments: INI-style config, sweeps, evaluation and artifacts.

Config sections: ``[dataset]``, ``[network]``, ``[device]``, ``[train]``,
``[noise]``, ``[output]`` and any number of sweep groups, ``[sweep]`` or
``[sweep.<name>]``. Each group is the cartesian product of its comma-separated
lists; the experiment runs the union of all groups (or the base point alone when
there are none).
"""
from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import activation as act
from . import costmodel
from .data import Dataset, load_image_dir, load_mnist, synthetic_faces, xor_dataset
from .device import DeviceParams
from .network import MemristiveNetwork, NetworkConfig
from .nonideal import NoiseSpec
from .trainer import TrainSpec, train

SWEEP_KEYS = ("eta", "offset_frac", "mismatch_frac", "iterations", "seeds", "partition")
DATASET_KINDS = ("xor", "mnist", "image_dir", "synthetic_faces")
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class ConfigError(ValueError):
    """Invalid experiment file; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class SweepPoint:
    group: str
    eta: float
    offset_frac: float
    mismatch_frac: float
    iterations: Optional[int]
    seed: int
    partition: Optional[int]

    @property
    def name(self) -> str:
        part = "mono" if not self.partition else f"p{self.partition}"
        iters = "" if self.iterations is None else f"-n{self.iterations}"
        return (f"{self.group}-eta{self.eta:g}-off{self.offset_frac:g}-mis{self.mismatch_frac:g}"
                f"-{part}{iters}-s{self.seed}")

    @property
    def row_key(self) -> tuple:
        return (self.group, self.eta, self.offset_frac, self.mismatch_frac, self.partition,
                self.iterations)


@dataclass
class ExperimentConfig:
    path: Path
    dataset: dict
    network: NetworkConfig
    train: TrainSpec
    epochs: Optional[float]
    noise: NoiseSpec
    points: List[SweepPoint]
    output_dir: Path
    plots: bool = True
    theta: float = 0.5
    lines: dict = field(default_factory=dict, repr=False)


# -- parsing -----------------------------------------------------------------

def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, and (section, None) for headers."""
    index, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
        elif section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            index.setdefault((section, key), n)
    return index


class _Reader:
    """Typed access to one config, raising ConfigError with line numbers."""

    def __init__(self, path, parser, lines):
        self.path, self.parser, self.lines = path, parser, lines

    def fail(self, section, key, message):
        raise ConfigError(self.path, f"[{section}] {key}: {message}" if key else message,
                          self.lines.get((section, key)) or self.lines.get((section, None)))

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            return default
        return self.parser.get(section, key).strip()

    def conv(self, section, key, fn, default=None, what="value"):
        raw = self.raw(section, key)
        if raw is None or raw == "":
            return default
        try:
            return fn(raw)
        except (TypeError, ValueError) as exc:
            self.fail(section, key, f"invalid {what} {raw!r} ({exc})")

    def num(self, section, key, default=None):
        return self.conv(section, key, float, default, "number")

    def int(self, section, key, default=None):
        return self.conv(section, key, _parse_int, default, "integer")

    def bool(self, section, key, default=False):
        return self.conv(section, key, _parse_bool, default, "boolean")

    def list(self, section, key, fn=str, default=None):
        return self.conv(section, key, lambda s: [fn(v) for v in _split(s)], default, "list")


def _split(s: str):
    items = [v.strip() for v in s.split(",")]
    if any(v == "" for v in items):
        raise ValueError("empty list item")
    return items


def _parse_int(s: str) -> int:
    f = float(s)
    if f != int(f):
        raise ValueError("not an integer")
    return int(f)


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _parse_seeds(s: str) -> List[int]:
    seeds = []
    for item in _split(s):
        m = re.fullmatch(r"(-?\d+)\s*-\s*(\d+)", item)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty range {item}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(_parse_int(item))
    return seeds


def _parse_partition(s: str):
    v = s.strip().lower()
    return None if v in ("none", "0", "1", "mono") else _parse_int(v)


def _expected_dims(ds: dict):
    """(inputs, outputs) implied by a dataset block, without loading images."""
    kind = ds["kind"]
    extra = 1 if ds.get("bias") else 0
    if kind == "xor":
        return 2 + extra, 1
    if kind == "mnist":
        return 784 + extra, 10
    if kind == "synthetic_faces":
        return ds["side"] ** 2 + extra, ds["n_classes"]
    root = Path(ds["path"])
    n_classes = len([p for p in root.iterdir() if p.is_dir()]) if root.is_dir() else None
    return ds["side"] ** 2 + extra, n_classes


def load_config(path, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Parse and validate an experiment file. Raises ConfigError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, f"cannot read config ({exc.strerror})") from None
    lines = _line_index(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(path, f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(path, f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(path, "content before the first [section] header", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(path, "malformed line (expected key = value)", lineno) from None
    r = _Reader(path, parser, lines)

    known = {"dataset", "network", "device", "train", "noise", "output"}
    for sec in parser.sections():
        if sec not in known and not (sec == "sweep" or sec.startswith("sweep.")):
            r.fail(sec, None, f"unknown section [{sec}]")
    for sec in ("dataset", "network"):
        if not parser.has_section(sec):
            raise ConfigError(path, f"missing required section [{sec}]")

    # dataset
    kind = r.raw("dataset", "kind")
    if kind not in DATASET_KINDS:
        r.fail("dataset", "kind", f"expected one of {', '.join(DATASET_KINDS)}, got {kind!r}")
    ds = {"kind": kind, "bias": r.bool("dataset", "bias", False),
          "seed": r.int("dataset", "seed", 0),
          "subset_train": r.int("dataset", "subset_train"),
          "subset_test": r.int("dataset", "subset_test")}
    if kind == "mnist":
        d = Path(r.raw("dataset", "dir", "") or ".")
        files = {}
        for key, stem in zip(("images", "labels", "test_images", "test_labels"), MNIST_FILES):
            given = r.raw("dataset", key)
            p = Path(given) if given else d / stem
            if not p.exists() and p.with_name(p.name + ".gz").exists():
                p = p.with_name(p.name + ".gz")
            if not p.exists():
                r.fail("dataset", key if given else "dir", f"file not found: {p}")
            files[key] = str(p)
        ds.update(files, train_frac=r.num("dataset", "train_frac", 0.86),
                  reshuffle=r.bool("dataset", "reshuffle", False))
    elif kind == "image_dir":
        p = r.raw("dataset", "path")
        if not p:
            r.fail("dataset", "path", "image_dir datasets need a path")
        p = Path(p)
        if not p.is_dir():
            r.fail("dataset", "path", f"directory not found: {p}")
        ds.update(path=str(p), side=r.int("dataset", "side", 32),
                  train_frac=r.num("dataset", "train_frac", 0.45))
    elif kind == "synthetic_faces":
        ds.update(side=r.int("dataset", "side", 32), n_classes=r.int("dataset", "n_classes", 15),
                  per_class=r.int("dataset", "per_class", 11),
                  separation=r.num("dataset", "separation", 0.35),
                  noise=r.num("dataset", "noise", 0.25),
                  train_frac=r.num("dataset", "train_frac", 0.45))

    # device
    dev_kw = dict(r_on=r.num("device", "r_on_ohm", 3e3), r_off=r.num("device", "r_off_ohm", 62e3),
                  v_th=r.num("device", "v_th_volt", 1.0))
    if r.has("device", "dynamics_rate"):
        dev_kw["dynamics_rate"] = r.num("device", "dynamics_rate")
    dev_kw["levels"] = r.int("device", "levels")
    try:
        device = DeviceParams(**dev_kw)
    except ValueError as exc:
        r.fail("device", None, str(exc))

    # network
    sizes = r.list("network", "layer_sizes", _parse_int)
    if not sizes:
        r.fail("network", "layer_sizes", "required")
    gaps = len(sizes) - 1
    gains_raw = r.raw("network", "gains", "auto")
    gains = None if gains_raw.lower() == "auto" else r.list("network", "gains", float)
    partition = r.list("network", "partition", _parse_partition, None)
    if partition is not None and len(partition) == 1 and gaps > 1:
        partition = partition + [None] * (gaps - 1)
    try:
        net_cfg = NetworkConfig(
            layer_sizes=sizes,
            activations=r.list("network", "activations", str, None),
            mode=r.raw("network", "mode", "ann"),
            partition=partition,
            device=device,
            weight_clip=r.num("network", "weight_clip", 1.0),
            gains=gains,
            read_voltage=r.num("network", "read_voltage", 0.5),
            wire_res=r.num("network", "wire_res_ohm"),
            quantize=r.raw("network", "quantize", "read"),
            rounding=r.raw("network", "rounding", "nearest"))
    except ValueError as exc:
        r.fail("network", None, str(exc))
    n_in, n_out = _expected_dims(ds)
    if sizes[0] != n_in:
        r.fail("network", "layer_sizes", f"input layer has {sizes[0]} neurons but the dataset "
                                         f"provides {n_in} features")
    if n_out is not None and sizes[-1] != n_out:
        r.fail("network", "layer_sizes", f"output layer has {sizes[-1]} neurons but the dataset "
                                         f"has {n_out} targets")

    # train
    epochs = r.num("train", "epochs")
    iterations = r.int("train", "iterations", 100_000)
    try:
        spec = TrainSpec(eta=r.num("train", "eta", 0.5), iterations=iterations,
                         seed=r.int("train", "seed", 0),
                         update_model=r.raw("train", "update_model", "ideal_write"),
                         bnn_accumulate_window=r.int("train", "bnn_accumulate_window", 100),
                         record_every=r.int("train", "record_every", 100),
                         order=r.raw("train", "order", "random"))
        noise = NoiseSpec(offset_frac=r.num("noise", "offset_frac", 0.0),
                          mismatch_frac=r.num("noise", "mismatch_frac", 0.0),
                          seed=r.int("noise", "seed"),
                          distribution=r.raw("noise", "distribution", "uniform"),
                          mismatch_mode=r.raw("noise", "mismatch_mode", "per_update"))
    except ValueError as exc:
        r.fail("train" if parser.has_section("train") else "noise", None, str(exc))
    if epochs is not None and epochs <= 0:
        r.fail("train", "epochs", "must be positive")
    if seed_override is not None:
        spec = replace(spec, seed=int(seed_override))

    # sweeps
    points: List[SweepPoint] = []
    groups = [s for s in parser.sections() if s == "sweep" or s.startswith("sweep.")]
    for sec in groups:
        for key in parser.options(sec):
            if key not in SWEEP_KEYS:
                r.fail(sec, key, f"not a sweep key (allowed: {', '.join(SWEEP_KEYS)})")
            if r.raw(sec, key) == "":
                r.fail(sec, key, "sweep list is empty")
        name = sec.split(".", 1)[1] if "." in sec else "sweep"
        axes = {
            "eta": r.list(sec, "eta", float, [spec.eta]),
            "offset_frac": r.list(sec, "offset_frac", float, [noise.offset_frac]),
            "mismatch_frac": r.list(sec, "mismatch_frac", float, [noise.mismatch_frac]),
            "iterations": r.list(sec, "iterations", _parse_int, [None]),
            "seeds": r.conv(sec, "seeds", _parse_seeds, [spec.seed], "seed list"),
            "partition": r.list(sec, "partition", _parse_partition, [None]),
        }
        if seed_override is not None:
            axes["seeds"] = [int(seed_override)]
        for key, vals in axes.items():
            if not vals:
                r.fail(sec, key, "sweep list is empty")
        for eta, off, mis, it, seed, part in itertools.product(*axes.values()):
            if eta <= 0 or off < 0 or mis < 0 or (it is not None and it < 1):
                r.fail(sec, None, "sweep values out of range")
            points.append(SweepPoint(name, eta, off, mis, it, seed, part))
    if not points:
        points.append(SweepPoint("base", spec.eta, noise.offset_frac, noise.mismatch_frac,
                                 None, spec.seed, None))
    names = [p.name for p in points]
    if len(set(names)) != len(names):
        raise ConfigError(path, "sweep groups produce duplicate points")

    out = Path(r.raw("output", "dir", "results"))
    return ExperimentConfig(path=path, dataset=ds, network=net_cfg, train=spec, epochs=epochs,
                            noise=noise, points=points, output_dir=out,
                            plots=r.bool("output", "plots", True),
                            theta=r.num("output", "theta", 0.5), lines=lines)


# -- datasets ----------------------------------------------------------------

def build_dataset(ds: dict) -> Dataset:
    kind = ds["kind"]
    if kind == "xor":
        data = xor_dataset()
    elif kind == "mnist":
        data = load_mnist(ds["images"], ds["labels"], ds["test_images"], ds["test_labels"],
                          train_frac=ds["train_frac"], seed=ds["seed"], reshuffle=ds["reshuffle"])
    elif kind == "image_dir":
        data = load_image_dir(ds["path"], side=ds["side"], train_frac=ds["train_frac"],
                              seed=ds["seed"])
    else:
        data = synthetic_faces(n_classes=ds["n_classes"], per_class=ds["per_class"],
                               side=ds["side"], train_frac=ds["train_frac"], seed=ds["seed"],
                               separation=ds["separation"], noise=ds["noise"])
    if ds.get("subset_train") or ds.get("subset_test"):
        data = data.subset(ds.get("subset_train") or len(data.train_idx),
                           ds.get("subset_test") or len(data.test_idx), seed=ds["seed"])
    if ds.get("bias"):
        data = data.with_bias()
    return data


# -- evaluation --------------------------------------------------------------

def evaluate(net: MemristiveNetwork, dataset: Dataset, thresholded: bool = True,
             subset: str = "test", theta: float = 0.5) -> float:
    """Accuracy in percent.

    Thresholded: share of samples whose comparator output (single output) or
    argmax (several outputs) matches the target. Unthresholded:
    ``100 * (1 - mean |y - t|)`` over all outputs.
    """
    idx = dataset.test_idx if subset == "test" else dataset.train_idx
    if len(idx) == 0:
        return float("nan")
    y = np.array([net.predict(dataset.inputs[i]) for i in idx])
    t = dataset.targets[idx]
    if not thresholded:
        return float(100.0 * (1.0 - np.mean(np.abs(y - t))))
    if t.shape[1] == 1:
        correct = act.output_threshold(y[:, 0], theta) == t[:, 0]
    else:
        correct = np.argmax(y, axis=1) == np.argmax(t, axis=1)
    return float(100.0 * np.mean(correct))


# -- running -----------------------------------------------------------------

_DATA_CACHE: Dict[str, Dataset] = {}


def _dataset_cached(ds: dict) -> Dataset:
    key = json.dumps(ds, sort_keys=True)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = build_dataset(ds)
    return _DATA_CACHE[key]


def run_point(cfg: ExperimentConfig, point: SweepPoint) -> dict:
    """Train and evaluate one sweep point. Pure with respect to other points."""
    data = _dataset_cached(cfg.dataset)
    net_cfg = cfg.network
    if point.partition is not None:
        parts = list(net_cfg.partition)
        parts[0] = point.partition
        net_cfg = replace(net_cfg, partition=parts)
    iterations = point.iterations
    if iterations is None:
        iterations = (int(round(cfg.epochs * len(data.train_idx))) if cfg.epochs
                      else cfg.train.iterations)
    spec = replace(cfg.train, eta=point.eta, iterations=iterations, seed=point.seed)
    noise = replace(cfg.noise, offset_frac=point.offset_frac, mismatch_frac=point.mismatch_frac)
    net = MemristiveNetwork(net_cfg, seed=point.seed)
    result = train(net, data, spec, noise=noise)
    acc = {f"{split}_{mode}": evaluate(net, data, mode == "thresholded", split, cfg.theta)
           for split in ("train", "test") for mode in ("thresholded", "unthresholded")}
    return {"name": point.name, "point": point, "trace": result.trace, "accuracy": acc,
            "final_error": result.trace[-1][1] if result.trace else None,
            "iterations": iterations}


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "error"])
    for it, err in trace:
        w.writerow([it, repr(float(err))])
    return buf.getvalue()


def _plot_svg(trace, title, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "memxbar"
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if trace:
        it, err = zip(*trace)
        ax.plot(it, err, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("error")
    ax.set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _rows(results) -> list:
    """Seed-aggregated rows, one per distinct non-seed configuration."""
    groups: Dict[tuple, list] = {}
    for res in results:
        groups.setdefault(res["point"].row_key, []).append(res)
    rows = []
    for key, members in groups.items():
        group, eta, off, mis, part, iters = key
        accs = {k: [m["accuracy"][k] for m in members] for k in members[0]["accuracy"]}
        rows.append({
            "group": group, "eta": eta, "offset_frac": off, "mismatch_frac": mis,
            "partition": part, "iterations": members[0]["iterations"],
            "seeds": [m["point"].seed for m in members],
            "mean": {k: float(np.mean(v)) for k, v in accs.items()},
            "per_seed": accs,
            "final_error": [m["final_error"] for m in members],
        })
    return rows


def run(cfg: ExperimentConfig, out_dir=None, workers: int = 1, cost: bool = False) -> dict:
    """Run every sweep point and write traces, plots and ``summary.json``."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    points = cfg.points
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_point, [cfg] * len(points), points))
    else:
        results = [run_point(cfg, p) for p in points]
    for res in results:
        (out / f"trace_{res['name']}.csv").write_text(_trace_csv(res["trace"]))
        if cfg.plots:
            _plot_svg(res["trace"], res["name"], out / f"trace_{res['name']}.svg")
    summary = {
        "config": str(cfg.path.name),
        "dataset": cfg.dataset["kind"],
        "layer_sizes": list(cfg.network.layer_sizes),
        "points": [{"name": r["name"], "group": r["point"].group, "eta": r["point"].eta,
                    "offset_frac": r["point"].offset_frac,
                    "mismatch_frac": r["point"].mismatch_frac,
                    "partition": r["point"].partition, "seed": r["point"].seed,
                    "iterations": r["iterations"], "accuracy": r["accuracy"],
                    "final_error": r["final_error"]} for r in results],
        "rows": _rows(results),
    }
    if cost:
        report = costmodel.estimate(cfg.network)
        summary["cost"] = report.to_dict()
        (out / "cost.json").write_text(report.to_json() + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
