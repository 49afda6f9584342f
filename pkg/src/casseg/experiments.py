"""Config-driven experiment runners and report writers.

Each runner takes an :class:`ExperimentConfig` and returns a plain dict that
serializes to the same bytes every time the same config is run. Reports carry
no timestamps; wall-clock time is only printed by the CLI.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import data as D
from .errors import CassegError, ConfigError
from .losses import LOSS_KINDS, batch_loss, cace_loss, cas_backward, cas_bounds, cas_forward, region_means
from .metrics import (
    adaptive_threshold,
    confusion,
    covering,
    f_beta,
    mae,
    rand_index,
    select_channel,
    variation_of_information,
)
from .nn import (
    Dense,
    Relu,
    SoftmaxChannels,
    TrainConfig,
    fcn_specs,
    fit,
    gradcheck,
    mlp_specs,
    network_init,
    predict,
)
from .postproc import absorb_small_regions, kmeans_descriptors

KINDS = ("gradcheck", "toy-imbalance", "saliency", "multiregion", "props")
FIDELITIES = ("high", "low")
NETWORKS = ("fcn", "mlp")
GRADCHECK_NETS = ("linear", "mlp", "fcn")

_TRAIN_KEYS = ("learning_rate", "momentum", "adam", "beta1", "beta2", "eps", "epochs", "batch_size")

# Defaults are spelled out per experiment so an emitted report fully
# describes the run that produced it.
DEFAULTS: dict[str, dict] = {
    "gradcheck": {
        "seed": 0,
        "alpha": 0.5,
        "options": {
            "sweep": [[net, loss] for net in GRADCHECK_NETS for loss in LOSS_KINDS],
            "trials": 12,
            "h": 1e-5,
            "tolerance": 1e-4,
            "dense_tolerance": 1e-6,
            "perturb": 0.0,
        },
    },
    "toy-imbalance": {
        "seed": 0,
        "losses": ["ce", "cas"],
        "alpha": 0.5,
        "network": "mlp",
        "hidden": 10,
        "channels": 2,
        "train": {"learning_rate": 0.05, "momentum": 0.9, "adam": False, "epochs": 200, "batch_size": 1},
        "data": {"n1": 10000, "n2": 10, "c1": [1.0, 0.0], "c2": [0.0, 1.0], "sigma": 0.2},
        "options": {"balanced_control": True},
    },
    "saliency": {
        "seed": 0,
        "losses": ["cas", "ce", "cace"],
        "fidelities": ["high", "low"],
        "flip_probability": 0.5,
        "alpha": 0.5,
        "network": "fcn",
        "hidden": 8,
        "channels": 2,
        "train": {"learning_rate": 0.05, "momentum": 0.9, "adam": False, "epochs": 60, "batch_size": 8},
        "data": {
            "height": 32,
            "width": 32,
            "input_size": [32, 32],
            "n_samples": 60,
            "textures": [[0.2, 0.05], [0.8, 0.05]],
            "salient_fraction": [0.1, 0.35],
            "split": [6, 4],
        },
        "options": {"validation_count": 6, "heatmaps": 3},
    },
    "multiregion": {
        "seed": 0,
        "losses": ["cas", "ce"],
        "fidelities": ["low"],
        "flip_probability": 0.5,
        "alpha": 0.5,
        "network": "fcn",
        "hidden": 16,
        "channels": 3,
        "train": {"learning_rate": 0.001, "momentum": 0.9, "adam": True, "epochs": 100, "batch_size": 8},
        "data": {
            "height": 32,
            "width": 32,
            "input_size": [32, 32],
            "region_count": 3,
            "n_samples": 40,
            "textures": [[0.15, 0.04], [0.5, 0.04], [0.85, 0.04]],
            "split": [6, 4],
        },
        "options": {"restarts": 5, "clusters": 20, "min_fraction": 0.02, "normalization": "dataset", "partitions": 3},
    },
    "props": {
        "seed": 0,
        "alpha": 0.5,
        "options": {"random_cases": 200, "bound_samples": 10000, "fixtures": 100, "train_sparsity": True},
    },
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    losses: list = field(default_factory=list)
    fidelities: list = field(default_factory=list)
    flip_probability: float = 0.5
    alpha: float = 0.5
    network: str = "fcn"
    hidden: int = 8
    channels: int = 2
    train: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(self.__dict__)

    def train_config(self, loss: str, seed: int | None = None) -> TrainConfig:
        kw = {k: self.train[k] for k in _TRAIN_KEYS if k in self.train}
        return TrainConfig(seed=self.seed if seed is None else seed, loss=loss, alpha=self.alpha, **kw)


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def make_config(raw: dict | None = None, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Build a validated config from a JSON-like dict, filling per-kind defaults."""
    raw = dict(raw or {})
    kind = raw.pop("kind", None) or kind
    if kind not in KINDS:
        raise ConfigError(f"experiment kind must be one of {KINDS}, got {kind!r}")
    raw.pop("out", None)
    merged = _merge(dict(DEFAULTS[kind]), raw, "")
    if "train" in merged:
        unknown = set(merged["train"]) - set(_TRAIN_KEYS)
        if unknown:
            raise ConfigError(f"unknown train keys {sorted(unknown)}")
    if seed is not None:
        merged["seed"] = seed
    for key in ("losses", "fidelities"):
        if isinstance(merged.get(key), str):
            merged[key] = [merged[key]]
    cfg = ExperimentConfig(kind=kind, **merged)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for loss in cfg.losses:
        if loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {loss!r}")
    for fid in cfg.fidelities:
        if fid not in FIDELITIES:
            raise ConfigError(f"unknown fidelity {fid!r}")
    if not 0.0 <= float(cfg.flip_probability) <= 1.0:
        raise ConfigError("flip_probability must lie in [0, 1]")
    if not 0.0 <= float(cfg.alpha) <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    if cfg.network not in NETWORKS:
        raise ConfigError(f"network must be one of {NETWORKS}")
    if cfg.kind == "gradcheck":
        sweep = cfg.options.get("sweep")
        if not sweep:
            raise ConfigError("gradcheck sweep is empty")
        for entry in sweep:
            if len(entry) != 2 or entry[0] not in GRADCHECK_NETS or entry[1] not in LOSS_KINDS:
                raise ConfigError(f"bad sweep entry {entry!r}")
        if int(cfg.options["trials"]) < 1:
            raise ConfigError("trials must be at least 1")
    if cfg.kind == "multiregion":
        n = int(cfg.data["region_count"])
        if n < 3:
            raise ConfigError("multiregion needs at least 3 regions")
        if cfg.channels < n:
            raise ConfigError(f"{cfg.channels} descriptor channels cannot separate {n} regions")
        if cfg.options["normalization"] not in ("dataset", "image"):
            raise ConfigError("normalization must be 'dataset' or 'image'")
        if int(cfg.options["restarts"]) < 1:
            raise ConfigError("restarts must be at least 1")
    if cfg.kind in ("saliency", "multiregion", "toy-imbalance"):
        if not cfg.losses:
            raise ConfigError("no losses to train")
        try:
            for loss in cfg.losses:
                cfg.train_config(loss)
        except CassegError as exc:
            raise ConfigError(str(exc)) from exc
    if cfg.kind == "saliency" and "cace" in cfg.losses and cfg.channels != 2:
        raise ConfigError("cace needs exactly 2 output channels")


def load_config(path: str | os.PathLike, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if kind is not None and raw.get("kind", kind) != kind:
        raise ConfigError(f"config is for {raw['kind']!r}, not {kind!r}")
    return make_config(raw, kind, seed)


# -- shared helpers -----------------------------------------------------------


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def canonical_json(report: dict) -> str:
    return json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _specs(cfg: ExperimentConfig, in_channels: int):
    if cfg.network == "mlp":
        return mlp_specs(in_channels, cfg.hidden, cfg.channels)
    return fcn_specs(in_channels, cfg.channels, cfg.hidden)


def _bounds_for(partitions, alpha: float) -> tuple[float, float]:
    ns = {int(np.unique(p).size) for p in partitions}
    lows, highs = zip(*(cas_bounds(n, alpha) for n in ns))
    return min(lows), max(highs)


def _check_log(log, bounds) -> bool:
    lo, hi = bounds
    return all(lo <= value <= hi for _, value in log)


# -- gradcheck ----------------------------------------------------------------


_KINK_MARGIN = 1e-3


def _near_kink(net, x, targets, loss: str) -> bool:
    """True if some ReLU input or the CACE orientation choice sits near a kink.

    Finite differences straddling a non-differentiable point measure a
    one-sided mix of slopes, so such draws say nothing about backprop.
    """
    from .losses import ce_loss
    from .nn import forward

    out, cache = forward(net, x)
    for spec, rec in zip(net.specs, cache.records):
        if isinstance(spec, Relu) and np.abs(rec).min() < _KINK_MARGIN:
            return True
    if loss == "cace":
        for o, t in zip(out, targets):
            if abs(ce_loss(o, t)[0] - ce_loss(o, 1 - t)[0]) < _KINK_MARGIN:
                return True
    return False


def _gradcheck_case(net_name: str, loss: str, rng: np.random.Generator, max_draws: int = 100):
    out = 2 if loss == "cace" else 3
    if net_name == "linear":
        specs = [Dense(2, out), SoftmaxChannels()]
    elif net_name == "mlp":
        specs = [Dense(2, 6), Relu(), Dense(6, out), SoftmaxChannels()]
    else:
        specs = fcn_specs(1, out, hidden=3)
    shape = (5, 5) if net_name == "fcn" else (12,)
    classes = 2 if loss == "cace" else out
    for draw in range(max_draws):
        x = rng.standard_normal((2,) + shape + ((1,) if net_name == "fcn" else (2,)))
        targets = [rng.integers(0, classes, shape) for _ in range(2)]
        net = network_init(specs, int(rng.integers(2**31)))
        if not _near_kink(net, x, targets, loss):
            return net, x, targets, draw
    raise ConfigError(f"no kink-free draw for {net_name}/{loss} in {max_draws} tries")


def run_gradcheck(cfg: ExperimentConfig) -> dict:
    opts = cfg.options
    rows = []
    for combo, (net_name, loss) in enumerate(opts["sweep"]):
        for trial in range(int(opts["trials"])):
            rng = np.random.default_rng([cfg.seed, combo, trial])
            net, x, targets, redraws = _gradcheck_case(net_name, loss, rng)
            err = gradcheck(net, x, targets, loss, cfg.alpha, float(opts["h"]), float(opts["perturb"]))
            dense_only = net_name != "fcn"
            tol = float(opts["dense_tolerance"] if dense_only else opts["tolerance"])
            rows.append(
                {
                    "network": net_name,
                    "loss": loss,
                    "trial": trial,
                    "parameters": net.parameter_count,
                    "redraws": redraws,
                    "max_relative_error": err,
                    "tolerance": tol,
                    "pass": err <= tol,
                }
            )
    worst = max(r["max_relative_error"] for r in rows)
    return {
        "experiment": "gradcheck",
        "config": cfg.to_dict(),
        "combinations": len(rows),
        "max_relative_error": worst,
        "status": "pass" if all(r["pass"] for r in rows) else "fail",
        "rows": rows,
    }


# -- toy imbalance ------------------------------------------------------------


def _toy_arm(cfg: ExperimentConfig, loss: str, train: D.Dataset, test: D.Dataset) -> dict:
    x = train[0].input[None]
    y = train[0].partition
    net = network_init(_specs(cfg, 2), cfg.seed)
    log = fit(net, x, [y], cfg.train_config(loss))
    test_out = predict(net, test[0].input[None])[0]
    if loss == "cas":
        # descriptors carry no class order; each test point takes the class
        # whose training descriptor mean is nearest
        means = region_means(predict(net, x)[0], y)
        pred = ((test_out[:, None, :] - means[None]) ** 2).sum(-1).argmin(1)
    else:
        pred = test_out.argmax(-1)
    counts = confusion(pred, test[0].partition, 2)
    minority = counts[:, 1].sum()
    arm = {
        "loss": loss,
        "confusion": counts,
        "minority_recall": float(counts[1, 1] / minority) if minority else 1.0,
        "majority_recall": float(counts[0, 0] / counts[:, 0].sum()),
        "loss_log": log,
    }
    if loss == "cas":
        bounds = cas_bounds(2, cfg.alpha)
        arm["bounds"] = list(bounds)
        arm["bounds_ok"] = _check_log(log, bounds)
    return arm


def run_toy_imbalance(cfg: ExperimentConfig) -> dict:
    d = cfg.data
    train, test = D.gen_toy_imbalance(cfg.seed, d["n1"], d["n2"], d["c1"], d["c2"], d["sigma"])
    arms = {loss: _toy_arm(cfg, loss, train, test) for loss in cfg.losses}
    report = {"experiment": "toy-imbalance", "config": cfg.to_dict(), "arms": arms, "manifest": train.manifest}
    if cfg.options.get("balanced_control"):
        tr, te = D.gen_toy_imbalance(cfg.seed, d["n1"], d["n1"], d["c1"], d["c2"], d["sigma"])
        report["balanced_control"] = {loss: _toy_arm(cfg, loss, tr, te) for loss in cfg.losses}
    report["rows"] = [
        {"setting": "imbalanced", "loss": k, "minority_recall": a["minority_recall"], "majority_recall": a["majority_recall"]}
        for k, a in arms.items()
    ] + [
        {"setting": "balanced", "loss": k, "minority_recall": a["minority_recall"], "majority_recall": a["majority_recall"]}
        for k, a in report.get("balanced_control", {}).items()
    ]
    return report


# -- saliency -----------------------------------------------------------------


def _inputs(ds: D.Dataset, size, stats=None) -> np.ndarray:
    return np.stack([D.preprocess(s.input, size, stats)[..., None] for s in ds.samples])


def _resized(arrays, size) -> list[np.ndarray]:
    return [D.resize_nearest(a, size) for a in arrays]


def saliency_data(cfg: ExperimentConfig):
    """Generate, split and corrupt the binary dataset shared by every arm.

    Returns ``(fit_high, fit_low, validation, test)``. Validation and test are
    never corrupted.
    """
    d = cfg.data
    ds = D.gen_synthetic_segmentation(
        cfg.seed, d["height"], d["width"], 2, d["textures"], d["n_samples"], tuple(d["salient_fraction"])
    )
    train, test = D.split(ds, tuple(d["split"]), cfg.seed)
    k = int(cfg.options["validation_count"])
    val = D.Dataset(train.samples[:k], dict(train.manifest, role="validation"))
    fit_high = D.Dataset(train.samples[k:], dict(train.manifest, role="fit"))
    fit_low = D.corrupt_low_fidelity(fit_high, cfg.flip_probability, cfg.seed)
    return fit_high, fit_low, val, test


def _saliency_arm(cfg, loss, fidelity, fitset, val, test, size) -> tuple[dict, list, np.ndarray]:
    net = network_init(_specs(cfg, 1), cfg.seed)
    masks = _resized([s.mask for s in fitset.samples], size)
    log = fit(net, _inputs(fitset, size), masks, cfg.train_config(loss))
    val_masks = _resized([s.mask for s in val.samples], size)
    if loss == "ce":
        channel = 1  # class 1 is the salient class
    else:
        channel = select_channel(list(predict(net, _inputs(val, size))), val_masks)
    out = predict(net, _inputs(test, size))
    test_masks = _resized([s.mask for s in test.samples], size)
    rows = []
    for i, (o, g) in enumerate(zip(out, test_masks)):
        s = o[..., channel]
        fs = f_beta(adaptive_threshold(s).values, g)
        rows.append(
            {"arm": f"{loss}/{fidelity}", "image": i, "f_beta": fs.f, "precision": fs.precision,
             "recall": fs.recall, "mae": mae(s, g)}
        )
    arm = {
        "loss": loss,
        "fidelity": fidelity,
        "chosen_channel": channel,
        "f_beta": float(np.mean([r["f_beta"] for r in rows])),
        "mae": float(np.mean([r["mae"] for r in rows])),
        "precision": float(np.mean([r["precision"] for r in rows])),
        "recall": float(np.mean([r["recall"] for r in rows])),
        "sparsity": float(out.max(-1).mean()),
        "final_loss": log[-1][1] if log else None,
        "loss_log": log,
    }
    if loss == "cas":
        bounds = cas_bounds(2, cfg.alpha)
        arm["bounds"] = list(bounds)
        arm["bounds_ok"] = _check_log(log, bounds)
    return arm, rows, out[..., channel]


def _relative_drop(high: float, low: float) -> float | None:
    return None if high == 0 else (high - low) / high


def run_saliency(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    size = tuple(cfg.data["input_size"])
    fit_high, fit_low, val, test = saliency_data(cfg)
    arms, rows = {}, []
    for fidelity in cfg.fidelities:
        fitset = fit_high if fidelity == "high" else fit_low
        for loss in cfg.losses:
            arm, arm_rows, maps = _saliency_arm(cfg, loss, fidelity, fitset, val, test, size)
            arms[f"{loss}/{fidelity}"] = arm
            rows.extend(arm_rows)
            if out_dir is not None:
                for i, s in enumerate(maps[: int(cfg.options["heatmaps"])]):
                    render_heatmap(s, os.path.join(out_dir, f"heatmap_{loss}_{fidelity}_{i}.pgm"))
    summary = {}
    f = {k: a["f_beta"] for k, a in arms.items()}
    for loss in cfg.losses:
        if f"{loss}/high" in f and f"{loss}/low" in f:
            summary[f"{loss}_relative_drop"] = _relative_drop(f[f"{loss}/high"], f[f"{loss}/low"])
    if "cace/low" in f and "ce/high" in f:
        summary["cace_low_vs_ce_high"] = _relative_drop(f["ce/high"], f["cace/low"])
    if "cas/high" in f and "ce/high" in f:
        summary["ce_minus_cas_high"] = f["ce/high"] - f["cas/high"]
    report = {
        "experiment": "saliency",
        "config": cfg.to_dict(),
        "arms": arms,
        "summary": summary,
        "bounds_ok": all(a.get("bounds_ok", True) for a in arms.values()),
        "manifest": fit_low.manifest,
        "rows": rows,
    }
    return report


# -- multi-region ---------------------------------------------------------------


def _train_with_restarts(cfg, loss, x, targets) -> tuple[Any, list, list]:
    """Train ``restarts`` independent nets (own init and shuffle order); keep the lowest final loss.

    Selection uses the loss of the finished net on the whole training set,
    never test data. Returns ``(net, logs, final_losses)``.
    """
    best, best_loss = None, math.inf
    logs, finals = [], []
    for r in range(int(cfg.options["restarts"])):
        init_seed = int(np.random.SeedSequence([cfg.seed, r]).generate_state(1)[0])
        net = network_init(_specs(cfg, 1), init_seed)
        logs.append(fit(net, x, targets, cfg.train_config(loss, seed=init_seed)))
        final, _ = batch_loss(loss, predict(net, x), targets, cfg.alpha)
        finals.append(final)
        if final < best_loss:
            best, best_loss = net, final
    return best, logs, finals


def run_multiregion(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    d = cfg.data
    n = int(d["region_count"])
    size = tuple(d["input_size"])
    ds = D.gen_synthetic_segmentation(cfg.seed, d["height"], d["width"], n, d["textures"], d["n_samples"])
    train, test = D.split(ds, tuple(d["split"]), cfg.seed)
    low = D.corrupt_low_fidelity(train, cfg.flip_probability, cfg.seed)
    stats = None
    if cfg.options["normalization"] == "dataset":
        stats = D.dataset_stats([D.resize_bilinear(s.input, size) for s in train.samples])
    x_test = _inputs(test, size, stats)
    gt = _resized([s.partition for s in test.samples], size)
    arms, rows = {}, []
    for fidelity in cfg.fidelities:
        fitset = train if fidelity == "high" else low
        x = _inputs(fitset, size, stats)
        targets = _resized([s.partition for s in fitset.samples], size)
        for loss in cfg.losses:
            net, logs, finals = _train_with_restarts(cfg, loss, x, targets)
            out = predict(net, x_test)
            arm_rows = []
            for i, (o, g) in enumerate(zip(out, gt)):
                lab = kmeans_descriptors(o, int(cfg.options["clusters"]), cfg.seed)
                lab = absorb_small_regions(lab, o, float(cfg.options["min_fraction"]))
                arm_rows.append(
                    {"arm": f"{loss}/{fidelity}", "image": i, "rand_index": rand_index(lab, g),
                     "variation_of_information": variation_of_information(lab, g),
                     "covering": covering(lab, g), "regions": int(lab.max()) + 1}
                )
                if out_dir is not None and i < int(cfg.options["partitions"]):
                    D.pgm_write_labels(os.path.join(out_dir, f"partition_{loss}_{fidelity}_{i}.pgm"), lab)
            arm = {
                "loss": loss,
                "fidelity": fidelity,
                "restart_final_losses": finals,
                "chosen_restart": int(np.argmin(finals)),
                "loss_logs": logs,
            }
            for key in ("rand_index", "variation_of_information", "covering", "regions"):
                arm[key] = float(np.mean([r[key] for r in arm_rows]))
            if loss == "cas":
                bounds = _bounds_for(targets, cfg.alpha)
                arm["bounds"] = list(bounds)
                arm["bounds_ok"] = all(_check_log(log, bounds) for log in logs)
            arms[f"{loss}/{fidelity}"] = arm
            rows.extend(arm_rows)
    return {
        "experiment": "multiregion",
        "config": cfg.to_dict(),
        "arms": arms,
        "bounds_ok": all(a.get("bounds_ok", True) for a in arms.values()),
        "manifest": low.manifest,
        "rows": rows,
    }


# -- invariant suite ----------------------------------------------------------


def _random_case(rng):
    h, w = (int(v) for v in rng.integers(1, 7, 2))
    m = int(rng.integers(1, 5))
    n = min(int(rng.integers(1, 5)), h * w)
    labels = rng.permutation(np.arange(h * w) % n).reshape(h, w)
    return rng.dirichlet(np.ones(m), size=(h, w)), labels


def run_props(cfg: ExperimentConfig) -> dict:
    from . import oracles as O

    opts = cfg.options
    rng = np.random.default_rng([cfg.seed, 1])
    cases = [_random_case(rng) for _ in range(int(opts["random_cases"]))]
    results = {}

    worst = 0.0
    for f, lab in cases[:40]:
        a = float(rng.random())
        analytic = cas_backward(f, lab, a)
        numeric = O.central_differences(lambda z: cas_forward(z, lab, a).total, f, 1e-6)
        gap = np.abs(analytic - numeric)
        rel = np.where(np.abs(analytic) < 1e-6, gap, gap / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6))
        worst = max(worst, float(rel.max()))
    results["cas_gradient_finite_differences"] = {"value": worst, "pass": worst <= 1e-6}

    gc = run_gradcheck(make_config({"options": {"trials": 2}}, "gradcheck", cfg.seed))
    results["network_gradcheck"] = {"value": gc["max_relative_error"], "pass": gc["status"] == "pass"}

    ok = True
    for f, lab in cases:
        perm = rng.permutation(int(lab.max()) + 1)
        ok &= cas_forward(f, lab, 0.5).total == cas_forward(f, perm[lab], 0.5).total
        ok &= np.array_equal(cas_backward(f, lab, 0.5), cas_backward(f, perm[lab], 0.5))
    results["permutation_invariance"] = {"pass": bool(ok)}

    ok = True
    for _ in range(len(cases)):
        p = rng.dirichlet([1, 1], size=(4, 5))
        g = rng.integers(0, 2, (4, 5))
        ok &= cace_loss(p, g).loss == cace_loss(p, 1 - g).loss
    results["cace_symmetry"] = {"pass": bool(ok)}

    worst = 0.0
    for f, lab in cases:
        flat_f, flat_l = f.reshape(-1, f.shape[-1]), lab.ravel()
        r = int(flat_l[0])
        extra = flat_f[flat_l == r]
        big_f = np.concatenate([flat_f, extra])
        big_l = np.concatenate([flat_l, np.full(len(extra), r)])
        u0 = cas_forward(flat_f, flat_l, 0.5).uniformer_per_region[r]
        u1 = cas_forward(big_f, big_l, 0.5).uniformer_per_region[r]
        mu_gap = np.abs(region_means(flat_f, flat_l)[r] - region_means(big_f, big_l)[r]).max()
        worst = max(worst, abs(u0 - u1), float(mu_gap))
    results["duplication_invariance"] = {"value": worst, "pass": worst <= 1e-12}

    best, pairs = O.simplex_pair_search(0.01)
    vertices = {(1.0, 0.0), (0.0, 1.0)}
    at_vertices = all(a in vertices and b in vertices and a != b for a, b in pairs)
    results["simplex_sparsity"] = {"value": best, "argmax_pairs": pairs, "pass": abs(best - 2.0) <= 1e-12 and at_vertices}

    violations = 0
    for _ in range(int(opts["bound_samples"])):
        f, lab = _random_case(rng)
        a = float(rng.random())
        lo, hi = cas_bounds(int(lab.max()) + 1, a)
        total = cas_forward(f, lab, a).total
        violations += not (lo <= total <= hi)
    results["bounds_sampling"] = {"samples": int(opts["bound_samples"]), "violations": violations, "pass": violations == 0}

    worst = 0.0
    for _ in range(int(opts["fixtures"])):
        s = rng.random((8, 8))
        g = rng.integers(0, 2, (8, 8))
        b = adaptive_threshold(s).values
        p = rng.integers(0, int(rng.integers(1, 6)), (8, 8))
        q = rng.integers(0, int(rng.integers(1, 6)), (8, 8))
        gaps = [
            max(abs(x - y) for x, y in zip(f_beta(b, g), O.f_beta_loop(b, g))),
            abs(mae(s, g) - O.mae_loop(s, g)),
            abs(rand_index(p, q) - O.rand_index_pairs(p, q)),
            abs(variation_of_information(p, q) - O.vi_direct(p, q)),
            abs(covering(p, q) - O.covering_sets(p, q)),
            float(b.ravel().tolist() != O.threshold_loop(s)),
        ]
        worst = max(worst, *gaps)
    results["metric_oracles"] = {"value": worst, "pass": worst <= 1e-12}

    if opts.get("train_sparsity"):
        scfg = make_config({"losses": ["cas"], "fidelities": ["high"]}, "saliency", cfg.seed)
        arm = run_saliency(scfg)["arms"]["cas/high"]
        results["trained_sparsity"] = {"value": arm["sparsity"], "pass": arm["sparsity"] >= 0.9}

    rows = [{"property": k, "pass": v["pass"], "value": v.get("value")} for k, v in results.items()]
    return {
        "experiment": "props",
        "config": cfg.to_dict(),
        "properties": results,
        "status": "pass" if all(v["pass"] for v in results.values()) else "fail",
        "rows": rows,
    }


# -- output -------------------------------------------------------------------


def write_report(report: dict, out_dir: str | os.PathLike) -> tuple[str, str]:
    """Write ``report.json`` and ``metrics.csv`` (one row per entry of ``report['rows']``)."""
    out_dir = os.fspath(out_dir)
    if not os.path.isdir(out_dir):
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(json_path, "w") as fh:
        fh.write(canonical_json(report))
    rows = _plain(report.get("rows", []))
    columns = sorted({k for r in rows for k in r})
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return json_path, csv_path


def render_heatmap(s, path: str | os.PathLike) -> None:
    """Save a map with values in [0, 1] as an 8-bit graymap."""
    D.pgm_write(path, np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0))


RUNNERS = {
    "gradcheck": run_gradcheck,
    "toy-imbalance": run_toy_imbalance,
    "saliency": run_saliency,
    "multiregion": run_multiregion,
    "props": run_props,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Run ``cfg`` and, when ``out_dir`` is given, write every artifact there."""
    if out_dir is not None and not os.path.isdir(out_dir):
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    if cfg.kind in ("saliency", "multiregion"):
        report = RUNNERS[cfg.kind](cfg, out_dir)
    else:
        report = RUNNERS[cfg.kind](cfg)
    if out_dir is not None:
        write_report(report, out_dir)
        if "manifest" in report:
            with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
                fh.write(canonical_json(report["manifest"]))
    return report
