"""Desk-scale studies: independence-testing AUC, neural convergence versus
sample size, and timing of the neural max-sliced estimator against
average-sliced baselines."""

from __future__ import annotations

import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .asmi import AsmiConfig, asmi_estimate, asmi_neural
from .datagen import gen_correlated_gaussian, gen_embedded_signal, gen_latent_subspace
from .knn import DEFAULT_K_NN, KSG_VARIANT
from .lipo import SearchBudget, msmi_lipo
from .neural import TrainConfig, train_msmi
from .report import to_jsonable

log = logging.getLogger(__name__)

METHODS = ("msmi-lipo", "asmi-mc")


def trial_seed(master: int, *keys: int) -> int:
    """Deterministic per-trial seed derived from the master seed and keys."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1, dtype=np.uint32)[0])


def auc_from_scores(null_scores, alt_scores) -> float:
    """Probability that an alternative score beats a null score, ties counting half."""
    null = np.asarray(null_scores, dtype=np.float64).ravel()
    alt = np.asarray(alt_scores, dtype=np.float64).ravel()
    if null.size == 0 or alt.size == 0:
        raise ValueError("score lists must be nonempty")
    greater = np.sum(alt[None, :] > null[:, None])
    ties = np.sum(alt[None, :] == null[:, None])
    return float((greater + 0.5 * ties) / (null.size * alt.size))


@dataclass
class StudyResult:
    """Table rows, per-trial raw statistics and a metadata block that
    echoes every configuration value needed to rerun the study."""

    name: str
    columns: list[str]
    rows: list[dict[str, Any]]
    metadata: dict[str, Any]
    raw: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable({"schema": 1, "study": self.name, "columns": self.columns, "rows": self.rows,
                            "metadata": self.metadata, "raw": self.raw})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# study: {self.name}\n")
            for col, desc in self.metadata.get("column_docs", {}).items():
                fh.write(f"# {col}: {desc}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row.get(c)) for c in self.columns) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _software() -> dict[str, str]:
    import scipy
    import torch

    return {"msmi": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "torch": torch.__version__,
            "python": platform.python_version()}


def _map(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- independence testing ----------------------------------------------------


@dataclass(frozen=True)
class AucStudyConfig:
    d: int = 10
    d_prime: int = 4
    k: int = 1
    k_nn: int = DEFAULT_K_NN
    sample_sizes: tuple[int, ...] = (1000,)
    trials_per_class: int = 50
    methods: tuple[str, ...] = ("msmi-lipo",)
    budget: int = 1000
    num_slices: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_class < 10:
            raise ValueError("trials_per_class must be at least 10")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AucStudyConfig":
        return cls(**d)


def _statistic(method: str, data, cfg: AucStudyConfig, seed: int) -> float:
    if method == "msmi-lipo":
        return msmi_lipo(data, cfg.k, cfg.k_nn, SearchBudget(max_evals=cfg.budget, seed=seed)).value_nats
    return asmi_estimate(data, AsmiConfig(cfg.k, cfg.num_slices, cfg.k_nn, seed)).value


def _auc_trial(task) -> dict[str, float]:
    cfg, n, dependent, trial = task
    data_seed = trial_seed(cfg.seed, n, int(dependent), trial, 0)
    stat_seed = trial_seed(cfg.seed, n, int(dependent), trial, 1)
    data = gen_latent_subspace(n, cfg.d, cfg.d_prime, dependent, data_seed)
    return {m: _statistic(m, data, cfg, stat_seed) for m in cfg.methods}


def independence_auc(cfg: AucStudyConfig, jobs: int = 1) -> StudyResult:
    """AUC-ROC of each statistic separating latent-subspace data from its
    independent twin, per sample size."""
    rows, raw = [], {}
    for n in cfg.sample_sizes:
        start = time.perf_counter()
        tasks = [(cfg, n, dep, t) for dep in (False, True) for t in range(cfg.trials_per_class)]
        stats = _map(_auc_trial, tasks, jobs)
        elapsed = time.perf_counter() - start
        null = stats[: cfg.trials_per_class]
        alt = stats[cfg.trials_per_class :]
        raw[str(n)] = {m: {"null": [s[m] for s in null], "alt": [s[m] for s in alt]} for m in cfg.methods}
        for m in cfg.methods:
            nulls = np.array([s[m] for s in null])
            alts = np.array([s[m] for s in alt])
            rows.append({
                "method": m, "n": n, "k": cfg.k, "null_median": float(np.median(nulls)),
                "alt_median": float(np.median(alts)), "auc": auc_from_scores(nulls, alts),
                "wall_time": elapsed,
            })
        if set(METHODS) <= set(cfg.methods):
            gaps = [s["msmi-lipo"] - s["asmi-mc"] for s in alt]
            violations = int(np.sum(np.asarray(gaps) < -0.05))
            raw[str(n)]["ordering_violations"] = violations
            if violations:
                log.warning("n=%d: %d dependent trials have mSMI below aSMI - 0.05", n, violations)
    meta = {
        "config": cfg.to_dict(),
        "software": _software(),
        "mi_estimator": KSG_VARIANT,
        "search": "adalipo+tr",
        "column_docs": {
            "method": "statistic used as test score",
            "n": "samples per dataset",
            "k": "slice dimension",
            "null_median": "median statistic over independent datasets (nats)",
            "alt_median": "median statistic over dependent datasets (nats)",
            "auc": "Mann-Whitney AUC of alternative versus null scores",
            "wall_time": "seconds spent on this sample size (not reproducible)",
        },
    }
    cols = ["method", "n", "k", "null_median", "alt_median", "auc", "wall_time"]
    return StudyResult("auc", cols, rows, meta, raw)


# --- convergence -------------------------------------------------------------


def epochs_for_steps(n: int, cfg: TrainConfig, steps: int) -> int:
    n_train = n - int(round(cfg.eval_fraction * n))
    per_epoch = max(1, math.ceil(n_train / cfg.batch_size))
    if n_train % cfg.batch_size == 1 and per_epoch > 1:
        per_epoch -= 1
    return max(1, math.ceil(steps / per_epoch))


def _convergence_cell(task) -> dict[str, float]:
    rho, n, seed, cfg, steps = task
    data = gen_correlated_gaussian(n, rho, trial_seed(seed, n, 0))
    run_cfg = replace(cfg, seed=trial_seed(seed, n, 1))
    if steps is not None:
        run_cfg = replace(run_cfg, epochs=epochs_for_steps(n, run_cfg, steps))
    rep = train_msmi(data, run_cfg)
    return {"estimate": rep.value_nats, "epochs": run_cfg.epochs, "wall_time": rep.wall_time_s}


def loglog_slope(ns, errors) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(errors, float)), 1)[0])


def convergence_study(rho: float, sample_sizes: Sequence[int], seeds: Sequence[int],
                      cfg: TrainConfig | None = None, steps: int | None = 3000, jobs: int = 1) -> StudyResult:
    """Absolute error of the neural estimator against the closed form
    ``-log(1 - rho^2)/2`` for each ``(n, seed)``, summarized by medians.

    With ``steps`` set, every run gets about the same number of optimizer
    steps (epochs scale inversely with ``n``); otherwise ``cfg.epochs`` is used.
    """
    cfg = cfg or TrainConfig()
    truth = -0.5 * math.log1p(-rho * rho)
    tasks = [(rho, int(n), int(s), cfg, steps) for n in sample_sizes for s in seeds]
    cells = _map(_convergence_cell, tasks, jobs)
    rows, raw = [], {}
    for i, n in enumerate(sample_sizes):
        block = cells[i * len(seeds) : (i + 1) * len(seeds)]
        est = np.array([c["estimate"] for c in block])
        err = np.abs(est - truth)
        raw[str(n)] = {"estimates": est.tolist(), "seeds": list(seeds), "epochs": block[0]["epochs"]}
        rows.append({"n": int(n), "truth": truth, "median_estimate": float(np.median(est)),
                     "median_abs_error": float(np.median(err)), "epochs": block[0]["epochs"],
                     "wall_time": float(sum(c["wall_time"] for c in block))})
    slope = loglog_slope([r["n"] for r in rows], [r["median_abs_error"] for r in rows]) if len(rows) > 1 else None
    meta = {
        "config": {"rho": rho, "sample_sizes": list(sample_sizes), "seeds": list(seeds), "steps": steps,
                   "train": cfg.to_dict()},
        "software": _software(),
        "loglog_slope": slope,
        "column_docs": {
            "n": "samples per dataset",
            "truth": "closed-form max-sliced MI (nats)",
            "median_estimate": "median neural estimate over seeds (nats)",
            "median_abs_error": "median |estimate - truth| over seeds (nats)",
            "epochs": "training epochs per run",
            "wall_time": "total training seconds over seeds (not reproducible)",
        },
    }
    cols = ["n", "truth", "median_estimate", "median_abs_error", "epochs", "wall_time"]
    return StudyResult("convergence", cols, rows, meta, raw)


# --- timing --------------------------------------------------------------------


def timing_study(n_list: Sequence[int], train_cfg: TrainConfig | None = None, asmi_cfg: AsmiConfig | None = None,
                 neural_m: int = 0, d: int = 5, rho: float = 0.9, seed: int = 0) -> StudyResult:
    """Wall-clock comparison at matched ``n``: one neural max-sliced run,
    one kNN average-sliced pass and, if ``neural_m > 0``, an average of
    ``neural_m`` neural runs on frozen Haar slices."""
    train_cfg = train_cfg or TrainConfig()
    asmi_cfg = asmi_cfg or AsmiConfig(k=train_cfg.k)
    rows = []
    for n in n_list:
        data = gen_embedded_signal(int(n), d, rho, trial_seed(seed, int(n)))
        rep = train_msmi(data, train_cfg)
        msmi_time = rep.wall_time_s
        start = time.perf_counter()
        asmi_estimate(data, asmi_cfg)
        knn_time = time.perf_counter() - start
        row = {"n": int(n), "msmi_time": msmi_time,
               "msmi_epoch_time": msmi_time / train_cfg.epochs if train_cfg.epochs else 0.0,
               "asmi_knn_time": knn_time, "asmi_knn_ratio": knn_time / msmi_time if msmi_time > 0 else None,
               "asmi_neural_time": None, "asmi_neural_ratio": None}
        if neural_m > 0:
            start = time.perf_counter()
            asmi_neural(data, train_cfg, neural_m, seed)
            row["asmi_neural_time"] = time.perf_counter() - start
            row["asmi_neural_ratio"] = row["asmi_neural_time"] / msmi_time if msmi_time > 0 else None
        rows.append(row)
    meta = {
        "config": {"n_list": [int(n) for n in n_list], "train": train_cfg.to_dict(), "asmi": asdict(asmi_cfg),
                   "neural_m": neural_m, "d": d, "rho": rho, "seed": seed},
        "software": _software(),
        "column_docs": {
            "n": "samples per dataset",
            "msmi_time": "seconds for one neural max-sliced run",
            "msmi_epoch_time": "seconds per training epoch",
            "asmi_knn_time": "seconds for one kNN average-sliced pass",
            "asmi_knn_ratio": "asmi_knn_time / msmi_time",
            "asmi_neural_time": "seconds for neural_m frozen-slice neural runs",
            "asmi_neural_ratio": "asmi_neural_time / msmi_time",
        },
    }
    cols = ["n", "msmi_time", "msmi_epoch_time", "asmi_knn_time", "asmi_knn_ratio", "asmi_neural_time",
            "asmi_neural_ratio"]
    return StudyResult("timing", cols, rows, meta)
