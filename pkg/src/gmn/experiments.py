"""Ablation and parameter-sweep drivers that emit tab-separated tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import ttest_rel

from .graph import DualGraph
from .metrics import MetricsReport
from .model import GMN
from .params import ConfigError, GMNConfig
from .synth import make_synthetic
from .train import History, evaluate, fit

log = logging.getLogger(__name__)

VARIANTS: dict[str, dict] = {
    "full": {},
    "no-node-matching": {"node_matching": False},
    "no-pref-matching": {"pref_matching": False},
    "no-uv-graph": {"use_uv": False},
    "no-ui-graph": {"use_ui": False},
    "dual-concat-baseline": {"node_matching": False, "pref_matching": False},
}

KNOBS = {"metric_rank": "metric_rank", "p": "metric_rank", "preference_count": "preference_count", "k": "preference_count"}

# Small-model settings that train to convergence in well under a minute per run.
DESK_CONFIG = GMNConfig(d=32, hidden=128, lr=0.005, dropout=0.0, samples_per_user=1, epochs=20)

DataSource = Callable[[int], tuple[DualGraph, np.ndarray]]


@dataclass
class SynthSource:
    """Regenerates the synthetic dataset for every seed."""

    n_users: int = 5000
    n_videos: int = 2000
    n_items: int = 5000
    n_topics: int = 20
    signal: float = 0.8
    options: dict = field(default_factory=dict)

    def __call__(self, seed: int):
        data = make_synthetic(self.n_users, self.n_videos, self.n_items, self.n_topics, self.signal, seed=seed,
                              **self.options)
        return data.graph, data.val


def fixed_source(graph: DualGraph, val: np.ndarray) -> DataSource:
    """The same data for every seed; only initialisation and sampling vary."""
    return lambda seed: (graph, val)


@dataclass
class Run:
    label: str
    seed: int
    report: MetricsReport
    history: History


@dataclass
class ResultTable:
    key: str  # first column header
    runs: list[Run] = field(default_factory=list)

    def labels(self) -> list[str]:
        return list(dict.fromkeys(r.label for r in self.runs))

    def aucs(self, label: str) -> np.ndarray:
        return np.array([r.report.auc for r in self.runs if r.label == label])

    def mean(self, label: str) -> MetricsReport:
        reps = [r.report for r in self.runs if r.label == label]
        vals = np.mean([[r.auc, r.precision, r.recall, r.loss, r.hit_rate] for r in reps], axis=0)
        return MetricsReport(*vals.tolist())

    def paired_p(self, better: str, worse: str) -> float:
        """One-sided paired t-test p-value for ``AUC(better) > AUC(worse)`` over matching seeds."""
        a, b = self.aucs(better), self.aucs(worse)
        if len(a) != len(b) or len(a) < 2:
            raise ValueError("paired test needs the same seeds (at least two) for both labels")
        if np.all(a == b):
            return 1.0
        return float(ttest_rel(a, b, alternative="greater").pvalue)

    def to_tsv(self) -> str:
        head = [self.key, "seed", *MetricsReport.HEADER]
        lines = ["\t".join(head)]
        for r in self.runs:
            lines.append("\t".join([r.label, str(r.seed), *r.report.row()]))
        for label in self.labels():
            lines.append("\t".join([label, "mean", *self.mean(label).row()]))
        return "\n".join(lines) + "\n"


def train_and_evaluate(graph: DualGraph, val: np.ndarray, config: GMNConfig, early_stopping: bool = False):
    model = GMN(graph, config)
    hist = fit(model, val, early_stopping=early_stopping)
    return model, hist, evaluate(model, val)


def run_ablation(config: GMNConfig, variants, data: DataSource, seeds=(0,), early_stopping: bool = False) -> ResultTable:
    """Train every variant on every seed; variants of one seed share data and initialisation."""
    variants = list(variants)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    table = ResultTable("variant")
    for seed in seeds:
        graph, val = data(seed)
        for name in variants:
            cfg = config.replace(seed=seed, **VARIANTS[name])
            _, hist, report = train_and_evaluate(graph, val, cfg, early_stopping)
            log.info("%s seed %d: auc %.2f", name, seed, report.auc)
            table.runs.append(Run(name, seed, report, hist))
    return table


def sweep_config(config: GMNConfig, knob: str, value: int) -> GMNConfig:
    if knob not in KNOBS:
        raise ConfigError(f"unknown sweep knob {knob!r}; choose from {sorted(KNOBS)}")
    if KNOBS[knob] == "metric_rank":
        return config.replace(metric_rank=int(value))
    return config.replace(k1=int(value), k2=int(value))


def run_sweep(config: GMNConfig, knob: str, values, data: DataSource, seeds=(0,), early_stopping: bool = False) -> ResultTable:
    """One train/evaluate per (value, seed), every value seeing the same data and seed."""
    configs = [(v, sweep_config(config, knob, v)) for v in values]
    table = ResultTable(KNOBS[knob])
    for seed in seeds:
        graph, val = data(seed)
        for v, cfg in configs:
            _, hist, report = train_and_evaluate(graph, val, cfg.replace(seed=seed), early_stopping)
            log.info("%s=%s seed %d: auc %.2f", knob, v, seed, report.auc)
            table.runs.append(Run(str(v), seed, report, hist))
    return table
