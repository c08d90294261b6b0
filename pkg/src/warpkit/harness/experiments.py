"""Experiment drivers: misalignment robustness, mask ablation, matching speed, CSV reports."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from threadpoolctl import threadpool_limits

from .. import gmm, io, shapectx, tom
from ..diffcore.tensor import Tensor, no_tape
from .metrics import perturb, tv_norm
from .synth import Arrays, SynthSample

REPORT_HEADER = ["method", "condition", "l1", "perceptual", "tv_norm", "mean_mask", "wall_clock"]
RADII = (0, 5, 10, 15, 20)


@dataclass
class ReportRow:
    method: str
    condition: str
    l1: float = float("nan")
    perceptual: float = float("nan")
    tv_norm: float = float("nan")
    mean_mask: float = float("nan")
    wall_clock: float | None = None  # left empty in reports that must be byte-stable

    def cells(self) -> list:
        vals = [self.l1, self.perceptual, self.tv_norm, self.mean_mask]
        return [self.method, self.condition, *(repr(float(v)) for v in vals), "" if self.wall_clock is None else repr(self.wall_clock)]


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def find(self, method: str, condition: str) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.condition == condition:
                return r
        raise KeyError(f"no row for ({method}, {condition})")

    def save_csv(self, path) -> None:
        io.write_csv(path, REPORT_HEADER, [r.cells() for r in self.rows])

    @classmethod
    def load_csv(cls, path) -> "ExperimentReport":
        header, rows = io.read_csv(path)
        if header != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected report header {header}")
        out = cls()
        for r in rows:
            out.add(ReportRow(r[0], r[1], *(float(v) for v in r[2:6]), float(r[6]) if r[6] else None))
        return out


# ---------------------------------------------------------------- robustness


def radius_pixels(n_ref: int, width: int, ref_width: int = 192) -> int:
    """Shift radius given in 192-pixel-wide frame units, expressed in pixels of ``width``."""
    return int(np.floor(n_ref * width / ref_width + 0.5))


@dataclass
class RobustnessConfig:
    radii: tuple[int, ...] = RADII  # in pixels of the 256x192 frame
    seed: int = 0
    batch: int = 8
    perceptual: tom.PerceptualConfig = field(default_factory=tom.PerceptualConfig)


def _perturbed(worn: np.ndarray, radius_px: int, seed: int, n_ref: int) -> np.ndarray:
    # one fixed shift per (sample, radius), shared by every variant so comparisons are paired
    return np.stack([perturb(x, radius_px, np.random.default_rng([seed, i, n_ref])) for i, x in enumerate(worn)])


def evaluate_tryon(net: tom.TomNet, data: Arrays, warped: np.ndarray, pc: tom.PerceptualConfig, batch: int = 8):
    """(mean L1, mean perceptual distance, mean TV of outputs, mean mask over the garment region)."""
    out, mask = tom.evaluate_tom(net, data.person_rep, warped, batch)
    target = data.target.astype(out.dtype)
    l1 = float(np.abs(out - target).mean())
    with no_tape():
        perc = [
            float(tom.perceptual_loss(Tensor(out[s : s + batch]), target[s : s + batch], pc).data) * len(out[s : s + batch])
            for s in range(0, len(out), batch)
        ]
    tv = float(np.mean([tv_norm(o) for o in out]))
    if mask is None:
        mm = float("nan")
    else:
        region = data.worn_mask > 0.5
        mm = float(mask[:, 0][region].mean()) if region.any() else float("nan")
    return l1, sum(perc) / len(out), tv, mm


def robustness_experiment(nets: dict[str, tom.TomNet], data: Arrays, cfg: RobustnessConfig | None = None, variants: Iterable[str] = ("full", "no_mask")) -> ExperimentReport:
    """Evaluate each trained variant with the aligned garment shifted by up to N pixels."""
    cfg = cfg or RobustnessConfig()
    report = ExperimentReport()
    width = data.cloth.shape[-1]
    for v in variants:
        if v not in nets:
            raise KeyError(f"no checkpoint for variant {v!r}")
    for n_ref in cfg.radii:
        warped = _perturbed(data.worn, radius_pixels(n_ref, width), cfg.seed, n_ref)
        for v in variants:
            l1, perc, tv, mm = evaluate_tryon(nets[v], data, warped, cfg.perceptual, cfg.batch)
            report.add(ReportRow(v, f"N={n_ref}", l1, perc, tv, mm))
    return report


def degradation(report: ExperimentReport, variant: str, metric: str = "l1", lo: int = 0, hi: int = 20) -> float:
    return getattr(report.find(variant, f"N={hi}"), metric) - getattr(report.find(variant, f"N={lo}"), metric)


def train_variant(variant: str, data: Arrays, steps: int, seed: int, lr: float, perturb_radius: int = 0, filter_div: int = 4) -> tuple[tom.TomNet, tom.TomHistory]:
    h, w = data.cloth.shape[-2:]
    net = tom.TomNet(tom.TomConfig(height=h, width=w, filter_div=filter_div, variant=variant, seed=seed))
    cfg = gmm.TrainConfig(steps=steps, lr=lr, seed=seed, log_every=0)
    hist = tom.train_tom(net, data.person_rep, data.worn, data.target, cfg, garment_mask=data.worn_mask, perturb_radius=perturb_radius)
    return net, hist


# ---------------------------------------------------------------- speed


def time_call(fn, *args, repeats: int = 1) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def speed_comparison(samples: list[SynthSample], net: gmm.GmmNet | None = None, threads: int = 1, n_points: int = shapectx.DEFAULT_POINTS) -> ExperimentReport:
    """Single-thread wall time of one learned-matching forward pass versus one shape-context fit.

    Both see the same sample: the learned matcher gets the person representation and
    product image, the shape-context fit gets the product mask and the worn-garment region.
    """
    from .synth import person_inputs
    from ..personrep import assemble

    h, w = samples[0].cloth.shape[1:]
    net = net or gmm.GmmNet(gmm.GmmConfig.full(height=h, width=w))
    report = ExperimentReport()
    with threadpool_limits(threads), no_tape():
        # warm-up so first-call allocation does not land on sample 0
        p0 = assemble(person_inputs(samples[0]), (h, w)).astype(np.float32)
        gmm.gmm_forward(net, p0, samples[0].cloth.astype(np.float32))
        shapectx.match_and_fit(samples[0].cloth_mask, samples[0].worn_mask, n_points)
        for s in samples:
            p = assemble(person_inputs(s), (h, w)).astype(np.float32)
            c = s.cloth.astype(np.float32)
            report.add(ReportRow("gmm", s.name, wall_clock=time_call(gmm.gmm_forward, net, p, c)))
            report.add(ReportRow("scmm", s.name, wall_clock=time_call(shapectx.match_and_fit, s.cloth_mask, s.worn_mask, n_points)))
    return report
