"""Experiment drivers: defense evaluation, grid search, PSD study, detection study."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import classifier as clf
from . import metrics, spectral
from .attacks import AttackConfig, AttackResult, run_attack
from .autodiff import ContractError
from .formats import Dataset
from .purify import (
    FlowPurifier,
    purify_dataset,
    detection_score,
    roc_auc,
    roc_curve,
    write_roc_csv,
    write_scores_csv,
)

GAMMA_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
STEPS_GRID = (5, 10, 12, 15, 20)

ROW_FIELDS = (
    "sample_id", "label", "clean_pred", "attacked_pred", "robust_pred",
    "clean_purified_pred", "ssim", "psnr",
)


@dataclass
class DefenseReport:
    attack: str
    clean_acc: float
    attacked_acc: float
    robust_acc: float
    clean_acc_after_purify: float
    ssim: float
    psnr: float
    rows: list[dict] = field(default_factory=list)

    @property
    def n_filtered(self) -> int:
        return sum(r["attacked_pred"] >= 0 for r in self.rows)

    @property
    def robust_acc_unconditional(self) -> float:
        return float(np.mean([r["robust_pred"] == r["label"] for r in self.rows]))

    def summary(self) -> dict:
        return {
            "attack": self.attack,
            "clean_acc": self.clean_acc,
            "attacked_acc": self.attacked_acc,
            "robust_acc": self.robust_acc,
            "robust_acc_unconditional": self.robust_acc_unconditional,
            "clean_acc_after_purify": self.clean_acc_after_purify,
            "ssim": self.ssim,
            "psnr": self.psnr,
            "n_eval": len(self.rows),
            "n_filtered": self.n_filtered,
        }

    def write(self, out_dir: str | Path, stem: str = "defense") -> None:
        out_dir = Path(out_dir)
        (out_dir / f"{stem}.json").write_text(json.dumps(self.summary(), indent=1) + "\n")
        with open(out_dir / f"{stem}_rows.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ROW_FIELDS)
            for r in self.rows:
                writer.writerow([r[k] if not isinstance(r[k], float) else repr(r[k]) for k in ROW_FIELDS])


def report_from_rows(attack: str, rows: list[dict]) -> DefenseReport:
    """Recompute every report field from per-sample rows."""
    filtered = [r for r in rows if r["attacked_pred"] >= 0]
    if not filtered:
        raise ContractError("no correctly classified samples to attack")
    return DefenseReport(
        attack=attack,
        clean_acc=float(np.mean([r["clean_pred"] == r["label"] for r in rows])),
        attacked_acc=float(np.mean([r["attacked_pred"] == r["label"] for r in filtered])),
        robust_acc=float(np.mean([r["robust_pred"] == r["label"] for r in filtered])),
        clean_acc_after_purify=float(np.mean([r["clean_purified_pred"] == r["label"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in filtered])),
        psnr=float(np.mean([r["psnr"] for r in filtered])),
        rows=rows,
    )


def correctly_classified(ds: Dataset, clf_params: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    pred = clf.predict(ds.x, clf_params)
    return pred, np.nonzero(pred == ds.y)[0]


def evaluate_defense(
    test: Dataset,
    clf_params: Mapping[str, np.ndarray],
    attack: str,
    purifier,
    attack_cfg: AttackConfig | None = None,
    seed: int = 0,
    attack_result: AttackResult | None = None,
    workers: int = 1,
) -> DefenseReport:
    """Filter to correctly classified samples, attack, purify, re-classify.

    Clean samples are purified on their own stream for clean-after-purify
    accuracy.  SSIM and PSNR compare purified attacked videos with the clean
    originals.  ``attack_result`` may carry a precomputed attack on the
    filtered subset.
    """
    attack_cfg = attack_cfg or AttackConfig()
    clean_pred, keep = correctly_classified(test, clf_params)
    if len(keep) == 0:
        raise ContractError("no correctly classified samples to attack")
    xs, ys = test.x[keep], test.y[keep]
    if attack_result is None:
        attack_result = run_attack(attack, xs, ys, clf_params, attack_cfg, purifier, seed)
    x_adv = np.asarray(attack_result.x_adv)
    if x_adv.shape != xs.shape:
        raise ContractError(f"attack result has shape {x_adv.shape}, expected {xs.shape}")
    attacked_pred = clf.predict(x_adv, clf_params)
    purified = purify_dataset(purifier, x_adv, seed, "purify-attacked", workers=workers)
    robust_pred = clf.predict(purified, clf_params)
    clean_purified = purify_dataset(purifier, test.x, seed, "purify-clean", workers=workers)
    clean_purified_pred = clf.predict(clean_purified, clf_params)

    rows = []
    pos = {int(i): k for k, i in enumerate(keep)}
    for i in range(len(test)):
        k = pos.get(i)
        rows.append({
            "sample_id": i,
            "label": int(test.y[i]),
            "clean_pred": int(clean_pred[i]),
            "attacked_pred": int(attacked_pred[k]) if k is not None else -1,
            "robust_pred": int(robust_pred[k]) if k is not None else -1,
            "clean_purified_pred": int(clean_purified_pred[i]),
            "ssim": metrics.ssim(purified[k], xs[k]) if k is not None else float("nan"),
            "psnr": metrics.psnr(purified[k], xs[k]) if k is not None else float("nan"),
        })
    return report_from_rows(attack, rows)


@dataclass
class GridResult:
    gammas: tuple[float, ...]
    steps: tuple[int, ...]
    robust_acc: np.ndarray  # (len(gammas), len(steps))

    def best_gamma(self, steps: int | None = None) -> float:
        col = self.robust_acc[:, self.steps.index(steps)] if steps is not None else self.robust_acc.max(axis=1)
        # first maximiser, so ties favour the smaller gamma
        return self.gammas[int(np.argmax(col))]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["gamma", "steps", "robust_acc"])
            for i, g in enumerate(self.gammas):
                for j, n in enumerate(self.steps):
                    writer.writerow([repr(float(g)), n, repr(float(self.robust_acc[i, j]))])


def grid_search(
    x_adv: np.ndarray,
    y: np.ndarray,
    clf_params: Mapping[str, np.ndarray],
    purifier: FlowPurifier,
    gammas: Sequence[float] = GAMMA_GRID,
    steps: Sequence[int] = STEPS_GRID,
    seed: int = 0,
    workers: int = 1,
) -> GridResult:
    """Robust accuracy of a fixed attacked subset over the (gamma, steps) product."""
    acc = np.zeros((len(gammas), len(steps)))
    for i, g in enumerate(gammas):
        p = purifier.with_config(gamma=float(g))
        for j, n in enumerate(steps):
            purified = purify_dataset(p, x_adv, seed, "grid", steps=int(n), workers=workers)
            acc[i, j] = np.mean(clf.predict(purified, clf_params) == y)
    return GridResult(tuple(float(g) for g in gammas), tuple(int(n) for n in steps), acc)


@dataclass
class PSDStudy:
    radius: np.ndarray
    clean: np.ndarray
    attacked: np.ndarray
    purified: np.ndarray

    @property
    def attacked_distance(self) -> float:
        return float(np.abs(self.attacked - self.clean).sum())

    @property
    def purified_distance(self) -> float:
        return float(np.abs(self.purified - self.clean).sum())

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        for name in ("clean", "attacked", "purified"):
            spectral.write_psd_csv(out_dir / f"psd_{name}.csv", self.radius, getattr(self, name))


def psd_study(clean: np.ndarray, attacked: np.ndarray, purified: np.ndarray, bins: int = 16) -> PSDStudy:
    if not (np.shape(clean) == np.shape(attacked) == np.shape(purified)):
        raise ContractError(
            f"PSD sets are misaligned: {np.shape(clean)}, {np.shape(attacked)}, {np.shape(purified)}"
        )
    radius, pc = spectral.psd_radial(clean, bins)
    _, pa = spectral.psd_radial(attacked, bins)
    _, pp = spectral.psd_radial(purified, bins)
    return PSDStudy(radius, pc, pa, pp)


@dataclass
class DetectionStudy:
    clean_scores: np.ndarray
    adv_scores: dict[str, np.ndarray]
    auc: dict[str, float]

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        for name, adv in self.adv_scores.items():
            scores = np.concatenate([self.clean_scores, adv])
            labels = np.r_[np.zeros(len(self.clean_scores), np.int64), np.ones(len(adv), np.int64)]
            write_scores_csv(out_dir / f"scores_{name}.csv", scores, labels)
            write_roc_csv(out_dir / f"roc_{name}.csv", *roc_curve(self.clean_scores, adv))
        (out_dir / "auc.json").write_text(json.dumps(self.auc, indent=1) + "\n")


def detection_study(clean: np.ndarray, attacked: Mapping[str, np.ndarray], params: Mapping[str, np.ndarray]) -> DetectionStudy:
    clean_scores = detection_score(clean, params)
    adv_scores = {name: detection_score(x, params) for name, x in attacked.items()}
    auc = {name: roc_auc(clean_scores, s) for name, s in adv_scores.items()}
    return DetectionStudy(clean_scores, adv_scores, auc)
