"""Small 3D-conv video classifier used as the attack victim."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .formats import Dataset
from .optim import AdamW
from .rng import SeededRng

PREFIX = "clf."
WIDTHS = (8, 16)


def layer_shapes(channels: int, num_classes: int) -> dict[str, tuple[int, ...]]:
    c1, c2 = WIDTHS
    shapes = {
        "conv0.w": (c1, channels, 3, 3, 3),
        "conv0.b": (c1,),
        "conv1.w": (c2, c1, 3, 3, 3),
        "conv1.b": (c2,),
        "head.w": (num_classes, c2),
        "head.b": (num_classes,),
    }
    return {PREFIX + k: v for k, v in shapes.items()}


def init_params(channels: int, num_classes: int, seed: int) -> dict[str, np.ndarray]:
    rng = SeededRng(seed, ("clf-init",))
    params = {}
    for i, (name, shape) in enumerate(layer_shapes(channels, num_classes).items()):
        if name.endswith(".b"):
            params[name] = np.zeros(shape, np.float32)
            continue
        bound = math.sqrt(6.0 / int(np.prod(shape[1:])))
        params[name] = ((2.0 * rng.split(i).uniform(shape) - 1.0) * bound).astype(np.float32)
    return params


def logits(x, params: Mapping[str, np.ndarray | Node]) -> Node:
    """(B, C, T, H, W) -> (B, num_classes)."""
    p = {k: ad.as_node(v) for k, v in params.items()}
    h = ad.as_node(x)
    # fixed centering to [-1, 1]; raw [0, 1] inputs leave some seeds on a chance plateau
    h = ad.sub(ad.scalar_mul(h, 2.0), np.ones(h.shape, h.value.dtype))
    for i in range(len(WIDTHS)):
        h = ad.conv3d(h, p[f"{PREFIX}conv{i}.w"], p[f"{PREFIX}conv{i}.b"])
        h = ad.avg_pool(ad.silu(h), 2)
    h = ad.mean(h, axes=(2, 3, 4))
    return ad.linear(h, p[PREFIX + "head.w"], p[PREFIX + "head.b"])


def predict(x: np.ndarray, params: Mapping[str, np.ndarray], batch: int = 32) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    out = []
    for i in range(0, len(x), batch):
        out.append(np.argmax(logits(x[i:i + batch], params).value, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(x: np.ndarray, y: np.ndarray, params: Mapping[str, np.ndarray]) -> float:
    return float(np.mean(predict(x, params) == np.asarray(y)))


@dataclass
class ClassifierConfig:
    epochs: int = 3
    batch_size: int = 4
    lr: float = 1e-2
    weight_decay: float = 0.01


@dataclass
class ClassifierResult:
    params: dict[str, np.ndarray]
    train_acc: float
    val_acc: float
    losses: list[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, losses: list[float]):
        self.step = step
        self.losses = losses
        super().__init__(f"classifier loss became non-finite at step {step}")


def train_classifier(
    train: Dataset,
    val: Dataset | None,
    seed: int,
    cfg: ClassifierConfig | None = None,
) -> ClassifierResult:
    """Cross-entropy training with AdamW."""
    cfg = cfg or ClassifierConfig()
    if len(np.unique(train.y)) < 2:
        raise ContractError("classifier training needs at least two classes")
    C = train.x.shape[1]
    params = init_params(C, train.num_classes, seed)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = SeededRng(seed, ("clf-train",))
    losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.split(epoch).permutation(len(train))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            leaves = {k: ad.leaf(v, k) for k, v in params.items()}
            loss = ad.cross_entropy(logits(train.x[idx], leaves), train.y[idx])
            value = loss.item()
            losses.append(value)
            if not math.isfinite(value):
                raise TrainingDiverged(step, losses)
            params = opt.step(params, ad.backward(loss))
            step += 1
    train_acc = accuracy(train.x, train.y, params)
    val_acc = accuracy(val.x, val.y, params) if val is not None and len(val) else float("nan")
    return ClassifierResult(params, train_acc, val_acc, losses)
