"""Per-design engine selector: logistic scoring over design features."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .features import FeatureVector

MODEL_FORMAT = "hopc-selector 1"
BBL_CUTOFF = 0.3


class EngineChoice(str, enum.Enum):
    MB_OPC = "MB_OPC"
    ILT = "ILT"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "EngineChoice":
        try:
            return cls(text.strip().upper().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown engine {text!r}; expected MB_OPC or ILT") from None


class SelectorError(ValueError):
    pass


class FingerprintMismatch(SelectorError):
    pass


class TrainingDiverged(SelectorError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LabeledDesign:
    design_id: str
    features: FeatureVector | None
    label: EngineChoice
    mse_mb: float
    mse_ilt: float


def label_from_mse(mse_mb: float, mse_ilt: float) -> EngineChoice:
    # ties go to the faster engine
    return EngineChoice.ILT if mse_ilt < mse_mb else EngineChoice.MB_OPC


def _engine_of(result) -> EngineChoice:
    tag = str(getattr(result, "engine", "")).upper()
    if tag.startswith("MB"):
        return EngineChoice.MB_OPC
    if tag.startswith("ILT"):
        return EngineChoice.ILT
    raise SelectorError(f"result has unrecognized engine tag {tag!r}")


def label_designs(results: Mapping[str, Sequence], features: Mapping[str, FeatureVector] | None = None
                  ) -> list[LabeledDesign]:
    """Label each design by which engine printed it with lower MSE.

    ``results`` maps design id to a pair of OpcResults (any order; engines
    are told apart by their tags).
    """
    out = []
    for did, pair in results.items():
        pair = [r for r in (pair or ()) if r is not None]
        by_engine = {}
        for r in pair:
            by_engine[_engine_of(r)] = r
        missing = [e.value for e in EngineChoice if e not in by_engine]
        if missing or len(pair) != 2:
            raise SelectorError(f"design {did}: missing result for {', '.join(missing) or 'an engine'}")
        mb, ilt = by_engine[EngineChoice.MB_OPC].mse, by_engine[EngineChoice.ILT].mse
        fv = None if features is None else features[did]
        out.append(LabeledDesign(did, fv, label_from_mse(mb, ilt), float(mb), float(ilt)))
    return out


# ---------------------------------------------------------------- losses

def bbl_bias(l: float, beta: float) -> float:
    """Target softening for batch-biased learning: σ(−βl) up to l = 0.3, zero beyond."""
    if l < 0:
        raise ValueError("loss must be non-negative")
    if l > BBL_CUTOFF:
        return 0.0
    return float(expit(-beta * l))


def phi(t, kind: str = "logistic"):
    t = np.asarray(t, dtype=float)
    if kind == "logistic":
        return np.logaddexp(0.0, -t)
    if kind == "squared-hinge":
        return np.maximum(0.0, 1.0 - t) ** 2
    raise ValueError(f"unknown surrogate {kind!r}")


def _dphi(t, kind: str):
    if kind == "logistic":
        return -expit(-t)
    return -2.0 * np.maximum(0.0, 1.0 - t)


def auc_pairwise_loss(scores_pos, scores_neg, kind: str = "logistic") -> float:
    """Mean of Φ(f(x⁺) − f(x⁻)) over all positive/negative pairs."""
    p = np.asarray(scores_pos, dtype=float).ravel()
    n = np.asarray(scores_neg, dtype=float).ravel()
    if p.size == 0 or n.size == 0:
        raise ValueError("both classes need at least one score")
    return float(phi(p[:, None] - n[None, :], kind).mean())


# ---------------------------------------------------------------- model

@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.1
    beta: float = 8.0
    loss: str = "plain-logistic"  # plain-logistic | bbl-logistic | auc-pairwise
    phi: str = "logistic"         # logistic | squared-hinge
    l2: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("plain-logistic", "bbl-logistic", "auc-pairwise"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.phi not in ("logistic", "squared-hinge"):
            raise ValueError(f"unknown surrogate {self.phi!r}")
        if self.loss == "bbl-logistic" and not self.beta > 0:
            raise ValueError("beta must be positive for bbl-logistic")
        if self.epochs < 0 or not self.learning_rate > 0 or self.l2 < 0:
            raise ValueError("epochs >= 0, learning_rate > 0 and l2 >= 0 required")


@dataclass(frozen=True)
class SelectorModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    fingerprint: str
    seed: int = 0
    trace: tuple = field(default=(), compare=False)

    @property
    def d(self) -> int:
        return int(self.weights.size)

    def score(self, fv: FeatureVector) -> float:
        if fv.fingerprint != self.fingerprint:
            raise FingerprintMismatch(f"features {fv.fingerprint!r} do not match model {self.fingerprint!r}")
        z = (fv.values - self.mean) / self.std
        return float(z @ self.weights + self.bias)

    def choose(self, design_id: str, fv: FeatureVector) -> EngineChoice:
        return predict_engine(fv, self)

    def save(self, path) -> None:
        def row(key, vals):
            return key + " " + " ".join(format(float(v), ".17g") for v in vals)
        lines = [MODEL_FORMAT, f"dimension {self.d}", f"fingerprint {self.fingerprint}", f"seed {self.seed}",
                 row("bias", [self.bias]), row("weights", self.weights), row("mean", self.mean), row("std", self.std)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "SelectorModel":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != MODEL_FORMAT:
            raise SelectorError(f"{path}: not a selector model file")
        kv = {}
        for ln in lines[1:]:
            if ln.strip():
                key, _, rest = ln.partition(" ")
                kv[key] = rest
        try:
            d = int(kv["dimension"])
            arrays = {k: np.array([float(v) for v in kv[k].split()]) for k in ("weights", "mean", "std")}
            model = cls(arrays["weights"], float(kv["bias"]), arrays["mean"], arrays["std"],
                        kv["fingerprint"], int(kv["seed"]))
        except (KeyError, ValueError) as exc:
            raise SelectorError(f"{path}: malformed model file ({exc})") from None
        if any(a.size != d for a in arrays.values()):
            raise SelectorError(f"{path}: array lengths disagree with dimension {d}")
        return model


def predict_engine(features: FeatureVector, model: SelectorModel) -> EngineChoice:
    return EngineChoice.ILT if model.score(features) > 0 else EngineChoice.MB_OPC


def _loss_and_grad(w, b, Z, y, cfg: TrainConfig):
    s = Z @ w + b
    if cfg.loss == "auc-pairwise":
        pos, neg = s[y == 1], s[y == 0]
        diff = pos[:, None] - neg[None, :]
        loss = float(phi(diff, cfg.phi).mean())
        g = _dphi(diff, cfg.phi) / diff.size
        # d/ds for each sample: positives get row sums, negatives minus column sums
        gs = np.zeros_like(s)
        gs[y == 1] = g.sum(axis=1)
        gs[y == 0] = -g.sum(axis=0)
        gw, gb = Z.T @ gs, 0.0
    else:
        target = y.astype(float)
        if cfg.loss == "bbl-logistic":
            per = np.logaddexp(0.0, -s)  # per-sample loss of positives at the current model
            eps = np.array([bbl_bias(v, cfg.beta) for v in per])
            target = np.where(y == 1, 1.0 - eps, 0.0)
        loss = float(np.mean(np.logaddexp(0.0, s) - target * s))
        gs = (expit(s) - target) / s.size
        gw, gb = Z.T @ gs, float(gs.sum())
    loss += 0.5 * cfg.l2 * float(w @ w)
    return loss, gw + cfg.l2 * w, gb


def _calibrate_bias(scores: np.ndarray, y: np.ndarray) -> float:
    """Threshold maximizing training accuracy; the middle of the widest best gap."""
    s = np.sort(np.unique(scores))
    cuts = np.concatenate([[s[0] - 1.0], (s[:-1] + s[1:]) / 2, [s[-1] + 1.0]])
    best = None
    for i, c in enumerate(cuts):
        acc = int(np.sum((scores > c) == (y == 1)))
        lo = s[i - 1] if i > 0 else -math.inf
        hi = s[i] if i < s.size else math.inf
        key = (acc, hi - lo)
        if best is None or key > best[0]:
            best = (key, c)
    return -float(best[1])


def train_selector(data: Sequence[LabeledDesign], cfg: TrainConfig | None = None) -> SelectorModel:
    """Full-batch gradient descent on standardized features."""
    cfg = cfg or TrainConfig()
    if not data:
        raise SelectorError("no training data")
    fps = {ld.features.fingerprint for ld in data}
    if len(fps) != 1:
        raise SelectorError(f"training features come from different pipelines: {sorted(fps)}")
    X = np.stack([ld.features.values for ld in data])
    y = np.array([1 if ld.label == EngineChoice.ILT else 0 for ld in data])
    if y.min() == y.max():
        raise SelectorError("training data must contain both engine labels")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    Z = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    trace = []
    for epoch in range(cfg.epochs):
        loss, gw, gb = _loss_and_grad(w, b, Z, y, cfg)
        trace.append(loss)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", trace)
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
    if cfg.epochs and cfg.loss == "auc-pairwise":
        # the pairwise loss ignores the bias, so place the threshold afterwards
        b = _calibrate_bias(Z @ w, y)
    return SelectorModel(w, float(b), mean, std, fps.pop(), cfg.seed, tuple(trace))


def training_accuracy(model: SelectorModel, data: Iterable[LabeledDesign]) -> float:
    data = list(data)
    hits = sum(predict_engine(ld.features, model) == ld.label for ld in data)
    return hits / len(data)
