"""Supervised mutual-learning pre-training of the tree and the transformer.

Each model minimises its own cross-entropy plus ``alpha`` times the
symmetrised KL divergence to the other model's output. In the default mode
the peer's distribution is detached inside each model's loss.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import PROB_FLOOR, Tensor
from .errors import ConfigError, NumericError
from .features import REGISTRY_VERSION
from .metrics import compute_metrics
from .sdt import SoftDecisionTree
from .vit import VisionTransformer, VitConfig

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("epoch", "L_vit", "L_sdt", "val_acc_sdt", "val_bca_sdt", "val_f1_sdt",
                     "val_acc_vit", "val_bca_vit", "val_f1_vit")


@dataclass
class ModelBundle:
    sdt: SoftDecisionTree
    vit: VisionTransformer
    alpha: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    registry_version: str = REGISTRY_VERSION
    meta: dict = field(default_factory=dict)

    def normalize(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.feat_mean) / self.feat_std

    def copy(self) -> "ModelBundle":
        return copy.deepcopy(self)


def init_bundle(n_channels: int, n_samples: int, n_classes: int, features: np.ndarray,
                alpha: float = 1.0, sdt_depth: int = 4, vit_kwargs: dict | None = None,
                seed: int = 0) -> ModelBundle:
    """Fresh bundle; feature z-score statistics come from ``features``."""
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    features = np.asarray(features, dtype=np.float64)
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    sdt_rng, vit_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sdt = SoftDecisionTree(features.shape[1], n_classes, depth=sdt_depth, rng=sdt_rng)
    vit = VisionTransformer(VitConfig(n_channels, n_samples, n_classes, **(vit_kwargs or {})),
                            rng=vit_rng)
    return ModelBundle(sdt, vit, float(alpha), mu, sd)


# ---------------------------------------------------------------- losses
def jsd(p, q) -> Tensor:
    """Batch mean of ``0.5 * (KL(p||q) + KL(q||p))`` in nats.

    Both arguments hold probabilities (last axis); logs are floored at 1e-8.
    """
    p, q = ag.as_tensor(p), ag.as_tensor(q)
    diff = ag.sub(ag.log(p, PROB_FLOOR), ag.log(q, PROB_FLOOR))
    per = ag.scale(ag.tsum(ag.mul(ag.sub(p, q), diff), axis=-1), 0.5)
    return ag.mean(per)


@dataclass
class KdfLosses:
    L_vit: Tensor
    L_sdt: Tensor
    ce_vit: Tensor
    ce_sdt: Tensor
    jsd: Tensor | None
    p_vit: Tensor
    p_sdt: Tensor


def kdf_losses(bundle: ModelBundle, windows, feats_norm, y, alpha: float | None = None,
               joint_grad: bool = False) -> KdfLosses:
    """Combined losses of both models on one labelled batch.

    With ``joint_grad`` each returned loss keeps the graph of both models, so
    back-propagating ``L_vit + L_sdt`` couples the updates through the JSD term.
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty batch")
    if (y < 0).any():
        raise ValueError("batch contains unlabeled samples")
    alpha = bundle.alpha if alpha is None else alpha
    p_v = bundle.vit(windows)
    p_f = bundle.sdt(feats_norm)
    ce_v = ag.cross_entropy(p_v, y)
    ce_f = ag.cross_entropy(p_f, y)
    if alpha == 0:
        return KdfLosses(ce_v, ce_f, ce_v, ce_f, None, p_v, p_f)
    if joint_grad:
        j = jsd(p_v, p_f)
        j_v = j_f = j
    else:
        j_v = jsd(p_v, p_f.detach())
        j_f = jsd(p_v.detach(), p_f)
        j = j_f
    return KdfLosses(ce_v + ag.scale(j_v, alpha), ce_f + ag.scale(j_f, alpha),
                     ce_v, ce_f, j, p_v, p_f)


# ---------------------------------------------------------------- training
def _finite(*vals: float):
    for v in vals:
        if not np.isfinite(v):
            raise NumericError("non-finite loss")


def evaluate_bundle(bundle: ModelBundle, windows, features, y, batch: int = 64) -> dict:
    """Metrics of both models; ``features`` are raw (un-normalised)."""
    pred_s, pred_v = predict_bundle(bundle, windows, features, batch)
    k = bundle.sdt.n_classes
    return {"sdt": compute_metrics(y, pred_s, k), "vit": compute_metrics(y, pred_v, k)}


def predict_bundle(bundle: ModelBundle, windows, features, batch: int = 64):
    fn = bundle.normalize(features)
    pred_s = bundle.sdt.predict(fn)
    pred_v = np.concatenate([bundle.vit.predict(windows[i:i + batch])
                             for i in range(0, len(windows), batch)])
    return pred_s, pred_v


def kdf_train(bundle: ModelBundle, windows, features, y, epochs: int = 50, batch_size: int = 32,
              seed: int = 0, lr_sdt: float = 1e-2, lr_vit: float = 1e-3,
              weight_decay: float = 1e-4, val: tuple | None = None, patience: int = 10,
              train_sdt: bool = True, train_vit: bool = True, joint_grad: bool = False,
              balance_penalty: float = 0.0) -> tuple[ModelBundle, list[dict]]:
    """Mutual-learning training on a labelled source set.

    ``features`` are raw feature rows; the bundle's stored statistics
    normalise them. With ``val = (windows, features, y)`` each model keeps
    its best-BCA parameters and stops after ``patience`` epochs without
    improvement. Returns the trained bundle (modified in place) and one log
    row per epoch.
    """
    windows = np.asarray(windows, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = bundle.sdt.n_classes
    if (y < 0).any():
        raise ConfigError("training set holds unlabeled windows")
    missing = sorted(set(range(k)) - set(np.unique(y).tolist()))
    if missing:
        raise ConfigError(f"classes without training samples: {missing}")
    fn = bundle.normalize(features)
    rng = np.random.default_rng(seed)
    active = {"sdt": train_sdt, "vit": train_vit}
    models = {"sdt": bundle.sdt, "vit": bundle.vit}
    opts = {
        "sdt": ag.AdamW(bundle.sdt.parameters(), lr=lr_sdt, weight_decay=weight_decay),
        "vit": ag.AdamW(bundle.vit.parameters(), lr=lr_vit, weight_decay=weight_decay),
    }
    best = {m: (-np.inf, models[m].state()) for m in models}
    waited = {m: 0 for m in models}
    history = []
    n = len(y)
    for epoch in range(1, epochs + 1):
        if not any(active.values()):
            break
        order = rng.permutation(n)
        sums = {"sdt": 0.0, "vit": 0.0}
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            sums_b = _train_step(bundle, windows[idx], fn[idx], y[idx], active, opts,
                                 joint_grad, balance_penalty)
            for m in sums:
                sums[m] += sums_b[m] * len(idx)
        row = {"epoch": epoch, "L_vit": sums["vit"] / n, "L_sdt": sums["sdt"] / n}
        if val is not None:
            rep = evaluate_bundle(bundle, *val)
            for m in ("sdt", "vit"):
                r = rep[m]
                row.update({f"val_acc_{m}": r.acc, f"val_bca_{m}": r.bca,
                            f"val_f1_{m}": r.f1_weighted})
                if not active[m]:
                    continue
                if r.bca > best[m][0]:
                    best[m] = (r.bca, models[m].state())
                    waited[m] = 0
                else:
                    waited[m] += 1
                    if waited[m] >= patience:
                        active[m] = False
        history.append(row)
        log.info("epoch %d L_vit=%.4f L_sdt=%.4f", epoch, row["L_vit"], row["L_sdt"])
    if val is not None:
        for m in models:
            if (train_sdt if m == "sdt" else train_vit) and np.isfinite(best[m][0]):
                models[m].load_state(best[m][1])
    return bundle, history


def _train_step(bundle, w, f, y, active, opts, joint_grad, balance_penalty) -> dict:
    sdt_on, vit_on = active["sdt"], active["vit"]
    if sdt_on and vit_on:
        losses = kdf_losses(bundle, w, f, y, joint_grad=joint_grad)
        l_s, l_v = losses.L_sdt, losses.L_vit
    elif sdt_on:
        l_s = _single_loss(bundle, "sdt", w, f, y)
        l_v = None
    else:
        l_v = _single_loss(bundle, "vit", w, f, y)
        l_s = None
    if sdt_on and balance_penalty > 0:
        l_s = l_s + ag.scale(bundle.sdt.balance_penalty(f), balance_penalty)
    out = {"sdt": float(l_s.data) if l_s is not None else 0.0,
           "vit": float(l_v.data) if l_v is not None else 0.0}
    _finite(*out.values())
    for opt in opts.values():
        opt.zero_grad()
    if joint_grad and l_s is not None and l_v is not None:
        (l_s + l_v).backward()
    else:
        if l_s is not None:
            l_s.backward()
        if l_v is not None:
            l_v.backward()
    if sdt_on:
        opts["sdt"].step()
    if vit_on:
        opts["vit"].step()
    return out


def _single_loss(bundle, which, w, f, y):
    # a model trained alone, or whose peer has stopped: CE plus JSD to the frozen peer
    if which == "sdt":
        p = bundle.sdt(f)
        loss = ag.cross_entropy(p, y)
        if bundle.alpha > 0:
            loss = loss + ag.scale(jsd(bundle.vit(w).detach(), p), bundle.alpha)
    else:
        p = bundle.vit(w)
        loss = ag.cross_entropy(p, y)
        if bundle.alpha > 0:
            loss = loss + ag.scale(jsd(p, bundle.sdt(f).detach()), bundle.alpha)
    return loss


def write_log_csv(path, rows: list[dict], columns, config: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return v
