"""Source-free semi-supervised adaptation of a pre-trained bundle.

Both models keep their classifier (tree leaves, transformer head) frozen and
update only their encoders. Per epoch the unlabeled target pool is
pseudo-labelled by nearest class centroid in each model's representation
space; only samples on which the two models agree enter the pseudo-label
cross-entropy. Every batch minimises

    L_IM + L_CE(pseudo, agreed samples) + L_CE(labeled) + alpha * L_JSD(labeled)

for each model. Flags switch off pseudo-labels, the agreement filter or the
labeled terms to obtain the SHOT-IM / SHOT / SSL baselines from the same loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import PROB_FLOOR, Tensor
from .data import sample_few_shot
from .errors import ConfigError, NumericError
from .features import extract_feature_matrix
from .kdf import ModelBundle, evaluate_bundle, jsd, predict_bundle
from .metrics import compute_metrics

log = logging.getLogger(__name__)

ADAPT_LOG_COLUMNS = ("epoch", "t", "L_im_sdt", "L_im_vit", "L_ce_plus", "L_ce_labeled",
                     "L_jsd_labeled", "n_splus", "agreement_rate", "val_bca_sdt", "val_bca_vit")


def im_loss(p) -> Tensor:
    """Mean prediction entropy minus the entropy of the batch-mean prediction."""
    p = ag.as_tensor(p)
    ent = ag.scale(ag.tsum(p * ag.log(p, PROB_FLOOR), axis=-1), -1.0)
    marginal = ag.mean(p, axis=0)
    neg_marg_ent = ag.tsum(marginal * ag.log(marginal, PROB_FLOOR))
    return ag.mean(ent) + neg_marg_ent


def compute_centroids(reps, weights_or_labels, t: int, n_classes: int,
                      previous: np.ndarray | None = None) -> np.ndarray:
    """Class centroids in representation space.

    Round ``t == 0`` weights every representation by the soft class
    probabilities ``(n, K)``; later rounds average the representations of
    each hard pseudo-label ``(n,)``. A class with no members keeps its
    ``previous`` centroid (zeros when there is none).
    """
    reps = np.asarray(reps, dtype=np.float64)
    if t == 0:
        w = np.asarray(weights_or_labels, dtype=np.float64)
        if w.shape != (reps.shape[0], n_classes):
            raise ValueError("round 0 needs soft outputs of shape (n, K)")
    else:
        lab = np.asarray(weights_or_labels)
        if lab.shape != (reps.shape[0],):
            raise ValueError("later rounds need one pseudo-label per sample")
        w = (lab[:, None] == np.arange(n_classes)[None, :]).astype(np.float64)
    mass = w.sum(axis=0)
    sums = w.T @ reps
    out = np.zeros((n_classes, reps.shape[1])) if previous is None else np.array(previous, float)
    has = mass > 0
    out[has] = sums[has] / mass[has, None]
    return out


def cosine_distance(reps, centroids) -> np.ndarray:
    """``1 - cos`` between every representation and centroid; zero vectors give cos 0."""
    reps = np.asarray(reps, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    rn = np.linalg.norm(reps, axis=1, keepdims=True)
    cn = np.linalg.norm(centroids, axis=1, keepdims=True)
    cos = (reps @ centroids.T) / np.where(rn > 0, rn, 1.0) / np.where(cn > 0, cn, 1.0).T
    return 1.0 - cos


def assign_pseudo_labels(reps, centroids) -> np.ndarray:
    """Nearest centroid by cosine distance; ties go to the smallest class."""
    d = cosine_distance(reps, centroids)
    n_zero = int(np.count_nonzero(np.linalg.norm(np.asarray(reps, float), axis=1) == 0))
    if n_zero:
        log.warning("%d zero-norm representations assigned to class 0", n_zero)
    return np.argmin(d, axis=1)


def select_consistent(labels_sdt, labels_vit) -> np.ndarray:
    """Indices where both models give the same pseudo-label."""
    a = np.asarray(labels_sdt)
    b = np.asarray(labels_vit)
    if a.shape != b.shape:
        raise ValueError("pseudo-label arrays differ in length")
    return np.flatnonzero(a == b)


@dataclass
class AdaptFlags:
    no_pseudo: bool = False
    no_consistency: bool = False
    no_ssl: bool = False

    @property
    def mode(self) -> str:
        base = "SHOT-IM" if self.no_pseudo else ("SHOT" if self.no_consistency else "MutualSHOT")
        if base == "MutualSHOT":
            return base + ("-unsupervised" if self.no_ssl else "")
        return base if self.no_ssl else "SSL-" + base


@dataclass
class AdaptState:
    t: int = 0
    centroids_sdt: np.ndarray | None = None
    centroids_vit: np.ndarray | None = None
    pseudo_sdt: np.ndarray | None = None
    pseudo_vit: np.ndarray | None = None
    s_plus: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    labeled_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    unlabeled_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))


def _vit_outputs(vit, windows, batch=64):
    reps, probs = [], []
    for i in range(0, len(windows), batch):
        z = vit.encode(windows[i:i + batch])
        reps.append(z.data)
        probs.append(vit.head(z).data)
    return np.concatenate(reps), np.concatenate(probs)


def adapt(bundle: ModelBundle, target, shots: int = 1, epochs: int = 30,
          flags: AdaptFlags | None = None, seed: int = 0, features: np.ndarray | None = None,
          batch_size: int = 32, lr_sdt: float = 1e-3, lr_vit: float = 1e-4,
          weight_decay: float = 1e-4, sdt_rep: str = "gates",
          val: tuple | None = None) -> tuple[ModelBundle, list[dict], AdaptState]:
    """Adapt a copy of ``bundle`` to the ``target`` windows.

    ``target`` needs ``windows``, ``fs`` and ``n_classes``; its ``labels``
    are read only to draw the few-shot labelled set. ``features`` may carry
    the pre-extracted raw feature rows of the target windows. ``val`` is an
    optional ``(windows, features, labels)`` triple used for logging only.
    Returns the adapted bundle, one log row per epoch and the final state.
    """
    flags = AdaptFlags() if flags is None else flags
    windows = np.asarray(target.windows, dtype=np.float64)
    n = len(windows)
    k = target.n_classes
    if features is None:
        features = extract_feature_matrix(windows, target.fs)
    fn = bundle.normalize(features)

    state = AdaptState()
    use_ssl = not flags.no_ssl and shots > 0
    if use_ssl:
        labels = np.asarray(target.labels)
        state.labeled_idx = sample_few_shot(labels, shots, seed, k)
        y_lab = labels[state.labeled_idx]
        if (y_lab < 0).any():
            raise ConfigError("few-shot draw hit unlabeled windows")
    elif shots < 0:
        raise ConfigError("shots must be >= 0")
    else:
        y_lab = np.array([], dtype=np.int64)
    state.unlabeled_idx = np.setdiff1d(np.arange(n), state.labeled_idx)
    unl = state.unlabeled_idx
    lab = state.labeled_idx

    b = bundle.copy()
    b.sdt.set_classifier_frozen(True)
    b.vit.set_classifier_frozen(True)
    opt_s = ag.AdamW(b.sdt.parameters(), lr=lr_sdt, weight_decay=weight_decay)
    opt_v = ag.AdamW(b.vit.parameters(), lr=lr_vit, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    history = []

    for epoch in range(1, epochs + 1):
        plabel_s = plabel_v = np.full(n, -1, dtype=np.int64)
        row = {"epoch": epoch, "t": state.t}
        if not flags.no_pseudo:
            reps_s = b.sdt.representation(fn[unl], sdt_rep)
            probs_s = b.sdt(fn[unl]).data
            reps_v, probs_v = _vit_outputs(b.vit, windows[unl])
            if state.t == 0:
                cs = compute_centroids(reps_s, probs_s, 0, k)
                cv = compute_centroids(reps_v, probs_v, 0, k)
            else:
                cs = compute_centroids(reps_s, state.pseudo_sdt, state.t, k, state.centroids_sdt)
                cv = compute_centroids(reps_v, state.pseudo_vit, state.t, k, state.centroids_vit)
            state.centroids_sdt, state.centroids_vit = cs, cv
            state.pseudo_sdt = assign_pseudo_labels(reps_s, cs)
            state.pseudo_vit = assign_pseudo_labels(reps_v, cv)
            agree = select_consistent(state.pseudo_sdt, state.pseudo_vit)
            row["agreement_rate"] = agree.size / max(unl.size, 1)
            plabel_s = np.full(n, -1, dtype=np.int64)
            plabel_v = np.full(n, -1, dtype=np.int64)
            if flags.no_consistency:
                state.s_plus = unl.copy()
                plabel_s[unl] = state.pseudo_sdt
                plabel_v[unl] = state.pseudo_vit
            else:
                state.s_plus = unl[agree]
                plabel_s[state.s_plus] = state.pseudo_sdt[agree]
                plabel_v[state.s_plus] = state.pseudo_vit[agree]
            state.t += 1
        row["n_splus"] = int(state.s_plus.size)

        sums = dict.fromkeys(("L_im_sdt", "L_im_vit", "L_ce_plus", "L_ce_labeled",
                              "L_jsd_labeled"), 0.0)
        n_batches = 0
        order = unl[rng.permutation(unl.size)]
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            terms = _adapt_step(b, windows, fn, idx, plabel_s, plabel_v, lab, y_lab,
                                opt_s, opt_v)
            for key, val_ in terms.items():
                sums[key] += val_
            n_batches += 1
        row.update({key: v / max(n_batches, 1) for key, v in sums.items()})
        if val is not None:
            rep = evaluate_bundle(b, *val)
            row["val_bca_sdt"] = rep["sdt"].bca
            row["val_bca_vit"] = rep["vit"].bca
        history.append(row)
        log.info("adapt epoch %d: %s", epoch, row)

    b.sdt.set_classifier_frozen(False)
    b.vit.set_classifier_frozen(False)
    return b, history, state


def _adapt_step(b, windows, fn, idx, plabel_s, plabel_v, lab, y_lab, opt_s, opt_v) -> dict:
    p_s = b.sdt(fn[idx])
    p_v = b.vit(windows[idx])
    im_s, im_v = im_loss(p_s), im_loss(p_v)
    loss_s, loss_v = im_s, im_v
    terms = {"L_im_sdt": im_s.item(), "L_im_vit": im_v.item()}

    sel = np.flatnonzero(plabel_s[idx] >= 0)
    if sel.size:
        ce_s = ag.cross_entropy(p_s[sel], plabel_s[idx][sel])
        ce_v = ag.cross_entropy(p_v[sel], plabel_v[idx][sel])
        loss_s = loss_s + ce_s
        loss_v = loss_v + ce_v
        terms["L_ce_plus"] = 0.5 * (ce_s.item() + ce_v.item())

    if lab.size:
        q_s = b.sdt(fn[lab])
        q_v = b.vit(windows[lab])
        ce_ls = ag.cross_entropy(q_s, y_lab)
        ce_lv = ag.cross_entropy(q_v, y_lab)
        loss_s = loss_s + ce_ls
        loss_v = loss_v + ce_lv
        terms["L_ce_labeled"] = 0.5 * (ce_ls.item() + ce_lv.item())
        if b.alpha > 0:
            j_s = jsd(q_v.detach(), q_s)
            j_v = jsd(q_v, q_s.detach())
            loss_s = loss_s + ag.scale(j_s, b.alpha)
            loss_v = loss_v + ag.scale(j_v, b.alpha)
            terms["L_jsd_labeled"] = j_s.item()

    if not (np.isfinite(loss_s.item()) and np.isfinite(loss_v.item())):
        raise NumericError("non-finite adaptation loss")
    opt_s.zero_grad()
    opt_v.zero_grad()
    loss_s.backward()
    loss_v.backward()
    opt_s.step()
    opt_v.step()
    return terms


def source_only_metrics(bundle: ModelBundle, windows, features, labels) -> dict:
    pred_s, pred_v = predict_bundle(bundle, windows, features)
    k = bundle.sdt.n_classes
    return {"sdt": compute_metrics(labels, pred_s, k), "vit": compute_metrics(labels, pred_v, k)}
