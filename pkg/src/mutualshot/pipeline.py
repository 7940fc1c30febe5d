"""End-to-end steps shared by the command line, the demos and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .data import EegDataset, ShiftSpec, generate_synthetic, make_folds
from .features import extract_feature_matrix
from .kdf import ModelBundle, evaluate_bundle, init_bundle, kdf_train
from .shot import AdaptFlags, adapt

MODES = {
    "MutualSHOT": AdaptFlags(),
    "SSL-SHOT": AdaptFlags(no_consistency=True),
    "SSL-SHOT-IM": AdaptFlags(no_pseudo=True),
    "SHOT": AdaptFlags(no_consistency=True, no_ssl=True),
    "SHOT-IM": AdaptFlags(no_pseudo=True, no_ssl=True),
}


def domain_seeds(seed: int) -> tuple[int, int, int]:
    """Generator seeds of the source, target and held-out target sets."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return tuple(int(s) for s in state)


def make_domains(seed: int = 0, shift: ShiftSpec | None = None, n_subjects: int = 12,
                 **gen_kwargs) -> tuple[EegDataset, EegDataset, EegDataset]:
    """Source set, target set for adaptation and a held-out target test set.

    The three sets are drawn from different subjects; subject ids are offset
    so they never collide across the files.
    """
    shift = ShiftSpec.default_target() if shift is None else shift
    s_src, s_tgt, s_tst = domain_seeds(seed)
    out = []
    for i, (s, sh) in enumerate(((s_src, ShiftSpec.identity()), (s_tgt, shift), (s_tst, shift))):
        ds = generate_synthetic(seed=s, shift=sh, n_subjects=n_subjects, **gen_kwargs)
        ds.subjects = ds.subjects + i * n_subjects
        out.append(ds)
    return tuple(out)


def pretrain(source: EegDataset, features: np.ndarray | None = None, seed: int = 0,
             val_folds: int = 3, alpha: float = 1.0, sdt_depth: int = 4,
             vit_kwargs: dict | None = None, **train_kwargs):
    """Pre-train a fresh bundle, holding out one subject fold for early stopping.

    Returns ``(bundle, history, val_idx)``; ``val_idx`` is empty when
    ``val_folds`` is 0.
    """
    if features is None:
        features = extract_feature_matrix(source.windows, source.fs)
    n = len(source)
    if val_folds:
        folds = make_folds(source.subjects, val_folds, seed)
        val_idx = np.flatnonzero(folds == 0)
        tr_idx = np.flatnonzero(folds != 0)
    else:
        val_idx = np.array([], dtype=np.int64)
        tr_idx = np.arange(n)
    bundle = init_bundle(source.n_channels, source.n_samples, source.n_classes,
                         features[tr_idx], alpha=alpha, sdt_depth=sdt_depth,
                         vit_kwargs=vit_kwargs, seed=seed)
    val = None
    if val_idx.size:
        val = (source.windows[val_idx], features[val_idx], source.labels[val_idx])
    bundle, history = kdf_train(bundle, source.windows[tr_idx], features[tr_idx],
                                source.labels[tr_idx], seed=seed, val=val, **train_kwargs)
    return bundle, history, val_idx


def bca_pair(bundle: ModelBundle, ds: EegDataset, features: np.ndarray) -> dict:
    rep = evaluate_bundle(bundle, ds.windows, features, ds.labels)
    return {"sdt": rep["sdt"].bca, "vit": rep["vit"].bca}


def transfer_trial(seed: int, modes=("MutualSHOT", "SSL-SHOT", "SHOT-IM"), shots: int = 1,
                   adapt_epochs: int = 30, gen_kwargs: dict | None = None,
                   pretrain_kwargs: dict | None = None) -> dict:
    """One seed of the source to target experiment.

    Returns BCA per model for the source validation fold, the source-only
    bundle on the held-out target set and every adaptation mode.
    """
    source, target, test = make_domains(seed, **(gen_kwargs or {}))
    f_src = extract_feature_matrix(source.windows, source.fs)
    f_tgt = extract_feature_matrix(target.windows, target.fs)
    f_tst = extract_feature_matrix(test.windows, test.fs)
    bundle, _, val_idx = pretrain(source, f_src, seed=seed, **(pretrain_kwargs or {}))
    out = {"source_val": bca_pair(bundle, source.subset(val_idx), f_src[val_idx]),
           "source_only": bca_pair(bundle, test, f_tst)}
    for mode in modes:
        adapted, _, _ = adapt(bundle, target, shots=shots, epochs=adapt_epochs,
                              flags=MODES[mode], seed=seed, features=f_tgt)
        out[mode] = bca_pair(adapted, test, f_tst)
    return out
