"""Acceptance criteria 1-9, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line, repeated in the
terminal summary. Criteria 7 and 8 run the full synthetic experiment and take
a few minutes; select the fast ones with ``-m "acceptance and not slow"``.
"""

import json
import time

import numpy as np
import pytest

from mutualshot import autograd as ag
from mutualshot import cli
from mutualshot import features as ft
from mutualshot.autograd import Tensor, grad_check
from mutualshot.data import generate_synthetic, load_bundle
from mutualshot.features import EegWindow, extract_feature_matrix
from mutualshot.kdf import init_bundle, jsd, kdf_losses, kdf_train
from mutualshot.pipeline import transfer_trial
from mutualshot.sdt import SoftDecisionTree, sdt_loss
from mutualshot.shot import (AdaptFlags, adapt, assign_pseudo_labels, compute_centroids, im_loss,
                             select_consistent)
from mutualshot.vit import VisionTransformer, VitConfig, vit_loss
from mutualshot.wavelet import dwt_db5, idwt_db5

from .oracles import feature_oracle as oracle

pytestmark = pytest.mark.acceptance

TINY_GEN = ["--n-per-class", "6", "--n-channels", "3", "--n-samples", "64", "--n-subjects", "6"]
TINY_NET = ["--patch-len", "16", "--d-model", "8", "--n-layers", "1", "--n-heads", "2",
            "--d-ff", "8", "--sdt-depth", "2", "--epochs", "2"]


def run_cli(*argv):
    return cli.main([str(a) for a in argv] + ["--quiet"])


def _rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


# ---------------------------------------------------------------- 1
def _primitive_checks():
    a0, b0 = _rand((3, 4), 1), _rand((3, 4), 2) + 3.0
    unary = {
        "exp": ag.exp, "log": lambda t: ag.log(t, 1e-8), "sigmoid": ag.sigmoid,
        "tanh": ag.tanh, "gelu": ag.gelu, "softmax": ag.softmax, "log_softmax": ag.log_softmax,
        "layer_norm": ag.layer_norm, "sum": lambda t: ag.tsum(t, axis=0),
        "mean": lambda t: ag.mean(t, axis=1), "scale": lambda t: ag.scale(t, 1.7),
        "reshape": lambda t: ag.reshape(t, (4, 3)), "transpose": lambda t: ag.transpose(t),
        "getitem": lambda t: t[:, 1:3], "take_last": lambda t: ag.take_last(t, [0, 3, 1]),
        "cross_entropy_logits": lambda t: ag.cross_entropy_logits(t, [0, 3, 1]),
        "cross_entropy": lambda t: ag.cross_entropy(ag.softmax(t), [2, 0, 1]),
    }
    binary = {
        "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
        "div": lambda a, b: a / b, "matmul": lambda a, b: ag.matmul(a, ag.transpose(b)),
        "linear": lambda a, b: ag.linear(a, ag.transpose(b)),
        "stack": lambda a, b: ag.stack([a, b]), "concat": lambda a, b: ag.concat([a, b], 1),
    }
    errs = {}
    for name, op in unary.items():
        x = np.abs(a0) + 0.5 if name == "log" else a0
        proj = Tensor(_rand(op(Tensor(x)).shape, 7))
        errs[name] = grad_check(lambda t, op=op, proj=proj: (op(t) * proj).sum(), Tensor(x.copy()))
    for name, op in binary.items():
        proj = Tensor(_rand(op(Tensor(a0), Tensor(b0)).shape, 8))
        errs[name + "[a]"] = grad_check(lambda t, op=op: (op(t, Tensor(b0)) * proj).sum(),
                                        Tensor(a0.copy()))
        errs[name + "[b]"] = grad_check(lambda t, op=op: (op(Tensor(a0), t) * proj).sum(),
                                        Tensor(b0.copy()))
    return errs


def _param_check(params, name, loss):
    original = params[name]

    def f(t):
        params[name] = t
        return loss()

    try:
        return grad_check(f, Tensor(original.data.copy()), h=1e-5)
    finally:
        params[name] = original


def test_criterion_1_gradient_fidelity(criterion):
    with criterion(1, "gradient fidelity") as note:
        t0 = time.perf_counter()
        errs = _primitive_checks()

        tree = SoftDecisionTree(5, 4, depth=2, rng=np.random.default_rng(0))
        tree.params["leaf_logits"].data = _rand((4, 4), 1)
        fx, fy = _rand((6, 5), 2), [0, 1, 2, 3, 1, 0]
        for name in tree.params:
            errs["sdt." + name] = _param_check(tree.params, name, lambda: sdt_loss(tree, fx, fy))

        vit = VisionTransformer(VitConfig(2, 16, 3, patch_len=4, d_model=8, n_layers=1,
                                          n_heads=2, d_ff=12), rng=np.random.default_rng(0))
        wx, wy = _rand((3, 2, 16), 3), [0, 2, 1]
        for name in vit.params:
            errs["vit." + name] = _param_check(vit.params, name, lambda: vit_loss(vit, wx, wy))

        b = init_bundle(2, 16, 3, _rand((10, 6), 4), alpha=1.0, sdt_depth=2,
                        vit_kwargs=dict(patch_len=4, d_model=8, n_layers=1, n_heads=2, d_ff=12))
        kx, kf, ky = _rand((4, 2, 16), 5), _rand((4, 6), 6), [0, 1, 2, 1]
        for name in ("inner_w", "leaf_logits"):
            errs["kdf.sdt." + name] = _param_check(
                b.sdt.params, name, lambda: kdf_losses(b, kx, kf, ky).L_sdt)
        for name in ("patch.w", "blocks.0.attn.wqkv", "head.w"):
            errs["kdf.vit." + name] = _param_check(
                b.vit.params, name, lambda: kdf_losses(b, kx, kf, ky).L_vit)
        errs["kdf.joint"] = _param_check(
            b.sdt.params, "inner_b",
            lambda: ag.add(*(lambda r: (r.L_vit, r.L_sdt))(kdf_losses(b, kx, kf, ky,
                                                                      joint_grad=True))))
        errs["im"] = grad_check(lambda t: im_loss(ag.softmax(t)), Tensor(_rand((6, 4), 9)))

        elapsed = time.perf_counter() - t0
        worst = max(errs, key=errs.get)
        note(f"{len(errs)} checks, max rel err {errs[worst]:.2e} ({worst}), {elapsed:.1f}s")
        assert errs[worst] < 1e-4
        assert elapsed < 60


# ---------------------------------------------------------------- 2
def test_criterion_2_loss_values(criterion):
    with criterion(2, "loss-value oracles") as note:
        p = np.random.default_rng(0).dirichlet(np.ones(4), size=5)
        same = jsd(p, p).item()
        ref = jsd([[0.8, 0.2]], [[0.2, 0.8]]).item()
        im_uniform = im_loss(np.full((6, 4), 0.25)).item()
        im_onehot = im_loss(np.eye(4)).item()
        ce_uniform = ag.cross_entropy(Tensor(np.full((3, 4), 0.25)), [0, 1, 3]).item()
        note(f"jsd ref {ref:.7f}, IM one-hot {im_onehot:.9f}, CE uniform {ce_uniform:.9f}")
        assert abs(same) < 1e-12
        assert abs(ref - 0.831777) < 1e-6
        assert abs(im_uniform) < 1e-9 and abs(im_onehot + np.log(4)) < 1e-9
        assert abs(ce_uniform - np.log(4)) < 1e-9


# ---------------------------------------------------------------- 3
def test_criterion_3_feature_oracles(criterion):
    with criterion(3, "feature oracles") as note:
        w = oracle.golden_window()
        ours = ft.extract_features(EegWindow(w, 256.0)).values
        ref = np.array([v for row in w for v in oracle.channel(row, 256.0)])
        rel = np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-12)
        worst = int(rel.argmax())
        x = np.random.default_rng(7).standard_normal(256)
        bands = dwt_db5(x)
        energy = abs(sum(float(c @ c) for c in bands) - float(x @ x)) / float(x @ x)
        recon = float(np.abs(idwt_db5(bands) - x).max())
        note(f"max rel diff {rel[worst]:.1e} at {ft.FEATURE_NAMES[worst % 41]}, "
             f"energy {energy:.1e}, round trip {recon:.1e}")
        assert rel.max() < 1e-6
        assert energy < 1e-9 and recon < 1e-9

        t = np.arange(256) / 256.0
        sine = np.sin(2 * np.pi * 8 * t)
        two = np.sin(2 * np.pi * 8 * t) + 2 * np.sin(2 * np.pi * 20 * t)
        const = np.full(256, 3.0)
        exact = [
            (ft.curve_length([5, 5, 5, 5]), 0), (ft.curve_length([0, 1, 2, 3]), 3),
            (ft.curve_length([0, 1, 0, 1]), 3), (ft.avg_nonlinear_energy([2, 2, 2, 2]), 0),
            (ft.avg_nonlinear_energy([0, 1, 0, 1, 0]), 1),
            (tuple(ft.temporal_stats([1, -1, 1, -1]))[:3:2], (1, 3)),
            (tuple(ft.temporal_stats([3, 3, 3, 3])), (3, 0, 0, 0, 0)),
            (tuple(ft.hjorth(const)), (0, 0, 0)),
            (ft.spectral_features(sine, 256.0).max_pf, 8),
            (ft.spectral_features(two, 256.0).max_pf, 20),
            (float(np.abs(np.concatenate(dwt_db5(const)[1:])).max()), 0),
            (float(np.abs(ft.timefreq_features(const)[6:]).max()), 0),
            (len(ft.timefreq_features(sine)), 24),
            (ft.approximate_entropy(const), 0), (ft.sample_entropy(const), 0),
            (extract_feature_matrix(np.zeros((1, 3, 256)) + _rand((1, 3, 256), 1), 256.0).shape,
             (1, 123)),
        ]
        mismatched = [i for i, (got, want) in enumerate(exact) if got != want]
        mean_pf = ft.spectral_features(sine, 256.0).mean_pf
        note(f"{len(exact) + 1} exact examples, {len(mismatched)} mismatched")
        assert not mismatched, mismatched
        assert mean_pf == pytest.approx(8.0, abs=1e-12)


# ---------------------------------------------------------------- 4
def test_criterion_4_pseudo_label_oracles(criterion):
    with criterion(4, "pseudo-labelling oracles") as note:
        rng = np.random.default_rng(20)
        reps = rng.standard_normal((20, 6))
        probs = rng.dirichlet(np.ones(4), size=20)

        brute = np.array([[sum(probs[i, k] * reps[i, d] for i in range(20))
                           / sum(probs[i, k] for i in range(20)) for d in range(6)]
                          for k in range(4)])
        cents = compute_centroids(reps, probs, 0, 4)
        hard = probs.argmax(axis=1)
        brute_hard = np.array([reps[hard == k].mean(axis=0) for k in range(4)])

        def cos_d(a, b):
            return 1 - sum(x * y for x, y in zip(a, b)) / (
                np.sqrt(sum(x * x for x in a)) * np.sqrt(sum(y * y for y in b)))

        brute_labels = [min(range(4), key=lambda k: (cos_d(r, cents[k]), k)) for r in reps]
        labels = assign_pseudo_labels(reps, cents)
        other = rng.integers(0, 4, 20)
        agreed = {i for i in range(20) if labels[i] == other[i]}
        got = select_consistent(labels, other)
        note(f"|S+| = {len(agreed)}")
        np.testing.assert_allclose(cents, brute, rtol=0, atol=1e-12)
        np.testing.assert_allclose(compute_centroids(reps, hard, 1, 4), brute_hard, atol=1e-12)
        assert labels.tolist() == brute_labels
        assert set(got.tolist()) == agreed and len(got) == len(agreed)


# ---------------------------------------------------------------- 5
def test_criterion_5_frozen_classifiers(criterion, tmp_path):
    with criterion(5, "frozen classifiers after adapt") as note:
        assert run_cli("gen-data", "--out-dir", tmp_path, *TINY_GEN) == 0
        assert run_cli("pretrain", "--source", tmp_path / "source.eegw", "--out",
                       tmp_path / "m.kdfb", *TINY_NET) == 0
        before = load_bundle(tmp_path / "m.kdfb")
        modes = {"mutual": [], "shot-im": ["--no-pseudo", "--no-ssl"],
                 "ssl-shot": ["--no-consistency"], "shot": ["--no-consistency", "--no-ssl"]}
        for name, flags in modes.items():
            out = tmp_path / f"{name}.kdfb"
            assert run_cli("adapt", "--bundle", tmp_path / "m.kdfb", "--target",
                           tmp_path / "target.eegw", "--out", out, "--epochs", 3, *flags) == 0
            after = load_bundle(out)
            assert np.array_equal(after.sdt.params["leaf_logits"].data,
                                  before.sdt.params["leaf_logits"].data)
            for p in ("head.w", "head.b"):
                assert np.array_equal(after.vit.params[p].data, before.vit.params[p].data)
            assert not np.array_equal(after.vit.params["patch.w"].data,
                                      before.vit.params["patch.w"].data)
        note(f"{len(modes)} adaptation modes, leaves and head bit-identical")


# ---------------------------------------------------------------- 6
def test_criterion_6_flag_degeneration(criterion):
    with criterion(6, "flag-degeneration equivalences") as note:
        ds = generate_synthetic(n_per_class=8, n_channels=4, seed=6)
        feats = extract_feature_matrix(ds.windows, ds.fs)
        kw = dict(d_model=16, n_layers=1, n_heads=2, d_ff=16)
        joint = init_bundle(4, 256, 4, feats, alpha=0.0, vit_kwargs=kw, seed=1)
        ref = joint.copy()
        kdf_train(joint, ds.windows, feats, ds.labels, epochs=2, seed=2)
        fn = ref.normalize(feats)
        opt_s = ag.AdamW(ref.sdt.parameters(), lr=1e-2)
        opt_v = ag.AdamW(ref.vit.parameters(), lr=1e-3)
        order_rng = np.random.default_rng(2)
        for _ in range(2):
            order = order_rng.permutation(len(ds))
            for s in range(0, len(ds), 32):
                idx = order[s:s + 32]
                for opt, loss in ((opt_s, sdt_loss(ref.sdt, fn[idx], ds.labels[idx])),
                                  (opt_v, vit_loss(ref.vit, ds.windows[idx], ds.labels[idx]))):
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
        for mine, theirs in ((joint.sdt.state(), ref.sdt.state()),
                             (joint.vit.state(), ref.vit.state())):
            for k in mine:
                assert np.array_equal(mine[k], theirs[k]), k

        _, logged, _ = adapt(joint, ds, shots=1, epochs=2, seed=4, features=feats,
                             flags=AdaptFlags(no_pseudo=True, no_ssl=True))
        hand = joint.copy()
        hand.sdt.set_classifier_frozen(True)
        hand.vit.set_classifier_frozen(True)
        opt_s = ag.AdamW(hand.sdt.parameters(), lr=1e-3)
        opt_v = ag.AdamW(hand.vit.parameters(), lr=1e-4)
        order_rng = np.random.default_rng(4)
        fn = hand.normalize(feats)
        hand_log = []
        for _ in range(2):
            order = order_rng.permutation(len(ds))
            sums = [0.0, 0.0]
            nb = 0
            for s in range(0, len(ds), 32):
                idx = order[s:s + 32]
                ls, lv = im_loss(hand.sdt(fn[idx])), im_loss(hand.vit(ds.windows[idx]))
                for opt, loss in ((opt_s, ls), (opt_v, lv)):
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                sums[0] += ls.item()
                sums[1] += lv.item()
                nb += 1
            hand_log.append((sums[0] / nb, sums[1] / nb))
        got_log = [(r["L_im_sdt"], r["L_im_vit"]) for r in logged]
        other = {r[k] for r in logged for k in ("L_ce_plus", "L_ce_labeled", "L_jsd_labeled")}
        note("alpha=0 parameters identical; SHOT-IM loss log identical over 2 epochs")
        assert got_log == hand_log
        assert other == {0.0}


# ---------------------------------------------------------------- 7
SEEDS = (0, 1, 2)


@pytest.mark.slow
def test_criterion_7_transfer_experiment(criterion):
    with criterion(7, "synthetic transfer experiment") as note:
        t0 = time.perf_counter()
        runs = [transfer_trial(s) for s in SEEDS]
        elapsed = time.perf_counter() - t0
        mean = {k: {m: float(np.mean([r[k][m] for r in runs])) for m in ("sdt", "vit")}
                for k in runs[0]}
        for k, v in mean.items():
            note(f"{k} sdt {v['sdt']:.3f} vit {v['vit']:.3f}")
        note(f"{elapsed:.0f}s")
        print(json.dumps({"per_seed": runs, "mean": mean}, indent=1))
        for m in ("sdt", "vit"):
            drop = mean["source_val"][m] - mean["source_only"][m]
            gain = mean["MutualSHOT"][m] - mean["source_only"][m]
            assert drop >= 0.10, f"(a) {m}: source-only drop {drop:.3f}"
            assert gain >= 0.10, f"(b) {m}: MutualSHOT gain {gain:.3f}"
            assert mean["MutualSHOT"][m] >= mean["SSL-SHOT"][m] - 0.02, f"(c) {m} vs SSL-SHOT"
            assert mean["MutualSHOT"][m] >= mean["SHOT-IM"][m], f"(c) {m} vs SHOT-IM"
        assert elapsed < 15 * 60


# ---------------------------------------------------------------- 8
@pytest.mark.slow
def test_criterion_8_shot_sweep(criterion, tmp_path):
    with criterion(8, "shot sweep") as note:
        assert run_cli("gen-data", "--out-dir", tmp_path, "--seed", 0) == 0
        assert run_cli("pretrain", "--source", tmp_path / "source.eegw", "--out",
                       tmp_path / "m.kdfb") == 0
        out = tmp_path / "sweep.csv"
        assert run_cli("sweep-shots", "--bundle", tmp_path / "m.kdfb", "--target",
                       tmp_path / "target.eegw", "--eval", tmp_path / "target_test.eegw",
                       "--out", out, "--repeats", 3) == 0
        rows = [line.split(",") for line in out.read_text().splitlines()[2:]]
        bca = {(int(s), m): float(mean) for s, m, metric, mean, _ in rows if metric == "bca"}
        for m in ("sdt", "vit"):
            note(f"{m} bca " + " ".join(f"{s}:{bca[(s, m)]:.3f}" for s in (1, 3, 5)))
        assert len(rows) == 3 * 2 * 3
        for m in ("sdt", "vit"):
            assert bca[(5, m)] >= bca[(1, m)] - 0.01, m


# ---------------------------------------------------------------- 9
def test_criterion_9_determinism(criterion, tmp_path):
    with criterion(9, "determinism of every subcommand") as note:
        d = tmp_path / "run"
        commands = [
            ("gen-data", "--out-dir", d, "--seed", 4, *TINY_GEN),
            ("extract-features", "--data", d / "source.eegw", "--out", d / "f.csv"),
            ("pretrain", "--source", d / "source.eegw", "--features", d / "f.csv",
             "--out", d / "m.kdfb", *TINY_NET),
            ("adapt", "--bundle", d / "m.kdfb", "--target", d / "target.eegw", "--out",
             d / "a.kdfb", "--epochs", 2),
            ("evaluate", "--bundle", d / "a.kdfb", "--data", d / "target_test.eegw",
             "--out", d / "r.json"),
            ("sweep-shots", "--bundle", d / "m.kdfb", "--target", d / "target.eegw",
             "--out", d / "s.csv", "--epochs", 1, "--repeats", 1),
        ]

        def snapshot():
            for cmd in commands:
                assert run_cli(*cmd) == 0, cmd[0]
            return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

        first = snapshot()
        second = snapshot()
        differing = sorted(k for k in first if first[k] != second.get(k))
        note(f"{len(first)} artifacts from {len(commands)} subcommands, "
             f"{len(differing)} differ")
        assert first.keys() == second.keys() and not differing, differing
