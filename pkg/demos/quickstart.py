"""Generate a small source/target pair, pre-train the fused models and adapt.

Run with ``python3 demos/quickstart.py``; takes well under a minute.
"""

import numpy as np

from mutualshot import adapt, evaluate_bundle, extract_feature_matrix
from mutualshot.pipeline import make_domains, pretrain

# A reduced version of the default synthetic setup: fewer windows per class so
# the demo is quick, same class signatures and the same subject shift.
source, target, test = make_domains(seed=0, n_per_class=30)
print(f"source {source.windows.shape}, target {target.windows.shape}, test {test.windows.shape}")

# 41 handcrafted features per channel feed the soft decision tree; the
# transformer sees the raw window.
f_src = extract_feature_matrix(source.windows, source.fs)
f_tst = extract_feature_matrix(test.windows, test.fs)
print("feature matrix", f_src.shape)

bundle, history, _ = pretrain(source, f_src, epochs=20)
print(f"pre-trained for {len(history)} epochs, last L_sdt {history[-1]['L_sdt']:.3f}")


def report(tag, b):
    r = evaluate_bundle(b, test.windows, f_tst, test.labels)
    print(f"{tag:12s} SDT BCA {r['sdt'].bca:.3f}   ViT BCA {r['vit'].bca:.3f}")


report("source only", bundle)

# Adaptation sees the unlabeled target set plus one labelled window per class.
# It never touches the source data, only the bundle.
adapted, log, state = adapt(bundle, target, shots=1, epochs=15, seed=0)
print(f"labelled target windows: {np.sort(state.labeled_idx).tolist()}")
print(f"final agreement rate {log[-1]['agreement_rate']:.2f}, |S+| {log[-1]['n_splus']}, rounds t={state.t}")
report("MutualSHOT", adapted)
