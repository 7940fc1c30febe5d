"""Soft decision tree over expert feature vectors.

Inner nodes are stored in heap order (root 0, children of ``i`` at ``2i+1``
and ``2i+2``). Each gate is the probability of taking the right branch.
The class distribution is the path-probability weighted mixture of the leaf
softmaxes, so it stays differentiable for the consistency and IM losses.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class SoftDecisionTree:
    classifier_names = ("leaf_logits",)

    def __init__(self, n_features: int, n_classes: int, depth: int = 4, beta: float = 1.0,
                 rng: np.random.Generator | None = None):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_features = n_features
        self.n_classes = n_classes
        self.depth = depth
        self.beta = float(beta)
        n_inner = 2**depth - 1
        self.params: dict[str, Tensor] = {
            "inner_w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_features), (n_features, n_inner)),
                              requires_grad=True),
            "inner_b": Tensor(np.zeros(n_inner), requires_grad=True),
            "leaf_logits": Tensor(np.zeros((2**depth, n_classes)), requires_grad=True),
        }

    @property
    def n_inner(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    def _check(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected (batch, {self.n_features}) features, got {x.shape}")
        return x

    def gates(self, x) -> Tensor:
        """Right-branch probabilities of every inner node, shape ``(B, 2**depth - 1)``."""
        x = self._check(x)
        z = ag.linear(x, self.params["inner_w"], self.params["inner_b"])
        if self.beta != 1.0:
            z = ag.scale(z, self.beta)
        return ag.sigmoid(z)

    def path_probs(self, gates: Tensor) -> Tensor:
        batch = gates.shape[0]
        mu = Tensor(np.ones((batch, 1)))
        for level in range(self.depth):
            g = gates[:, 2**level - 1: 2 ** (level + 1) - 1]
            mu = ag.stack([mu * (1.0 - g), mu * g], axis=-1).reshape(batch, 2 ** (level + 1))
        return mu

    def forward(self, x) -> Tensor:
        mu = self.path_probs(self.gates(x))
        return ag.matmul(mu, ag.softmax(self.params["leaf_logits"]))

    __call__ = forward

    def predict(self, x, rule: str = "mixture") -> np.ndarray:
        """Class indices; ``rule="max_path"`` uses the argmax of the most probable leaf."""
        if rule == "mixture":
            return np.argmax(self.forward(x).data, axis=1)
        if rule == "max_path":
            leaf = np.argmax(self.path_probs(self.gates(x)).data, axis=1)
            return np.argmax(self.params["leaf_logits"].data[leaf], axis=1)
        raise ValueError(f"unknown prediction rule {rule!r}")

    def representation(self, x, kind: str = "gates") -> np.ndarray:
        """Feature map used for centroid pseudo-labelling."""
        if kind == "gates":
            return self.gates(x).data
        if kind == "paths":
            return self.path_probs(self.gates(x)).data
        if kind == "features":
            return self._check(x).data.copy()
        raise ValueError(f"unknown representation {kind!r}")

    def balance_penalty(self, x) -> Tensor:
        """Penalty pushing each inner node to split its reaching mass evenly."""
        g = self.gates(x)
        mu = self.path_probs(g)
        # probability of reaching an inner node = mass of the leaves below it
        batch = mu.shape[0]
        reach = [mu.reshape(batch, 2**lv, 2 ** (self.depth - lv)).sum(axis=-1)
                 for lv in range(self.depth)]
        reach = ag.concat(reach, axis=1)
        alpha = (reach * g).sum(axis=0) / (reach.sum(axis=0) + 1e-12)
        depth_w = np.concatenate([np.full(2**lv, 2.0**-lv) for lv in range(self.depth)])
        ent = ag.log(alpha, ag.PROB_FLOOR) + ag.log(1.0 - alpha, ag.PROB_FLOOR)
        return ag.scale((ent * depth_w).sum(), -0.5)

    # ----------------------------------------------------------- parameters
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def set_classifier_frozen(self, frozen: bool):
        for name in self.classifier_names:
            self.params[name].requires_grad = not frozen

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)


def sdt_forward(tree: SoftDecisionTree, f) -> np.ndarray:
    """Class distribution for one feature vector."""
    return tree.forward(np.asarray(f, dtype=np.float64)[None, :]).data[0]


def sdt_loss(tree: SoftDecisionTree, f, y) -> Tensor:
    """Mean cross-entropy of the mixture output; accepts a batch or one vector."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    return ag.cross_entropy(tree.forward(f), np.atleast_1d(y))


def sdt_predict(tree: SoftDecisionTree, f) -> int:
    return int(np.argmax(sdt_forward(tree, f)))
