"""Multinomial logistic regression on synthetic Gaussian blobs.

Stands in for the image classifiers of a real deployment: cheap enough to
train hundreds of federated rounds in seconds, and with an analytic gradient
that can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToyTask:
    """Class centers shared by every shard and the validation set."""

    centers: np.ndarray  # (classes, features)
    noise: float

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def num_features(self) -> int:
        return self.centers.shape[1]

    @property
    def num_params(self) -> int:
        return self.num_classes * (self.num_features + 1)

    @classmethod
    def make(cls, num_classes: int, num_features: int, separation: float, noise: float) -> "ToyTask":
        """Class centers evenly spaced on a circle of radius ``separation``.

        The geometry is fixed so that seeds differ only in sampled data, not
        in how hard the task is.  With one feature the centers sit on a line,
        ``separation`` apart and centered on zero.
        """
        centers = np.zeros((num_classes, num_features))
        if num_features == 1:
            centers[:, 0] = separation * (np.arange(num_classes) - (num_classes - 1) / 2)
        else:
            angles = 2 * np.pi * np.arange(num_classes) / num_classes
            centers[:, 0] = separation * np.cos(angles)
            centers[:, 1] = separation * np.sin(angles)
        return cls(centers, noise)

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.centers[labels] + self.noise * rng.normal(size=(len(labels), self.num_features))

    def shard(self, size: int, label_probs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.choice(self.num_classes, size=size, p=label_probs)
        return self.sample(labels, rng), labels

    def balanced(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = np.arange(size) % self.num_classes
        return self.sample(labels, rng), labels


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


def logits(weights: np.ndarray, X: np.ndarray, num_classes: int) -> np.ndarray:
    W = weights.reshape(num_classes, -1)
    return _design(X) @ W.T


def loss(weights: np.ndarray, X: np.ndarray, y: np.ndarray, num_classes: int) -> float:
    z = logits(weights, X, num_classes)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(y)), y]))


def gradient(weights: np.ndarray, X: np.ndarray, y: np.ndarray, num_classes: int) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the flat weight vector."""
    z = logits(weights, X, num_classes)
    z -= z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(y)), y] -= 1.0
    return (probs.T @ _design(X)).ravel() / len(y)


def accuracy(weights: np.ndarray, X: np.ndarray, y: np.ndarray, num_classes: int) -> float:
    return float(np.mean(np.argmax(logits(weights, X, num_classes), axis=1) == y))


def toy_local_step(
    weights: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    lr: float,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run ``epochs`` passes of mini-batch gradient descent; return the weight change."""
    if len(y) == 0:
        raise ValueError("cannot train on an empty shard")
    local = weights.copy()
    for _ in range(epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = perm[start : start + batch_size]
            local -= lr * gradient(local, X[idx], y[idx], num_classes)
    return local - weights
