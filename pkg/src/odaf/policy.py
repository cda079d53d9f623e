from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class SoftmaxPolicy:
    """Tabular stochastic policy, ``pi(a|s) = softmax(logits[s])_a``."""

    logits: np.ndarray

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((num_states, num_actions)))

    @classmethod
    def from_probs(cls, probs: np.ndarray, floor: float = 1e-12) -> "SoftmaxPolicy":
        """Logits reproducing ``probs`` (entries below ``floor`` are raised to it)."""
        p = np.maximum(np.asarray(probs, dtype=float), floor)
        p = p / p.sum(axis=-1, keepdims=True)
        return cls(np.log(p))

    @classmethod
    def greedy_of(cls, q: np.ndarray, sharpness: float = 50.0) -> "SoftmaxPolicy":
        """Near-deterministic policy putting its mass on argmax_a q[s, a] (lowest index on ties)."""
        logits = np.zeros_like(q, dtype=float)
        logits[np.arange(q.shape[0]), np.argmax(q, axis=1)] = sharpness
        return cls(logits)

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        return softmax_rows(self.logits)

    def log_probs(self) -> np.ndarray:
        return log_softmax_rows(self.logits)

    def greedy_actions(self) -> np.ndarray:
        # argmax on logits == argmax on probs; np.argmax breaks ties toward the lowest index
        return np.argmax(self.logits, axis=1)

    def copy(self) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.logits.copy())

    def save(self, path: str | Path) -> None:
        """Write the logits losslessly (hex floats) as JSON."""
        n_s, n_a = self.logits.shape
        payload = {"num_states": n_s, "num_actions": n_a, "logits": [float.hex(float(x)) for x in self.logits.ravel()]}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SoftmaxPolicy":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        flat = np.array([float.fromhex(x) for x in payload["logits"]])
        return cls(flat.reshape(payload["num_states"], payload["num_actions"]))
