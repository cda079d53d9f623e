"""Tabular Q-ensemble with target copies and std-based uncertainty."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odaf.policy import SoftmaxPolicy


@dataclass
class QEnsemble:
    members: np.ndarray  # [k, s, a]
    targets: np.ndarray
    beta_u: float = 1.0
    tau: float = 0.01
    learning_rate: float = 0.5
    init_spread: float = 1.0
    discount: float = 0.99
    mask_prob: float = 0.8
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)

    def __post_init__(self) -> None:
        if self.members.shape != self.targets.shape:
            raise ValueError("members and targets must share a shape")
        if self.members.ndim != 3 or self.members.shape[0] < 2:
            raise ValueError("need an array of shape (k >= 2, S, A)")

    @property
    def k(self) -> int:
        return self.members.shape[0]

    @property
    def num_states(self) -> int:
        return self.members.shape[1]

    @property
    def num_actions(self) -> int:
        return self.members.shape[2]

    def uncertainty_table(self) -> np.ndarray:
        # population std, i.e. the 1/K normalisation
        return self.beta_u * self.members.std(axis=0)

    def min_target(self) -> np.ndarray:
        return self.targets.min(axis=0)

    def save(self, path: str | Path) -> None:
        payload = {
            "shape": list(self.members.shape),
            "beta_u": self.beta_u,
            "tau": self.tau,
            "learning_rate": self.learning_rate,
            "init_spread": self.init_spread,
            "discount": self.discount,
            "mask_prob": self.mask_prob,
            "members": [float.hex(float(x)) for x in self.members.ravel()],
            "targets": [float.hex(float(x)) for x in self.targets.ravel()],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QEnsemble":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        shape = tuple(payload["shape"])
        unpack = lambda key: np.array([float.fromhex(x) for x in payload[key]]).reshape(shape)  # noqa: E731
        return cls(
            unpack("members"),
            unpack("targets"),
            beta_u=payload["beta_u"],
            tau=payload["tau"],
            learning_rate=payload["learning_rate"],
            init_spread=payload["init_spread"],
            discount=payload["discount"],
            mask_prob=payload["mask_prob"],
        )


def init(
    k: int,
    num_states: int,
    num_actions: int,
    init_spread: float,
    seed: int,
    **params,
) -> QEnsemble:
    """Members drawn i.i.d. from U[-init_spread, init_spread]; targets start as copies."""
    if k < 2:
        raise ValueError("an ensemble needs at least two members")
    if init_spread < 0:
        raise ValueError("init_spread must be non-negative")
    rng = np.random.default_rng(seed)
    members = rng.uniform(-init_spread, init_spread, size=(k, num_states, num_actions))
    return QEnsemble(members, members.copy(), init_spread=init_spread, rng=rng, **params)


def uncertainty(e: QEnsemble, state: int, action: int) -> float:
    return float(e.beta_u * e.members[:, state, action].std())


def state_uncertainty(e: QEnsemble, policy: SoftmaxPolicy | np.ndarray, state: int) -> float:
    probs = policy.probs()[state] if isinstance(policy, SoftmaxPolicy) else np.asarray(policy)[state]
    return float(probs @ (e.beta_u * e.members[:, state, :].std(axis=0)))


def soft_value(e: QEnsemble, probs: np.ndarray, log_probs: np.ndarray, entropy_coef: float) -> np.ndarray:
    """V'(s) = sum_a pi(a|s) [min_j Q'_j(s, a) - entropy_coef * log pi(a|s)] for every state."""
    return (probs * (e.min_target() - entropy_coef * log_probs)).sum(axis=1)


def td_update(
    e: QEnsemble,
    batch,
    policy: SoftmaxPolicy,
    entropy_coef: float,
    values: np.ndarray | None = None,
) -> float:
    """One masked TD step per member toward r + gamma * V'(s'); returns the mean squared TD error.

    ``batch`` is a sequence of transitions or a tuple of arrays
    ``(s, a, r, s', done)``. Each member sees each batch element with
    probability ``mask_prob``; duplicated pairs move toward their mean target.
    """
    s, a, r, sp, done = _columns(batch)
    if not len(s):
        raise ValueError("empty batch")
    if values is None:
        values = soft_value(e, policy.probs(), policy.log_probs(), entropy_coef)
    y = r + e.discount * np.where(done, 0.0, values[sp])

    k, n_s, n_a = e.members.shape
    mask = e.rng.random((k, len(s))) < e.mask_prob
    flat = (np.arange(k)[:, None] * (n_s * n_a) + (s * n_a + a)[None, :])[mask]
    td = y[None, :].repeat(k, axis=0)[mask] - e.members.ravel()[flat]
    loss = float(np.mean(td**2)) if len(td) else 0.0
    if len(flat) and e.learning_rate != 0.0:
        size = k * n_s * n_a
        sums = np.bincount(flat, weights=td, minlength=size)
        counts = np.bincount(flat, minlength=size)
        step = np.divide(sums, counts, out=np.zeros(size), where=counts > 0)
        e.members += e.learning_rate * step.reshape(e.members.shape)
    return loss


def soft_update(e: QEnsemble) -> None:
    e.targets *= 1.0 - e.tau
    e.targets += e.tau * e.members


def _columns(batch):
    if isinstance(batch, tuple) and len(batch) == 5 and isinstance(batch[0], np.ndarray):
        s, a, r, sp, done = batch
    else:
        rows = list(batch)
        s, a, r, sp, done = (np.array(col) for col in zip(*rows)) if rows else ([],) * 5
    return (
        np.asarray(s, dtype=np.int64),
        np.asarray(a, dtype=np.int64),
        np.asarray(r, dtype=float),
        np.asarray(sp, dtype=np.int64),
        np.asarray(done, dtype=bool),
    )
