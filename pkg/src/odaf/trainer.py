"""Actor-critic training with the outcome-driven uncertainty penalty and baseline regularizers.

The actor is a tabular softmax policy whose logit gradients are computed in
closed form. The critic is a :class:`~odaf.ensemble.QEnsemble`; when model
transitions are enabled, each iteration also feeds it one-step predictions of
the empirical dynamics model for actions drawn from the current policy, which
is how values of actions never taken in the dataset get learned.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from odaf import ensemble as ens
from odaf.dataset import TransitionDataset
from odaf.dynamics import EmpiricalDynamics, action_ood_mass, fit_empirical, neighborhood_table
from odaf.evaluation import evaluate
from odaf.mdp import GraphGeometry, GridMaze, TabularMdp
from odaf.policy import SoftmaxPolicy, log_softmax_rows, softmax_rows

log = logging.getLogger(__name__)

REGULARIZERS = ("none", "odaf", "action_support", "state_recovery", "behavior_clone")
CSV_HEADER = ("iteration", "actor_loss", "critic_loss", "odaf_penalty", "ood_mass", "eval_return_mean", "eval_return_std")
CSV_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    iterations: int = 50_000
    batch_size: int = 64
    actor_lr: float = 1.0
    critic_lr: float = 0.5
    k: int = 10
    tau: float = 0.01
    beta_u: float = 50.0
    entropy_coef: float = 0.05
    beta_odaf: float = 0.3
    perturb_radius: int = 1
    regularizer: str = "odaf"
    reg_weight: float = 10.0
    smoothing: float = 0.0
    seed: int = 0
    eval_every: int = 1_000
    eval_episodes: int = 5
    init_spread: float = 1.0
    mask_prob: float = 0.8
    model_transitions: str = "auto"
    min_count: int = 1
    p_min: float = 1e-6

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.model_transitions not in ("auto", "on", "off"):
            raise ValueError("model_transitions must be auto, on or off")
        for name in ("actor_lr", "critic_lr", "tau", "beta_u", "eval_every", "batch_size", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau > 1:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("iterations", "entropy_coef", "beta_odaf", "perturb_radius", "reg_weight", "smoothing", "init_spread"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.k < 2:
            raise ValueError("k must be at least 2")

    @property
    def uses_model(self) -> bool:
        if self.model_transitions == "auto":
            return self.regularizer == "odaf"
        return self.model_transitions == "on"

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: type(f.default) for f in fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(cls.keys())}")
            values[key] = _coerce(types[key], value, lineno)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(kind: type, value: str, lineno: int):
    try:
        if kind is bool:
            return value.lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(value.replace("_", ""))
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"line {lineno}: cannot read {value!r} as {kind.__name__}") from None


@dataclass
class TrainDiagnostics:
    records: list[dict] = field(default_factory=list)
    # final training state, kept in memory for downstream checks
    ensemble: ens.QEnsemble | None = field(default=None, repr=False)
    eval_policy: SoftmaxPolicy | None = field(default=None, repr=False)
    dynamics: EmpiricalDynamics | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.records:
            writer.writerow([r["iteration"]] + [repr(float(r[k])) for k in CSV_HEADER[1:]])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class ActorContext:
    """Everything the actor loss needs besides the logits; fixed during one actor step."""

    q_min: np.ndarray
    entropy_coef: float
    regularizer: str
    weight: float
    dyn: EmpiricalDynamics | None = None
    scores: np.ndarray | None = None  # expected successor uncertainty per (s, a)
    neighbors: np.ndarray | None = None
    unseen: np.ndarray | None = None
    empirical_next: np.ndarray | None = None
    visited: np.ndarray | None = None
    behavior: np.ndarray | None = None
    p_min: float = 1e-6


def u_max(dyn: EmpiricalDynamics, beta_u: float) -> float:
    return beta_u * dyn.r_max / (1.0 - dyn.discount)


def score_table(dyn: EmpiricalDynamics, e: ens.QEnsemble, eval_probs: np.ndarray) -> np.ndarray:
    """E_{P_hat(s'|s,a)} U^{pi'}(s') for every (s, a).

    Terminal outcomes carry no uncertainty; rows without any model
    prediction score ``u_max``.
    """
    u_state = (eval_probs * e.uncertainty_table()).sum(axis=1)
    u_state = np.where(dyn.terminal, 0.0, u_state)
    scores = dyn.probs @ u_state
    if dyn.fallback.any():
        scores = np.where(dyn.fallback, u_max(dyn, e.beta_u), scores)
    return scores


def validation_score(dyn: EmpiricalDynamics, e: ens.QEnsemble, eval_policy: SoftmaxPolicy, state: int, action: int) -> float:
    """Safety score of one action: expected uncertainty of its predicted outcome."""
    if dyn.fallback[state, action]:
        return u_max(dyn, e.beta_u)
    return float(score_table(dyn, e, eval_policy.probs())[state, action])


def odaf_penalty(
    policy: SoftmaxPolicy,
    eval_policy: SoftmaxPolicy,
    dyn: EmpiricalDynamics,
    e: ens.QEnsemble,
    state: int,
    radius: int,
    geometry: GridMaze | GraphGeometry | None = None,
) -> float:
    """Worst case over the perturbation neighborhood of sum_s' P_hat(s'|s_hat, pi) U^{pi'}(s')."""
    if not dyn.state_support[state]:
        raise ValueError(f"state {state} is outside the dataset's state support")
    scores = score_table(dyn, e, eval_policy.probs())
    per_state = (policy.probs() * scores).sum(axis=1)
    hood = neighborhood_table(geometry, dyn.num_states, radius)[state]
    return float(per_state[hood].max())


def regularizer_action_support(policy: SoftmaxPolicy, dataset: TransitionDataset, state: int) -> float:
    """Policy mass on actions never taken at ``state`` in the dataset."""
    unseen = ~dataset.pair_support[state]
    return float(policy.probs()[state, unseen].sum())


def regularizer_state_recovery(policy: SoftmaxPolicy, dyn: EmpiricalDynamics, dataset: TransitionDataset, state: int) -> float:
    """Total variation between the policy's transitioned distribution and the dataset's next states."""
    target = dataset.next_state_dist(state)
    mixed = policy.probs()[state] @ dyn.probs[state]
    return float(0.5 * np.abs(mixed - target).sum())


def regularizer_behavior_clone(policy: SoftmaxPolicy, dataset: TransitionDataset, state: int, p_min: float = 1e-6) -> float:
    """Cross-entropy of the policy under the empirical behaviour policy, log-probabilities clipped at log(p_min)."""
    if dataset.counts_s[state] == 0:
        raise ValueError(f"state {state} was never visited in the dataset")
    beta_hat = dataset.behavior_policy()[state]
    return float(-(beta_hat * np.log(np.maximum(policy.probs()[state], p_min))).sum())


def actor_loss_and_grad(logits: np.ndarray, ctx: ActorContext, states: np.ndarray) -> tuple[float, np.ndarray, dict]:
    """Mean actor loss over ``states`` with its exact gradient w.r.t. ``logits``.

    Returns ``(loss, grad, parts)`` where ``parts`` splits the loss into the
    value term and the active regularizer's weighted contribution.
    """
    n_s, n_a = logits.shape
    pi = softmax_rows(logits)
    logp = log_softmax_rows(logits)
    n = len(states)
    w = np.bincount(states, minlength=n_s) / n

    adv = ctx.q_min - ctx.entropy_coef * logp
    g = (pi * adv).sum(axis=1)
    q_term = -float(w @ g)
    grad = -w[:, None] * pi * (adv - g[:, None])

    parts = {"q_term": q_term, "odaf": 0.0, "action_support": 0.0, "state_recovery": 0.0, "behavior_clone": 0.0}
    reg = ctx.regularizer
    if reg == "odaf":
        f = (pi * ctx.scores).sum(axis=1)
        hood = ctx.neighbors[states]
        vals = f[hood]
        star = hood[np.arange(n), np.argmax(vals, axis=1)]
        wt = np.bincount(star, minlength=n_s) / n
        parts["odaf"] = ctx.weight * float(wt @ f)
        grad += ctx.weight * wt[:, None] * pi * (ctx.scores - f[:, None])
    elif reg == "action_support":
        unseen = ctx.unseen.astype(float)
        m = (pi * unseen).sum(axis=1)
        parts["action_support"] = ctx.weight * float(w @ m)
        grad += ctx.weight * w[:, None] * pi * (unseen - m[:, None])
    elif reg == "state_recovery":
        wv = w * ctx.visited
        mixed = np.einsum("sa,sat->st", pi, ctx.dyn.probs)
        diff = mixed - ctx.empirical_next
        tv = 0.5 * np.abs(diff).sum(axis=1)
        parts["state_recovery"] = ctx.weight * float(wv @ tv)
        dpi = 0.5 * np.einsum("st,sat->sa", np.sign(diff), ctx.dyn.probs)
        grad += ctx.weight * wv[:, None] * pi * (dpi - (pi * dpi).sum(axis=1, keepdims=True))
    elif reg == "behavior_clone":
        wv = w * ctx.visited
        clipped = logp < np.log(ctx.p_min)
        ce = -(ctx.behavior * np.maximum(logp, np.log(ctx.p_min))).sum(axis=1)
        parts["behavior_clone"] = ctx.weight * float(wv @ ce)
        live = np.where(clipped, 0.0, ctx.behavior)
        grad += ctx.weight * wv[:, None] * (pi * live.sum(axis=1, keepdims=True) - live)
    loss = q_term + sum(v for k, v in parts.items() if k != "q_term")
    return loss, grad, parts


def actor_step(
    policy: SoftmaxPolicy,
    ctx: ActorContext,
    states: np.ndarray,
    learning_rate: float,
) -> tuple[float, dict]:
    loss, grad, parts = actor_loss_and_grad(policy.logits, ctx, states)
    policy.logits -= learning_rate * grad
    return loss, parts


def build_context(
    config: TrainConfig,
    e: ens.QEnsemble,
    eval_policy: SoftmaxPolicy,
    dyn: EmpiricalDynamics,
    dataset: TransitionDataset,
    neighbors: np.ndarray,
) -> ActorContext:
    reg = config.regularizer
    weight = config.beta_odaf if reg == "odaf" else config.reg_weight
    ctx = ActorContext(q_min=e.min_target(), entropy_coef=config.entropy_coef, regularizer=reg, weight=weight, dyn=dyn,
                       p_min=config.p_min)
    if reg == "odaf":
        ctx.scores = score_table(dyn, e, eval_policy.probs())
        ctx.neighbors = neighbors
    elif reg == "action_support":
        ctx.unseen = ~dataset.pair_support
    elif reg == "state_recovery":
        visited = dataset.counts_s > 0
        nxt = dataset.counts_sas.sum(axis=1).astype(float)
        nxt[visited] /= dataset.counts_s[visited, None]
        ctx.visited, ctx.empirical_next = visited.astype(float), nxt
    elif reg == "behavior_clone":
        ctx.visited = (dataset.counts_s > 0).astype(float)
        ctx.behavior = dataset.behavior_policy()
    return ctx


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def train(
    config: TrainConfig,
    dataset: TransitionDataset,
    mdp_for_eval: TabularMdp,
    geometry: GridMaze | GraphGeometry | None = None,
    horizon: int | None = None,
    dyn: EmpiricalDynamics | None = None,
) -> tuple[SoftmaxPolicy, TrainDiagnostics]:
    """Run ``config.iterations`` critic/actor/soft-update rounds on ``dataset``.

    ``geometry`` supplies perturbation neighborhoods and, for grids, the
    displacement model of the dynamics; ``mdp_for_eval`` is only used for
    the discount and for evaluation rollouts.
    """
    if not len(dataset):
        raise ValueError("cannot train on an empty dataset")
    config.validate()
    n_s, n_a = dataset.num_states, dataset.num_actions
    if (mdp_for_eval.num_states, mdp_for_eval.num_actions) != (n_s, n_a):
        raise ValueError("evaluation MDP does not match the dataset's spaces")
    horizon = horizon or (geometry.horizon if isinstance(geometry, GridMaze) else 100)
    grid = geometry if isinstance(geometry, GridMaze) else None
    if dyn is None:
        dyn = fit_empirical(dataset, config.smoothing, grid=grid, min_count=config.min_count, discount=mdp_for_eval.discount)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    e = ens.init(config.k, n_s, n_a, config.init_spread, seed=int(seeds[1].generate_state(1)[0]),
                 beta_u=config.beta_u, tau=config.tau, learning_rate=config.critic_lr,
                 discount=mdp_for_eval.discount, mask_prob=config.mask_prob)
    eval_seed = int(seeds[2].generate_state(1)[0])
    policy = SoftmaxPolicy.uniform(n_s, n_a)
    eval_policy = policy.copy()
    neighbors = neighborhood_table(geometry, n_s, config.perturb_radius)
    row_ood = action_ood_mass(dyn)
    data_states = np.flatnonzero(dataset.counts_s > 0)
    not_terminal_next = ~(dataset.dones | dyn.terminal[dataset.next_states])
    maze = geometry if isinstance(geometry, GridMaze) else None

    diag = TrainDiagnostics()

    def record(iteration: int, actor_loss: float, critic_loss: float, penalty: float) -> None:
        report = evaluate(policy, mdp_for_eval, config.eval_episodes, horizon, eval_seed, maze=maze)
        ood = float(((policy.probs() * row_ood).sum(axis=1))[data_states].mean())
        diag.records.append({
            "iteration": iteration,
            "actor_loss": actor_loss,
            "critic_loss": critic_loss,
            "odaf_penalty": penalty,
            "ood_mass": ood,
            "eval_return_mean": report.return_mean,
            "eval_return_std": report.return_std,
        })

    record(0, 0.0, 0.0, 0.0)
    sums = np.zeros(3)
    count = 0
    use_model = config.uses_model
    for it in range(1, config.iterations + 1):
        idx = rng.integers(len(dataset), size=config.batch_size)
        s, a = dataset.states[idx], dataset.actions[idx]
        r, sp, done = dataset.rewards[idx], dataset.next_states[idx], dataset.dones[idx]
        actor_states = np.concatenate([s, sp[not_terminal_next[idx]]])

        probs = softmax_rows(policy.logits)
        logp = log_softmax_rows(policy.logits)
        if use_model:
            m_a = _sample_rows(probs[actor_states], rng)
            keep = ~dyn.fallback[actor_states, m_a]
            m_s, m_a = actor_states[keep], m_a[keep]
            m_sp = _sample_rows(dyn.probs[m_s, m_a], rng)
            s = np.concatenate([s, m_s])
            a = np.concatenate([a, m_a])
            r = np.concatenate([r, dyn.rewards[m_s, m_a]])
            sp = np.concatenate([sp, m_sp])
            done = np.concatenate([done, dyn.terminal[m_sp]])
        values = ens.soft_value(e, probs, logp, config.entropy_coef)
        critic_loss = ens.td_update(e, (s, a, r, sp, done), policy, config.entropy_coef, values=values)

        ctx = build_context(config, e, eval_policy, dyn, dataset, neighbors)
        actor_loss, parts = actor_step(policy, ctx, actor_states, config.actor_lr)
        ens.soft_update(e)
        eval_policy.logits *= 1.0 - config.tau
        eval_policy.logits += config.tau * policy.logits

        if not (np.isfinite(actor_loss) and np.isfinite(critic_loss)):
            raise TrainingError(
                f"non-finite loss at iteration {it}",
                {"iteration": it, "actor_loss": actor_loss, "critic_loss": critic_loss, "parts": parts,
                 "logits": policy.logits.copy(), "members": e.members.copy()},
            )
        sums += (actor_loss, critic_loss, parts["odaf"])
        count += 1
        if it % config.eval_every == 0 or it == config.iterations:
            record(it, *(sums / count))
            sums[:] = 0.0
            count = 0
            log.debug("iter %d: %s", it, diag.records[-1])

    diag.ensemble, diag.eval_policy, diag.dynamics = e, eval_policy, dyn
    return policy, diag
