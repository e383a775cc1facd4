"""Search agent: actor/critic heads over the graph embedding, clipped
policy-gradient updates from a small replay buffer, and the episodic
pruning-strategy search loop.

One global pattern distribution F is produced per step from the graph
embedding g; every prunable unit samples from that same F. The critic
regresses discounted returns on detached embeddings, so only the actor
loss trains the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder_params
from .graph import DnnGraph, build_graph
from .modelir import (ModelIR, check_constraints, count_flops,
                      evaluate_accuracy)
from .optim import Adam
from .patterns import (PatternAssignment, PatternLibrary, all_ones_assignment,
                       apply_pruning, drawn_indices, sample_assignment)
from .tensor import Tensor


@dataclass
class SearchConfig:
    episodes: int = 100
    tau: float = 0.5
    gamma: float = 0.9
    clip_epsilon: float = 0.2
    buffer_size: int = 32
    update_iters: int = 15
    actor_lr: float = 3e-3
    critic_lr: float = 1e-3
    alpha_mode: str = "constant"  # constant | linear
    alpha_start: float = 0.5
    alpha_end: float = 0.5
    alpha_episodes: int = 100
    per_kernel: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 <= self.clip_epsilon < 1:
            raise ValueError(f"clip_epsilon outside [0, 1): {self.clip_epsilon}")
        if self.alpha_mode not in ("constant", "linear"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.alpha_episodes < 1:
            raise ValueError("alpha_episodes must be >= 1")


@dataclass
class ConstraintSet:
    flops_target: float
    acc_floor: float
    max_inner_steps: int = 50

    def __post_init__(self):
        for name, v in (("flops_target", self.flops_target),
                        ("acc_floor", self.acc_floor)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.max_inner_steps < 1:
            raise ValueError("max_inner_steps must be >= 1")


@dataclass
class ActorParams:
    W1: Tensor
    W2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.W1, self.W2]


@dataclass
class CriticParams:
    W1: Tensor
    W2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.W1, self.W2]


@dataclass
class ActorCritic:
    encoder: EncoderParams
    actor: ActorParams
    critic: CriticParams

    def named(self) -> dict[str, np.ndarray]:
        out = dict(self.encoder.named())
        out["actor.W1"] = self.actor.W1.data
        out["actor.W2"] = self.actor.W2.data
        out["critic.W1"] = self.critic.W1.data
        out["critic.W2"] = self.critic.W2.data
        return out


def _mlp_params(d_in: int, hidden: int, d_out: int,
                rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    def mat(fi, fo):
        s = 1.0 / np.sqrt(fi)
        return Tensor(rng.uniform(-s, s, size=(fi, fo)), requires_grad=True)

    return mat(d_in, hidden), mat(hidden, d_out)


def make_actor_critic(library_size: int, seed: int,
                      encoder_config: EncoderConfig | None = None,
                      hidden: int = 128) -> ActorCritic:
    """Fresh parameter set. Sub-seeds are seed, seed+1, seed+2 for the
    encoder, actor, and critic respectively."""
    if library_size < 2:
        raise ValueError("library_size must be >= 2")
    cfg = encoder_config or EncoderConfig()
    enc = init_encoder_params(cfg, seed)
    a1, a2 = _mlp_params(cfg.out_dim, hidden, library_size,
                         np.random.default_rng(seed + 1))
    c1, c2 = _mlp_params(cfg.out_dim, hidden, 1,
                         np.random.default_rng(seed + 2))
    return ActorCritic(enc, ActorParams(a1, a2), CriticParams(c1, c2))


def act(g: Tensor, actor: ActorParams, tau: float = 0.5) -> Tensor:
    """Pattern distribution from an embedding: softmax(tanh(MLP(g)) / tau).

    The tanh head bounds raw scores to (-1, 1), so tau sets how peaked F
    can ever get; tau=0.5 allows a max probability of ~0.982 for n=2.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    raw = T.tanh(T.matmul(T.relu(T.matmul(g, actor.W1)), actor.W2))
    return T.softmax(T.div(raw, tau))


def critic_value(g: Tensor, critic: CriticParams) -> Tensor:
    """Scalar state-value estimate."""
    v = T.matmul(T.relu(T.matmul(g, critic.W1)), critic.W2)
    return T.reshape(v, ())


def compute_reward(flops_reduction: float, accuracy: float,
                   alpha: float) -> float:
    """R = alpha * flops_reduction + (1 - alpha) * accuracy."""
    for name, v in (("flops_reduction", flops_reduction),
                    ("accuracy", accuracy), ("alpha", alpha)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"compute_reward: {name}={v} outside [0, 1]")
    return alpha * flops_reduction + (1.0 - alpha) * accuracy


def discounted_returns(rewards, gamma: float) -> list[float]:
    """Suffix sums Dr_t = sum_{u>=t} gamma^(u-t) r_u, computed backward."""
    if len(rewards) == 0:
        raise ValueError("discounted_returns: empty reward list")
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def alpha_schedule(episode: int, config: SearchConfig) -> float:
    """Scheduled reward mix: constant, or linear from alpha_start to
    alpha_end over alpha_episodes (clamped after)."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    if config.alpha_mode == "constant":
        return config.alpha_start
    frac = min(episode, config.alpha_episodes) / config.alpha_episodes
    return config.alpha_start + (config.alpha_end - config.alpha_start) * frac


@dataclass
class Transition:
    graph: DnnGraph
    dist: np.ndarray
    assignment: PatternAssignment
    drawn: np.ndarray
    log_prob: float
    reward: float
    episode: int
    step: int


class ReplayBuffer:
    def __init__(self, capacity: int = 32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []

    def add(self, t: Transition) -> None:
        if len(self._items) >= self.capacity:
            raise ValueError("buffer full; update and clear before adding")
        recomputed = float(np.log(t.dist[t.drawn]).sum())
        if abs(recomputed - t.log_prob) > 1e-10:
            raise ValueError("transition log_prob inconsistent with its "
                             "distribution and drawn indices")
        self._items.append(t)

    def full(self) -> bool:
        return len(self._items) >= self.capacity

    def clear(self) -> None:
        self._items = []

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def policy_log_prob(ac: ActorCritic, t: Transition, tau: float) -> Tensor:
    """Log-probability of a stored transition's draws under the current
    parameters; differentiable through encoder and actor."""
    g = encode(t.graph, ac.encoder)
    f = act(g, ac.actor, tau)
    return T.tsum(T.log(T.gather(f, t.drawn)))


def _segment_returns(transitions, gamma: float) -> np.ndarray:
    """Discounted returns computed within each contiguous episode run."""
    dr = np.empty(len(transitions))
    i = 0
    while i < len(transitions):
        j = i
        while j < len(transitions) and \
                transitions[j].episode == transitions[i].episode:
            j += 1
        dr[i:j] = discounted_returns([t.reward for t in transitions[i:j]],
                                     gamma)
        i = j
    return dr


def ppo_update(buffer: ReplayBuffer, ac: ActorCritic, config: SearchConfig,
               opt_actor: Adam | None = None,
               opt_critic: Adam | None = None) -> ActorCritic:
    """Clipped-ratio policy update over a full buffer.

    Advantages are frozen before the passes: Dr minus the critic's value
    on the pre-update embeddings. The critic fits those same detached
    embeddings, so its loss never reaches the encoder. The buffer is
    cleared afterwards.
    """
    if not buffer.full():
        raise ValueError(f"ppo_update needs a full buffer "
                         f"({len(buffer)}/{buffer.capacity})")
    trans = list(buffer)
    dr = _segment_returns(trans, config.gamma)
    with T.no_grad():
        gs = [encode(t.graph, ac.encoder).data.copy() for t in trans]
        values = np.array([critic_value(Tensor(g), ac.critic).item()
                           for g in gs])
    adv = Tensor(dr - values)
    dr_t = Tensor(dr)
    stored = [t.log_prob for t in trans]
    if opt_actor is None:
        opt_actor = Adam(ac.encoder.parameters() + ac.actor.tensors(),
                         lr=config.actor_lr)
    if opt_critic is None:
        opt_critic = Adam(ac.critic.tensors(), lr=config.critic_lr)
    lo, hi = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    for _ in range(config.update_iters):
        ratios = T.concat([
            T.reshape(T.exp(T.sub(policy_log_prob(ac, t, config.tau), lp)),
                      (1,))
            for t, lp in zip(trans, stored)])
        obj = T.minimum(T.mul(ratios, adv),
                        T.mul(T.clip(ratios, lo, hi), adv))
        opt_actor.zero_grad()
        T.backward(T.neg(T.mean(obj)))
        opt_actor.step()

        vs = T.concat([T.reshape(critic_value(Tensor(g), ac.critic), (1,))
                       for g in gs])
        diff = T.sub(vs, dr_t)
        opt_critic.zero_grad()
        T.backward(T.mean(T.mul(diff, diff)))
        opt_critic.step()
    buffer.clear()
    return ac


@dataclass
class SearchResult:
    assignment: PatternAssignment
    model: ModelIR
    log: list[dict] = field(repr=False)
    constraints_met: bool
    reward: float
    flops_reduction: float
    accuracy: float


def run_search(model: ModelIR, library: PatternLibrary,
               constraints: ConstraintSet, config: SearchConfig,
               seed: int, val,
               encoder_config: EncoderConfig | None = None) -> SearchResult:
    """Episodic pruning-strategy search.

    Each episode starts from the keep-everything assignment; each inner
    step embeds the current assignment's graph, samples a fresh
    assignment from the actor's distribution, and scores it by
    alpha * flops_reduction + (1 - alpha) * val accuracy (masked forward,
    no fine-tuning, cached by assignment digest). The inner loop exits
    once both constraints hold or max_inner_steps is hit; a policy update
    fires whenever the buffer fills, including mid-episode. Model weights
    are never mutated; the returned model is a pruned clone.

    Sub-seeds: seed..seed+2 parameters, seed+3 sampler, seed+4 graph
    boundary features (redrawn identically every build).
    """
    ac = make_actor_critic(len(library), seed, encoder_config)
    node_dim = ac.encoder.config.node_dim
    opt_actor = Adam(ac.encoder.parameters() + ac.actor.tensors(),
                     lr=config.actor_lr)
    opt_critic = Adam(ac.critic.tensors(), lr=config.critic_lr)
    sampler = np.random.default_rng(seed + 3)
    buffer = ReplayBuffer(config.buffer_size)
    cache: dict[str, tuple[float, float]] = {}
    best = None
    best_any = None
    log: list[dict] = []

    for ep in range(config.episodes):
        alpha = alpha_schedule(ep, config)
        assignment = all_ones_assignment(model, library)
        for step in range(constraints.max_inner_steps):
            graph = build_graph(model, assignment, library, seed=seed + 4,
                                node_dim=node_dim)
            with T.no_grad():
                g = encode(graph, ac.encoder)
                dist = act(g, ac.actor, config.tau).data.copy()
            assignment, logp = sample_assignment(dist, model, library,
                                                 sampler, config.per_kernel)
            digest = assignment.digest()
            if digest in cache:
                fr, acc = cache[digest]
            else:
                fr = count_flops(model, assignment).flops_reduction
                acc = evaluate_accuracy(model, val, assignment)
                cache[digest] = (fr, acc)
            reward = compute_reward(fr, acc, alpha)
            met = check_constraints(fr, acc, constraints.flops_target,
                                    constraints.acc_floor)
            buffer.add(Transition(graph, dist, assignment,
                                  drawn_indices(assignment, model), logp,
                                  reward, ep, step))
            log.append({"episode": ep, "step": step, "flops_reduction": fr,
                        "accuracy": acc, "reward": reward, "digest": digest,
                        "constraints_met": met})
            if met and (best is None or reward > best[0]):
                best = (reward, assignment, fr, acc)
            if best_any is None or reward > best_any[0]:
                best_any = (reward, assignment, fr, acc)
            if buffer.full():
                ppo_update(buffer, ac, config, opt_actor, opt_critic)
            if met:
                break

    met_flag = best is not None
    reward, assignment, fr, acc = best if met_flag else best_any
    return SearchResult(assignment, apply_pruning(model, assignment), log,
                        met_flag, reward, fr, acc)
