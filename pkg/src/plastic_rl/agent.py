"""On-policy actor-critic training: PPO for discrete actions, RPO for
continuous ones.

The actor and critic are separate networks sharing one optimizer and one
global gradient-norm clip. Every regularizer folds into the same minibatch
loss whose gradient the optimizer sees, so clipping acts on the combined
objective. All gradients are exact (hand-derived); the finite-difference
batteries in the test suite check the complete minibatch loss end to end.

Everything a run does is a pure function of (config, seed): rollout sampling,
minibatch shuffling, update-noise, evaluation and parameter noise each draw
from their own named generator so the streams cannot interfere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import metrics, reg
from .net import Mlp

_ADV_EPS = 1e-8
_LOG_2PI = float(np.log(2.0 * np.pi))


class TrainingAborted(RuntimeError):
    """Raised when the run hits non-finite numbers; carries the step count."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


@dataclass
class AgentConfig:
    learning_rate: float = 2.5e-4
    num_steps: int = 128
    minibatch_size: int = 32
    num_minibatches: int = 4
    update_epochs: int = 4
    gae_lambda: float = 0.95
    gamma: float = 0.99
    clip_coef: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    rpo_alpha: float = 0.0
    adam_eps: float = 1e-5
    weight_decay: float = 0.0

    def validate(self) -> None:
        if self.num_steps != self.minibatch_size * self.num_minibatches:
            raise ValueError(
                "num_steps must equal minibatch_size * num_minibatches "
                f"({self.num_steps} != {self.minibatch_size} * {self.num_minibatches})"
            )
        if self.rpo_alpha < 0:
            raise ValueError("rpo_alpha must be >= 0")
        for field_name in ("learning_rate", "gamma", "gae_lambda", "clip_coef"):
            if getattr(self, field_name) <= 0:
                raise ValueError(f"{field_name} must be positive")


class RolloutBuffer:
    """Fixed-length on-policy store for one rollout of transitions."""

    def __init__(self, num_steps: int, obs_dim: int, action_shape: tuple):
        self.num_steps = num_steps
        self.obs = np.zeros((num_steps, obs_dim))
        self.actions = np.zeros((num_steps, *action_shape))
        self.logprobs = np.zeros(num_steps)
        self.rewards = np.zeros(num_steps)
        self.values = np.zeros(num_steps)
        self.dones = np.zeros(num_steps)
        self.advantages = np.zeros(num_steps)
        self.returns = np.zeros(num_steps)
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr >= self.num_steps

    def add(self, obs, action, logprob, reward, done) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.actions[i] = action
        self.logprobs[i] = logprob
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.ptr += 1

    def clear(self) -> None:
        self.ptr = 0


def gae(rewards, values, dones, next_value, gamma, lam):
    """Generalized advantage estimation.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    where done_t flags episode termination at step t. Returns
    (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        nv = next_value if t == T - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nv * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gaussian_logprob(mean, log_std, action) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over action dimensions."""
    std = np.exp(log_std)
    zscore = (action - mean) / std
    return np.sum(-0.5 * zscore * zscore - log_std - 0.5 * _LOG_2PI, axis=-1)


def rpo_logprob(mean, log_std, action, alpha, rng: np.random.Generator) -> np.ndarray:
    """Update-phase log density with the robust mean perturbation.

    For alpha > 0 the Gaussian mean is shifted per sample and dimension by
    uniform noise on [-alpha, alpha] before evaluating the density; alpha = 0
    takes the plain Gaussian path and consumes no randomness, so it is
    bit-identical to standard PPO.
    """
    mean = np.atleast_2d(mean)
    if alpha > 0:
        mean = mean + rng.uniform(-alpha, alpha, size=mean.shape)
    return gaussian_logprob(mean, log_std, np.atleast_2d(action))


class CategoricalPolicy:
    """Discrete policy: network outputs one logit per action."""

    kind = "categorical"

    def __init__(self, mlp: Mlp):
        self.mlp = mlp
        self.n_actions = mlp.out_width

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        logits, _ = self.mlp.forward(obs.reshape(1, -1))
        p = softmax(logits[0])
        cdf = np.cumsum(p)
        a = int(min(np.searchsorted(cdf, rng.random(), side="right"),
                    self.n_actions - 1))
        lp = float(log_softmax(logits)[0, a])
        return a, lp

    def extra_params(self):
        return []


class GaussianPolicy:
    """Continuous policy: network outputs the mean; log-std is a free vector."""

    kind = "gaussian"

    def __init__(self, mlp: Mlp, action_dim: int):
        self.mlp = mlp
        self.action_dim = action_dim
        self.log_std = np.zeros(action_dim)
        self.g_log_std = np.zeros(action_dim)

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        mean, _ = self.mlp.forward(obs.reshape(1, -1))
        std = np.exp(self.log_std)
        action = mean[0] + std * rng.standard_normal(self.action_dim)
        lp = float(gaussian_logprob(mean[0], self.log_std, action))
        return action, lp

    def extra_params(self):
        return [("log_std", self.log_std, self.g_log_std)]


def trainable_params(policy, critic: Mlp):
    """All (name, param, grad) triples the optimizer touches, in fixed order."""
    triples = [(f"actor.{n}", p, g) for n, p, g in policy.mlp.parameters()]
    triples += [(f"critic.{n}", p, g) for n, p, g in critic.parameters()]
    triples += policy.extra_params()
    return triples


def snapshot_params(policy, critic: Mlp):
    """Copies of the network parameters (regenerative baselines pull here).

    The Gaussian log-std is excluded: it is a distribution parameter, not a
    network weight.
    """
    nets = [(n, p) for n, p, _ in policy.mlp.parameters()]
    nets += [(n, p) for n, p, _ in critic.parameters()]
    return [p.copy() for _, p in nets]


def _net_param_arrays(policy, critic: Mlp):
    arrays = [(p, g) for _, p, g in policy.mlp.parameters()]
    arrays += [(p, g) for _, p, g in critic.parameters()]
    return arrays


def ppo_loss_and_grads(
    policy,
    critic: Mlp,
    batch: dict,
    cfg: AgentConfig,
    update_rng: np.random.Generator,
    parseval: Optional[reg.ParsevalSpec] = None,
    baseline: Optional[reg.BaselineSpec] = None,
    snapshot=None,
):
    """Clipped-surrogate PPO loss on one minibatch, with exact gradients.

    Accumulates parameter gradients in the network grad storage (zeroed here
    first) and returns (loss, stats). The loss is

        pg + value_coef * v_loss - entropy_coef * entropy + regularizers

    with advantages normalized per minibatch and the value loss clipped
    around the rollout-time value predictions.
    """
    obs = batch["obs"]
    actions = batch["actions"]
    old_logprobs = batch["logprobs"]
    advantages = batch["advantages"]
    returns = batch["returns"]
    old_values = batch["values"]
    n = obs.shape[0]

    policy.mlp.zero_grads()
    critic.zero_grads()
    if policy.kind == "gaussian":
        policy.g_log_std[:] = 0.0

    if n > 1:
        adv = (advantages - advantages.mean()) / (advantages.std(ddof=1) + _ADV_EPS)
    else:
        adv = advantages - advantages.mean()

    # --- policy term ---------------------------------------------------
    out, actor_caches = policy.mlp.forward(obs)
    if policy.kind == "categorical":
        acts = actions.astype(np.int64).reshape(-1)
        logp_all = log_softmax(out)
        new_logprobs = logp_all[np.arange(n), acts]
        probs = softmax(out)
        entropies = -np.sum(probs * logp_all, axis=1)
    else:
        mean = out
        if cfg.rpo_alpha > 0:
            mean = mean + update_rng.uniform(-cfg.rpo_alpha, cfg.rpo_alpha,
                                             size=mean.shape)
        std = np.exp(policy.log_std)
        zscore = (actions - mean) / std
        new_logprobs = np.sum(-0.5 * zscore * zscore - policy.log_std
                              - 0.5 * _LOG_2PI, axis=1)
        ent_per_dim = 0.5 * (1.0 + _LOG_2PI) + policy.log_std
        entropies = np.full(n, float(np.sum(ent_per_dim)))

    ratio = np.exp(new_logprobs - old_logprobs)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_coef, 1.0 + cfg.clip_coef) * adv
    pg_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    # d(pg)/d(new_logprob): active only where the unclipped branch is the min
    take_unclipped = unclipped <= clipped
    dlogprob = np.where(take_unclipped, -ratio * adv / n, 0.0)

    entropy_mean = float(np.mean(entropies))

    if policy.kind == "categorical":
        up = dlogprob[:, None] * (np.eye(policy.n_actions)[acts] - probs)
        # entropy gradient: dH/dz_j = -p_j (log p_j + H)
        dent = -probs * (logp_all + entropies[:, None])
        up += (-cfg.entropy_coef / n) * dent
        policy.mlp.backward(actor_caches, up)
    else:
        dmean = dlogprob[:, None] * zscore / std
        policy.mlp.backward(actor_caches, dmean)
        dlp_dlogstd = zscore * zscore - 1.0
        policy.g_log_std += dlogprob @ dlp_dlogstd
        policy.g_log_std += -cfg.entropy_coef  # dH/dlog_std = 1 per dim

    # --- value term ------------------------------------------------------
    v_out, critic_caches = critic.forward(obs)
    v = v_out[:, 0]
    v_clipped = old_values + np.clip(v - old_values, -cfg.clip_coef, cfg.clip_coef)
    err_unclipped = v - returns
    err_clipped = v_clipped - returns
    use_unclipped = err_unclipped**2 >= err_clipped**2
    v_loss = 0.5 * float(np.mean(np.maximum(err_unclipped**2, err_clipped**2)))
    clip_active = np.abs(v - old_values) < cfg.clip_coef
    dv = np.where(use_unclipped, err_unclipped, err_clipped * clip_active)
    dv = cfg.value_coef * dv / n
    critic.backward(critic_caches, dv[:, None])

    loss = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy_mean

    # --- regularizers ----------------------------------------------------
    reg_loss = 0.0
    if parseval is not None and parseval.strength > 0:
        for mlp in (policy.mlp, critic):
            for layer in mlp.dense_layers()[:-1]:
                reg_loss += reg.parseval_accumulate(layer.w, parseval, layer.gw)
    if baseline is not None and baseline.kind in ("regen", "wregen"):
        params = [p for p, _ in _net_param_arrays(policy, critic)]
        l, grads = reg.regen_loss_and_grad(
            params, snapshot, baseline.strength,
            wasserstein=baseline.kind == "wregen",
        )
        reg_loss += l
        for (p, g), extra in zip(_net_param_arrays(policy, critic), grads):
            g += extra

    loss += reg_loss
    stats = {
        "loss": loss,
        "pg_loss": pg_loss,
        "v_loss": v_loss,
        "entropy": entropy_mean,
        "reg_loss": reg_loss,
        "approx_kl": float(np.mean(old_logprobs - new_logprobs)),
    }
    return loss, stats


def clip_global_grad_norm(triples, max_norm: float) -> float:
    total = 0.0
    for _, _, g in triples:
        flat = g.reshape(-1)
        total += float(flat @ flat)
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for _, _, g in triples:
            g *= scale
    return norm


@njit(cache=True)
def _adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, decay_factor):
    for i in range(p.size):
        if decay_factor != 1.0:
            p[i] *= decay_factor
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


class AdamW:
    """Adam with decoupled weight decay applied before the moment update.

    Decay touches dense weight matrices only (parameter names ending in
    ".w"); biases, per-feature scales and distribution parameters are never
    decayed. weight_decay = 0 makes this plain Adam.
    """

    def __init__(self, triples, lr: float, betas=(0.9, 0.999), eps: float = 1e-5,
                 weight_decay: float = 0.0):
        self.triples = list(triples)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for _, p, _ in self.triples]
        self.v = [np.zeros_like(p) for _, p, _ in self.triples]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for (name, p, g), m, v in zip(self.triples, self.m, self.v):
            decayed = self.weight_decay > 0 and name.endswith(".w")
            factor = 1.0 - self.lr * self.weight_decay if decayed else 1.0
            _adam_kernel(p.reshape(-1), g.reshape(-1), m.reshape(-1),
                         v.reshape(-1), self.lr, self.beta1, self.beta2,
                         self.eps, bc1, bc2, factor)


@dataclass
class Schedule:
    total_steps: int
    change_period: int
    eval_cadence: int = 5000
    diag_cadence: int = 5000
    eval_episodes: int = 10

    def validate(self) -> None:
        for f in ("total_steps", "change_period", "eval_cadence", "diag_cadence",
                  "eval_episodes"):
            if getattr(self, f) < 1:
                raise ValueError(f"schedule field {f} must be >= 1")


def evaluate_policy(eval_env, policy, episodes: int, rng: np.random.Generator) -> float:
    """Success fraction of `episodes` stochastic-policy episodes."""
    successes = 0
    for _ in range(episodes):
        obs = eval_env.reset()
        done = False
        while not done:
            action, _ = policy.act(obs, rng)
            obs, _, done, success = eval_env.step(action)
        successes += int(success)
    return successes / episodes


def train_loop(
    env,
    eval_env,
    policy,
    critic: Mlp,
    optimizer: AdamW,
    cfg: AgentConfig,
    schedule: Schedule,
    task_seq,
    streams: dict,
    sink: Callable[[dict], None],
    parseval: Optional[reg.ParsevalSpec] = None,
    baseline: Optional[reg.BaselineSpec] = None,
    snapshot=None,
    diagnostics: bool = True,
) -> dict:
    """Run the full collect/update cycle over a nonstationary task sequence.

    Task changes apply at the first episode boundary at or after each
    change-period mark, so no episode straddles two tasks. Evaluation runs
    every eval_cadence steps on the current task (before any pending change
    at the same step) using its own generator, so it never perturbs training.
    A trailing partial rollout shorter than num_steps is dropped.
    """
    cfg.validate()
    schedule.validate()
    action_shape = () if env.discrete else (env.action_dim,)
    buffer = RolloutBuffer(cfg.num_steps, env.obs_dim, action_shape)
    policy_rng = streams["policy"]
    update_rng = streams["update"]
    eval_rng = streams["eval"]
    snp_rng = streams.get("snp")

    task_idx = 0
    env.set_task(task_seq.tasks[0])
    obs = env.reset()
    step = 0
    updates = 0

    def emit_diag(at_step: int) -> None:
        if not diagnostics:
            return
        recent = buffer.obs[: buffer.ptr] if buffer.ptr > 0 else obs.reshape(1, -1)
        snap = metrics.diagnostic_snapshot(policy, critic, recent)
        snap.update({"kind": "diag", "step": at_step, "task": task_idx})
        sink(snap)

    def run_eval(at_step: int) -> None:
        eval_env.set_task(task_seq.tasks[task_idx])
        rate = evaluate_policy(eval_env, policy, schedule.eval_episodes, eval_rng)
        sink({"kind": "eval", "step": at_step, "task": task_idx,
              "success_rate": rate})

    emit_diag(0)
    while step < schedule.total_steps:
        action, logprob = policy.act(obs, policy_rng)
        next_obs, reward, done, success = env.step(action)
        buffer.add(obs, action, logprob, reward, done)
        obs = next_obs
        step += 1

        if step % schedule.eval_cadence == 0:
            run_eval(step)
        if step % schedule.diag_cadence == 0:
            emit_diag(step)

        if done:
            pending = (step >= (task_idx + 1) * task_seq.change_period
                       and task_idx + 1 < len(task_seq.tasks))
            if pending:
                task_idx += 1
                env.set_task(task_seq.tasks[task_idx])
                sink({"kind": "task_change", "step": step, "task": task_idx,
                      "task_payload": _task_payload(task_seq.tasks[task_idx])})
            obs = env.reset()

        if buffer.full and step < schedule.total_steps:
            _update_phase(policy, critic, optimizer, cfg, buffer, obs,
                          update_rng, snp_rng, parseval, baseline, snapshot, step)
            updates += 1
            buffer.clear()

    sink({"kind": "end", "step": step, "updates": updates})
    return {"steps": step, "updates": updates}


def _task_payload(task):
    if isinstance(task, tuple):
        return list(task)
    return {"action_gain": task.action_gain, "wind_x": task.wind_x,
            "wind_y": task.wind_y}


def _update_phase(policy, critic, optimizer, cfg, buffer, next_obs, update_rng,
                  snp_rng, parseval, baseline, snapshot, step):
    values, _ = critic.forward(buffer.obs)
    buffer.values[:] = values[:, 0]
    next_value = float(critic.forward(next_obs.reshape(1, -1))[0][0, 0])
    buffer.advantages, buffer.returns = gae(
        buffer.rewards, buffer.values, buffer.dones, next_value,
        cfg.gamma, cfg.gae_lambda,
    )
    if not np.isfinite(buffer.advantages).all():
        raise TrainingAborted(step, "non-finite advantages")

    for _ in range(cfg.update_epochs):
        perm = update_rng.permutation(cfg.num_steps)
        for mb in range(cfg.num_minibatches):
            idx = perm[mb * cfg.minibatch_size:(mb + 1) * cfg.minibatch_size]
            batch = {
                "obs": buffer.obs[idx],
                "actions": buffer.actions[idx],
                "logprobs": buffer.logprobs[idx],
                "advantages": buffer.advantages[idx],
                "returns": buffer.returns[idx],
                "values": buffer.values[idx],
            }
            loss, _ = ppo_loss_and_grads(
                policy, critic, batch, cfg, update_rng,
                parseval=parseval, baseline=baseline, snapshot=snapshot,
            )
            if not np.isfinite(loss):
                raise TrainingAborted(step, "non-finite loss")
            clip_global_grad_norm(optimizer.triples, cfg.max_grad_norm)
            optimizer.step()
            if (baseline is not None and baseline.kind == "shrink_perturb"
                    and snp_rng is not None):
                reg.apply_shrink_perturb(policy.mlp, baseline, snp_rng)
                reg.apply_shrink_perturb(critic, baseline, snp_rng)

    for _, p, _ in optimizer.triples:
        if not np.isfinite(p).all():
            raise TrainingAborted(step, "non-finite parameters")
