"""PPO core: returns, GAE, the clipped surrogate with entropy bonus, the
training loop, checkpoints, and greedy movement-record extraction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..features import MovementRecord
from .env import OpcPointEnv, PpoConfig
from .nets import Adam, PolicyNet, ValueNet


class TrainingError(RuntimeError):
    pass


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """R_t = sum_{k>=t} gamma^(k-t) r_k over a finite horizon."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Advantages from discounted TD errors, with V(s_{T+1}) = 0."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(r) != len(v):
        raise TrainingError(f"{len(r)} rewards vs {len(v)} values")
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        v_next = v[t + 1] if t + 1 < len(v) else 0.0
        delta = r[t] + gamma * v_next - v[t]
        acc = delta + gamma * lam * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray      # indices 0..2C
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def ppo_losses(batch: Batch, policy: PolicyNet, value: ValueNet, cfg: PpoConfig):
    """(L_clip, L_V, entropy, combined) where combined = L_clip - c1 L_V + c2 S
    is the maximized objective."""
    probs, logp, _ = policy.forward(batch.states)
    rows = np.arange(len(batch.actions))
    lp_a = logp[rows, batch.actions]
    ratio = np.exp(lp_a - batch.old_logp)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * batch.advantages
    surr2 = clipped * batch.advantages
    l_clip = float(np.minimum(surr1, surr2).mean())
    ent = float(-(probs * logp).sum(axis=1).mean())
    v, _ = value.forward(batch.states)
    l_value = float(((v - batch.returns) ** 2).mean())
    combined = l_clip - cfg.c1 * l_value + cfg.c2 * ent
    return l_clip, l_value, ent, combined


def _minibatch_grads(batch: Batch, policy: PolicyNet, value: ValueNet, cfg: PpoConfig):
    """Analytic gradients of the *minimized* objective (negated combined)."""
    n = len(batch.actions)
    probs, logp, p_cache = policy.forward(batch.states)
    rows = np.arange(n)
    lp_a = logp[rows, batch.actions]
    ratio = np.exp(lp_a - batch.old_logp)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * batch.advantages
    surr2 = clipped * batch.advantages
    # spec invariant: clipping can only lower the objective for favourable moves
    big_ratio = ratio > 1.0 + cfg.clip_eps
    pos_adv = batch.advantages > 0
    if np.any(big_ratio & pos_adv) and not np.all(
            surr2[big_ratio & pos_adv] <= surr1[big_ratio & pos_adv] + 1e-12):
        raise TrainingError("clipped surrogate exceeded the unclipped term")

    use_unclipped = surr1 <= surr2
    inside = (ratio > 1.0 - cfg.clip_eps) & (ratio < 1.0 + cfg.clip_eps)
    dratio = np.where(use_unclipped, batch.advantages,
                      np.where(inside, batch.advantages, 0.0)) / n
    dlp_a = dratio * ratio
    dlogits = -probs * dlp_a[:, None]
    dlogits[rows, batch.actions] += dlp_a
    # entropy bonus: dH/dlogit_j = -p_j (logp_j + H)
    ent_rows = -(probs * logp).sum(axis=1)
    dlogits += (cfg.c2 / n) * (-probs * (logp + ent_rows[:, None]))
    gp_w, gp_b = policy.mlp.backward(-dlogits, p_cache)  # minimize the negation

    v, v_cache = value.forward(batch.states)
    dv = (cfg.c1 * 2.0 / n) * (v - batch.returns)
    gv_w, gv_b = value.mlp.backward(dv[:, None], v_cache)

    l_clip = float(np.minimum(surr1, surr2).mean())
    l_value = float(((v - batch.returns) ** 2).mean())
    ent = float(ent_rows.mean())
    combined = l_clip - cfg.c1 * l_value + cfg.c2 * ent
    return (gp_w + gp_b), (gv_w + gv_b), combined


def ppo_update(batch: Batch, policy: PolicyNet, value: ValueNet,
               opt_policy: Adam, opt_value: Adam, cfg: PpoConfig,
               rng: np.random.Generator) -> float:
    """epochs_per_update passes of minibatch ascent; returns last combined."""
    n = len(batch.actions)
    combined = 0.0
    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            mb = Batch(batch.states[idx], batch.actions[idx], batch.old_logp[idx],
                       batch.advantages[idx], batch.returns[idx])
            g_policy, g_value, combined = _minibatch_grads(mb, policy, value, cfg)
            if not (np.isfinite(combined) and
                    all(np.all(np.isfinite(g)) for g in g_policy + g_value)):
                raise TrainingError("non-finite PPO update")
            opt_policy.step(g_policy)
            opt_value.step(g_value)
    return combined


@dataclass
class PolicyCheckpoint:
    config: dict
    policy: dict
    value: dict
    reward_trace: list
    seed: int
    aborted: bool = False
    version: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=0, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PolicyCheckpoint":
        return PolicyCheckpoint(**json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path) -> "PolicyCheckpoint":
        with open(path, "r", encoding="utf-8") as fh:
            return PolicyCheckpoint.from_json(fh.read())

    def build_nets(self):
        from .nets import Mlp

        cfg = config_from_dict(self.config)
        policy = PolicyNet.__new__(PolicyNet)
        policy.n_actions = cfg.n_actions
        policy.mlp = Mlp.from_lists(self.policy)
        value = ValueNet.__new__(ValueNet)
        value.mlp = Mlp.from_lists(self.value)
        return policy, value, cfg


def config_to_dict(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d


def config_from_dict(d: dict) -> PpoConfig:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    return PpoConfig(**d)


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1)


def train_envs(envs, cfg: PpoConfig, progress=None) -> PolicyCheckpoint:
    """PPO over a set of point-placement environments; deterministic per seed."""
    cfg.validate()
    if not envs:
        raise TrainingError("need at least one training environment")
    rng = np.random.default_rng(cfg.seed)
    state_dim = envs[0].state_dim
    policy = PolicyNet(state_dim, cfg.n_actions, cfg.hidden, rng,
                       zero_action_bias=cfg.zero_action_bias)
    value = ValueNet(state_dim, cfg.hidden, rng)
    opt_p = Adam(policy.mlp.params(), lr=cfg.learning_rate)
    opt_v = Adam(value.mlp.params(), lr=cfg.learning_rate)

    trace = []
    aborted = False
    for update in range(cfg.updates):
        chunks = []
        raw_means = []
        n_roll = min(cfg.rollout_clips, len(envs))
        for k in range(n_roll):
            env = envs[(update * n_roll + k) % len(envs)]
            probs, logp, _ = policy.forward(env.states)
            acts = sample_actions(probs, rng)
            classes = acts - cfg.c_classes
            raw = env.rollout(classes)
            raw_means.append(float(raw.mean()))
            shifted = raw + (env.baseline_loss if cfg.center_rewards else 0.0)
            r = shifted * cfg.reward_scale
            vals = value.predict(env.states)
            adv = gae(r, vals, cfg.discount_gamma, cfg.gae_lambda)
            ret = discounted_returns(r, cfg.discount_gamma)
            rows = np.arange(env.n_points)
            chunks.append((env.states, acts, logp[rows, acts], adv, ret))
        states = np.concatenate([c[0] for c in chunks])
        actions = np.concatenate([c[1] for c in chunks])
        old_logp = np.concatenate([c[2] for c in chunks])
        adv = np.concatenate([c[3] for c in chunks])
        ret = np.concatenate([c[4] for c in chunks])
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = Batch(states, actions, old_logp, adv, ret)
        try:
            ppo_update(batch, policy, value, opt_p, opt_v, cfg, rng)
        except TrainingError:
            aborted = True
            trace.append(float(np.mean(raw_means)))
            break
        trace.append(float(np.mean(raw_means)))
        if progress is not None:
            progress(update, trace[-1])

    return PolicyCheckpoint(config_to_dict(cfg), policy.mlp.to_lists(),
                            value.mlp.to_lists(), trace, cfg.seed, aborted)


def train(clips, ppo_cfg: PpoConfig, litho_cfg, opc_cfg, metrics_cfg,
          progress=None) -> PolicyCheckpoint:
    """Build one environment per clip and run PPO."""
    envs = [OpcPointEnv(c, litho_cfg, opc_cfg, metrics_cfg, ppo_cfg) for c in clips]
    return train_envs(envs, ppo_cfg, progress)


def extract_movements(checkpoint: PolicyCheckpoint, clips, litho_cfg, opc_cfg,
                      metrics_cfg) -> dict:
    """Greedy (argmax) class per point; returns {clip_id: [MovementRecord]}."""
    policy, _, cfg = checkpoint.build_nets()
    out = {}
    for clip in clips:
        env = OpcPointEnv(clip, litho_cfg, opc_cfg, metrics_cfg, cfg)
        probs = policy.probs(env.states)
        classes = np.argmax(probs, axis=1) - cfg.c_classes
        records = []
        for pt, cls in zip(env.placed.points, classes):
            records.append(MovementRecord.from_offset(
                pt.id, pt.kind.value, float(cls) * cfg.step_nm, cfg.c_classes))
        out[clip.id] = records
    return out
