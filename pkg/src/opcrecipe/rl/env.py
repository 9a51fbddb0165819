"""The control-point placement environment.

One episode is a single clockwise pass over all control points of a clip,
one point per step.  An action picks one of the 2C+1 class offsets (so
stage-1 actions and stage-2 labels share one vocabulary), the point moves
tangentially by class * 40/C nm, the OPC engine re-runs, and the reward is
the negated OPC loss of the resulting state.

States never depend on earlier actions (geometry is the target layout and
each point is visited once at zero offset), so they are precomputed per clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import metrics, opc
from ..geometry import GeometryError, LayoutClip, PlacedClip, PointKind, place_control_points, rasterize
from ..litho import LithoConfig


class RlConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    discount_gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    c1: float = 0.5      # value-loss weight
    c2: float = 0.01     # entropy-bonus weight
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    minibatch_size: int = 64
    rollout_clips: int = 4
    updates: int = 40
    c_classes: int = 4   # C: intervals per direction; 2C+1 actions
    seed: int = 0
    hidden: tuple = (64, 64)
    window_px: int = 32
    window_pixel_nm: int = 8
    train_opc_iters: int = 8   # shortened engine run inside the reward
    reward_scale: float = 1e-3
    center_rewards: bool = True  # subtract the per-clip zero-offset loss
    zero_action_bias: float = 1.5  # policy-head prior toward the no-move class
    loss_floor: float = 1e6

    @property
    def step_nm(self) -> float:
        return 40.0 / self.c_classes

    @property
    def n_actions(self) -> int:
        return 2 * self.c_classes + 1

    def validate(self):
        problems = []
        if not (0.0 < self.discount_gamma <= 1.0):
            problems.append("discount_gamma must be in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            problems.append("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            problems.append("clip_eps must be positive")
        if self.c1 < 0 or self.c2 < 0:
            problems.append("c1 and c2 must be >= 0")
        if self.c_classes < 1:
            problems.append("c_classes must be >= 1")
        if abs(self.c_classes * self.step_nm - 40.0) > 1e-9:
            problems.append("C * step_nm must equal 40 nm")
        if self.updates < 1 or self.rollout_clips < 1:
            problems.append("updates and rollout_clips must be >= 1")
        if self.minibatch_size < 1 or self.epochs_per_update < 1:
            problems.append("minibatch_size and epochs_per_update must be >= 1")
        if problems:
            raise RlConfigError("; ".join(problems))
        return self


def encode_states(placed: PlacedClip, cfg: PpoConfig) -> np.ndarray:
    """Fixed-length encoding per point: a w*w raster window around the point
    plus (kind flag, edge orientation, normalized position, current offset)."""
    clip = placed.clip
    win_grid = rasterize(clip, cfg.window_pixel_nm).astype(np.float64)
    ny, nx = win_grid.shape
    w = cfg.window_px
    half = w // 2
    states = np.zeros((len(placed.points), w * w + 4), dtype=np.float64)
    for i, pt in enumerate(placed.points):
        x, y = placed.point_position(pt)
        cx = int(x / cfg.window_pixel_nm)
        cy = int(y / cfg.window_pixel_nm)
        window = np.zeros((w, w), dtype=np.float64)
        x0, y0 = cx - half, cy - half
        sx0, sy0 = max(0, x0), max(0, y0)
        sx1, sy1 = min(nx, x0 + w), min(ny, y0 + w)
        if sx0 < sx1 and sy0 < sy1:
            window[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = win_grid[sy0:sy1, sx0:sx1]
        states[i, :w * w] = window.ravel()
        states[i, w * w] = 1.0 if pt.kind is PointKind.EPE else 0.0
        states[i, w * w + 1] = 1.0 if placed.point_normal(pt)[0] != 0 else 0.0
        states[i, w * w + 2] = pt.position_arc / pt.edge_length_nm
        states[i, w * w + 3] = pt.tangential_offset_nm / 40.0
    return states


class OpcPointEnv:
    """Environment over one clip; deterministic given the clip and configs."""

    def __init__(self, clip: LayoutClip, litho_cfg: LithoConfig, opc_cfg: opc.OpcConfig,
                 metrics_cfg: metrics.MetricsConfig, ppo_cfg: PpoConfig):
        self.cfg = ppo_cfg.validate()
        self.litho_cfg = litho_cfg
        self.opc_cfg = replace(opc_cfg, max_iters=ppo_cfg.train_opc_iters)
        self.metrics_cfg = metrics_cfg
        self.placed = place_control_points(clip, opc_cfg.fragment_policy)
        self.states = encode_states(self.placed, ppo_cfg)
        self.n_points = len(self.placed.points)
        self.state_dim = self.states.shape[1]
        self._offsets = {}
        self._idx = 0
        self._baseline = None
        self._loss_cache = {}

    @property
    def baseline_loss(self) -> float:
        """OPC loss of the untouched placement (shortened engine run)."""
        if self._baseline is None:
            self._baseline = self._loss({})
        return self._baseline

    def _loss(self, offsets: dict) -> float:
        # the engine is a pure function of the nonzero offsets, so repeated
        # configurations (common once the policy favours class 0) are cached
        key = tuple(sorted((pid, off) for pid, off in offsets.items() if off != 0.0))
        hit = self._loss_cache.get(key)
        if hit is not None:
            return hit
        adjusted = self.placed.with_offsets(offsets)
        result = opc.run_opc(adjusted, self.litho_cfg, self.opc_cfg, self.metrics_cfg)
        if len(self._loss_cache) > 200000:
            self._loss_cache.clear()
        self._loss_cache[key] = result.loss.total
        return result.loss.total

    def reset(self) -> np.ndarray:
        self._offsets = {}
        self._idx = 0
        return self.states[0]

    def step(self, action_class: int):
        """Apply one class action to the current point; returns
        (next_state or None, reward, done)."""
        if not (-self.cfg.c_classes <= action_class <= self.cfg.c_classes):
            raise RlConfigError(f"action {action_class} outside +/-{self.cfg.c_classes}")
        pt = self.placed.points[self._idx]
        self._offsets[pt.id] = action_class * self.cfg.step_nm
        try:
            reward = -self._loss(self._offsets)
        except GeometryError:
            return None, -self.cfg.loss_floor, True
        self._idx += 1
        done = self._idx >= self.n_points
        nxt = None if done else self.states[self._idx]
        return nxt, reward, done

    def rollout(self, action_classes) -> np.ndarray:
        """Rewards for a full pass; equivalent to reset + step per point."""
        self.reset()
        rewards = np.empty(self.n_points, dtype=np.float64)
        for t, a in enumerate(action_classes):
            _, r, done = self.step(int(a))
            rewards[t] = r
            if done and t + 1 < self.n_points:
                rewards[t + 1:] = -self.cfg.loss_floor
                break
        return rewards
