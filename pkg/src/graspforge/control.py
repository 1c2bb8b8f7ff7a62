"""Non-blocking command shaping: cascaded low-pass filter, positional
interpolation, receding-horizon chunk merging.

Three identical first-order sections in series give a step response with
no overshoot and a cubed (hence strongly suppressed) initial sample,
while a single-slot latest-wins mailbox keeps the control loop from ever
blocking on the policy.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Pose
from .planner import ActionChunk, apply_delta

DEFAULT_SAMPLE_RATE = 1000.0
DEFAULT_CUTOFF = 10.0


@dataclass
class CascadedFilter:
    """Three identical first-order low-pass sections in series.

    Each section steps y <- y + alpha (u - y) with alpha = dt / (tau + dt),
    tau = 1 / (2 pi cutoff). State seeds to the first target unless
    from_rest is set, so constant inputs pass through unchanged.
    """

    cutoff: float = DEFAULT_CUTOFF
    sample_rate: float = DEFAULT_SAMPLE_RATE
    from_rest: bool = False
    state: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.cutoff < self.sample_rate / 2.0:
            raise ValueError("need 0 < cutoff < sample_rate / 2")

    @property
    def tau(self) -> float:
        return 1.0 / (2.0 * np.pi * self.cutoff)

    @property
    def alpha(self) -> float:
        dt = 1.0 / self.sample_rate
        return dt / (self.tau + dt)

    def reset(self, value=None) -> None:
        self.state = None if value is None else np.broadcast_to(
            np.asarray(value, dtype=np.float64), (3,) + np.shape(value)
        ).copy()

    def step(self, target) -> np.ndarray | float:
        target = np.asarray(target, dtype=np.float64)
        if self.state is None:
            seed = np.zeros_like(target) if self.from_rest else target
            self.state = np.stack([seed, seed, seed]).astype(np.float64)
        a = self.alpha
        u = target
        for i in range(3):
            self.state[i] = self.state[i] + a * (u - self.state[i])
            u = self.state[i]
        out = self.state[2]
        return float(out) if out.ndim == 0 else out.copy()


def filter_step(filt: CascadedFilter, target) -> np.ndarray | float:
    return filt.step(target)


def step_response(filt: CascadedFilter, n_samples: int) -> np.ndarray:
    """Unit-step response of a freshly-initialized (from rest) filter."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    fresh = CascadedFilter(cutoff=filt.cutoff, sample_rate=filt.sample_rate, from_rest=True)
    return np.array([fresh.step(1.0) for _ in range(n_samples)])


def single_section_step_response(cutoff: float, sample_rate: float, n_samples: int) -> np.ndarray:
    dt = 1.0 / sample_rate
    alpha = dt / (1.0 / (2.0 * np.pi * cutoff) + dt)
    out = np.empty(n_samples)
    y = 0.0
    for i in range(n_samples):
        y += alpha * (1.0 - y)
        out[i] = y
    return out


def comparison_step_responses(
    cutoff: float = DEFAULT_CUTOFF,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    n_samples: int = 2000,
) -> dict[str, np.ndarray]:
    """Step-response traces for the filter-demo CSV: the cascade, a single
    first-order section, and third-order Butterworth/Chebyshev-II/Bessel
    references at the same cutoff."""
    from scipy import signal

    traces = {
        "cascade_first_order_x3": step_response(
            CascadedFilter(cutoff=cutoff, sample_rate=sample_rate), n_samples
        ),
        "first_order": single_section_step_response(cutoff, sample_rate, n_samples),
    }
    step = np.ones(n_samples)
    wn = cutoff / (sample_rate / 2.0)
    for name, (b, a) in (
        ("butterworth_3", signal.butter(3, wn)),
        ("chebyshev2_3", signal.cheby2(3, 40.0, wn)),
        ("bessel_3", signal.bessel(3, wn)),
    ):
        traces[name] = signal.lfilter(b, a, step)
    return traces


# ---------------------------------------------------------------------------
# positional interpolation

def _path_positions(path: list[Pose]) -> np.ndarray:
    return np.stack([p.position for p in path])


def _nearest_arc_length(positions: np.ndarray, point: np.ndarray) -> float:
    """Arc length along the polyline of the point's nearest on-path location."""
    if len(positions) == 1:
        return 0.0
    seg = positions[1:] - positions[:-1]
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    best_d2 = np.inf
    best_s = 0.0
    for i in range(len(seg)):
        if seg_len[i] < 1e-12:
            proj = positions[i]
            frac = 0.0
        else:
            frac = float(np.clip(np.dot(point - positions[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0))
            proj = positions[i] + frac * seg[i]
        d2 = float(np.dot(point - proj, point - proj))
        if d2 < best_d2 - 1e-15:
            best_d2 = d2
            best_s = cum[i] + frac * seg_len[i]
    return best_s


def _pose_at_arc_length(path: list[Pose], s: float) -> Pose:
    positions = _path_positions(path)
    seg = positions[1:] - positions[:-1]
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = float(np.clip(s, 0.0, cum[-1]))
    i = int(np.searchsorted(cum[1:], s, side="right"))
    i = min(i, len(seg) - 1) if len(seg) else 0
    if not len(seg) or seg_len[i] < 1e-12:
        return path[min(i, len(path) - 1)]
    frac = (s - cum[i]) / seg_len[i]
    return Pose(
        positions[i] + frac * seg[i],
        geometry.quat_slerp(path[i].orientation, path[i + 1].orientation, frac),
    )


def interpolate_positional(current: Pose, path: list[Pose], max_step: float) -> Pose:
    """Next setpoint: advance at most max_step of arc length beyond the
    on-path point nearest to the current pose.

    Progress is governed by attained position, not time: a stalled
    controller holds the same setpoint instead of running ahead.
    """
    if not path:
        raise ValueError("path must be non-empty")
    if max_step <= 0.0:
        raise ValueError("max_step must be positive")
    positions = _path_positions(path)
    if len(path) == 1:
        return path[0]
    total = float(np.linalg.norm(positions[1:] - positions[:-1], axis=1).sum())
    s = _nearest_arc_length(positions, current.position)
    return _pose_at_arc_length(path, min(s + max_step, total))


# ---------------------------------------------------------------------------
# receding-horizon merging

@dataclass
class CommandStream:
    """Pending commanded path for one control loop, fed by chunk merges."""

    anchor: Pose
    max_step: float = 0.05
    pending: list[Pose] = field(default_factory=list)
    playhead: int = 0

    def committed_tail(self, latency_steps: int) -> Pose:
        if latency_steps <= 0 or not self.pending:
            return self.anchor
        return self.pending[min(latency_steps, len(self.pending)) - 1]

    def full_path(self) -> list[Pose]:
        return [self.anchor] + self.pending

    def next_setpoint(self, current: Pose) -> Pose:
        return interpolate_positional(current, self.full_path(), self.max_step)


def chunk_to_path(start: Pose, chunk: ActionChunk) -> list[Pose]:
    poses = []
    pose = start
    for delta in chunk.deltas:
        pose = apply_delta(pose, delta)
        poses.append(pose)
    return poses


def receding_merge(
    stream: CommandStream, new_chunk: ActionChunk, latency_steps: int
) -> CommandStream:
    """Keep the already-committed first latency_steps of the pending path and
    splice the new chunk on, re-anchored at the retained tail pose."""
    if latency_steps < 0:
        raise ValueError("latency_steps must be >= 0")
    retained = stream.pending[: min(latency_steps, len(stream.pending))]
    tail = retained[-1] if retained else stream.anchor
    stream.pending = retained + chunk_to_path(tail, new_chunk)
    return stream


class ChunkMailbox:
    """Single-slot latest-wins handoff from the policy to the control loop."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._chunk: ActionChunk | None = None

    def offer(self, chunk: ActionChunk) -> None:
        with self._lock:
            self._chunk = chunk

    def take(self) -> ActionChunk | None:
        with self._lock:
            chunk, self._chunk = self._chunk, None
            return chunk
