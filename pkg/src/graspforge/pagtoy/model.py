"""Token-chain policy: autoregressive bbox/grasp heads + flow-matching field.

Decoding order is bounding-box tokens, then grasp tokens conditioned on
the realized bbox sequence, then an action chunk produced by integrating
a learned vector field from noise. Grounding samples supervise only the
bbox head; the grasp head and field receive exactly zero gradient there.

All forward/backward passes are hand-rolled numpy reverse-mode. Token
history enters the first layer as one-hot slot vectors, implemented as
row gathers into an embedding table (mathematically the same matmul).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NotSynthetic
from ..planner import ACTION_DIM, CHUNK_LEN, ActionChunk
from .tokens import N_BBOX_TOKENS, N_GRASP_TOKENS, DEFAULT_VOCAB


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    proprio_dim: int = 14
    vocab: int = DEFAULT_VOCAB
    embed_dim: int = 16
    hidden_dim: int = 32
    vf_hidden: int = 64
    n_bbox: int = N_BBOX_TOKENS
    n_grasp: int = N_GRASP_TOKENS
    chunk_len: int = CHUNK_LEN
    action_dim: int = ACTION_DIM
    init_scale: float = 0.1
    # pose-delta channels are millimeter scale; the flow head works in a
    # rescaled action space so targets are O(1) against unit noise
    action_scale: float = 50.0

    @property
    def flat_action_dim(self) -> int:
        return self.chunk_len * self.action_dim

    @property
    def context_dim(self) -> int:
        # continuous summary fed to the field: x, proprio, normalized tokens
        return self.feature_dim + self.proprio_dim + self.n_bbox + self.n_grasp

    @property
    def vf_input_dim(self) -> int:
        return self.flat_action_dim + 1 + self.context_dim


@dataclass(frozen=True)
class ToyObservation:
    features: np.ndarray
    proprio: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        p = np.asarray(self.proprio, dtype=np.float64)
        if not (np.isfinite(f).all() and np.isfinite(p).all()):
            raise ValueError("observation entries must be finite")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "proprio", p)


@dataclass(frozen=True)
class TrainingSample:
    observation: ToyObservation
    bbox_tokens: np.ndarray
    is_synthetic: bool
    grasp_tokens: np.ndarray | None = None
    action: np.ndarray | None = None  # flattened ground-truth chunk

    def __post_init__(self) -> None:
        object.__setattr__(self, "bbox_tokens", np.asarray(self.bbox_tokens, dtype=np.int64))
        if self.grasp_tokens is not None:
            object.__setattr__(self, "grasp_tokens", np.asarray(self.grasp_tokens, dtype=np.int64))
        if self.action is not None:
            object.__setattr__(self, "action", np.asarray(self.action, dtype=np.float64))
        if not self.is_synthetic and (self.grasp_tokens is not None or self.action is not None):
            raise ValueError("grounding samples carry neither grasp tokens nor actions")
        if self.is_synthetic and (self.grasp_tokens is None or self.action is None):
            raise ValueError("synthetic samples need grasp tokens and an action chunk")


@dataclass(frozen=True)
class FlowBatch:
    """One flow-matching draw: linear interpolant A_t = (1-t) A_0 + t eps."""

    a0: np.ndarray
    eps: np.ndarray
    t: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a0", np.asarray(self.a0, dtype=np.float64))
        object.__setattr__(self, "eps", np.asarray(self.eps, dtype=np.float64))

    @property
    def a_t(self) -> np.ndarray:
        return (1.0 - self.t) * self.a0 + self.t * self.eps

    @property
    def target_field(self) -> np.ndarray:
        return self.eps - self.a0

    @classmethod
    def draw(cls, a0: np.ndarray, rng: np.random.Generator) -> "FlowBatch":
        a0 = np.asarray(a0, dtype=np.float64)
        return cls(a0=a0, eps=rng.standard_normal(a0.shape), t=float(rng.uniform()))


_HEAD_PARAMS = ("We", "be", "W1e", "W1t", "b1", "W2", "b2")


class PagModel:
    """Parameter container plus forward/backward passes.

    params maps names like "bbox.W2" to float64 arrays. Output layers are
    zero-initialized: a fresh model emits exactly uniform token logits and
    a zero vector field.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]) -> None:
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator) -> "PagModel":
        c = config
        s = c.init_scale
        V, E, H = c.vocab, c.embed_dim, c.hidden_dim

        def rand(*shape):
            return rng.standard_normal(shape) * s

        params = {
            "bbox.We": rand(E, c.feature_dim),
            "bbox.be": np.zeros(E),
            "bbox.W1e": rand(H, E),
            "bbox.W1t": rand((c.n_bbox - 1) * V, H),
            "bbox.b1": np.zeros(H),
            "bbox.W2": np.zeros((V, H)),
            "bbox.b2": np.zeros(V),
            "grasp.We": rand(E, c.feature_dim + c.proprio_dim),
            "grasp.be": np.zeros(E),
            "grasp.W1e": rand(H, E),
            "grasp.W1t": rand((c.n_bbox + c.n_grasp - 1) * V, H),
            "grasp.b1": np.zeros(H),
            "grasp.W2": np.zeros((V, H)),
            "grasp.b2": np.zeros(V),
            "vf.W1": rand(c.vf_hidden, c.vf_input_dim),
            "vf.b1": np.zeros(c.vf_hidden),
            "vf.W2": np.zeros((c.flat_action_dim, c.vf_hidden)),
            "vf.b2": np.zeros(c.flat_action_dim),
        }
        return cls(config, params)

    def copy(self) -> "PagModel":
        return PagModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _scale_vector(self) -> np.ndarray:
        per_delta = np.full(self.config.action_dim, self.config.action_scale)
        per_delta[-1] = 1.0  # gripper command channel stays 0/1
        return np.tile(per_delta, self.config.chunk_len)

    def scale_action(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=np.float64) * self._scale_vector()

    def unscale_action(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=np.float64) / self._scale_vector()

    def head_param_names(self, head: str) -> list[str]:
        return [f"{head}.{p}" for p in _HEAD_PARAMS if f"{head}.{p}" in self.params]

    # -- token heads --------------------------------------------------------

    def _head_obs(self, head: str, obs: ToyObservation) -> np.ndarray:
        if head == "bbox":
            return obs.features
        return np.concatenate([obs.features, obs.proprio])

    def _history_rows(self, head: str, sample_tokens: tuple[np.ndarray, ...]) -> list[np.ndarray]:
        """Active embedding-table rows per autoregressive position."""
        V = self.config.vocab
        if head == "bbox":
            toks = sample_tokens[0]
            return [np.arange(i) * V + toks[:i] for i in range(len(toks))]
        bbox, grasp = sample_tokens
        base = np.arange(len(bbox)) * V + bbox
        return [
            np.concatenate([base, (len(bbox) + np.arange(j)) * V + grasp[:j]])
            for j in range(len(grasp))
        ]

    def _head_forward(self, head: str, obs_vec: np.ndarray, rows: list[np.ndarray]):
        p = self.params
        e = np.tanh(p[f"{head}.We"] @ obs_vec + p[f"{head}.be"])
        base = p[f"{head}.W1e"] @ e + p[f"{head}.b1"]
        z1 = np.stack([base + p[f"{head}.W1t"][r].sum(axis=0) for r in rows])
        h = np.tanh(z1)
        logits = h @ p[f"{head}.W2"].T + p[f"{head}.b2"]
        return logits, (e, h, obs_vec, rows)

    def _head_nll(self, head: str, obs_vec: np.ndarray, rows, targets: np.ndarray):
        logits, cache = self._head_forward(head, obs_vec, rows)
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        nll = float((lse - logits[np.arange(len(targets)), targets]).sum())
        return nll, logits, lse, cache

    def _head_backward(
        self, head: str, logits, lse, cache, targets, grads: dict[str, np.ndarray]
    ) -> None:
        e, h, obs_vec, rows = cache
        p = self.params
        dlogits = np.exp(logits - lse[:, None])
        dlogits[np.arange(len(targets)), targets] -= 1.0
        grads[f"{head}.W2"] += dlogits.T @ h
        grads[f"{head}.b2"] += dlogits.sum(axis=0)
        dz1 = (dlogits @ p[f"{head}.W2"]) * (1.0 - h * h)
        grads[f"{head}.b1"] += dz1.sum(axis=0)
        all_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        owner = np.concatenate([np.full(len(r), i) for i, r in enumerate(rows)]) if rows else []
        if len(all_rows):
            np.add.at(grads[f"{head}.W1t"], all_rows, dz1[owner])
        dz1_sum = dz1.sum(axis=0)
        grads[f"{head}.W1e"] += np.outer(dz1_sum, e)
        de = p[f"{head}.W1e"].T @ dz1_sum
        dze = de * (1.0 - e * e)
        grads[f"{head}.We"] += np.outer(dze, obs_vec)
        grads[f"{head}.be"] += dze

    # -- flow-matching field -------------------------------------------------

    def _field_context(self, obs: ToyObservation, bbox: np.ndarray, grasp: np.ndarray) -> np.ndarray:
        V = self.config.vocab
        return np.concatenate(
            [obs.features, obs.proprio, (bbox + 0.5) / V, (grasp + 0.5) / V]
        )

    def field(self, a_t: np.ndarray, t: float, context: np.ndarray):
        p = self.params
        x = np.concatenate([a_t, [t], context])
        h = np.tanh(p["vf.W1"] @ x + p["vf.b1"])
        v = p["vf.W2"] @ h + p["vf.b2"]
        return v, (x, h)

    def _field_backward(self, dv: np.ndarray, cache, grads: dict[str, np.ndarray]) -> None:
        x, h = cache
        grads["vf.W2"] += np.outer(dv, h)
        grads["vf.b2"] += dv
        dz = (self.params["vf.W2"].T @ dv) * (1.0 - h * h)
        grads["vf.W1"] += np.outer(dz, x)
        grads["vf.b1"] += dz


def loss_s2(model: PagModel, sample: TrainingSample) -> float:
    """Autoregressive NLL: bbox tokens always, grasp tokens when synthetic."""
    obs = sample.observation
    rows = model._history_rows("bbox", (sample.bbox_tokens,))
    nll, _, _, _ = model._head_nll("bbox", model._head_obs("bbox", obs), rows, sample.bbox_tokens)
    if sample.is_synthetic:
        rows = model._history_rows("grasp", (sample.bbox_tokens, sample.grasp_tokens))
        g_nll, _, _, _ = model._head_nll(
            "grasp", model._head_obs("grasp", obs), rows, sample.grasp_tokens
        )
        nll += g_nll
    return nll


def loss_s1(model: PagModel, sample: TrainingSample, batch: FlowBatch) -> float:
    """Squared field-matching error ||v_t(A_t, ctx) - (eps - A_0)||^2."""
    if not sample.is_synthetic:
        raise NotSynthetic("flow loss is defined for synthetic samples only")
    context = model._field_context(sample.observation, sample.bbox_tokens, sample.grasp_tokens)
    v, _ = model.field(batch.a_t, batch.t, context)
    res = v - batch.target_field
    return float(res @ res)


def total_loss(model: PagModel, sample: TrainingSample, batch: FlowBatch | None = None) -> float:
    loss = loss_s2(model, sample)
    if sample.is_synthetic:
        if batch is None:
            raise ValueError("synthetic samples need a FlowBatch")
        loss += loss_s1(model, sample, batch)
    return loss


def loss_terms_and_grad(
    model: PagModel, sample: TrainingSample, batch: FlowBatch | None = None
) -> tuple[float, float, dict[str, np.ndarray]]:
    """(L_S2, L_S1, gradient of their sum). L_S1 is 0 for grounding samples."""
    grads = model.zero_grads()
    obs = sample.observation
    rows = model._history_rows("bbox", (sample.bbox_tokens,))
    s2, logits, lse, cache = model._head_nll(
        "bbox", model._head_obs("bbox", obs), rows, sample.bbox_tokens
    )
    model._head_backward("bbox", logits, lse, cache, sample.bbox_tokens, grads)
    s1 = 0.0
    if sample.is_synthetic:
        if batch is None:
            raise ValueError("synthetic samples need a FlowBatch")
        rows = model._history_rows("grasp", (sample.bbox_tokens, sample.grasp_tokens))
        g_nll, logits, lse, cache = model._head_nll(
            "grasp", model._head_obs("grasp", obs), rows, sample.grasp_tokens
        )
        model._head_backward("grasp", logits, lse, cache, sample.grasp_tokens, grads)
        s2 += g_nll
        context = model._field_context(obs, sample.bbox_tokens, sample.grasp_tokens)
        v, fcache = model.field(batch.a_t, batch.t, context)
        res = v - batch.target_field
        s1 = float(res @ res)
        model._field_backward(2.0 * res, fcache, grads)
    return s2, s1, grads


def grad(
    model: PagModel, sample: TrainingSample, batch: FlowBatch | None = None
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of total_loss w.r.t. every parameter."""
    return loss_terms_and_grad(model, sample, batch)[2]


def decode_tokens(
    model: PagModel,
    observation: ToyObservation,
    bbox_override: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy autoregressive decode: bbox tokens first, then grasp tokens
    conditioned on the realized bbox sequence."""
    c = model.config
    if bbox_override is not None:
        bbox = np.asarray(bbox_override, dtype=np.int64)
    else:
        bbox = np.zeros(c.n_bbox, dtype=np.int64)
        obs_vec = model._head_obs("bbox", observation)
        for i in range(c.n_bbox):
            rows = [np.arange(i) * c.vocab + bbox[:i]]
            logits, _ = model._head_forward("bbox", obs_vec, rows)
            bbox[i] = int(np.argmax(logits[0]))
    grasp = np.zeros(c.n_grasp, dtype=np.int64)
    obs_vec = model._head_obs("grasp", observation)
    base = np.arange(c.n_bbox) * c.vocab + bbox
    for j in range(c.n_grasp):
        rows = [np.concatenate([base, (c.n_bbox + np.arange(j)) * c.vocab + grasp[:j]])]
        logits, _ = model._head_forward("grasp", obs_vec, rows)
        grasp[j] = int(np.argmax(logits[0]))
    return bbox, grasp


def sample_actions(
    model: PagModel,
    observation: ToyObservation,
    rng: np.random.Generator,
    integration_steps: int = 10,
) -> ActionChunk:
    """Full chain at inference: decode tokens, then Euler-integrate the field
    from t=1 (noise) to t=0 in integration_steps steps: A <- A - dt * v."""
    bbox, grasp = decode_tokens(model, observation)
    context = model._field_context(observation, bbox, grasp)
    a = rng.standard_normal(model.config.flat_action_dim)
    dt = 1.0 / integration_steps
    for k in range(integration_steps):
        t = 1.0 - k * dt
        v, _ = model.field(a, t, context)
        a = a - dt * v
    return ActionChunk.from_flat(model.unscale_action(a))
