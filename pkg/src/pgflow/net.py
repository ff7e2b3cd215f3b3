"""Flow function approximators and parameter-vector utilities.

``FlowNet`` is a float64 tanh MLP mapping a one-hot state encoding to one
log-flow per action; flows are ``exp`` of the clamped log-flows so they stay
positive. Backprop is written out by hand so gradients are exact (finite
differences agree to machine-level tolerance), which the training loops and
the theory diagnostics both rely on.

``TabularFlowNet`` exposes the same interface over a per-state lookup table;
it exists so exact flow solutions can be injected into the loss machinery.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

from .envs import GRID_WORLD, State, Task

LOG_FLOW_CLIP = 30.0


class NumericsError(ArithmeticError):
    """A forward or gradient computation produced a non-finite value."""


# -- parameter vectors -------------------------------------------------------

def _check_same_length(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"parameter length mismatch: {x.shape} vs {y.shape}")


def param_axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """a*x + y for flat parameter vectors."""
    _check_same_length(x, y)
    return a * x + y


def param_sub(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_same_length(x, y)
    return x - y


def param_scale(a: float, x: np.ndarray) -> np.ndarray:
    return a * x


def param_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


# -- state encoding ----------------------------------------------------------

def encode_state(task: Task, state: State) -> np.ndarray:
    """One-hot row + one-hot col (+ done bit for grid world), float64."""
    x = np.zeros(task.encode_dim)
    x[state.row] = 1.0
    x[task.rows + state.col] = 1.0
    if task.spec.env == GRID_WORLD:
        x[-1] = 1.0 if state.done else 0.0
    return x


def encoding_matrix(task: Task) -> np.ndarray:
    """Encodings of all reachable states, row i = task.states[i]; cached."""
    cached = getattr(task, "_encodings", None)
    if cached is None:
        cached = np.stack([encode_state(task, s) for s in task.states])
        task._encodings = cached
    return cached


def encode_states(task: Task, states: Sequence[State]) -> np.ndarray:
    mat = encoding_matrix(task)
    idx = [task.state_index[s] for s in states]
    return mat[idx]


# -- MLP flow net ------------------------------------------------------------

class FlowNet:
    """Tanh MLP over encoded states; output = per-action log flow, clamped."""

    activation = "tanh"

    def __init__(self, layer_sizes: Sequence[int], clip: float = LOG_FLOW_CLIP):
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.clip = float(clip)
        self._shapes = []
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            self._shapes.append(((n_in, n_out), (n_out,)))
        self.n_params = sum(n_in * n_out + n_out for (n_in, n_out), _ in self._shapes)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def init_params(self, seed: int) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer, seeded."""
        rng = np.random.default_rng(seed)
        chunks = []
        for (n_in, n_out), _ in self._shapes:
            bound = 1.0 / np.sqrt(n_in)
            chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
            chunks.append(rng.uniform(-bound, bound, size=n_out))
        return np.concatenate(chunks)

    def split(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat vector; no copies."""
        if params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got {params.shape}"
            )
        layers = []
        pos = 0
        for (n_in, n_out), _ in self._shapes:
            w = params[pos : pos + n_in * n_out].reshape(n_in, n_out)
            pos += n_in * n_out
            b = params[pos : pos + n_out]
            pos += n_out
            layers.append((w, b))
        return layers

    def _forward(self, params, x2d):
        acts = [x2d]
        layers = self.split(params)
        h = x2d
        for w, b in layers[:-1]:
            h = np.tanh(h @ w + b)
            acts.append(h)
        w, b = layers[-1]
        z = h @ w + b
        return acts, z

    def log_flows(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Clamped log flows; accepts a single encoding or a batch."""
        x2d = np.atleast_2d(np.asarray(x, dtype=np.float64))
        _, z = self._forward(params, x2d)
        out = np.clip(z, -self.clip, self.clip)
        if not np.all(np.isfinite(out)):
            self._raise_non_finite(params, x2d)
        return out if np.asarray(x).ndim == 2 else out[0]

    def edge_flows(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_flows(params, x))

    def backprop(
        self, params: np.ndarray, x: np.ndarray, cotangents: np.ndarray
    ) -> np.ndarray:
        """Exact gradient of <cotangents, log_flows(params, x)> w.r.t. params."""
        x2d = np.atleast_2d(np.asarray(x, dtype=np.float64))
        c2d = np.atleast_2d(np.asarray(cotangents, dtype=np.float64))
        if c2d.shape != (x2d.shape[0], self.out_dim):
            raise ValueError(f"cotangent shape {c2d.shape} mismatch")
        acts, z = self._forward(params, x2d)
        grad = np.empty(self.n_params)
        views = self.split(grad)
        # clamp saturates: no gradient outside the open clip interval
        g = c2d * (np.abs(z) < self.clip)
        layers = self.split(params)
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            gw, gb = views[li]
            gw[:] = acts[li].T @ g
            gb[:] = g.sum(axis=0)
            if li > 0:
                g = (g @ w.T) * (1.0 - acts[li] ** 2)
        if not np.all(np.isfinite(grad)):
            raise NumericsError("non-finite gradient")
        return grad

    def _raise_non_finite(self, params, x2d):
        h = x2d
        layers = self.split(params)
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if not np.all(np.isfinite(h)):
                raise NumericsError(f"non-finite output at layer {i}")
            if i < len(layers) - 1:
                h = np.tanh(h)
        raise NumericsError("non-finite output")

    # objective-facing helpers (shared interface with TabularFlowNet)

    def flows_for(self, task: Task, params: np.ndarray, state_idx) -> np.ndarray:
        """Edge flows at task states given by index; (n, action_count)."""
        x = encoding_matrix(task)[state_idx]
        return np.exp(self.log_flows(params, x))

    def log_grad_for(self, task, params, state_idx, cotangents) -> np.ndarray:
        x = encoding_matrix(task)[state_idx]
        return self.backprop(params, x, cotangents)

    def header(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "clip": self.clip,
        }


def net_for_task(task: Task, hidden: Sequence[int]) -> FlowNet:
    """MLP sized to a task: one-hot input width, one output per action."""
    return FlowNet([task.encode_dim, *hidden, task.action_count])


class TabularFlowNet:
    """Lookup-table flow function over a task's reachable states.

    Parameters are the flat table of log flows, one row per reachable state;
    entries for invalid actions are ignored by the loss machinery.
    """

    activation = "table"

    def __init__(self, task: Task):
        self.task = task
        self.n_states = len(task.states)
        self.out_dim = task.action_count
        self.n_params = self.n_states * self.out_dim

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.0, 1.0, size=self.n_params)

    def params_from_flows(self, flows: dict[tuple[State, int], float]) -> np.ndarray:
        """Flat log-flow table matching an edge-flow map; unset entries = 0."""
        table = np.zeros((self.n_states, self.out_dim))
        for (state, action), value in flows.items():
            if value <= 0:
                raise ValueError(f"flow must be positive at {(state, action)}")
            table[self.task.state_index[state], action] = np.log(value)
        return table.ravel()

    def flows_for(self, task: Task, params: np.ndarray, state_idx) -> np.ndarray:
        table = params.reshape(self.n_states, self.out_dim)
        return np.exp(table[state_idx])

    def log_grad_for(self, task, params, state_idx, cotangents) -> np.ndarray:
        grad = np.zeros((self.n_states, self.out_dim))
        np.add.at(grad, state_idx, cotangents)
        return grad.ravel()


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"PGFLOWN1"


def save_checkpoint(path, net: FlowNet, params: np.ndarray, seed: int | None = None):
    """Header + raw little-endian float64 payload; round-trips bit-exactly."""
    header = net.header()
    header["seed"] = seed
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(params, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a flow net checkpoint")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    expected = FlowNet(header["layer_sizes"], header.get("clip", LOG_FLOW_CLIP))
    if params.shape[0] != expected.n_params:
        raise ValueError(
            f"checkpoint payload has {params.shape[0]} values,"
            f" header implies {expected.n_params}"
        )
    return header, params


def net_from_header(header: dict) -> FlowNet:
    return FlowNet(header["layer_sizes"], header.get("clip", LOG_FLOW_CLIP))
