"""Recurrent fusion-weight network: encoding, forward pass, checkpoints.

Each sensor node carries a small network that maps the information
contributions exchanged at one time step to fusion weight matrices:

    input (m + m^2) * N  ->  FC + ReLU  ->  GRU  ->  FC + ReLU  ->  FC  ->  m^2 * N

Contributions are lifted into the global state dimension with the node
transforms (zero-padded placement), non-communicating sensors' slots are
all-zero, and the output is read as one m-by-m weight block per sensor.
The hidden state is reset at every trajectory start.

Checkpoints are versioned little-endian binaries (magic ``DIFN``) holding
the layer sizes and the parameter arrays in declaration order as float64,
with a sidecar JSON manifest for config and seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrayops as ao
from .distribution import CommunicationGraph
from .filters import FusionWeightSet, InfoContribution

__all__ = [
    "NetworkDims",
    "DifnetModel",
    "PARAM_KEYS",
    "default_dims",
    "init_model",
    "gru_cell",
    "encode_inputs",
    "encode_inputs_raw",
    "forward",
    "forward_raw",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"DIFN"
FORMAT_VERSION = 1

# Declaration order of every trainable array; checkpoints and optimizer
# state rely on this ordering.
PARAM_KEYS = (
    "w_in", "b_in",
    "w_z", "u_z", "b_z",
    "w_r", "u_r", "b_r",
    "w_h", "u_h", "b_h",
    "w_mid", "b_mid",
    "w_out", "b_out",
)


@dataclass(frozen=True)
class NetworkDims:
    """Layer sizes; hidden widths default to integer multiples of m^2."""

    m: int
    n_sensors: int
    h1: int
    h2: int
    h3: int

    @property
    def input_dim(self) -> int:
        return (self.m + self.m * self.m) * self.n_sensors

    @property
    def output_dim(self) -> int:
        return self.m * self.m * self.n_sensors

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "w_in": (self.input_dim, self.h1),
            "b_in": (self.h1,),
            "w_z": (self.h1, self.h2),
            "u_z": (self.h2, self.h2),
            "b_z": (self.h2,),
            "w_r": (self.h1, self.h2),
            "u_r": (self.h2, self.h2),
            "b_r": (self.h2,),
            "w_h": (self.h1, self.h2),
            "u_h": (self.h2, self.h2),
            "b_h": (self.h2,),
            "w_mid": (self.h2, self.h3),
            "b_mid": (self.h3,),
            "w_out": (self.h3, self.output_dim),
            "b_out": (self.output_dim,),
        }


def default_dims(m: int, n_sensors: int, width_factor: int = 2) -> NetworkDims:
    h = width_factor * m * m
    return NetworkDims(m=m, n_sensors=n_sensors, h1=h, h2=h, h3=h)


@dataclass(eq=False)
class DifnetModel:
    """Parameters plus the recurrent hidden state of one node's network."""

    dims: NetworkDims
    params: dict[str, np.ndarray]
    hidden: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = np.zeros(self.dims.h2)

    def reset_hidden(self) -> None:
        self.hidden = np.zeros(self.dims.h2)

    def copy(self) -> "DifnetModel":
        return DifnetModel(
            self.dims,
            {k: np.array(v) for k, v in self.params.items()},
            np.array(self.hidden),
        )


def init_model(
    dims: NetworkDims,
    seed: int,
    out_scale: float = 0.01,
    identity_bias: bool = True,
) -> DifnetModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.

    The output layer is scaled down by ``out_scale`` and, with
    ``identity_bias``, its bias starts at the flattened identity weight per
    sensor slot.  The untrained network then behaves like the (stable)
    identity-weight fusion instead of starving every node of information:
    a near-zero output layer leaves the filters prediction-only, whose
    covariance grows polynomially and makes early training hopeless.
    """
    rng = np.random.default_rng(seed)
    fan_in = {
        "w_in": dims.input_dim, "b_in": dims.input_dim,
        "w_z": dims.h1, "u_z": dims.h2, "b_z": dims.h2,
        "w_r": dims.h1, "u_r": dims.h2, "b_r": dims.h2,
        "w_h": dims.h1, "u_h": dims.h2, "b_h": dims.h2,
        "w_mid": dims.h2, "b_mid": dims.h2,
        "w_out": dims.h3, "b_out": dims.h3,
    }
    params = {}
    for key, shape in dims.param_shapes().items():
        bound = 1.0 / np.sqrt(fan_in[key])
        values = rng.uniform(-bound, bound, size=shape)
        if key in ("w_out", "b_out"):
            values = values * out_scale
        params[key] = values
    if identity_bias:
        eye = np.eye(dims.m).reshape(-1)
        params["b_out"] = params["b_out"] + np.tile(eye, dims.n_sensors)
    return DifnetModel(dims, params)


# ---------------------------------------------------------------------------
# Forward pass


def gru_cell(params: dict, u, h):
    """Standard gated recurrent unit step (row convention, batched).

    z = sigmoid(u W_z + h U_z + b_z); r likewise; candidate uses r (*) h;
    new hidden is (1 - z) (*) h + z (*) candidate.
    """
    z = _sigmoid(u @ params["w_z"] + h @ params["u_z"] + params["b_z"])
    r = _sigmoid(u @ params["w_r"] + h @ params["u_r"] + params["b_r"])
    cand = _tanh(u @ params["w_h"] + (r * h) @ params["u_h"] + params["b_h"])
    return (1.0 - z) * h + z * cand


def _sigmoid(x):
    if isinstance(x, np.ndarray):
        return 1.0 / (1.0 + np.exp(-x))
    return x.sigmoid()


def _tanh(x):
    if isinstance(x, np.ndarray):
        return np.tanh(x)
    return x.tanh()


def _relu(x):
    if isinstance(x, np.ndarray):
        return np.maximum(x, 0.0)
    return x.relu()


def forward_raw(dims: NetworkDims, params: dict, x, hidden):
    """FC+ReLU -> GRU -> FC+ReLU -> FC; returns (flat output, new hidden)."""
    a = _relu(x @ params["w_in"] + params["b_in"])
    hidden = gru_cell(params, a, hidden)
    a = _relu(hidden @ params["w_mid"] + params["b_mid"])
    out = a @ params["w_out"] + params["b_out"]
    return out, hidden


def encode_inputs_raw(contributions: dict, graph: CommunicationGraph, node_id: int):
    """Batched input vector for one node: per-sensor slots ordered by id.

    ``contributions[j]`` is ``(i_vec (..., m_j, 1), i_mat (..., m_j, m_j))``.
    Each is lifted to the global dimension with ``T_j^T (.) T_j`` placement
    and flattened row-major; sensors the node does not communicate with get
    all-zero slots.
    """
    visible = set(graph.neighbors(node_id)) | {node_id}
    m = graph.transform(node_id).m_global
    slots = []
    batch_shape = None
    for j in graph.sensor_ids:
        if j in visible and j in contributions:
            t = graph.transform(j).matrix
            i_vec, i_mat = contributions[j]
            lifted_vec = t.T @ i_vec
            lifted_mat = t.T @ i_mat @ t
            batch_shape = tuple(ao.asvalue(lifted_vec).shape[:-2])
            slots.append(lifted_vec.reshape(batch_shape + (m,)))
            slots.append(lifted_mat.reshape(batch_shape + (m * m,)))
        else:
            slots.append(None)
    if batch_shape is None:
        raise ValueError("no contributions available for encoding")
    filled = [
        s if s is not None else np.zeros(batch_shape + (m + m * m,)) for s in slots
    ]
    return ao.concat(filled, axis=-1)


# ---------------------------------------------------------------------------
# Public single-step API


def encode_inputs(
    contributions: dict[int, InfoContribution],
    graph: CommunicationGraph,
    node_id: int,
) -> np.ndarray:
    """Flat network input for one node from per-sensor contributions."""
    raw = {
        j: (np.asarray(c.i_vec, dtype=float)[:, None], np.asarray(c.i_mat, dtype=float))
        for j, c in contributions.items()
    }
    return encode_inputs_raw(raw, graph, node_id)


def forward(model: DifnetModel, input_vec) -> tuple[FusionWeightSet, np.ndarray]:
    """One recurrent step; returns global m-by-m weights per sensor slot.

    Advances (and stores) the model's hidden state.
    """
    x = np.asarray(input_vec, dtype=float)
    out, hidden = forward_raw(model.dims, model.params, x, model.hidden)
    m = model.dims.m
    weights = {}
    for pos in range(model.dims.n_sensors):
        block = out[..., pos * m * m : (pos + 1) * m * m]
        weights[pos + 1] = block.reshape(block.shape[:-1] + (m, m))
    model.hidden = hidden
    return FusionWeightSet(weights, source="learned"), hidden


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, model: DifnetModel, manifest: dict | None = None) -> None:
    """Write the binary checkpoint plus its sidecar JSON manifest."""
    path = Path(path)
    dims = model.dims
    header = struct.pack(
        "<4sIIIIII",
        MAGIC,
        FORMAT_VERSION,
        dims.m,
        dims.n_sensors,
        dims.h1,
        dims.h2,
        dims.h3,
    )
    chunks = [header]
    for key in PARAM_KEYS:
        arr = np.ascontiguousarray(ao.asvalue(model.params[key]), dtype="<f8")
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))
    sidecar = path.with_suffix(".manifest.json")
    sidecar.write_text(json.dumps(manifest or {}, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[DifnetModel, dict]:
    """Read a checkpoint; returns (model, manifest)."""
    path = Path(path)
    raw = path.read_bytes()
    head = struct.calcsize("<4sIIIIII")
    magic, version, m, n, h1, h2, h3 = struct.unpack("<4sIIIIII", raw[:head])
    if magic != MAGIC:
        raise ValueError(f"{path} is not a DIFN checkpoint")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    dims = NetworkDims(m=m, n_sensors=n, h1=h1, h2=h2, h3=h3)
    params = {}
    offset = head
    for key, shape in dims.param_shapes().items():
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params[key] = arr.reshape(shape).astype(float)
        offset += count * 8
    if offset != len(raw):
        raise ValueError(f"{path} has trailing bytes; damaged checkpoint?")
    sidecar = path.with_suffix(".manifest.json")
    manifest = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return DifnetModel(dims, params), manifest
