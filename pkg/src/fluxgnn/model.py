"""Learnable graph simulator with conservative flux-split message passing.

The network is an encode-process-decode pipeline on a fixed graph.  Each
processor layer turns bidirectional edge features into an antisymmetric
("conservative") component, whose global sum telescopes to zero, plus an
optional learned symmetric component modelling sources and dissipation.  A
latent time filter combines the per-layer node states as a normalized
convolution over the layer axis, mimicking multi-stage time integration.

Training runs in float32; verification oracles re-instantiate the model in
float64.  Edge aggregation uses ``index_add`` in fixed edge order, so results
are reproducible on CPU.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .meshes import NODE_TYPE_COUNT, MeshGraph, compute_edge_geometry, reverse_edge_index

CHECKPOINT_VERSION = 1
VARIANTS = ("full", "minus", "star")
ALPHA_SUM_GUARD = 1e-6
DECODER_INIT_SCALE = 0.05


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint file."""


@dataclass
class ModelConfig:
    """Architecture description; every field is needed to rebuild the model."""

    state_channels: int = 2
    space_dim: int = 2
    latent_width: int = 128
    layers: int = 4
    mlp_hidden_layers: int = 2
    variant: str = "full"
    time_block: bool = True
    global_features: bool = False

    def __post_init__(self):
        if self.layers < 1 or self.latent_width < 1:
            raise ValueError("layers and latent_width must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class GraphTensors:
    """A mesh graph lowered to torch tensors, ready for the model.

    node_static: positions followed by the 4-way node-type one-hot.
    edge_static: relative position, length, and the two direction angles.
    """

    edges: torch.Tensor
    reverse: torch.Tensor
    node_static: torch.Tensor
    edge_static: torch.Tensor
    ghost_idx: torch.Tensor
    ghost_src: torch.Tensor
    dirichlet_idx: torch.Tensor
    n_nodes: int
    n_real: int

    @property
    def senders(self) -> torch.Tensor:
        return self.edges[:, 0]

    @property
    def receivers(self) -> torch.Tensor:
        return self.edges[:, 1]


def graph_tensors(graph: MeshGraph, dtype: torch.dtype = torch.float32) -> GraphTensors:
    """Lower a MeshGraph plus its geometry into model-ready tensors."""
    geo = compute_edge_geometry(graph)
    rev = reverse_edge_index(graph)
    onehot = np.eye(NODE_TYPE_COUNT, dtype=np.float64)[graph.node_type]
    node_static = np.concatenate([graph.positions, onehot], axis=1)
    edge_static = np.concatenate(
        [geo.rel_pos, geo.distance[:, None], geo.angle_x[:, None], geo.angle_y[:, None]],
        axis=1,
    )
    from .meshes import NODE_DIRICHLET  # local import to keep module top tidy

    dirichlet = np.flatnonzero(graph.node_type == NODE_DIRICHLET)
    return GraphTensors(
        edges=torch.from_numpy(graph.edges.copy()),
        reverse=torch.from_numpy(rev.copy()),
        node_static=torch.from_numpy(node_static).to(dtype),
        edge_static=torch.from_numpy(edge_static).to(dtype),
        ghost_idx=torch.from_numpy(graph.ghost_map[:, 0].copy()),
        ghost_src=torch.from_numpy(graph.ghost_map[:, 1].copy()),
        dirichlet_idx=torch.from_numpy(dirichlet),
        n_nodes=graph.n_nodes,
        n_real=graph.n_real_nodes,
    )


class MLP(nn.Module):
    """Hidden GELU layers, linear output, optional layer normalization on top."""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int,
                 n_hidden: int = 2, layer_norm: bool = True):
        super().__init__()
        layers = []
        width = in_dim
        for _ in range(n_hidden):
            layers += [nn.Linear(width, hidden_dim), nn.GELU()]
            width = hidden_dim
        layers.append(nn.Linear(width, out_dim))
        self.net = nn.Sequential(*layers)
        self.norm = nn.LayerNorm(out_dim) if layer_norm else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.net(x)
        return self.norm(y) if self.norm is not None else y


class FluxSplitLayer(nn.Module):
    """One message-passing layer with antisymmetric/symmetric edge updates.

    For each directed edge (i, j) with intermediate feature e*_ij:

        e_ij' = (e*_ji - w . e*_ij) + flux(e*_ji + e*_ij)

    The first branch flips sign under edge reversal whenever w == 1, so its
    sum over the whole graph cancels pairwise; the second branch is invariant
    under reversal and models non-conserved effects.  Node i then aggregates
    e_ij' over its incident edges.
    """

    def __init__(self, width: int, mlp_hidden_layers: int,
                 use_flux: bool, trainable_gate: bool, global_features: bool):
        super().__init__()
        extra = width if global_features else 0
        self.edge_mlp = MLP(3 * width + extra, width, width, mlp_hidden_layers)
        self.node_mlp = MLP(2 * width + extra, width, width, mlp_hidden_layers)
        self.flux_mlp = MLP(width, width, width, mlp_hidden_layers) if use_flux else None
        self.gate = nn.Parameter(torch.ones(width), requires_grad=trainable_gate)
        self.global_features = global_features

    def forward(self, h, e, gt: GraphTensors, g=None, collect=False):
        send, recv = gt.senders, gt.receivers
        parts = [h[send], h[recv], e]
        if self.global_features:
            parts.append(g.expand(e.shape[0], -1))
        e_star = self.edge_mlp(torch.cat(parts, dim=1))
        e_rev = e_star[gt.reverse]
        msg = e_rev - self.gate * e_star
        if self.flux_mlp is not None:
            msg = msg + self.flux_mlp(e_rev + e_star)
        agg = torch.zeros(gt.n_nodes, h.shape[1], dtype=h.dtype, device=h.device)
        agg = agg.index_add(0, send, msg)
        node_parts = [h, agg]
        if self.global_features:
            node_parts.append(g.expand(h.shape[0], -1))
        h_new = self.node_mlp(torch.cat(node_parts, dim=1)) + h
        internals = {"e_star": e_star, "message": msg} if collect else None
        return h_new, msg, internals


class TimeFilter(nn.Module):
    """Trainable 1D convolution over the layer axis with weights summing to one.

    The raw weights are renormalized on every forward pass, so the filtered
    state is an affine combination of the stacked per-layer states: if all of
    them are equal the output equals them exactly, whatever the weights.
    """

    def __init__(self, n_states: int):
        super().__init__()
        self.alpha = nn.Parameter(torch.full((n_states,), 1.0 / n_states))

    def normalized_weights(self) -> torch.Tensor:
        total = self.alpha.sum()
        if torch.abs(total) < ALPHA_SUM_GUARD:
            warnings.warn("time-filter weights sum collapsed; reinitializing to uniform")
            with torch.no_grad():
                self.alpha.fill_(1.0 / self.alpha.numel())
            total = self.alpha.sum()
        return self.alpha / total

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        # stack: (n_states, N, width)
        return torch.einsum("l,lnc->nc", self.normalized_weights(), stack)


class GraphSimulator(nn.Module):
    """Encode-process-decode next-step predictor on a fixed graph.

    Consumes and produces *normalized* state arrays of shape (N, d); the
    prediction is the decoded latent increment added onto the input state.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, d, m = config.latent_width, config.state_channels, config.space_dim
        nh = config.mlp_hidden_layers
        self.node_encoder = MLP(d + m + NODE_TYPE_COUNT, c, c, nh)
        self.edge_encoder = MLP(m + 3, c, c, nh)
        use_flux = config.variant == "full"
        trainable_gate = config.variant == "star"
        self.layers = nn.ModuleList(
            FluxSplitLayer(c, nh, use_flux, trainable_gate, config.global_features)
            for _ in range(config.layers)
        )
        if config.time_block:
            self.betas = nn.Parameter(torch.ones(config.layers))
            self.time_filter = TimeFilter(config.layers + 1)
        else:
            self.betas = None
            self.time_filter = None
        if config.global_features:
            self.global_mlp = MLP(3 * c, c, c, nh)
        self.decoder = MLP(c, d, c, nh, layer_norm=False)
        # near-identity start: the prediction is state + decoded increment, so a
        # small decoder output lets training refine increments from step one
        # instead of first unlearning large random residuals
        with torch.no_grad():
            last = self.decoder.net[-1]
            last.weight.mul_(DECODER_INIT_SCALE)
            last.bias.mul_(DECODER_INIT_SCALE)

    def encode(self, gt: GraphTensors, state: torch.Tensor):
        """Lift physical node state and edge geometry into latent features."""
        h0 = self.node_encoder(torch.cat([state, gt.node_static], dim=1))
        e0 = self.edge_encoder(gt.edge_static)
        return h0, e0

    def forward_step(self, gt: GraphTensors, state: torch.Tensor,
                     collect_internals: bool = False):
        """Predict the next normalized state; optionally keep layer internals."""
        h0, e = self.encode(gt, state)
        c = self.config.latent_width
        g = state.new_zeros(c) if self.config.global_features else None
        stack = [h0]
        internals = []
        h = h0
        for idx, layer in enumerate(self.layers):
            if self.time_block_enabled:
                h_in = h0 + self.betas[idx] * (h - h0)
            else:
                h_in = h
            h, e, layer_info = layer(h_in, e, gt, g, collect=collect_internals)
            if self.config.global_features:
                g = self.global_mlp(torch.cat([g, h.sum(0), e.sum(0)]))
            stack.append(h)
            if collect_internals:
                internals.append(layer_info)
        if self.time_block_enabled:
            h_final = self.time_filter(torch.stack(stack))
        else:
            h_final = h
        prediction = self.decoder(h_final) + state
        if collect_internals:
            return prediction, internals
        return prediction

    @property
    def time_block_enabled(self) -> bool:
        return self.time_filter is not None

    def rollout(self, gt: GraphTensors, state: torch.Tensor, steps: int,
                pad_fn=None) -> torch.Tensor:
        """Autoregressive multi-step prediction; each output feeds the next step.

        ``pad_fn`` (boundary handling) is applied to every prediction before
        it is recorded and fed back.  Raises on non-finite predictions, naming
        the failing step.
        """
        if steps < 1:
            raise ValueError("rollout needs at least one step")
        outputs = []
        for k in range(steps):
            state = self.forward_step(gt, state)
            if not torch.isfinite(state).all():
                raise RuntimeError(f"non-finite prediction at rollout step {k + 1}")
            if pad_fn is not None:
                state = pad_fn(state)
            outputs.append(state)
        return torch.stack(outputs)

    def parameter_groups(self) -> dict:
        """Named parameter tensors, in registration (checkpoint) order."""
        return dict(self.named_parameters())


def build_model(config: ModelConfig) -> GraphSimulator:
    """Construct the requested variant.

    full  - antisymmetric + learned symmetric branch, edge gate frozen at 1
    minus - antisymmetric branch only, edge gate frozen at 1
    star  - antisymmetric branch only, edge gate trainable (initialized at 1)
    """
    return GraphSimulator(config)


def parameter_count(model: GraphSimulator, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters()
               if p.requires_grad or not trainable_only)


# --- checkpoint container ----------------------------------------------------
#
# JSON header line {version, config, step, metrics, params:[{name, shape}]}
# followed by the named parameter blocks as little-endian float32 in header
# order.

def save_checkpoint(path, model: GraphSimulator, step: int = 0,
                    metrics: dict | None = None, extra: dict | None = None) -> None:
    params = list(model.named_parameters())
    header = {
        "format": "fluxgnn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "step": int(step),
        "metrics": metrics or {},
        "extra": extra or {},
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for _, p in params:
            fh.write(p.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path):
    """Rebuild (model, step, metrics, extra) from a checkpoint file."""
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
        if header.get("format") != "fluxgnn-checkpoint":
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
        payload = fh.read()
    config = ModelConfig(**header["config"])
    model = build_model(config)
    named = dict(model.named_parameters())
    off = 0
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in named:
            raise CheckpointError(f"{path}: unexpected parameter {name}")
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        chunk = payload[off:off + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError(f"{path}: truncated block for {name}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        with torch.no_grad():
            named[name].copy_(torch.from_numpy(arr.copy()))
        off += n_bytes
    if off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - off} trailing bytes")
    return model, header["step"], header["metrics"], header.get("extra", {})
