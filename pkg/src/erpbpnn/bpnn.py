"""Multi-module progressive network with bidirectional lateral connections.

The network holds one fully connected module per task. Every module consumes
the same input vector. For layers past the first, a module's pre-activation
receives, in addition to its own affine map of its previous layer, one affine
map per other module of that module's previous-layer activations computed in
the same pass:

    h_l[m] = f( W_l[m] h_{l-1}[m] + b_l[m]
                + sum over t != m of (U_l[m,t] h_{l-1}[t] + c_l[m,t]) )

with tanh on hidden layers and identity on the output layer. The first layer
takes only the shared input (a lateral there would duplicate the input map).
Lateral connections also feed the output layer.

Training touches one module at a time. Backpropagation returns gradients for
exactly the active module's own weights and the lateral connections feeding
it; the activations of the other modules are treated as constants, so no
gradient flows through a frozen module. Freezing is enforced bit-exactly at
the optimizer: a frozen module's parameters never change.

All parameter arrays are float64 and mutated in place by the optimizer. If a
caller replaces an array object (rather than writing through a slice), it
must call `BpnnNet.refresh_views()` so the kernel backends see the new
storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend

__all__ = [
    "TaskModule",
    "BpnnNet",
    "ForwardTrace",
    "GradientSet",
    "forward",
    "forward_batch",
    "backward",
    "set_frozen",
    "set_trainable_module",
    "init_params",
    "param_items",
    "grad_items",
    "net_to_doc",
    "net_from_doc",
]


@dataclass
class TaskModule:
    """Parameters of one task's column.

    `weights[li]` has shape (layer_sizes[li+1], layer_sizes[li]); laterals are
    keyed by source module index and stored per layer, with entry 0 None (the
    first layer has no lateral inputs).
    """

    index: int
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    lateral_w: dict[int, list[np.ndarray | None]] = field(default_factory=dict)
    lateral_b: dict[int, list[np.ndarray | None]] = field(default_factory=dict)
    frozen: bool = False

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class ForwardTrace:
    """Per-module, per-layer activations retained for backpropagation.

    `acts[m][0]` is the shared input batch; `acts[m][li]` for li >= 1 is the
    (batch, layer_sizes[li]) activation of module m.
    """

    active: int
    acts: list[list[np.ndarray]]

    @property
    def batch_size(self) -> int:
        return self.acts[0][0].shape[0]


@dataclass
class GradientSet:
    """Gradients for one module, mirroring TaskModule's parameter layout.

    Only the active module's own parameters and its incoming laterals appear;
    every other parameter of the network has identically zero gradient by
    construction and is simply absent here.
    """

    module: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    lateral_w: dict[int, list[np.ndarray | None]]
    lateral_b: dict[int, list[np.ndarray | None]]


class BpnnNet:
    """A set of task modules joined by trainable bidirectional laterals.

    `output_dims` gives each module's output width (action dimension for an
    actor, 1 for a critic). With `lateral=False` no lateral parameters are
    allocated at all and the modules are independent MLPs.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_layers: int,
        hidden_size: int,
        output_dims: list[int],
        lateral: bool = True,
        backend_name: str | None = None,
    ):
        if hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if not output_dims:
            raise ValueError("need at least one task module")
        self.input_dim = int(input_dim)
        self.hidden_layers = int(hidden_layers)
        self.hidden_size = int(hidden_size)
        self.output_dims = [int(d) for d in output_dims]
        self.lateral = bool(lateral) and len(output_dims) > 1
        self.backend_name = backend_name or "auto"
        self._kernels = backend.resolve(backend_name)
        self.seed: int | None = None

        self.modules: list[TaskModule] = []
        for m, out_dim in enumerate(self.output_dims):
            sizes = [self.input_dim] + [self.hidden_size] * self.hidden_layers + [out_dim]
            weights = [np.zeros((sizes[li + 1], sizes[li])) for li in range(len(sizes) - 1)]
            biases = [np.zeros(sizes[li + 1]) for li in range(len(sizes) - 1)]
            mod = TaskModule(m, sizes, weights, biases)
            if self.lateral:
                for src in range(len(self.output_dims)):
                    if src == m:
                        continue
                    # Source layer li has the shared hidden width for li >= 1.
                    mod.lateral_w[src] = [None] + [
                        np.zeros((sizes[li + 1], self.hidden_size))
                        for li in range(1, len(sizes) - 1)
                    ]
                    mod.lateral_b[src] = [None] + [
                        np.zeros(sizes[li + 1]) for li in range(1, len(sizes) - 1)
                    ]
            self.modules.append(mod)
        self.refresh_views()

    @property
    def n_tasks(self) -> int:
        return len(self.modules)

    @property
    def n_layers(self) -> int:
        return self.modules[0].n_layers

    def lateral_sources(self, m: int) -> list[int]:
        return sorted(self.modules[m].lateral_w)

    def refresh_views(self) -> None:
        """Rebuild the kernel-facing views of the parameter arrays."""
        self._kweights = [mod.weights for mod in self.modules]
        self._kbiases = [mod.biases for mod in self.modules]
        self._klaterals = []
        for mod in self.modules:
            per_layer = []
            for li in range(mod.n_layers):
                triples = []
                if li >= 1:
                    for src in sorted(mod.lateral_w):
                        triples.append((src, mod.lateral_w[src][li], mod.lateral_b[src][li]))
                per_layer.append(triples)
            self._klaterals.append(per_layer)


def forward_batch(net: BpnnNet, x: np.ndarray, active: int) -> tuple[list[np.ndarray], ForwardTrace]:
    """Run all modules on a shared input batch of shape (batch, input_dim).

    Returns each module's output batch and the activation trace needed by
    `backward`. Every module sees the same input; layer li's lateral sums read
    the other modules' layer li-1 activations from this same pass.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input batch must be (n, {net.input_dim}), got {x.shape}")
    if not 0 <= active < net.n_tasks:
        raise ValueError(f"active task {active} out of range (0..{net.n_tasks - 1})")
    acts = net._kernels.forward_batch(x, net._kweights, net._kbiases, net._klaterals)
    outputs = [acts[m][-1] for m in range(net.n_tasks)]
    return outputs, ForwardTrace(active=active, acts=acts)


def forward(net: BpnnNet, x: np.ndarray, active: int) -> tuple[list[np.ndarray], ForwardTrace]:
    """Single-observation forward; outputs are 1-D vectors per module."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single observation vector, got ndim={x.ndim}")
    outputs, trace = forward_batch(net, x[None, :], active)
    return [out[0] for out in outputs], trace


def backward(net: BpnnNet, trace: ForwardTrace, out_grad: np.ndarray, active: int | None = None) -> GradientSet:
    """Gradients of sum(out_grad * output_active) w.r.t. the active module.

    Covers the module's own weights and biases plus the lateral weights and
    biases feeding it, summed over the batch. Lateral source activations are
    constants here: no gradient propagates into the other modules, matching
    the freeze semantics of training.
    """
    if active is None:
        active = trace.active
    elif active != trace.active:
        raise ValueError(f"trace was recorded for task {trace.active}, not {active}")
    if len(trace.acts) != net.n_tasks or len(trace.acts[0]) != net.n_layers + 1:
        raise ValueError("trace does not match this network's structure")
    mod = net.modules[active]
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.ndim == 1:
        out_grad = out_grad[None, :]
    if out_grad.shape != (trace.batch_size, mod.output_dim):
        raise ValueError(
            f"out_grad must be ({trace.batch_size}, {mod.output_dim}), got {out_grad.shape}"
        )
    gw, gb, glat = net._kernels.backward_batch(
        trace.acts, net._kweights, net._klaterals, active, out_grad
    )
    srcs = net.lateral_sources(active)
    lateral_w: dict[int, list[np.ndarray | None]] = {s: [None] * mod.n_layers for s in srcs}
    lateral_b: dict[int, list[np.ndarray | None]] = {s: [None] * mod.n_layers for s in srcs}
    for li in range(1, mod.n_layers):
        for j, src in enumerate(srcs):
            gu, gub = glat[li][j]
            lateral_w[src][li] = gu
            lateral_b[src][li] = gub
    return GradientSet(active, gw, gb, lateral_w, lateral_b)


def set_frozen(net: BpnnNet, task: int, flag: bool) -> None:
    """Set one module's frozen flag; the optimizer skips frozen modules."""
    net.modules[task].frozen = bool(flag)


def set_trainable_module(net: BpnnNet, task: int | None) -> None:
    """Freeze every module except `task` (freeze all when task is None)."""
    for mod in net.modules:
        mod.frozen = mod.index != task


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_params(net: BpnnNet, seed: int, out_gain: float = 1.0) -> BpnnNet:
    """Deterministically initialize parameters in place.

    Main-path weights get orthogonal scaled initialization (gain sqrt(2) on
    hidden layers, `out_gain` on the output layer), biases start at zero, and
    lateral weights start small (scale 0.01) so early behaviour is close to
    independent MLPs.
    """
    rng = np.random.default_rng(seed)
    for mod in net.modules:
        last = mod.n_layers - 1
        for li, w in enumerate(mod.weights):
            gain = out_gain if li == last else math.sqrt(2.0)
            w[...] = _orthogonal(rng, w.shape[0], w.shape[1], gain)
            mod.biases[li][...] = 0.0
        for src in sorted(mod.lateral_w):
            for li in range(1, mod.n_layers):
                mod.lateral_w[src][li][...] = 0.01 * rng.standard_normal(
                    mod.lateral_w[src][li].shape
                )
                mod.lateral_b[src][li][...] = 0.0
    net.seed = int(seed)
    return net


def param_items(net: BpnnNet, task: int, include_laterals: bool = True) -> list[tuple[str, np.ndarray]]:
    """Named parameter arrays of one module, in a fixed deterministic order.

    Names are `W{layer}`, `b{layer}`, `U{layer}:{source}`, `c{layer}:{source}`.
    """
    mod = net.modules[task]
    items: list[tuple[str, np.ndarray]] = []
    for li in range(mod.n_layers):
        items.append((f"W{li}", mod.weights[li]))
        items.append((f"b{li}", mod.biases[li]))
    if include_laterals:
        for li in range(1, mod.n_layers):
            for src in sorted(mod.lateral_w):
                items.append((f"U{li}:{src}", mod.lateral_w[src][li]))
                items.append((f"c{li}:{src}", mod.lateral_b[src][li]))
    return items


def grad_items(grads: GradientSet, include_laterals: bool = True) -> list[tuple[str, np.ndarray]]:
    """Gradient arrays named and ordered to match `param_items`."""
    items: list[tuple[str, np.ndarray]] = []
    for li in range(len(grads.weights)):
        items.append((f"W{li}", grads.weights[li]))
        items.append((f"b{li}", grads.biases[li]))
    if include_laterals:
        for li in range(1, len(grads.weights)):
            for src in sorted(grads.lateral_w):
                items.append((f"U{li}:{src}", grads.lateral_w[src][li]))
                items.append((f"c{li}:{src}", grads.lateral_b[src][li]))
    return items


def net_to_doc(net: BpnnNet) -> dict:
    """Serialize to a JSON-able document; round-trips parameters bit-exactly."""
    modules = []
    for mod in net.modules:
        layers = []
        for li in range(mod.n_layers):
            laterals = {}
            for src in sorted(mod.lateral_w):
                if mod.lateral_w[src][li] is not None:
                    laterals[str(src)] = {
                        "U": mod.lateral_w[src][li].tolist(),
                        "b": mod.lateral_b[src][li].tolist(),
                    }
            layers.append(
                {"W": mod.weights[li].tolist(), "b": mod.biases[li].tolist(), "laterals": laterals}
            )
        modules.append({"index": mod.index, "frozen": mod.frozen, "layers": layers})
    return {
        "kind": "bpnn-net",
        "version": 1,
        "input_dim": net.input_dim,
        "hidden_layers": net.hidden_layers,
        "hidden_size": net.hidden_size,
        "output_dims": list(net.output_dims),
        "lateral": net.lateral,
        "seed": net.seed,
        "modules": modules,
    }


def net_from_doc(doc: dict, backend_name: str | None = None) -> BpnnNet:
    """Rebuild a network from `net_to_doc` output, validating shapes."""
    if doc.get("kind") != "bpnn-net":
        raise ValueError("not a network checkpoint document")
    net = BpnnNet(
        doc["input_dim"],
        doc["hidden_layers"],
        doc["hidden_size"],
        doc["output_dims"],
        lateral=doc["lateral"],
        backend_name=backend_name,
    )
    net.seed = doc.get("seed")
    for mod, mdoc in zip(net.modules, doc["modules"]):
        mod.frozen = bool(mdoc["frozen"])
        for li, ldoc in enumerate(mdoc["layers"]):
            w = np.asarray(ldoc["W"], dtype=np.float64)
            b = np.asarray(ldoc["b"], dtype=np.float64)
            if w.shape != mod.weights[li].shape or b.shape != mod.biases[li].shape:
                raise ValueError(f"checkpoint layer {li} of module {mod.index} has wrong shape")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("checkpoint contains non-finite parameters")
            mod.weights[li][...] = w
            mod.biases[li][...] = b
            for src_key, lat in ldoc["laterals"].items():
                src = int(src_key)
                u = np.asarray(lat["U"], dtype=np.float64)
                ub = np.asarray(lat["b"], dtype=np.float64)
                if src not in mod.lateral_w or mod.lateral_w[src][li] is None:
                    raise ValueError(f"unexpected lateral {src}->{mod.index} at layer {li}")
                if u.shape != mod.lateral_w[src][li].shape:
                    raise ValueError(f"lateral {src}->{mod.index} layer {li} has wrong shape")
                mod.lateral_w[src][li][...] = u
                mod.lateral_b[src][li][...] = ub
    return net
