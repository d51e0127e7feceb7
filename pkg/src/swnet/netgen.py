"""Realize a rewired topology as an executable sparse network description.

Graph edges between a pair of layers become one sparse connection: a
channel-level boolean mask over a conv kernel bank (whole k x k filters are
zeroed where edges were rewired away) or over an FC weight matrix. Incoming
feature maps of a layer are summed at the pre-nonlinearity junction, so
long-range connections must reproduce the destination's conv output shape;
the stride/padding pair that achieves this is derived here, under the
constraint that the stride stays below the kernel size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .arch import (
    BUNDLE_ORDER,
    ArchitectureSpec,
    LayerGeometry,
    conv_padding,
    layer_geometry,
    spec_from_dict,
    spec_to_dict,
)
from .graph import LayeredGraph, validate
from .rewire import RewiredTopology


class GeometryError(ValueError):
    """No (stride, padding) pair maps the source map onto the target shape."""


class NetgenError(ValueError):
    pass


def compute_geometry(src_spatial: int, dst_spatial: int, kernel_size: int) -> tuple[int, int]:
    """Smallest stride s (1 <= s < kernel), then smallest padding, with
    floor((src + 2*pad - kernel)/s) + 1 == dst. Padding beyond the kernel
    size would only add all-zero receptive fields and is rejected."""
    if dst_spatial < 1 or src_spatial < dst_spatial:
        raise GeometryError(f"need src >= dst >= 1, got src={src_spatial} dst={dst_spatial}")
    for stride in range(1, kernel_size):
        # dst-1 <= (src + 2*pad - kernel)/stride < dst, solved for 2*pad
        lo = stride * (dst_spatial - 1) - src_spatial + kernel_size
        hi = stride * dst_spatial - 1 - src_spatial + kernel_size
        pad = max(0, math.ceil(lo / 2))
        if 2 * pad <= hi and pad <= kernel_size:
            return stride, pad
    raise GeometryError(
        f"no stride < {kernel_size} with non-negative padding maps "
        f"{src_spatial} -> {dst_spatial}"
    )


@dataclass(frozen=True)
class SparseConnection:
    """All edges between one (src_layer, dst_layer) pair of graph layers.

    mask[i, j] is True iff the graph links src node j to dst node i. Conv
    connections carry the kernel/stride/padding that maps the source feature
    map onto the destination's conv output shape; fc connections consume the
    flattened source instead and carry no geometry.
    """

    src_layer: int
    dst_layer: int
    kind: str  # "conv" | "fc"
    mask: np.ndarray
    kernel_size: int | None = None
    stride: int | None = None
    zero_padding: int | None = None

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        if self.src_layer >= self.dst_layer:
            raise NetgenError(f"connection {self.src_layer}->{self.dst_layer} is not forward")
        if self.kind == "conv":
            if self.kernel_size is None or self.stride is None or self.zero_padding is None:
                raise NetgenError(
                    f"connection {self.src_layer}->{self.dst_layer}: conv connections "
                    f"need kernel, stride, and padding"
                )
            if not 1 <= self.stride < self.kernel_size:
                raise NetgenError(
                    f"connection {self.src_layer}->{self.dst_layer}: stride {self.stride} "
                    f"must satisfy 1 <= stride < kernel ({self.kernel_size})"
                )

    @property
    def is_consecutive(self) -> bool:
        return self.dst_layer == self.src_layer + 1

    @property
    def true_entries(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SWNetSpec:
    """A realized network: base architecture plus its sparse connections.

    Connections include the consecutive-layer ones (which replace the base
    architecture's dense convolutions) and any long-range ones introduced by
    rewiring. bundle_order fixes the ordering of the composite nonlinearity.
    """

    base: ArchitectureSpec
    connections: tuple[SparseConnection, ...]
    bundle_order: tuple[str, ...] = BUNDLE_ORDER

    def __post_init__(self):
        object.__setattr__(self, "connections", tuple(self.connections))
        object.__setattr__(self, "bundle_order", tuple(self.bundle_order))

    @property
    def graph_layer_count(self) -> int:
        return self.base.layer_count + 1

    def connections_into(self, dst_layer: int) -> list[SparseConnection]:
        return [c for c in self.connections if c.dst_layer == dst_layer]

    def plan(self) -> list[LayerGeometry]:
        return layer_geometry(self.base)

    def source_shape(self, graph_layer: int, plan=None) -> tuple[str, int, tuple[int, int], list[int]]:
        """(kind, node count, spatial shape, per-node widths) of a layer's output.

        For conv sources the per-node width is the flattened spatial area of
        one channel; for fc sources it is the neuron count of each group.
        Layer 0 is the network input.
        """
        plan = plan if plan is not None else self.plan()
        if graph_layer == 0:
            c, h, w = self.base.input_shape
            return "conv", c, (h, w), [h * w] * c
        layer = self.base.layers[graph_layer - 1]
        geom = plan[graph_layer - 1]
        if layer.kind == "conv":
            h, w = geom.out_spatial
            return "conv", layer.out_channels, (h, w), [h * w] * layer.out_channels
        sizes = self.base.node_group_sizes(graph_layer - 1)
        return "fc", len(sizes), (1, 1), sizes


def realize(topology: RewiredTopology | LayeredGraph, spec: ArchitectureSpec) -> SWNetSpec:
    """Turn a (possibly rewired) channel graph back into a network description.

    Edges are grouped per layer pair into masks; geometry comes from the base
    architecture for consecutive pairs and from compute_geometry for
    long-range ones. Fails if the graph does not match the architecture's
    layering, if some layer has lost every incoming connection, or if a
    long-range pair admits no valid geometry.
    """
    graph = topology.graph if isinstance(topology, RewiredTopology) else topology
    problems = validate(graph)
    if problems:
        raise NetgenError("topology graph is malformed: " + "; ".join(str(p) for p in problems))
    counts = spec.node_counts()
    if graph.layer_sizes() != counts:
        raise NetgenError(
            f"graph layering {graph.layer_sizes()} does not match the architecture's "
            f"node counts {counts}"
        )
    if not graph.is_layer_major():
        raise NetgenError("topology graph must use layer-major node numbering")
    offsets = [0]
    for c in counts:
        offsets.append(offsets[-1] + c)
    plan = layer_geometry(spec)

    grouped: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for src, dst in graph.edges:
        key = (graph.node_layers[src], graph.node_layers[dst])
        grouped.setdefault(key, []).append((src - offsets[key[0]], dst - offsets[key[1]]))

    connections = []
    for (src_layer, dst_layer) in sorted(grouped):
        mask = np.zeros((counts[dst_layer], counts[src_layer]), dtype=bool)
        for src_ch, dst_ch in grouped[(src_layer, dst_layer)]:
            mask[dst_ch, src_ch] = True
        dst_decl = spec.layers[dst_layer - 1]
        if dst_decl.kind == "fully_connected":
            # any source flattens into an fc destination
            connections.append(SparseConnection(src_layer, dst_layer, "fc", mask))
            continue
        # conv destination
        if src_layer > 0 and spec.layers[src_layer - 1].kind == "fully_connected":
            raise NetgenError(
                f"connection {src_layer}->{dst_layer}: fully_connected sources cannot "
                f"feed a conv layer"
            )
        kernel = dst_decl.kernel_size
        if dst_layer == src_layer + 1:
            stride, pad = dst_decl.stride, conv_padding(kernel)
        else:
            src_h, src_w = plan[src_layer - 1].out_spatial if src_layer > 0 else spec.input_shape[1:]
            dst_h, dst_w = plan[dst_layer - 1].conv_out
            try:
                stride, pad = compute_geometry(src_h, dst_h, kernel)
            except GeometryError as exc:
                raise NetgenError(f"connection {src_layer}->{dst_layer}: {exc}") from exc
            if src_w != src_h or dst_w != dst_h:
                stride_w, pad_w = compute_geometry(src_w, dst_w, kernel)
                if (stride_w, pad_w) != (stride, pad):
                    raise NetgenError(
                        f"connection {src_layer}->{dst_layer}: no common stride/padding "
                        f"for both axes"
                    )
        connections.append(SparseConnection(src_layer, dst_layer, "conv", mask, kernel, stride, pad))

    swnet = SWNetSpec(base=spec, connections=tuple(connections), bundle_order=BUNDLE_ORDER)
    for dst_layer in range(1, len(counts)):
        incoming = sum(c.true_entries for c in swnet.connections_into(dst_layer))
        if incoming == 0:
            raise NetgenError(f"layer {dst_layer} has no incoming connection; the network is untrainable")
    total = sum(c.true_entries for c in swnet.connections)
    if total != graph.n_edges:
        raise NetgenError(f"mask entries ({total}) lost edges ({graph.n_edges})")  # pragma: no cover
    return swnet


def all_pairs_dense(spec: ArchitectureSpec) -> SWNetSpec:
    """DenseNet-style analogue: a fully true mask between every forward layer
    pair (subject to geometry), for parameter-count comparisons."""
    graph_dense_counts = spec.node_counts()
    offsets = [0]
    for c in graph_dense_counts:
        offsets.append(offsets[-1] + c)
    edges = []
    n_layers = len(graph_dense_counts)
    for src_layer in range(n_layers - 1):
        if src_layer > 0 and spec.layers[src_layer - 1].kind == "fully_connected":
            dst_range = [d for d in range(src_layer + 1, n_layers) if spec.layers[d - 1].kind == "fully_connected"]
        else:
            dst_range = list(range(src_layer + 1, n_layers))
        for dst_layer in dst_range:
            for s in range(offsets[src_layer], offsets[src_layer + 1]):
                for d in range(offsets[dst_layer], offsets[dst_layer + 1]):
                    edges.append((s, d))
    node_layers = []
    for layer, c in enumerate(graph_dense_counts):
        node_layers.extend([layer] * c)
    graph = LayeredGraph(tuple(node_layers), tuple(edges), n_layers)
    return realize(graph, spec)


def count_params_flops(spec: SWNetSpec) -> tuple[int, int]:
    """(trainable weights, forward multiplications).

    Each true conv mask entry contributes kernel^2 weights and kernel^2 times
    the destination conv-output area multiplications. FC entries contribute
    their weight-block size once on each count. Biases and normalization
    parameters are excluded: rewiring never touches them.
    """
    plan = spec.plan()
    params = 0
    mults = 0
    for conn in spec.connections:
        if conn.kind == "conv":
            k2 = conn.kernel_size * conn.kernel_size
            oh, ow = plan[conn.dst_layer - 1].conv_out
            params += conn.true_entries * k2
            mults += conn.true_entries * k2 * oh * ow
        else:
            _, _, _, src_widths = spec.source_shape(conn.src_layer, plan)
            dst_sizes = spec.base.node_group_sizes(conn.dst_layer - 1)
            block = 0
            for i, j in zip(*np.nonzero(conn.mask)):
                block += dst_sizes[int(i)] * src_widths[int(j)]
            params += block
            mults += block
    return params, mults


# ---------------------------------------------------------------------------
# JSON document format
#
# { "base": {...architecture...},
#   "bundle_order": ["relu", "maxpool", "batchnorm"],
#   "connections": [
#     {"src": 0, "dst": 1, "kind": "conv", "kernel": 3, "stride": 1,
#      "pad": 1, "mask": [[1, 0, ...], ...]},
#     {"src": 2, "dst": 5, "kind": "fc", "kernel": null, "stride": null,
#      "pad": null, "mask": [[1], ...]} ] }
# ---------------------------------------------------------------------------


def swnet_to_dict(spec: SWNetSpec) -> dict:
    return {
        "base": spec_to_dict(spec.base),
        "bundle_order": list(spec.bundle_order),
        "connections": [
            {
                "src": c.src_layer,
                "dst": c.dst_layer,
                "kind": c.kind,
                "kernel": c.kernel_size,
                "stride": c.stride,
                "pad": c.zero_padding,
                "mask": c.mask.astype(int).tolist(),
            }
            for c in spec.connections
        ],
    }


def swnet_from_dict(doc: dict) -> SWNetSpec:
    try:
        base = spec_from_dict(doc["base"])
        raw = doc["connections"]
    except KeyError as exc:
        raise NetgenError(f"network document missing required field: {exc}") from exc
    connections = []
    for entry in raw:
        connections.append(
            SparseConnection(
                src_layer=int(entry["src"]),
                dst_layer=int(entry["dst"]),
                kind=entry.get("kind", "conv"),
                mask=np.asarray(entry["mask"], dtype=bool),
                kernel_size=int(entry["kernel"]) if entry.get("kernel") is not None else None,
                stride=int(entry["stride"]) if entry.get("stride") is not None else None,
                zero_padding=int(entry["pad"]) if entry.get("pad") is not None else None,
            )
        )
    return SWNetSpec(
        base=base,
        connections=tuple(connections),
        bundle_order=tuple(doc.get("bundle_order", BUNDLE_ORDER)),
    )


def load_swnet(path) -> SWNetSpec:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise NetgenError(f"{path}: not valid JSON: {exc}") from exc
    return swnet_from_dict(doc)


def save_swnet(spec: SWNetSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(swnet_to_dict(spec), f)
        f.write("\n")
