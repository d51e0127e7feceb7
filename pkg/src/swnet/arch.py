"""Declarative descriptions of feed-forward CNN/MLP architectures.

An architecture is an ordered chain of conv and fully-connected layers over a
fixed input shape. It carries everything needed to derive the channel-level
graph of the network and the spatial geometry of every feature map, but no
weights. Specs are immutable once constructed and validate themselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

# Canonical ordering of the composite nonlinearity applied after each linear
# layer. Individual layers use an ordered subset of this.
BUNDLE_ORDER = ("relu", "maxpool", "batchnorm")

POOL_KINDS = ("max", "average")


class SpecError(ValueError):
    """Raised when an architecture description violates its invariants."""


@dataclass(frozen=True)
class PoolDecl:
    """Pooling stage attached to a conv layer: `window` x `window`, given stride."""

    kind: str
    window: int
    stride: int


@dataclass(frozen=True)
class LayerDecl:
    """One linear layer plus its nonlinearity bundle.

    kind is "conv" or "fully_connected". Conv layers have a square
    kernel_size, a stride, and optionally a pooling stage; FC layers have
    neither. bundle is the ordered subset of BUNDLE_ORDER applied after the
    linear op; None selects the default (relu, maxpool if pooled, batchnorm
    for conv layers; nothing for FC layers).
    """

    kind: str
    out_channels: int
    kernel_size: int | None = None
    stride: int = 1
    pool: PoolDecl | None = None
    bundle: tuple[str, ...] | None = None

    def effective_bundle(self) -> tuple[str, ...]:
        if self.bundle is not None:
            return self.bundle
        if self.kind == "fully_connected":
            return ()
        ops = ["relu"]
        if self.pool is not None:
            ops.append("maxpool")
        ops.append("batchnorm")
        return tuple(ops)


@dataclass(frozen=True)
class ArchitectureSpec:
    """A feed-forward network: input shape plus an ordered list of layers.

    fc_group_size buckets FC neurons into groups that act as single graph
    nodes; 1 means one node per neuron. Conv layers always get one node per
    output channel.
    """

    layers: tuple[LayerDecl, ...]
    input_shape: tuple[int, int, int]
    fc_group_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        problems = self.problems()
        if problems:
            raise SpecError("invalid architecture: " + "; ".join(problems))

    def problems(self) -> list[str]:
        """All invariant violations, empty if the spec is well-formed."""
        out = []
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            out.append(f"input_shape must be (channels, height, width) >= 1, got {self.input_shape}")
        if len(self.layers) < 2:
            out.append(f"need at least 2 layers, got {len(self.layers)}")
        if self.fc_group_size < 1:
            out.append(f"fc_group_size must be >= 1, got {self.fc_group_size}")
        seen_fc = False
        for i, layer in enumerate(self.layers):
            tag = f"layer {i}"
            if layer.kind not in ("conv", "fully_connected"):
                out.append(f"{tag}: unknown kind {layer.kind!r}")
                continue
            if layer.out_channels < 1:
                out.append(f"{tag}: out_channels must be >= 1, got {layer.out_channels}")
            if layer.kind == "conv":
                if seen_fc:
                    out.append(f"{tag}: conv layer after a fully_connected layer is not supported")
                if layer.kernel_size is None or layer.kernel_size < 1:
                    out.append(f"{tag}: conv kernel_size must be >= 1, got {layer.kernel_size}")
                if layer.stride < 1:
                    out.append(f"{tag}: conv stride must be >= 1, got {layer.stride}")
                if layer.pool is not None:
                    if layer.pool.kind not in POOL_KINDS:
                        out.append(f"{tag}: pool kind must be one of {POOL_KINDS}, got {layer.pool.kind!r}")
                    if layer.pool.window < 1 or layer.pool.stride < 1:
                        out.append(f"{tag}: pool window and stride must be >= 1")
            else:
                seen_fc = True
                if layer.kernel_size is not None:
                    out.append(f"{tag}: fully_connected layers take no kernel_size")
                if layer.pool is not None:
                    out.append(f"{tag}: fully_connected layers take no pool")
            if layer.bundle is not None:
                if not _is_ordered_subset(layer.bundle, BUNDLE_ORDER):
                    out.append(f"{tag}: bundle {layer.bundle} is not an ordered subset of {BUNDLE_ORDER}")
                if "maxpool" in (layer.bundle or ()) and (layer.kind != "conv" or layer.pool is None):
                    out.append(f"{tag}: bundle contains maxpool but the layer declares no pool")
        return out

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def node_group_sizes(self, layer_index: int) -> list[int]:
        """Sizes of the channel/neuron groups behind each graph node of a layer.

        Conv layers map one channel to one node (all sizes 1). FC layers are
        bucketed by fc_group_size; the last group absorbs the remainder.
        """
        layer = self.layers[layer_index]
        if layer.kind == "conv":
            return [1] * layer.out_channels
        g = self.fc_group_size
        n_groups = math.ceil(layer.out_channels / g)
        sizes = [g] * n_groups
        sizes[-1] = layer.out_channels - g * (n_groups - 1)
        return sizes

    def node_counts(self) -> list[int]:
        """Graph nodes per layer: input channels first, then one entry per layer."""
        counts = [self.input_shape[0]]
        counts.extend(len(self.node_group_sizes(i)) for i in range(len(self.layers)))
        return counts


@dataclass(frozen=True)
class LayerGeometry:
    """Spatial bookkeeping for one layer.

    in_spatial feeds the layer's own linear op, conv_out is the map produced
    by it (the shape at which incoming feature maps are summed, before the
    nonlinearity bundle), out_spatial is the post-bundle output. FC layers
    use (1, 1) with their flattened input width in flat_in.
    """

    in_spatial: tuple[int, int]
    conv_out: tuple[int, int]
    out_spatial: tuple[int, int]
    flat_in: int | None = None


def conv_padding(kernel_size: int) -> int:
    """Zero padding used by the architecture's own conv layers (size-preserving at stride 1)."""
    return (kernel_size - 1) // 2


def _conv_out_dim(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def layer_geometry(spec: ArchitectureSpec) -> list[LayerGeometry]:
    """Spatial plan of every layer, derived purely from the spec.

    Raises SpecError if any feature map collapses below 1x1.
    """
    plan = []
    h, w = spec.input_shape[1], spec.input_shape[2]
    channels = spec.input_shape[0]
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            pad = conv_padding(layer.kernel_size)
            ch = _conv_out_dim(h, layer.kernel_size, layer.stride, pad)
            cw = _conv_out_dim(w, layer.kernel_size, layer.stride, pad)
            if ch < 1 or cw < 1:
                raise SpecError(f"layer {i}: conv output collapses to {ch}x{cw}")
            oh, ow = ch, cw
            if layer.pool is not None:
                oh = (ch - layer.pool.window) // layer.pool.stride + 1
                ow = (cw - layer.pool.window) // layer.pool.stride + 1
                if oh < 1 or ow < 1:
                    raise SpecError(f"layer {i}: pool output collapses to {oh}x{ow}")
            plan.append(LayerGeometry((h, w), (ch, cw), (oh, ow)))
            h, w, channels = oh, ow, layer.out_channels
        else:
            flat = channels * h * w
            plan.append(LayerGeometry((h, w), (1, 1), (1, 1), flat_in=flat))
            h, w, channels = 1, 1, layer.out_channels
    return plan


def _is_ordered_subset(sub, order) -> bool:
    pos = [order.index(x) for x in sub if x in order]
    return len(pos) == len(sub) and pos == sorted(pos) and len(set(pos)) == len(pos)


# ---------------------------------------------------------------------------
# JSON document format
#
# { "input_shape": [c, h, w],
#   "fc_group_size": 1,
#   "layers": [
#     {"kind": "conv", "out_channels": 8, "kernel": 3, "stride": 1,
#      "pool": {"kind": "max", "window": 2, "stride": 2} | null,
#      "bundle": ["relu", "maxpool"] | null},
#     {"kind": "fully_connected", "out_channels": 10, "bundle": []} ] }
# ---------------------------------------------------------------------------


def spec_to_dict(spec: ArchitectureSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry = {"kind": layer.kind, "out_channels": layer.out_channels}
        if layer.kind == "conv":
            entry["kernel"] = layer.kernel_size
            entry["stride"] = layer.stride
            entry["pool"] = (
                {"kind": layer.pool.kind, "window": layer.pool.window, "stride": layer.pool.stride}
                if layer.pool
                else None
            )
        entry["bundle"] = list(layer.bundle) if layer.bundle is not None else None
        layers.append(entry)
    return {
        "input_shape": list(spec.input_shape),
        "fc_group_size": spec.fc_group_size,
        "layers": layers,
    }


def spec_from_dict(doc: dict) -> ArchitectureSpec:
    try:
        raw_layers = doc["layers"]
        input_shape = tuple(doc["input_shape"])
    except (KeyError, TypeError) as exc:
        raise SpecError(f"architecture document missing required field: {exc}") from exc
    layers = []
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise SpecError(f"layer {i}: each layer must be an object with a 'kind'")
        pool = None
        if entry.get("pool"):
            p = entry["pool"]
            pool = PoolDecl(kind=p.get("kind", "max"), window=int(p["window"]), stride=int(p["stride"]))
        bundle = entry.get("bundle")
        layers.append(
            LayerDecl(
                kind=entry["kind"],
                out_channels=int(entry.get("out_channels", 0)),
                kernel_size=int(entry["kernel"]) if entry.get("kernel") is not None else None,
                stride=int(entry.get("stride", 1)),
                pool=pool,
                bundle=tuple(bundle) if bundle is not None else None,
            )
        )
    return ArchitectureSpec(
        layers=tuple(layers),
        input_shape=input_shape,
        fc_group_size=int(doc.get("fc_group_size", 1)),
    )


def load_spec(path) -> ArchitectureSpec:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON: {exc}") from exc
    return spec_from_dict(doc)


def save_spec(spec: ArchitectureSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec), f, indent=2)
        f.write("\n")
