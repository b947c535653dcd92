"""Network and platform descriptions, file parsing, and CNN partitioning.

Network files and platform files are YAML documents.  Every value is
validated and unknown keys are rejected; errors carry the offending field
and the 1-based line number in the source document.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import yaml


class ModelError(Exception):
    """Base class for all input/model errors."""


class ParseError(ModelError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(ModelError):
    pass


class LayerKind(str, Enum):
    CONV = "conv"
    POOL = "pool"
    NONLIN = "nonlin"


def divisors(n: int) -> list[int]:
    """Ascending divisors of a positive integer."""
    small, large = [], []
    for d in range(1, math.isqrt(n) + 1):
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
    return small + large[::-1]


@dataclass(frozen=True)
class ResourceVector:
    lut: float = 0
    ff: float = 0
    dsp: float = 0
    bram: float = 0

    def __post_init__(self):
        for name in ("lut", "ff", "dsp", "bram"):
            if getattr(self, name) < 0:
                raise ValidationError(f"resource '{name}' must be nonnegative")

    def as_tuple(self) -> tuple:
        return (self.lut, self.ff, self.dsp, self.bram)

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def maximum(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(max(a, b) for a, b in zip(self.as_tuple(), other.as_tuple())))

    def fits(self, avail: "ResourceVector") -> bool:
        return all(a <= b for a, b in zip(self.as_tuple(), avail.as_tuple()))

    @staticmethod
    def total(vectors) -> "ResourceVector":
        out = ResourceVector()
        for v in vectors:
            out = out + v
        return out


@dataclass(frozen=True)
class ResourceCostModel:
    """Linear per-stage cost coefficients (placeholders, not calibrated)."""

    dsp_per_mult: float = 1.0
    dsp_base: float = 0.0
    lut_per_pe: float = 60.0
    lut_base: float = 300.0
    ff_per_pe: float = 80.0
    ff_base: float = 400.0
    bram_bytes: int = 4608

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValidationError(f"cost_model.{name} must be nonnegative")
        if self.bram_bytes <= 0:
            raise ValidationError("cost_model.bram_bytes must be positive")


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    n_in: int
    n_out: int
    k: int
    stride: int
    h_out: int
    w_out: int

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        for name in ("n_in", "n_out", "k", "stride", "h_out", "w_out"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"layer field '{name}' must be a positive integer, got {value!r}")
        if self.kind is LayerKind.NONLIN and (self.k != 1 or self.n_out != self.n_in):
            raise ValidationError("nonlin layers need k = 1 and n_out = n_in")

    @property
    def weight_count(self) -> int:
        if self.kind is LayerKind.CONV:
            return self.n_in * self.n_out * self.k * self.k
        return 0

    @property
    def h_in(self) -> int:
        return (self.h_out - 1) * self.stride + self.k

    @property
    def w_in(self) -> int:
        return (self.w_out - 1) * self.stride + self.k

    @property
    def input_elements(self) -> int:
        return self.n_in * self.h_in * self.w_in

    @property
    def output_elements(self) -> int:
        return self.n_out * self.h_out * self.w_out

    @property
    def macs(self) -> int:
        if self.kind is LayerKind.CONV:
            return self.n_in * self.n_out * self.k * self.k * self.h_out * self.w_out
        return 0

    @property
    def ops(self) -> int:
        # 2 ops per MAC; pooling counts one op per window element
        if self.kind is LayerKind.CONV:
            return 2 * self.macs
        if self.kind is LayerKind.POOL:
            return self.n_out * self.k * self.k * self.h_out * self.w_out
        return self.n_out * self.h_out * self.w_out


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    fps_target: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.name:
            raise ValidationError("network name must be nonempty")
        if self.fps_target is not None and not self.fps_target > 0:
            raise ValidationError("fps_target must be positive")
        for idx, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if b.n_in != a.n_out:
                raise ValidationError(
                    f"layer {idx + 1} has n_in={b.n_in} but layer {idx} has n_out={a.n_out}"
                )
        if not any(layer.kind is LayerKind.CONV for layer in self.layers):
            raise ValidationError("network needs at least one Conv layer")

    @property
    def conv_indices(self) -> tuple:
        return tuple(i for i, layer in enumerate(self.layers) if layer.kind is LayerKind.CONV)

    @property
    def ops(self) -> int:
        return sum(layer.ops for layer in self.layers)


@dataclass(frozen=True)
class PlatformSpec:
    rsc_avail: ResourceVector
    b_mem: float
    clock_hz: float
    port_width_bits: int
    wordlength_bits: int
    burst_length: int
    cost_model: ResourceCostModel = field(default_factory=ResourceCostModel)

    def __post_init__(self):
        for name in ("b_mem", "clock_hz", "port_width_bits", "wordlength_bits", "burst_length"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"platform field '{name}' must be positive")
        if self.port_width_bits % self.wordlength_bits:
            raise ValidationError("port_width_bits must be a multiple of wordlength_bits")
        if self.wordlength_bits % 8:
            raise ValidationError("wordlength_bits must be a whole number of bytes")

    @property
    def word_bytes(self) -> int:
        return self.wordlength_bits // 8

    @property
    def pack_factor(self) -> int:
        return self.port_width_bits // self.wordlength_bits

    def with_bandwidth(self, b_mem: float) -> "PlatformSpec":
        return PlatformSpec(self.rsc_avail, b_mem, self.clock_hz, self.port_width_bits,
                            self.wordlength_bits, self.burst_length, self.cost_model)


@dataclass(frozen=True)
class Partitioning:
    """Cut points split the layer chain before the given layer indices.

    ``input_folds`` holds one tile size per Conv layer, in layer order.
    """

    cut_points: tuple = ()
    input_folds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cut_points", tuple(self.cut_points))
        object.__setattr__(self, "input_folds", tuple(self.input_folds))

    def ranges(self, n_layers: int) -> list[tuple[int, int]]:
        bounds = [0, *self.cut_points, n_layers]
        return list(zip(bounds, bounds[1:]))

    def validate(self, net: NetworkSpec) -> None:
        n = len(net.layers)
        cuts = self.cut_points
        if any(not 0 < c < n for c in cuts) or any(a >= b for a, b in zip(cuts, cuts[1:])):
            raise ValidationError(f"cut points {cuts} must be strictly increasing within (0, {n})")
        for start, end in self.ranges(n):
            if not any(net.layers[i].kind is LayerKind.CONV for i in range(start, end)):
                raise ValidationError(f"subgraph of layers [{start}, {end}) has no Conv layer")
        convs = net.conv_indices
        if len(self.input_folds) != len(convs):
            raise ValidationError(f"expected {len(convs)} input folds, got {len(self.input_folds)}")
        for idx, f_in in zip(convs, self.input_folds):
            n_in = net.layers[idx].n_in
            if not 1 <= f_in <= n_in or n_in % f_in:
                raise ValidationError(f"f_in={f_in} must divide n_in={n_in} of layer {idx}")

    def num_subgraphs(self) -> int:
        return len(self.cut_points) + 1


def _cut_sets(net: NetworkSpec, max_subgraphs: int) -> Iterator[tuple]:
    n = len(net.layers)
    is_conv = [layer.kind is LayerKind.CONV for layer in net.layers]
    for n_cuts in range(0, min(max_subgraphs, n)):
        for cuts in itertools.combinations(range(1, n), n_cuts):
            bounds = (0, *cuts, n)
            if all(any(is_conv[a:b]) for a, b in zip(bounds, bounds[1:])):
                yield cuts


def enumerate_partitionings(net: NetworkSpec, max_subgraphs: int = 8) -> list[Partitioning]:
    """All legal partitionings with at most ``max_subgraphs`` ranges.

    Cut sets are ordered by size then lexicographically; fold vectors vary
    fastest, each Conv layer ranging over the divisors of its n_in.
    """
    if max_subgraphs < 1:
        raise ValueError("max_subgraphs must be >= 1")
    fold_choices = [divisors(net.layers[i].n_in) for i in net.conv_indices]
    out = []
    for cuts in _cut_sets(net, max_subgraphs):
        for folds in itertools.product(*fold_choices):
            out.append(Partitioning(cuts, folds))
    return out


# --------------------------------------------------------------------------
# File formats

_LAYER_KEYS = ("kind", "n_in", "n_out", "k", "stride", "h_out", "w_out")
_NETWORK_KEYS = ("name", "fps_target", "layers")
_PLATFORM_KEYS = ("lut", "ff", "dsp", "bram", "b_mem_bytes_per_s", "clock_hz",
                  "port_width_bits", "wordlength_bits", "burst_length", "cost_model")
_COST_KEYS = tuple(ResourceCostModel.__dataclass_fields__)


def _compose(text: str) -> yaml.Node:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ParseError(f"malformed document: {exc.problem}", line=line) from None
    if node is None:
        raise ParseError("empty document", line=1)
    return node


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _mapping(node: yaml.Node, allowed: Sequence[str], where: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ParseError("expected a mapping", field=where, line=_line(node))
    out = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if key not in allowed:
            raise ParseError("unknown key", field=f"{where}.{key}" if where else key, line=_line(key_node))
        if key in out:
            raise ParseError("duplicate key", field=key, line=_line(key_node))
        out[key] = value_node
    return out


def _scalar(node: yaml.Node, name: str) -> str:
    if not isinstance(node, yaml.ScalarNode):
        raise ParseError("expected a scalar value", field=name, line=_line(node))
    return node.value


def _int(node: yaml.Node, name: str) -> int:
    raw = _scalar(node, name)
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"expected an integer, got {raw!r}", field=name, line=_line(node)) from None
    if not value.is_integer():
        raise ParseError(f"expected an integer, got {raw!r}", field=name, line=_line(node))
    return int(value)


def _float(node: yaml.Node, name: str) -> float:
    raw = _scalar(node, name)
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"expected a number, got {raw!r}", field=name, line=_line(node)) from None


def _require(fields: dict, key: str, where: str, node: yaml.Node) -> yaml.Node:
    if key not in fields:
        raise ParseError("missing required key", field=f"{where}.{key}" if where else key, line=_line(node))
    return fields[key]


def parse_network(text: str) -> NetworkSpec:
    root = _compose(text)
    fields = _mapping(root, _NETWORK_KEYS, "")
    name = _scalar(_require(fields, "name", "", root), "name")
    fps = _float(fields["fps_target"], "fps_target") if "fps_target" in fields else None
    layers_node = _require(fields, "layers", "", root)
    if not isinstance(layers_node, yaml.SequenceNode):
        raise ParseError("expected a list of layers", field="layers", line=_line(layers_node))
    layers = []
    for idx, lnode in enumerate(layers_node.value):
        where = f"layers[{idx}]"
        lf = _mapping(lnode, _LAYER_KEYS, where)
        values = {}
        for key in _LAYER_KEYS:
            vnode = _require(lf, key, where, lnode)
            if key == "kind":
                raw = _scalar(vnode, f"{where}.kind")
                try:
                    values[key] = LayerKind(raw.lower())
                except ValueError:
                    raise ParseError(f"unknown layer kind {raw!r}", field=f"{where}.kind",
                                     line=_line(vnode)) from None
            else:
                values[key] = _int(vnode, f"{where}.{key}")
        try:
            layers.append(LayerSpec(**values))
        except ValidationError as exc:
            raise ParseError(str(exc), field=where, line=_line(lnode)) from None
    try:
        return NetworkSpec(name=name, layers=tuple(layers), fps_target=fps)
    except ValidationError as exc:
        msg = str(exc)
        line = _line(layers_node)
        # point at the second layer of an inconsistent pair
        if msg.startswith("layer ") and "has n_in" in msg:
            idx = int(msg.split()[1])
            line = _line(layers_node.value[idx])
        raise ValidationError(f"line {line}: {msg}") from None


def serialize_network(net: NetworkSpec) -> str:
    lines = [f"name: {net.name}"]
    if net.fps_target is not None:
        lines.append(f"fps_target: {net.fps_target!r}")
    lines.append("layers:")
    for layer in net.layers:
        body = ", ".join(
            f"{key}: {layer.kind.value if key == 'kind' else getattr(layer, key)}" for key in _LAYER_KEYS
        )
        lines.append(f"  - {{{body}}}")
    return "\n".join(lines) + "\n"


def parse_platform(text: str) -> PlatformSpec:
    root = _compose(text)
    fields = _mapping(root, _PLATFORM_KEYS, "")
    rsc = {}
    for key in ("lut", "ff", "dsp", "bram"):
        rsc[key] = _float(_require(fields, key, "", root), key)
    cost = ResourceCostModel()
    if "cost_model" in fields:
        cf = _mapping(fields["cost_model"], _COST_KEYS, "cost_model")
        kwargs = {}
        for key, vnode in cf.items():
            kwargs[key] = _int(vnode, f"cost_model.{key}") if key == "bram_bytes" else _float(vnode, f"cost_model.{key}")
        try:
            cost = ResourceCostModel(**kwargs)
        except ValidationError as exc:
            raise ParseError(str(exc), field="cost_model", line=_line(fields["cost_model"])) from None
    try:
        return PlatformSpec(
            rsc_avail=ResourceVector(**rsc),
            b_mem=_float(_require(fields, "b_mem_bytes_per_s", "", root), "b_mem_bytes_per_s"),
            clock_hz=_float(_require(fields, "clock_hz", "", root), "clock_hz"),
            port_width_bits=_int(_require(fields, "port_width_bits", "", root), "port_width_bits"),
            wordlength_bits=_int(_require(fields, "wordlength_bits", "", root), "wordlength_bits"),
            burst_length=_int(_require(fields, "burst_length", "", root), "burst_length"),
            cost_model=cost,
        )
    except ValidationError as exc:
        raise ParseError(str(exc), line=_line(root)) from None


def serialize_platform(p: PlatformSpec) -> str:
    r = p.rsc_avail
    lines = [
        f"lut: {r.lut!r}", f"ff: {r.ff!r}", f"dsp: {r.dsp!r}", f"bram: {r.bram!r}",
        f"b_mem_bytes_per_s: {p.b_mem!r}", f"clock_hz: {p.clock_hz!r}",
        f"port_width_bits: {p.port_width_bits}", f"wordlength_bits: {p.wordlength_bits}",
        f"burst_length: {p.burst_length}", "cost_model:",
    ]
    for key in _COST_KEYS:
        lines.append(f"  {key}: {getattr(p.cost_model, key)!r}")
    return "\n".join(lines) + "\n"
