"""Network variants and their parameter / multiplier accounting."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attention import PooledAttention
from .autograd import Module, Tensor, no_grad, softmax, tensor
from .exceptions import ConfigError, ShapeError
from .layers import KERNEL_SIZE, Dense, ResidualBlock, SeparableUnit, avg_pool_time

REDUCTIONS = ("pooled_attention", "avg_pool")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    channels: int = 45
    dilated_blocks: int = 4
    plain_blocks: int = 0
    heads: int = 5
    reduction: str = "pooled_attention"
    num_classes: int = 12
    time_steps: int = 98
    n_mfcc: int = 40

    def __post_init__(self):
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        for key in ("channels", "heads", "num_classes", "time_steps", "n_mfcc"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.dilated_blocks < 0 or self.plain_blocks < 0:
            raise ConfigError("block counts must be non-negative")
        if self.reduction == "pooled_attention" and self.channels % self.heads:
            raise ConfigError(f"{self.channels} channels cannot be split into {self.heads} heads")

    @property
    def blocks(self) -> int:
        return self.dilated_blocks + self.plain_blocks


VARIANTS = {
    "ST-AttNet4": ModelSpec("ST-AttNet4", channels=45),
    "ST-AttNet4-wide": ModelSpec("ST-AttNet4-wide", channels=65),
    "ST-AttNet7": ModelSpec("ST-AttNet7", channels=45, plain_blocks=3),
    "ST-Net4": ModelSpec("ST-Net4", channels=45, reduction="avg_pool"),
}


def get_spec(name: str, **overrides) -> ModelSpec:
    try:
        spec = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None
    return replace(spec, **overrides) if overrides else spec


def dilation_schedule(n_layers: int) -> list[int]:
    """Depthwise dilations ``2 ** (i // 3)`` for layer indices ``i = 0 .. n_layers-1``."""
    return [2 ** (i // 3) for i in range(n_layers)]


class KWSNet(Module):
    """Separable temporal convolution stack followed by a temporal reduction and a dense classifier.

    Input is ``(B, T, F)`` MFCC features; :meth:`forward` returns ``(B, K)`` logits.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        C = spec.channels
        self.input_conv = SeparableUnit(spec.n_mfcc, C, 1, True, rng, dtype)
        dilations = dilation_schedule(2 * spec.dilated_blocks) + [1] * (2 * spec.plain_blocks)
        self.block = [ResidualBlock(C, dilations[2 * b:2 * b + 2], rng, dtype) for b in range(spec.blocks)]
        if spec.reduction == "pooled_attention":
            self.attention = PooledAttention(C, C, spec.heads, rng, dtype)
        else:
            self.attention = None
        self.classifier = Dense(C, spec.num_classes, rng, dtype)
        for name, p in self.named_parameters():
            p.name = name

    @property
    def dtype(self):
        return self.classifier.weight.dtype

    def depthwise_dilations(self) -> list[int]:
        return [d for blk in self.block for d in blk.dilations]

    def features(self, x) -> Tensor:
        """Output of the last residual block, ``(B, T, C)``."""
        x = tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.spec.n_mfcc:
            raise ShapeError(f"expected (B, T, {self.spec.n_mfcc}) features, got {x.shape}")
        if x.dtype != self.dtype and not x.requires_grad:
            x = Tensor(x.data.astype(self.dtype))
        h = self.input_conv(x)
        for blk in self.block:
            h = blk(h)
        return h

    def reduce(self, h: Tensor) -> Tensor:
        return self.attention(h) if self.attention is not None else avg_pool_time(h)

    def forward(self, x) -> Tensor:
        return self.classifier(self.reduce(self.features(x)))

    def predict_proba(self, x) -> np.ndarray:
        """Class posteriors in inference mode; restores the previous mode afterwards."""
        previous = self.mode
        self.eval()
        try:
            with no_grad():
                return softmax(self.forward(x), axis=-1).data
        finally:
            self.set_mode(previous)

    def attention_weights(self, x) -> np.ndarray:
        """Per-head frame weights ``(B, heads, T)`` in inference mode."""
        if self.attention is None:
            raise ConfigError(f"{self.spec.name} has no attention module")
        previous = self.mode
        self.eval()
        try:
            with no_grad():
                return self.attention.attention_weights(self.features(x))
        finally:
            self.set_mode(previous)

    def num_weights(self, include_bn: bool = False) -> int:
        total = 0
        for name, p in self.named_parameters():
            if include_bn or not name.endswith(("gamma", "beta")):
                total += p.size
        return total


def build(spec: ModelSpec | str, seed: int = 0, dtype=np.float64) -> KWSNet:
    if isinstance(spec, str):
        spec = get_spec(spec)
    return KWSNet(spec, seed=seed, dtype=dtype)


# Published per-layer figures (params, multipliers) as printed; used only to report deltas.
REFERENCE_TABLE = {
    "ST-AttNet4": {"conv": ("1.9K", "188K"), "res x4": ("17.2K", "1.69M"), "avg-att": ("4.3K", "207K"),
                   "softmax": ("0.5K", "540"), "total": ("24K", "2.0M")},
    "ST-AttNet4-wide": {"conv": ("2.7K", "266K"), "res x4": ("35.3K", "3.46M"), "avg-att": ("8.5K", "428K"),
                        "softmax": ("0.8K", "780"), "total": ("48K", "4.1M")},
    "ST-AttNet7": {"conv": ("1.9K", "188K"), "res x4": ("17.2K", "1.69M"), "res x3": ("12.9K", "1.27M"),
                   "avg-att": ("4.3K", "207K"), "softmax": ("0.5K", "540"), "total": ("37K", "3.3M")},
}


def parse_rounded(text: str) -> tuple[float, float]:
    """``"17.2K"`` -> ``(17200.0, 100.0)``: value and one unit of the last printed digit."""
    scale = {"K": 1e3, "M": 1e6}.get(text[-1].upper(), 1.0)
    digits = text[:-1] if scale != 1.0 else text
    decimals = len(digits.split(".")[1]) if "." in digits else 0
    return float(digits) * scale, scale / 10 ** decimals


def matches_rounded(value: int, text: str) -> bool:
    """True if ``value`` rounds or truncates to the printed figure."""
    ref, unit = parse_rounded(text)
    return abs(value - ref) < unit


@dataclass
class LayerCount:
    name: str
    k: str
    c: int
    d: str
    params: int
    multipliers: int
    bn_params: int = 0


@dataclass
class Footprint:
    variant: str
    per_layer: list[LayerCount] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.per_layer)

    @property
    def total_multipliers(self) -> int:
        return sum(r.multipliers for r in self.per_layer)

    @property
    def total_bn_params(self) -> int:
        return sum(r.bn_params for r in self.per_layer)

    def row(self, name: str) -> LayerCount:
        for r in self.per_layer:
            if r.name == name:
                return r
        raise KeyError(name)

    def reference_deltas(self) -> list[tuple[str, str, int, str]]:
        """``(row, column, computed, published)`` wherever the published rounded figure disagrees."""
        ref = REFERENCE_TABLE.get(self.variant, {})
        rows = [(r.name, r.params, r.multipliers) for r in self.per_layer]
        rows.append(("total", self.total_params, self.total_multipliers))
        out = []
        for name, params, mults in rows:
            if name not in ref:
                continue
            for column, value, text in (("params", params, ref[name][0]), ("multipliers", mults, ref[name][1])):
                if not matches_rounded(value, text):
                    out.append((name, column, value, text))
        return out

    def to_text(self) -> str:
        header = f"{'Layer':<10}{'k':>4}{'c':>6}{'d':>15}{'Params':>10}{'Mult.':>12}{'BN':>8}"
        lines = [f"Footprint of {self.variant}", header, "-" * len(header)]
        for r in self.per_layer:
            lines.append(f"{r.name:<10}{r.k:>4}{r.c:>6}{r.d:>15}{r.params:>10,}{r.multipliers:>12,}{r.bn_params:>8,}")
        lines.append("-" * len(header))
        lines.append(f"{'Total':<10}{'-':>4}{'-':>6}{'-':>15}{self.total_params:>10,}"
                     f"{self.total_multipliers:>12,}{self.total_bn_params:>8,}")
        deltas = self.reference_deltas()
        if deltas:
            lines.append("")
            lines.append("Differences from the published table (computed vs published):")
            for name, column, mine, ref in deltas:
                lines.append(f"  {name} {column}: {mine:,} vs {ref}")
            if any(name == "avg-att" and column == "params" for name, column, _, _ in deltas):
                lines.append("  avg-att counts one shared D_u x D projection for query, keys and values;"
                             " the published parameter figure is about twice that.")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "k", "c", "d", "params", "multipliers", "bn_params"])
        for r in self.per_layer:
            writer.writerow([r.name, r.k, r.c, r.d, r.params, r.multipliers, r.bn_params])
        writer.writerow(["total", "-", "-", "-", self.total_params, self.total_multipliers,
                         self.total_bn_params])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"variant": self.variant, "rows": [asdict(r) for r in self.per_layer],
                "total_params": self.total_params, "total_multipliers": self.total_multipliers}


def _separable_counts(T: int, c_in: int, c_out: int) -> tuple[int, int, int]:
    params = KERNEL_SIZE * c_in + c_in * c_out
    return params, T * params, 2 * c_in + 2 * c_out


def footprint(spec: ModelSpec | str) -> Footprint:
    """Count conv/dense weights and per-inference multiplies, one row per table line.

    Batch-norm scale/shift parameters are reported in ``bn_params`` and kept
    out of the headline ``params`` column.
    """
    if isinstance(spec, str):
        spec = get_spec(spec)
    T, C, F = spec.time_steps, spec.channels, spec.n_mfcc
    fp = Footprint(spec.name)
    p, m, bn = _separable_counts(T, F, C)
    fp.per_layer.append(LayerCount("conv", str(KERNEL_SIZE), C, "-", p, m, bn))
    unit_p, unit_m, unit_bn = _separable_counts(T, C, C)
    if spec.dilated_blocks:
        n = spec.dilated_blocks
        fp.per_layer.append(LayerCount(f"res x{n}", str(KERNEL_SIZE), C, "2^floor(i/3)",
                                       2 * n * unit_p, 2 * n * unit_m, 2 * n * unit_bn))
    if spec.plain_blocks:
        n = spec.plain_blocks
        fp.per_layer.append(LayerCount(f"res x{n}", str(KERNEL_SIZE), C, "1",
                                       2 * n * unit_p, 2 * n * unit_m, 2 * n * unit_bn))
    if spec.reduction == "pooled_attention":
        D = C
        # shared keys/values projection + pooled query projection + scores + weighted sum
        mults = T * C * D + C * D + 2 * T * D
        fp.per_layer.append(LayerCount("avg-att", "-", D, "-", C * D, mults))
    else:
        fp.per_layer.append(LayerCount("avg-pool", "-", C, "-", 0, C))
    K = spec.num_classes
    fp.per_layer.append(LayerCount("softmax", "-", K, "-", C * K, C * K))
    return fp


def layer_table(model: KWSNet) -> list[tuple[str, int]]:
    """``(parameter name, element count)`` for every parameter of a built model."""
    return [(name, p.size) for name, p in model.named_parameters()]
