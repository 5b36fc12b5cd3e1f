"""Conditional epsilon-predictor: a compact UNet over [x_tau, X_c, M_i].

The architecture is described once as a flat list of steps (``walk``); the
same list drives the parameter layout and the forward pass, so the two can
never disagree.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from app.core.exceptions import ShapeMismatchException, ValidationException
from app.domain.models.denoiser import IN_CHANNELS, OUT_CHANNELS, DenoiserConfig, DenoiserParams
from app.domain.tensor import ops
from app.domain.tensor.tensor import Tensor, constant

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class Step:
    kind: str  # stem | res | push | down | up | head
    name: str = ""
    c_in: int = 0
    c_out: int = 0
    pop_skip: bool = False


def walk(cfg: DenoiserConfig) -> List[Step]:
    base = cfg.base_dim
    widths = [base * m for m in cfg.dim_mults]
    steps = [Step("stem", "in", IN_CHANNELS, widths[0]), Step("push")]
    skips = [widths[0]]
    ch = widths[0]
    last = len(widths) - 1
    for level, width in enumerate(widths):
        for r in range(cfg.res_blocks_per_stage):
            steps.append(Step("res", f"down.{level}.{r}", ch, width))
            ch = width
            steps.append(Step("push"))
            skips.append(ch)
        if level != last:
            steps.append(Step("down"))
            steps.append(Step("push"))
            skips.append(ch)
    steps.append(Step("res", "mid.0", ch, ch))
    steps.append(Step("res", "mid.1", ch, ch))
    for level in reversed(range(len(widths))):
        width = widths[level]
        for r in range(cfg.res_blocks_per_stage + 1):
            skip_ch = skips.pop()
            steps.append(Step("res", f"up.{level}.{r}", ch + skip_ch, width, pop_skip=True))
            ch = width
        if level != 0:
            steps.append(Step("up", f"up.{level}.upconv", ch, ch))
    steps.append(Step("head", "out", ch, OUT_CHANNELS))
    return steps


def _layer_specs(cfg: DenoiserConfig) -> Iterator[Tuple[str, Tuple[int, ...], str, int]]:
    """(name, shape, init kind, fan_in) in layout order."""
    temb = cfg.time_embed_dim
    yield "time.lin1.w", (temb, cfg.base_dim), "uniform", cfg.base_dim
    yield "time.lin1.b", (temb,), "zeros", 0
    yield "time.lin2.w", (temb, temb), "uniform", temb
    yield "time.lin2.b", (temb,), "zeros", 0
    for step in walk(cfg):
        n, ci, co = step.name, step.c_in, step.c_out
        if step.kind == "stem":
            yield f"{n}.conv.k", (co, ci, 3, 3), "uniform", ci * 9
            yield f"{n}.conv.b", (co,), "zeros", 0
        elif step.kind == "res":
            yield f"{n}.norm1.gamma", (ci,), "ones", 0
            yield f"{n}.norm1.beta", (ci,), "zeros", 0
            yield f"{n}.conv1.k", (co, ci, 3, 3), "uniform", ci * 9
            yield f"{n}.conv1.b", (co,), "zeros", 0
            yield f"{n}.temb.w", (co, temb), "uniform", temb
            yield f"{n}.temb.b", (co,), "zeros", 0
            yield f"{n}.norm2.gamma", (co,), "ones", 0
            yield f"{n}.norm2.beta", (co,), "zeros", 0
            yield f"{n}.conv2.k", (co, co, 3, 3), "uniform", co * 9
            yield f"{n}.conv2.b", (co,), "zeros", 0
            if ci != co:
                yield f"{n}.skip.k", (co, ci, 1, 1), "uniform", ci
                yield f"{n}.skip.b", (co,), "zeros", 0
        elif step.kind == "up":
            yield f"{n}.k", (co, ci, 3, 3), "uniform", ci * 9
            yield f"{n}.b", (co,), "zeros", 0
        elif step.kind == "head":
            yield f"{n}.norm.gamma", (ci,), "ones", 0
            yield f"{n}.norm.beta", (ci,), "zeros", 0
            yield f"{n}.conv.k", (co, ci, 3, 3), "zeros", 0
            yield f"{n}.conv.b", (co,), "zeros", 0


def _check_groups(cfg: DenoiserConfig) -> None:
    for step in walk(cfg):
        widths = []
        if step.kind == "res":
            widths = [step.c_in, step.c_out]
        elif step.kind == "head":
            widths = [step.c_in]
        for c in widths:
            if c % cfg.norm_groups:
                raise ValidationException(
                    f"{step.name}: {c} channels not divisible by norm_groups={cfg.norm_groups}"
                )


def build_layout(cfg: DenoiserConfig) -> Dict[str, Tuple[int, Tuple[int, ...]]]:
    _check_groups(cfg)
    layout: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
    offset = 0
    for name, shape, _, _ in _layer_specs(cfg):
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout


def parameter_count(cfg: DenoiserConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _, _ in _layer_specs(cfg))


def init_params(cfg: DenoiserConfig, dtype=np.float32) -> DenoiserParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm scales, zero final conv."""
    layout = build_layout(cfg)
    rng = np.random.default_rng(cfg.init_seed)
    flat = np.zeros(sum(int(np.prod(s)) for _, s in layout.values()), dtype=np.float64)
    for name, shape, kind, fan_in in _layer_specs(cfg):
        offset, _ = layout[name]
        size = int(np.prod(shape))
        if kind == "uniform":
            bound = 1.0 / math.sqrt(fan_in)
            flat[offset : offset + size] = rng.uniform(-bound, bound, size=size)
        elif kind == "ones":
            flat[offset : offset + size] = 1.0
    params = DenoiserParams(flat.astype(dtype), layout, cfg.init_seed)
    logger.info("denoiser built: %d parameters (base_dim=%d, dim_mults=%s)", params.count, cfg.base_dim, cfg.dim_mults)
    return params


def sinusoidal_features(tau: float, dim: int) -> np.ndarray:
    """Raw sin/cos features with log-spaced frequencies; [sin(...), cos(...)]."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = float(tau) * freqs
    feats = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        feats = np.concatenate([feats, [0.0]])
    return feats


class UNet:
    def __init__(self, cfg: DenoiserConfig):
        self.cfg = cfg
        self.steps = walk(cfg)
        self.layout = build_layout(cfg)

    def weights(self, params: DenoiserParams, requires_grad: bool = False) -> Dict[str, Tensor]:
        """One tensor per named view; gradients come back per name."""
        if params.layout.keys() != self.layout.keys():
            raise ValidationException("parameter layout does not match the denoiser configuration")
        return {name: Tensor(params.view(name), requires_grad=requires_grad) for name in self.layout}

    def flatten(self, per_name: Dict[str, np.ndarray], dtype=np.float64) -> np.ndarray:
        out = np.zeros(sum(int(np.prod(s)) for _, s in self.layout.values()), dtype=dtype)
        for name, (offset, shape) in self.layout.items():
            size = int(np.prod(shape))
            out[offset : offset + size] = np.asarray(per_name[name]).reshape(-1)
        return out

    def time_embed(self, w: Dict[str, Tensor], tau: float) -> Tensor:
        dtype = w["time.lin1.w"].dtype
        feats = constant(sinusoidal_features(tau, self.cfg.base_dim), dtype=dtype)
        h = ops.silu(ops.linear(feats, w["time.lin1.w"], w["time.lin1.b"]))
        return ops.linear(h, w["time.lin2.w"], w["time.lin2.b"])

    def _res_block(self, w: Dict[str, Tensor], n: str, x: Tensor, temb_act: Tensor, rng) -> Tensor:
        g = self.cfg.norm_groups
        h = ops.silu(ops.group_norm(x, w[f"{n}.norm1.gamma"], w[f"{n}.norm1.beta"], g))
        h = ops.add_channel(ops.conv2d(h, w[f"{n}.conv1.k"]), w[f"{n}.conv1.b"])
        h = ops.add_channel(h, ops.linear(temb_act, w[f"{n}.temb.w"], w[f"{n}.temb.b"]))
        h = ops.silu(ops.group_norm(h, w[f"{n}.norm2.gamma"], w[f"{n}.norm2.beta"], g))
        h = ops.dropout(h, self.cfg.dropout, rng)
        h = ops.add_channel(ops.conv2d(h, w[f"{n}.conv2.k"]), w[f"{n}.conv2.b"])
        if f"{n}.skip.k" in w:
            x = ops.add_channel(ops.conv2d(x, w[f"{n}.skip.k"]), w[f"{n}.skip.b"])
        return ops.add(x, h)

    def apply(self, w: Dict[str, Tensor], x: Tensor, tau: float, rng: Optional[np.random.Generator] = None) -> Tensor:
        """x: [3, H, W] stacked input; returns [1, H, W]. Dropout only when rng is given."""
        if x.ndim != 3 or x.shape[0] != IN_CHANNELS:
            raise ShapeMismatchException("denoiser input", (IN_CHANNELS, "H", "W"), x.shape)
        self.cfg.check_grid(x.shape[1], x.shape[2])
        temb_act = ops.silu(self.time_embed(w, tau))
        skips: List[Tensor] = []
        h = x
        for step in self.steps:
            if step.kind == "stem":
                h = ops.add_channel(ops.conv2d(h, w["in.conv.k"]), w["in.conv.b"])
            elif step.kind == "push":
                skips.append(h)
            elif step.kind == "down":
                h = ops.avg_downsample2x(h)
            elif step.kind == "res":
                if step.pop_skip:
                    h = ops.concat([h, skips.pop()])
                h = self._res_block(w, step.name, h, temb_act, rng)
            elif step.kind == "up":
                h = ops.nearest_upsample2x(h)
                h = ops.add_channel(ops.conv2d(h, w[f"{step.name}.k"]), w[f"{step.name}.b"])
            elif step.kind == "head":
                h = ops.silu(ops.group_norm(h, w["out.norm.gamma"], w["out.norm.beta"], self.cfg.norm_groups))
                h = ops.add_channel(ops.conv2d(h, w["out.conv.k"]), w["out.conv.b"])
        return h

    def stack_inputs(self, x_tau: ArrayLike, x_c: ArrayLike, m_i: ArrayLike, dtype) -> Tensor:
        parts = []
        for name, a in (("x_tau", x_tau), ("x_c", x_c), ("m_i", m_i)):
            t = a if isinstance(a, Tensor) else constant(np.asarray(a, dtype=dtype)[None], dtype=dtype)
            if t.ndim == 2:
                t = ops.reshape(t, (1, *t.shape))
            parts.append(t)
        shapes = {p.shape for p in parts}
        if len(shapes) != 1:
            raise ShapeMismatchException("denoiser inputs", parts[0].shape, sorted(shapes)[-1])
        return ops.concat(parts)

    def forward(
        self,
        params: DenoiserParams,
        x_tau: ArrayLike,
        x_c: ArrayLike,
        m_i: ArrayLike,
        tau: float,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """eps_hat as an (H, W) array."""
        w = self.weights(params)
        x = self.stack_inputs(x_tau, x_c, m_i, params.dtype)
        return self.apply(w, x, tau, rng).data[0]

    def bind(self, params: DenoiserParams) -> "BoundDenoiser":
        return BoundDenoiser(self, params)


class BoundDenoiser:
    """Frozen (net, params) pair satisfying the epsilon-predictor protocol; dropout off."""

    def __init__(self, net: UNet, params: DenoiserParams):
        self.net = net
        self.params = params
        self._weights = net.weights(params)

    def __call__(self, x_tau: np.ndarray, x_c: np.ndarray, m_i: np.ndarray, tau: int) -> np.ndarray:
        x = self.net.stack_inputs(x_tau, x_c, m_i, self.params.dtype)
        return self.net.apply(self._weights, x, tau).data[0]
