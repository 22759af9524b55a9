"""Parameter initialization and the small building blocks shared by every
model part: linear maps, feedforward sublayers, layer/group norm and convs.

Each parameter draws from its own generator seeded by (seed, name), so a
value depends only on its name and shape, never on registration order.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.autodiff.params import ParamStore
from medvt.core.tensor.rng import derive_seed, make_rng, normal

logger = logging.getLogger(__name__)


class ParamInit:
    """Registers freshly initialized parameters into a ParamStore."""

    def __init__(self, store: ParamStore, seed: int, dtype=np.float64):
        self.store = store
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)

    def _rng(self, name: str):
        return make_rng(derive_seed(self.seed, name))

    def glorot(self, name: str, shape: Sequence[int], fan_in: int, fan_out: int) -> None:
        std = math.sqrt(2.0 / (fan_in + fan_out))
        self.store.add(name, normal(self._rng(name), tuple(shape), std, self.dtype))

    def normal(self, name: str, shape: Sequence[int], std: float) -> None:
        self.store.add(name, normal(self._rng(name), tuple(shape), std, self.dtype))

    def zeros(self, name: str, shape: Sequence[int]) -> None:
        self.store.add(name, np.zeros(tuple(shape), dtype=self.dtype))

    def ones(self, name: str, shape: Sequence[int]) -> None:
        self.store.add(name, np.ones(tuple(shape), dtype=self.dtype))

    # --- composite registrations ---

    def linear(self, prefix: str, d_in: int, d_out: int, bias: bool = True) -> None:
        self.glorot(f"{prefix}.weight", (d_in, d_out), d_in, d_out)
        if bias:
            self.zeros(f"{prefix}.bias", (d_out,))

    def layer_norm(self, prefix: str, d: int) -> None:
        self.ones(f"{prefix}.gain", (d,))
        self.zeros(f"{prefix}.bias", (d,))

    def group_norm(self, prefix: str, channels: int) -> None:
        self.layer_norm(prefix, channels)

    def ffn(self, prefix: str, d: int, mult: int) -> None:
        self.linear(f"{prefix}.fc1", d, mult * d)
        self.linear(f"{prefix}.fc2", mult * d, d)

    def conv2d(self, prefix: str, kh: int, kw: int, cin: int, cout: int, bias: bool = True) -> None:
        self.glorot(f"{prefix}.weight", (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout)
        if bias:
            self.zeros(f"{prefix}.bias", (cout,))

    def conv3d(self, prefix: str, kt: int, kh: int, kw: int, cin: int, cout: int) -> None:
        self.glorot(f"{prefix}.weight", (kt, kh, kw, cin, cout), kt * kh * kw * cin, kt * kh * kw * cout)
        self.zeros(f"{prefix}.bias", (cout,))

    def multihead(self, prefix: str, d_q: int, d_kv: int, num_heads: int, head_dim: int, d_out: Optional[int],
                  values: bool = True) -> None:
        """wq/wk (and, with values, wv/wo) with heads packed along the columns."""
        width = num_heads * head_dim
        self.glorot(f"{prefix}.wq", (d_q, width), d_q, width)
        self.glorot(f"{prefix}.wk", (d_kv, width), d_kv, width)
        if values:
            self.glorot(f"{prefix}.wv", (d_kv, width), d_kv, width)
            self.glorot(f"{prefix}.wo", (width, d_out or width), width, d_out or width)


# --- forward helpers ---

def linear(graph: Graph, prefix: str, x: Var, bias: bool = True) -> Var:
    out = F.matmul(x, graph.param(f"{prefix}.weight"))
    return F.bias_add(out, graph.param(f"{prefix}.bias")) if bias else out


def ffn(graph: Graph, prefix: str, x: Var) -> Var:
    """Two-layer feedforward with relu."""
    return linear(graph, f"{prefix}.fc2", F.relu(linear(graph, f"{prefix}.fc1", x)))


def layer_norm(graph: Graph, prefix: str, x: Var, eps: float) -> Var:
    return F.layer_norm(x, eps, graph.param(f"{prefix}.gain"), graph.param(f"{prefix}.bias"))


def group_norm(graph: Graph, prefix: str, x: Var, groups: int, eps: float) -> Var:
    return F.group_norm(x, groups, eps, graph.param(f"{prefix}.gain"), graph.param(f"{prefix}.bias"))


def conv2d(graph: Graph, prefix: str, x: Var, stride: int = 1, pad: str = "same", bias: bool = True) -> Var:
    b = graph.param(f"{prefix}.bias") if bias else None
    return F.conv2d(x, graph.param(f"{prefix}.weight"), b, stride=stride, pad=pad)


def conv3d(graph: Graph, prefix: str, x: Var, pad: str = "same") -> Var:
    return F.conv3d(x, graph.param(f"{prefix}.weight"), graph.param(f"{prefix}.bias"), stride=1, pad=pad)


def flatten_tokens(x: Var) -> Var:
    """(T, H, W, C) -> (T*H*W, C) in (t, y, x) row-major order."""
    t, h, w, c = x.shape
    return F.reshape(x, (t * h * w, c))


def unflatten_tokens(x: Var, t: int, h: int, w: int) -> Var:
    return F.reshape(x, (t, h, w, x.shape[-1]))
