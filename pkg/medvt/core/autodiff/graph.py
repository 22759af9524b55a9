"""Tape-based reverse-mode differentiation.

A Graph records every differentiable op in execution order, so the tape is
already topological: a node's inputs always precede it. backward() walks the
tape once in reverse and hands each node's output gradient to its
vector-Jacobian product closure.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)

# vjp(output_grad, needs) -> one gradient (or None) per input; needs[i] says
# whether input i wants a gradient at all.
VJP = Callable[[Tensor, Tuple[bool, ...]], Sequence[Optional[Tensor]]]


@dataclass
class Node:
    id: int
    op: str
    inputs: Tuple[int, ...]
    value: Tensor
    requires_grad: bool
    vjp: Optional[VJP] = None
    param: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict)


class Var:
    """Handle on a graph node; arithmetic operators record new nodes."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.id]

    @property
    def value(self) -> Tensor:
        return self.node.value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.node.value.shape

    @property
    def dtype(self):
        return self.node.value.dtype

    @property
    def ndim(self) -> int:
        return self.node.value.ndim

    def __add__(self, other: "Var") -> "Var":
        from medvt.core.autodiff import functional as F
        return F.add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        from medvt.core.autodiff import functional as F
        return F.sub(self, other)

    def __mul__(self, other: "Var") -> "Var":
        from medvt.core.autodiff import functional as F
        return F.mul(self, other)

    def __matmul__(self, other: "Var") -> "Var":
        from medvt.core.autodiff import functional as F
        return F.matmul(self, other)

    def __neg__(self) -> "Var":
        from medvt.core.autodiff import functional as F
        return F.scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, op={self.node.op}, shape={self.shape})"


class Graph:
    """Single-threaded tape. Build one per forward pass."""

    def __init__(self, params: Optional[ParamStore] = None, dtype=None):
        self.params = params if params is not None else ParamStore()
        self.dtype = np.dtype(dtype) if dtype is not None else None
        self.nodes: List[Node] = []
        self._param_vars: Dict[str, Var] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op: str, inputs: Tuple[int, ...], value: Tensor, requires_grad: bool,
                vjp: Optional[VJP] = None, param: Optional[str] = None, **meta: Any) -> Var:
        node = Node(len(self.nodes), op, inputs, np.asarray(value), requires_grad, vjp, param, dict(meta))
        self.nodes.append(node)
        return Var(self, node.id)

    def param(self, name: str) -> Var:
        """Leaf for a named parameter; one node per name per graph."""
        cached = self._param_vars.get(name)
        if cached is not None:
            return cached
        entry = self.params.entry(name)
        value = entry.value
        if self.dtype is not None and value.dtype != self.dtype:
            value = value.astype(self.dtype)
        var = self._append("param", (), value, entry.trainable, param=name)
        self._param_vars[name] = var
        return var

    def constant(self, value: Union[Tensor, float]) -> Var:
        array = np.asarray(value)
        if self.dtype is not None and array.dtype.kind == "f" and array.dtype != self.dtype:
            array = array.astype(self.dtype)
        return self._append("constant", (), array, False)

    def record(self, op: str, inputs: Sequence[Var], value: Tensor, vjp: VJP, **meta: Any) -> Var:
        for v in inputs:
            if v.graph is not self:
                raise ConfigError(f"op '{op}' mixes variables from different graphs")
        ids = tuple(v.id for v in inputs)
        requires_grad = any(self.nodes[i].requires_grad for i in ids)
        return self._append(op, ids, value, requires_grad, vjp if requires_grad else None, **meta)

    def backward(self, loss: Var) -> Dict[str, Tensor]:
        """Gradients of a scalar loss for every trainable parameter it reaches.

        Frozen parameters never require a gradient and are absent from the
        result, as are trainable parameters the loss does not depend on.
        """
        if loss.graph is not self:
            raise ConfigError("loss belongs to a different graph")
        if loss.value.ndim != 0:
            raise DimensionError("backward needs a scalar loss", loss.shape)

        grads: Dict[int, Tensor] = {loss.id: np.ones_like(loss.value)}
        param_grads: Dict[str, Tensor] = {}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.param is not None:
                param_grads[node.param] = g
                continue
            if node.vjp is None:
                continue
            needs = tuple(self.nodes[i].requires_grad for i in node.inputs)
            for input_id, input_grad, wanted in zip(node.inputs, node.vjp(g, needs), needs):
                if input_grad is None or not wanted:
                    continue
                expected = self.nodes[input_id].value.shape
                if input_grad.shape != expected:
                    raise DimensionError(f"vjp of '{node.op}' returned a mis-shaped gradient", expected, input_grad.shape)
                if input_id in grads:
                    grads[input_id] = grads[input_id] + input_grad
                else:
                    grads[input_id] = input_grad
        logger.debug(f"Backward over {len(self.nodes)} nodes produced {len(param_grads)} parameter gradients")
        return param_grads
