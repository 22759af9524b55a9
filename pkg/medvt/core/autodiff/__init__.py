"""Reverse-mode differentiation: tape, differentiable ops, parameters, optimizers."""

from medvt.core.autodiff import functional
from medvt.core.autodiff.gradcheck import grad_check
from medvt.core.autodiff.graph import Graph, Node, Var
from medvt.core.autodiff.optim import AdamWState, adamw_step, polynomial_lr, sgd_step
from medvt.core.autodiff.params import ParamEntry, ParamStore

__all__ = [
    "functional", "grad_check", "Graph", "Node", "Var", "AdamWState", "adamw_step",
    "polynomial_lr", "sgd_step", "ParamEntry", "ParamStore",
]
