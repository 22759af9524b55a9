"""Task head H: a small 3-D conv stack on F^D producing per-frame class logits."""

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.model import layers
from medvt.core.model.layers import ParamInit
from medvt.domain.models.configs import ModelConfig


def init_head(init: ParamInit, cfg: ModelConfig) -> None:
    c_in = cfg.d + cfg.num_heads
    init.conv3d("head.conv1", 3, 3, 3, c_in, cfg.d)
    init.group_norm("head.gn1", cfg.d)
    init.conv3d("head.conv2", 3, 3, 3, cfg.d, cfg.d)
    init.group_norm("head.gn2", cfg.d)
    init.conv3d("head.conv3", 1, 1, 1, cfg.d, cfg.num_classes)


def task_head(graph: Graph, decoder_features: Var, cfg: ModelConfig) -> Var:
    """Y' = (conv3x3x3 -> GN -> relu) x 2 -> conv1x1x1, shape (T, H_1, W_1, C_cls)."""
    x = decoder_features
    for i in (1, 2):
        x = layers.conv3d(graph, f"head.conv{i}", x)
        x = F.relu(layers.group_norm(graph, f"head.gn{i}", x, cfg.head_groups, cfg.norm_eps))
    return layers.conv3d(graph, "head.conv3", x)
