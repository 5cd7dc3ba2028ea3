"""Ablation variants of the positional output."""
from __future__ import annotations

import dataclasses
import enum
from typing import Optional


from ..core import ConfigError
from ..model import NetworkConfig, UnifiedNet, build


class AblationVariant(str, enum.Enum):
    PROPOSED = "proposed"
    AVERAGING_LAYER = "averaging-layer-in-network"
    RANDOM_SAMPLE = "random-ensemble-sample"
    DIRECT_FC = "direct-fc-regression"


# variant -> (network head, post-processing)
_LAYOUT = {
    AblationVariant.PROPOSED: ("ensemble", "mean"),
    AblationVariant.AVERAGING_LAYER: ("ensemble_gap", "none"),
    AblationVariant.RANDOM_SAMPLE: ("ensemble", "random_row"),
    AblationVariant.DIRECT_FC: ("fc", "none"),
}


def parse_variant(value) -> AblationVariant:
    try:
        return AblationVariant(value)
    except ValueError:
        raise ConfigError(f"unknown ablation variant {value!r}; choose from "
                          f"{[v.value for v in AblationVariant]}") from None


def build_variant(variant, config: NetworkConfig = NetworkConfig(), seed: int = 0,
                  weights: Optional[UnifiedNet] = None) -> tuple[UnifiedNet, dict]:
    """Network for ``variant`` plus pipeline overrides (``{"postprocess": ...}``).

    With ``weights`` every tensor whose name and shape match is copied over,
    so the averaging-layer and random-sample variants reuse a trained
    proposed network unchanged.
    """
    variant = parse_variant(variant)
    head, post = _LAYOUT[variant]
    net = build(dataclasses.replace(config, head=head), seed=seed)
    if weights is not None:
        src = weights.state_dict()
        own = net.state_dict()
        for k, v in src.items():
            if k in own and own[k].shape == v.shape:
                own[k] = v.clone()
        net.load_state_dict(own)
        net.to(next(weights.parameters()).dtype)
    return net, {"postprocess": post, "variant": variant.value}
