from __future__ import annotations

from dataclasses import asdict, dataclass

ENCODER_KINDS = ("attention", "residual")
TRANSFORM_KINDS = ("affine-coupling", "rq-spline", "none")


@dataclass(frozen=True)
class EncoderConfig:
    encoder_kind: str = "attention"
    embed_blocks: int = 2
    embed_width: int = 64
    token_width: int = 120
    attn_layers: int = 2
    attn_heads: int = 12
    head_dim: int = 10
    post_attn_projection: int = 32
    dropout_p: float = 0.1
    residual_blocks: int = 4
    residual_width: int = 64
    emitter_blocks: int = 2
    emitter_width: int = 128

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.encoder_kind == "attention" and self.attn_heads * self.head_dim != self.token_width:
            raise ValueError("attn_heads * head_dim must equal token_width")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlowConfig:
    transform_kind: str = "affine-coupling"
    n_transforms: int = 4
    coupling_net_blocks: int = 2
    coupling_net_width: int = 128
    base_net_blocks: int = 2
    base_net_width: int = 64
    spline_bins: int = 20
    spline_left: float = 0.0
    spline_right: float = 1.0
    scale_bound: float = 5.0

    def __post_init__(self):
        if self.transform_kind not in TRANSFORM_KINDS:
            raise ValueError(f"transform_kind must be one of {TRANSFORM_KINDS}")
        if self.n_transforms < 0 or self.spline_bins < 2:
            raise ValueError("n_transforms must be >= 0 and spline_bins >= 2")
        if self.spline_right <= self.spline_left:
            raise ValueError("spline interval is empty")

    @property
    def effective_transforms(self) -> int:
        return 0 if self.transform_kind == "none" else self.n_transforms

    def to_dict(self) -> dict:
        return asdict(self)
