"""Closed-form transformer compute accounting.

Per-sample FLOPs for in-context and cross-attention transformer stacks,
itemized per operation and in simplified form, plus the bias-free parameter
count 12 * d_model * n_layer * (2 d_attn + d_ff) and the C = 6 N D solvers.

All itemized accounting is exact integer arithmetic (Python integers are
unbounded, so products up to 1e24 and beyond are exact).

For reference, the fully itemized per-token count that includes embedding and
logits (not a first-class operation here, since attention blocks dominate
transformer scaling and embedding/logits terms are conventionally dropped
for diffusion transformers):

    embedding   2 * l_ctx * N_voc * d_model
    qkv         2 * 3 * l_ctx * d_model * d_model
    qk          2 * l_ctx * l_ctx * d_model
    softmax     3 * n_head * l_ctx * l_ctx
    mask        2 * l_ctx * l_ctx * d_model
    projection  2 * l_ctx * d_model * d_model
    dense       2 * l_ctx * (d_model * d_ff * 2)
    logits      2 * l_ctx * d_model * N_voc
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class TransformerShape:
    """Dimensions of one transformer stack.

    d_attn defaults to d_model and d_ff to 4 * d_model (the regime where the
    simplified formulas apply). Context length l_ctx = l_img + l_text + l_time.
    """

    n_layer: int
    d_model: int
    l_img: int = 256
    l_text: int = 120
    l_time: int = 1
    d_attn: int = 0   # 0 -> d_model
    d_ff: int = 0     # 0 -> 4 * d_model
    n_head: int = 8
    n_voc: int = 0    # only used by vocabulary-bearing reference counts

    def __post_init__(self):
        for name in ("n_layer", "d_model", "l_img", "n_head"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.l_text < 0 or self.l_time < 0:
            raise ConfigError("token counts must be >= 0")
        if self.d_attn == 0:
            object.__setattr__(self, "d_attn", self.d_model)
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)

    @property
    def l_ctx(self) -> int:
        return self.l_img + self.l_text + self.l_time


@dataclass(frozen=True)
class FlopsBreakdown:
    """Ordered (operation, FLOPs) rows; total is their exact integer sum."""

    rows: tuple
    total: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", sum(v for _, v in self.rows))

    def as_csv(self) -> str:
        lines = ["operation,flops"]
        lines += [f"{name},{v}" for name, v in self.rows]
        lines.append(f"total,{self.total}")
        return "\n".join(lines) + "\n"

    def as_text(self) -> str:
        width = max(len(name) for name, _ in self.rows + (("total", 0),))
        lines = [f"{name:<{width}}  {v:>20,}" for name, v in self.rows]
        lines.append(f"{'total':<{width}}  {self.total:>20,}")
        return "\n".join(lines)


def incontext_itemized(shape: TransformerShape) -> FlopsBreakdown:
    """Per-sample attention-block FLOPs with image/text/time tokens jointly
    attended; five rows (QKV, QK, mask, projection, FFN)."""
    nl, dm, da, lc = shape.n_layer, shape.d_model, shape.d_attn, shape.l_ctx
    rows = (
        ("self_attn_qkv_projection", 3 * 2 * nl * lc * dm * 3 * da),
        ("self_attn_qk", 3 * 2 * nl * lc * lc * da),
        ("self_attn_mask", 3 * 2 * nl * lc * lc * da),
        ("self_attn_projection", 3 * 2 * nl * lc * dm * da),
        ("ffn", 3 * 2 * 2 * nl * lc * 4 * dm * dm),
    )
    return FlopsBreakdown(rows)


def _check_simplified(shape: TransformerShape):
    if shape.d_attn != shape.d_model or shape.d_ff != 4 * shape.d_model:
        raise ConfigError(
            "simplified formula requires d_attn = d_model and d_ff = 4*d_model; "
            "use the itemized breakdown for this shape")


def incontext_flops(shape: TransformerShape) -> int:
    """Simplified per-sample count 72 l_ctx n_layer d^2 + 12 n_layer l_ctx^2 d.

    Equals the itemized total whenever d_attn = d_model and d_ff = 4*d_model.
    """
    _check_simplified(shape)
    nl, dm, lc = shape.n_layer, shape.d_model, shape.l_ctx
    return 72 * lc * nl * dm * dm + 12 * nl * lc * lc * dm


def crossattn_itemized(shape: TransformerShape) -> FlopsBreakdown:
    """Per-sample FLOPs with image self-attention plus text cross-attention;
    nine rows."""
    nl, dm, da = shape.n_layer, shape.d_model, shape.d_attn
    li, lt = shape.l_img, shape.l_text
    rows = (
        ("self_attn_qkv_projection", 3 * 2 * nl * li * dm * 3 * da),
        ("self_attn_qk", 3 * 2 * nl * li * li * da),
        ("self_attn_mask", 3 * 2 * nl * li * li * da),
        ("self_attn_projection", 3 * 2 * nl * li * dm * da),
        ("cross_attn_qkv", 3 * 2 * nl * (li + 2 * lt) * dm * da),
        ("cross_attn_qk", 3 * 2 * nl * lt * li * da),
        ("cross_attn_mask", 3 * 2 * nl * lt * li * da),
        ("cross_attn_projection", 3 * 2 * nl * li * dm * da),
        ("ffn", 3 * 2 * 2 * nl * li * 4 * dm * dm),
    )
    return FlopsBreakdown(rows)


def crossattn_flops(shape: TransformerShape) -> int:
    """Simplified cross-attention per-sample count:
    84 nl l_img d^2 + 12 nl l_img^2 d + 12 nl l_text d^2 + 12 nl l_text l_img d.
    """
    _check_simplified(shape)
    nl, dm = shape.n_layer, shape.d_model
    li, lt = shape.l_img, shape.l_text
    return (84 * nl * li * dm * dm + 12 * nl * li * li * dm
            + 12 * nl * lt * dm * dm + 12 * nl * lt * li * dm)


def kaplan_count(shape: TransformerShape) -> int:
    """Bias-free parameter count 12 d_model n_layer (2 d_attn + d_ff).

    With d_attn = d_model and d_ff = 4 d_model this is 72 n_layer d_model^2,
    the coefficient of the context-independent term of incontext_flops.
    """
    return 12 * shape.d_model * shape.n_layer * (2 * shape.d_attn + shape.d_ff)


def _require_positive(**kwargs):
    for name, v in kwargs.items():
        if v <= 0:
            raise ConfigError(f"{name} must be > 0, got {v}")


def total_compute(n_params, tokens):
    """C = 6 N D."""
    _require_positive(n_params=n_params, tokens=tokens)
    return 6 * n_params * tokens


def tokens_for(compute, n_params):
    """D = C / (6 N)."""
    _require_positive(compute=compute, n_params=n_params)
    return compute / (6 * n_params)


def params_for(compute, tokens):
    """N = C / (6 D)."""
    _require_positive(compute=compute, tokens=tokens)
    return compute / (6 * tokens)
