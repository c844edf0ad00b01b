"""Gated fusion head and the paired geometry-only baseline.

Both modalities are projected to the shared width n and layer-normalized;
a sigmoid gate over their concatenation interpolates between them per
coordinate, and an MLP regresses the target from the fused vector. The
baseline feeds the normalized geometry branch straight into the same MLP,
so an ablation isolates exactly the text pathway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FusionConfig:
    n: int           # shared latent width (geometry embedding size)
    d: int = 16      # reduced text width entering the fusion block

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"latent width must be >= 2 for layer norm, got {self.n}")
        if self.d < 1:
            raise ValueError(f"text width must be >= 1, got {self.d}")

    @property
    def head_hidden(self) -> int:
        return max(1, self.n // 2)


# Parameters used by the geometry-only baseline; the rest belong to the
# text branch and exist only in the multimodal model.
GEOMETRY_PARAM_NAMES = (
    "W_g", "ln_g_gamma", "ln_g_beta", "head_w1", "head_b1", "head_w2", "head_b2",
)
TEXT_BRANCH_PARAM_NAMES = (
    "W_t", "ln_t_gamma", "ln_t_beta", "gate_w", "gate_b",
)


class FusionParams:
    """Learnable fusion state.

    Shapes: W_g is n x n, W_t is n x d, the gate weight is n x 2n (it acts
    on the concatenation of the two n-wide normalized branches), gate bias
    n, per-branch layer-norm affines n, and the prediction head is
    n -> n/2 -> 1 with shifted softplus between.
    """

    def __init__(self, config: FusionConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: FusionConfig, seed: int = 0) -> "FusionParams":
        rng = np.random.default_rng(seed)
        n, d, h = config.n, config.d, config.head_hidden

        def dense(rows, cols, fan_in):
            return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(rows, cols)), requires_grad=True)

        def vec(size, value=0.0):
            return ad.Tensor(np.full(size, value, dtype=np.float64), requires_grad=True)

        tensors = {
            "W_g": dense(n, n, n),
            "W_t": dense(n, d, d),
            "gate_w": dense(n, 2 * n, 2 * n),
            "gate_b": vec(n),
            "ln_g_gamma": vec(n, 1.0),
            "ln_g_beta": vec(n),
            "ln_t_gamma": vec(n, 1.0),
            "ln_t_beta": vec(n),
            "head_w1": dense(n, h, n),
            "head_b1": vec(h),
            "head_w2": dense(h, 1, h),
            "head_b2": vec(1),
        }
        return cls(config, tensors)

    def named_params(self, modality: str = "multimodal"):
        if modality == "geometry_only":
            return [(k, self.tensors[k]) for k in GEOMETRY_PARAM_NAMES]
        return list(self.tensors.items())

    def n_parameters(self, modality: str = "multimodal") -> int:
        return sum(t.data.size for _, t in self.named_params(modality))

    def text_branch_parameters(self) -> int:
        """Parameter-count difference of multimodal over geometry-only
        within the fusion block (the projection head adds its own)."""
        return sum(self.tensors[k].data.size for k in TEXT_BRANCH_PARAM_NAMES)


@dataclass
class FusedRepr:
    f: ad.Tensor      # fused representation, componentwise between the branches
    gate: ad.Tensor   # sigmoid gate in (0, 1) per coordinate
    g_tilde: ad.Tensor
    t_tilde: ad.Tensor


def _as_rows(x: ad.Tensor, width: int, owner: str) -> tuple:
    if x.data.ndim == 1:
        if x.data.shape[0] != width:
            raise ad.ShapeError(f"{owner}: expected width {width}, got {x.data.shape}")
        return ad.reshape(x, (1, width)), True
    if x.data.ndim == 2:
        if x.data.shape[1] != width:
            raise ad.ShapeError(f"{owner}: expected width {width}, got {x.data.shape}")
        return x, False
    raise ad.ShapeError(f"{owner}: expected a vector or rows, got {x.data.shape}")


def _geometry_branch(g: ad.Tensor, p: FusionParams):
    rows, single = _as_rows(g, p.config.n, "W_g")
    g_proj = ad.matmul(rows, ad.transpose(p.tensors["W_g"]))
    g_tilde = ad.layer_norm(g_proj, p.tensors["ln_g_gamma"], p.tensors["ln_g_beta"])
    return g_tilde, single


def fuse(g: ad.Tensor, t_p: ad.Tensor, p: FusionParams) -> FusedRepr:
    """Project, normalize, gate, and interpolate the two modalities.

    g is the geometry embedding (n or B x n), t_p the reduced text
    embedding (d or B x d). Gate, branches and fused output share g's
    layout.
    """
    g_tilde, g_single = _geometry_branch(g, p)
    t_rows, t_single = _as_rows(t_p, p.config.d, "W_t")
    if g_single != t_single or (not g_single and g_tilde.data.shape[0] != t_rows.data.shape[0]):
        raise ad.ShapeError(
            f"fuse: geometry {g.data.shape} and text {t_p.data.shape} batches do not align"
        )
    t_proj = ad.matmul(t_rows, ad.transpose(p.tensors["W_t"]))
    t_tilde = ad.layer_norm(t_proj, p.tensors["ln_t_gamma"], p.tensors["ln_t_beta"])

    both = ad.concat_last(g_tilde, t_tilde)
    gate = ad.sigmoid(ad.add(ad.matmul(both, ad.transpose(p.tensors["gate_w"])), p.tensors["gate_b"]))
    ones = ad.Tensor(np.ones_like(gate.data))
    f = ad.add(ad.mul(gate, g_tilde), ad.mul(ad.sub(ones, gate), t_tilde))

    if g_single:
        n = p.config.n
        f, gate = ad.reshape(f, (n,)), ad.reshape(gate, (n,))
        g_tilde, t_tilde = ad.reshape(g_tilde, (n,)), ad.reshape(t_tilde, (n,))
    return FusedRepr(f=f, gate=gate, g_tilde=g_tilde, t_tilde=t_tilde)


def _head(x_rows: ad.Tensor, p: FusionParams) -> ad.Tensor:
    hidden = ad.shifted_softplus(ad.add(ad.matmul(x_rows, p.tensors["head_w1"]), p.tensors["head_b1"]))
    return ad.add(ad.matmul(hidden, p.tensors["head_w2"]), p.tensors["head_b2"])


def predict(f: ad.Tensor, p: FusionParams) -> ad.Tensor:
    """Scalar regression from the fused representation; differentiable end
    to end through fuse, encode and project. Returns () for a single vector
    or (B, 1) for rows."""
    rows, single = _as_rows(f, p.config.n, "head")
    out = _head(rows, p)
    return ad.reshape(out, ()) if single else out


def geometry_only_head(g: ad.Tensor, p: FusionParams) -> ad.Tensor:
    """Baseline: normalized geometry stem straight into the same MLP head;
    no gate, no text branch anywhere in the tape."""
    g_tilde, single = _geometry_branch(g, p)
    out = _head(g_tilde, p)
    return ad.reshape(out, ()) if single else out
