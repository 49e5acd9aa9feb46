"""Non-causal transformer refinement of the three modality tokens.

Pre-layer-norm residual blocks; multi-head self-attention over the token
axis (the three modalities form a set, so there is no mask and no
positional encoding — learned modality-type embeddings give tokens their
identity instead). L = 0 is the exact identity, which is what the
"without refiner" ablation runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError
from .rng import derive_seed, generator
from .tensor import (
    FLOPS,
    Tensor,
    add,
    attention,
    div,
    dropout,
    layer_norm,
    matmul,
    relu,
    reshape,
    softmax_rows,
    swap_last_axes,
    transpose,
)

N_TOKENS = 3


@dataclass
class RefinerLayer:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    w_q: Tensor  # (d_s, d_s)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor  # (4*d_s, d_s)
    ffn_b1: Tensor
    ffn_w2: Tensor  # (d_s, 4*d_s)
    ffn_b2: Tensor


@dataclass
class RefinerBlock:
    d_s: int
    n_heads: int
    type_embeddings: Tensor  # (3, d_s)
    layers: list[RefinerLayer] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def d_k(self) -> int:
        return self.d_s // self.n_heads


def init_refiner(d_s: int, n_heads: int, n_layers: int, seed: int) -> RefinerBlock:
    """Xavier-uniform projections, zero type embeddings, identity layer norms."""
    if n_heads < 1 or d_s % n_heads != 0:
        raise ParameterError(f"d_s={d_s} must be divisible by n_heads={n_heads}")
    if n_layers < 0:
        raise ParameterError(f"n_layers must be >= 0, got {n_layers}")
    block = RefinerBlock(
        d_s=d_s,
        n_heads=n_heads,
        type_embeddings=Tensor(np.zeros((N_TOKENS, d_s)), requires_grad=True),
    )

    def xavier(gen, fan_out, fan_in):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(gen.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)

    for layer_idx in range(n_layers):
        gen = generator(derive_seed(seed, f"refiner-init:layer{layer_idx}"))
        block.layers.append(
            RefinerLayer(
                ln1_gamma=Tensor(np.ones(d_s), requires_grad=True),
                ln1_beta=Tensor(np.zeros(d_s), requires_grad=True),
                w_q=xavier(gen, d_s, d_s),
                w_k=xavier(gen, d_s, d_s),
                w_v=xavier(gen, d_s, d_s),
                w_o=xavier(gen, d_s, d_s),
                ln2_gamma=Tensor(np.ones(d_s), requires_grad=True),
                ln2_beta=Tensor(np.zeros(d_s), requires_grad=True),
                ffn_w1=xavier(gen, 4 * d_s, d_s),
                ffn_b1=Tensor(np.zeros(4 * d_s), requires_grad=True),
                ffn_w2=xavier(gen, d_s, 4 * d_s),
                ffn_b2=Tensor(np.zeros(d_s), requires_grad=True),
            )
        )
    return block


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def refine(
    block: RefinerBlock,
    tokens: Tensor,
    train_mode: bool = False,
    dropout_p: float = 0.0,
    seed: int = 0,
) -> Tensor:
    """Refine a (3, d_s) or (batch, 3, d_s) token stack through all layers.

    With zero layers this returns its input unchanged (type embeddings
    are part of the layered path only).
    """
    single = tokens.ndim == 2
    if single:
        tokens = reshape(tokens, (1, *tokens.shape))
    if tokens.ndim != 3 or tokens.shape[1] != N_TOKENS or tokens.shape[2] != block.d_s:
        raise ContractError(
            f"refiner expects (batch, {N_TOKENS}, {block.d_s}) tokens, got {tokens.shape}"
        )
    if block.n_layers == 0:
        return reshape(tokens, tokens.shape[1:]) if single else tokens

    x = add(tokens, block.type_embeddings)
    scale = Tensor(math.sqrt(block.d_k))
    for layer_idx, layer in enumerate(block.layers):
        a_in = layer_norm(x, layer.ln1_gamma, layer.ln1_beta)
        q = _split_heads(matmul(a_in, swap_last_axes(layer.w_q)), block.n_heads)
        k = _split_heads(matmul(a_in, swap_last_axes(layer.w_k)), block.n_heads)
        v = _split_heads(matmul(a_in, swap_last_axes(layer.w_v)), block.n_heads)
        weights = softmax_rows(div(matmul(q, swap_last_axes(k)), scale))
        weights = dropout(
            weights, dropout_p, derive_seed(seed, f"refiner-drop:attn:{layer_idx}"), train_mode
        )
        attended = _merge_heads(matmul(weights, v))
        x = add(x, matmul(attended, swap_last_axes(layer.w_o)))
        f_in = layer_norm(x, layer.ln2_gamma, layer.ln2_beta)
        hidden = relu(add(matmul(f_in, swap_last_axes(layer.ffn_w1)), layer.ffn_b1))
        out = add(matmul(hidden, swap_last_axes(layer.ffn_w2)), layer.ffn_b2)
        out = dropout(
            out, dropout_p, derive_seed(seed, f"refiner-drop:ffn:{layer_idx}"), train_mode
        )
        x = add(x, out)
    return reshape(x, x.shape[1:]) if single else x


def named_refiner_parameters(block: RefinerBlock) -> list[tuple[str, Tensor]]:
    params: list[tuple[str, Tensor]] = [("refiner.type_embeddings", block.type_embeddings)]
    for i, layer in enumerate(block.layers):
        prefix = f"refiner.layer{i}"
        params.extend(
            [
                (f"{prefix}.ln1_gamma", layer.ln1_gamma),
                (f"{prefix}.ln1_beta", layer.ln1_beta),
                (f"{prefix}.w_q", layer.w_q),
                (f"{prefix}.w_k", layer.w_k),
                (f"{prefix}.w_v", layer.w_v),
                (f"{prefix}.w_o", layer.w_o),
                (f"{prefix}.ln2_gamma", layer.ln2_gamma),
                (f"{prefix}.ln2_beta", layer.ln2_beta),
                (f"{prefix}.ffn_w1", layer.ffn_w1),
                (f"{prefix}.ffn_b1", layer.ffn_b1),
                (f"{prefix}.ffn_w2", layer.ffn_w2),
                (f"{prefix}.ffn_b2", layer.ffn_b2),
            ]
        )
    return params
