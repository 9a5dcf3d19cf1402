"""The dehazing network: band gating, spectral reconstruction, refinement.

The forward pass has three stages. A per-band scalar gate followed by ReLU
keeps informative bands and zeroes the rest. A small conv encoder squeezes
the gated cube to ten feature planes and a conv decoder re-expands them to
a full spectrum; the decoded planes are concatenated with the raw (or
gated) input and fused by a 3x3 conv into a preliminary estimate. Finally a
chain of alternating spectral and spatial attention blocks with conv FFNs
refines that estimate, with a 3x3 conv and an outer residual add.

No normalization layers anywhere, attention is single-head, projections
carry no bias, and attention output feeds the residual path directly.
Gradients for every parameter are computed in closed form; all math runs
at the dtype the parameters carry.
"""

from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .cube import HsiCube
from .errors import DimensionError, FormatError, ParameterError, ResourceError
from .layers import (
    conv2d,
    conv2d_backward,
    gelu,
    gelu_backward,
    planes_to_tokens,
    relu,
    relu_backward,
    spatial_attention,
    spatial_attention_backward,
    spectral_attention,
    spectral_attention_backward,
    tokens_to_planes,
)

SSE_MODES = ("both", "spectral", "spatial", "none")
CONCAT_MODES = ("hazy", "selected", "none")

# Number of refinement blocks in the chain; the full model alternates
# spectral, spatial, spectral, spatial.
CHAIN_LENGTH = 4

DEFAULT_TOKEN_CAP = 4096

_CONCAT_CODES = {"none": 0.0, "hazy": 1.0, "selected": 2.0}
_CONCAT_FROM_CODE = {int(v): k for k, v in _CONCAT_CODES.items()}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give the full model."""

    bands: int
    enc_width: int = 64
    feature_channels: int = 10
    dec_widths: tuple = (64, 128)
    ffn_expansion: int = 2
    abs_enabled: bool = True
    sse_mode: str = "both"
    concat_mode: str = "hazy"
    spatial_token_cap: int = DEFAULT_TOKEN_CAP

    def __post_init__(self):
        if self.bands < 1:
            raise ParameterError(f"bands must be positive, got {self.bands}")
        for name in ("enc_width", "feature_channels", "ffn_expansion", "spatial_token_cap"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.dec_widths) != 2 or any(w < 1 for w in self.dec_widths):
            raise ParameterError(f"dec_widths must be two positive ints, got {self.dec_widths}")
        if self.sse_mode not in SSE_MODES:
            raise ParameterError(f"sse_mode must be one of {SSE_MODES}, got {self.sse_mode!r}")
        if self.concat_mode not in CONCAT_MODES:
            raise ParameterError(
                f"concat_mode must be one of {CONCAT_MODES}, got {self.concat_mode!r}"
            )
        object.__setattr__(self, "dec_widths", tuple(int(w) for w in self.dec_widths))

    def sse_kinds(self) -> tuple:
        """Attention kinds of the refinement chain, in call order."""
        if self.sse_mode == "both":
            return tuple("spe" if i % 2 == 0 else "spa" for i in range(CHAIN_LENGTH))
        if self.sse_mode == "spectral":
            return ("spe",) * CHAIN_LENGTH
        if self.sse_mode == "spatial":
            return ("spa",) * CHAIN_LENGTH
        return ()

    @property
    def fuse_in_channels(self) -> int:
        return self.bands * (2 if self.concat_mode != "none" else 1)


@dataclass
class ConvParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


@dataclass
class BlockParams:
    kind: str
    att: AttentionParams
    ffn: list


@dataclass
class ModelParams:
    """All learnable tensors plus the config that shapes them."""

    config: ModelConfig
    band_gate: np.ndarray | None
    encoder: list
    decoder: list
    fuse: ConvParams
    blocks: list = field(default_factory=list)
    refine_out: ConvParams | None = None

    def named(self) -> "OrderedDict[str, np.ndarray]":
        """Every parameter tensor by a stable dotted name, in a fixed order.

        The returned arrays are the live tensors, not copies, so in-place
        optimizer updates through this view mutate the model.
        """
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        if self.band_gate is not None:
            out["band_gate"] = self.band_gate
        for i, conv in enumerate(self.encoder):
            out[f"encoder.{i}.weight"] = conv.weight
            out[f"encoder.{i}.bias"] = conv.bias
        for i, conv in enumerate(self.decoder):
            out[f"decoder.{i}.weight"] = conv.weight
            out[f"decoder.{i}.bias"] = conv.bias
        out["fuse.weight"] = self.fuse.weight
        out["fuse.bias"] = self.fuse.bias
        for i, blk in enumerate(self.blocks):
            head = f"refine.{i}.{blk.kind}"
            out[f"{head}.wq"] = blk.att.wq
            out[f"{head}.wk"] = blk.att.wk
            out[f"{head}.wv"] = blk.att.wv
            for j, conv in enumerate(blk.ffn):
                out[f"{head}.ffn.{j}.weight"] = conv.weight
                out[f"{head}.ffn.{j}.bias"] = conv.bias
        if self.refine_out is not None:
            out["refine.out.weight"] = self.refine_out.weight
            out["refine.out.bias"] = self.refine_out.bias
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def cast(self, dtype) -> "ModelParams":
        """Return a deep copy with every tensor converted to ``dtype``."""
        out = self.copy()
        out.band_gate = None if self.band_gate is None else self.band_gate.astype(dtype)
        out.encoder = [ConvParams(c.weight.astype(dtype), c.bias.astype(dtype)) for c in self.encoder]
        out.decoder = [ConvParams(c.weight.astype(dtype), c.bias.astype(dtype)) for c in self.decoder]
        out.fuse = ConvParams(self.fuse.weight.astype(dtype), self.fuse.bias.astype(dtype))
        out.blocks = [
            BlockParams(
                kind=b.kind,
                att=AttentionParams(
                    b.att.wq.astype(dtype), b.att.wk.astype(dtype), b.att.wv.astype(dtype)
                ),
                ffn=[ConvParams(c.weight.astype(dtype), c.bias.astype(dtype)) for c in b.ffn],
            )
            for b in self.blocks
        ]
        out.refine_out = (
            None
            if self.refine_out is None
            else ConvParams(self.refine_out.weight.astype(dtype), self.refine_out.bias.astype(dtype))
        )
        return out


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _conv_init(rng, cout, cin, k, dtype):
    return ConvParams(
        weight=_uniform(rng, (cout, cin, k, k), cin * k * k, dtype),
        bias=np.zeros(cout, dtype=dtype),
    )


GATE_INIT = 0.1


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fresh parameters: uniform fan-in weights, zero biases, gate at 0.1.

    The constant positive gate keeps every band alive at step zero so the
    selection can be learned rather than frozen by a dead ReLU.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    c = config.bands
    gate = np.full(c, GATE_INIT, dtype=dtype) if config.abs_enabled else None
    encoder = [
        _conv_init(rng, config.enc_width, c, 3, dtype),
        _conv_init(rng, config.feature_channels, config.enc_width, 3, dtype),
    ]
    d0, d1 = config.dec_widths
    decoder = [
        _conv_init(rng, d0, config.feature_channels, 3, dtype),
        _conv_init(rng, d1, d0, 3, dtype),
        _conv_init(rng, c, d1, 3, dtype),
    ]
    fuse = _conv_init(rng, c, config.fuse_in_channels, 3, dtype)
    blocks = []
    hidden = config.ffn_expansion * c
    for kind in config.sse_kinds():
        att = AttentionParams(
            wq=_uniform(rng, (c, c), c, dtype),
            wk=_uniform(rng, (c, c), c, dtype),
            wv=_uniform(rng, (c, c), c, dtype),
        )
        ffn = [
            _conv_init(rng, hidden, c, 3, dtype),
            _conv_init(rng, hidden, hidden, 3, dtype),
            _conv_init(rng, c, hidden, 3, dtype),
        ]
        blocks.append(BlockParams(kind=kind, att=att, ffn=ffn))
    refine_out = _conv_init(rng, c, c, 3, dtype) if blocks else None
    return ModelParams(
        config=config,
        band_gate=gate,
        encoder=encoder,
        decoder=decoder,
        fuse=fuse,
        blocks=blocks,
        refine_out=refine_out,
    )


def zero_gradients(params: ModelParams) -> dict:
    """A zero-filled gradient tensor per named parameter."""
    return {name: np.zeros_like(arr) for name, arr in params.named().items()}


# ---------------------------------------------------------------------------
# stage forwards

def band_select(y: np.ndarray, gate: np.ndarray):
    """Per-band scalar gate then ReLU: negatively gated bands become zero
    planes, so only positively weighted bands survive."""
    if gate.shape != (y.shape[0],):
        raise DimensionError(
            f"gate length {gate.shape} does not match {y.shape[0]} bands"
        )
    z = gate[:, np.newaxis, np.newaxis] * y
    return relu(z), z


def _conv_gelu_chain(x, convs, n_gelu):
    """Conv stack with GeLU after the first ``n_gelu`` layers; returns the
    output and the per-layer (input, preactivation) cache."""
    steps = []
    cur = x
    for i, conv in enumerate(convs):
        z = conv2d(cur, conv.weight, conv.bias)
        steps.append((cur, z))
        cur = gelu(z) if i < n_gelu else z
    return cur, steps


def _conv_gelu_chain_backward(dout, convs, steps, grads, names, n_gelu):
    cur = dout
    for i in range(len(convs) - 1, -1, -1):
        x_in, z = steps[i]
        if i < n_gelu:
            cur = gelu_backward(cur, z)
        cur, dw, db = conv2d_backward(cur, x_in, convs[i].weight)
        grads[f"{names[i]}.weight"] = dw
        grads[f"{names[i]}.bias"] = db
    return cur


def _block_forward(x, blk: BlockParams, token_cap: int):
    h, w = x.shape[1], x.shape[2]
    tokens = planes_to_tokens(x)
    if blk.kind == "spa":
        if tokens.shape[0] > token_cap:
            raise ResourceError(
                f"spatial attention over {tokens.shape[0]} tokens exceeds the "
                f"cap of {token_cap}; tile the input into smaller patches"
            )
        att_tokens, att_cache = spatial_attention(tokens, blk.att.wq, blk.att.wk, blk.att.wv)
    else:
        att_tokens, att_cache = spectral_attention(tokens, blk.att.wq, blk.att.wk, blk.att.wv)
    a = tokens_to_planes(att_tokens, h, w)
    r = a + x
    z1 = conv2d(r, blk.ffn[0].weight, blk.ffn[0].bias)
    a1 = gelu(z1)
    z2 = conv2d(a1, blk.ffn[1].weight, blk.ffn[1].bias)
    a2 = gelu(z2)
    f = conv2d(a2, blk.ffn[2].weight, blk.ffn[2].bias)
    out = f + r
    cache = {"att": att_cache, "r": r, "z1": z1, "a1": a1, "z2": z2, "a2": a2}
    return out, cache


def _block_backward(dout, blk: BlockParams, cache, grads, prefix):
    da2, dw, db = conv2d_backward(dout, cache["a2"], blk.ffn[2].weight)
    grads[f"{prefix}.ffn.2.weight"] = dw
    grads[f"{prefix}.ffn.2.bias"] = db
    dz2 = gelu_backward(da2, cache["z2"])
    da1, dw, db = conv2d_backward(dz2, cache["a1"], blk.ffn[1].weight)
    grads[f"{prefix}.ffn.1.weight"] = dw
    grads[f"{prefix}.ffn.1.bias"] = db
    dz1 = gelu_backward(da1, cache["z1"])
    dr_ffn, dw, db = conv2d_backward(dz1, cache["r"], blk.ffn[0].weight)
    grads[f"{prefix}.ffn.0.weight"] = dw
    grads[f"{prefix}.ffn.0.bias"] = db
    # out = f + r and r = a + x: the skip adds dout directly.
    dr = dout + dr_ffn
    h, w = dr.shape[1], dr.shape[2]
    datt_tokens = planes_to_tokens(dr)
    if blk.kind == "spa":
        dtokens, dwq, dwk, dwv = spatial_attention_backward(
            datt_tokens, cache["att"], blk.att.wq, blk.att.wk, blk.att.wv
        )
    else:
        dtokens, dwq, dwk, dwv = spectral_attention_backward(
            datt_tokens, cache["att"], blk.att.wq, blk.att.wk, blk.att.wv
        )
    grads[f"{prefix}.wq"] = dwq
    grads[f"{prefix}.wk"] = dwk
    grads[f"{prefix}.wv"] = dwv
    return dr + tokens_to_planes(dtokens, h, w)


def refine(x_pre: np.ndarray, params: ModelParams):
    """Refinement chain, 3x3 conv, outer residual. With no blocks this is
    the identity."""
    if not params.blocks:
        return x_pre, {"blocks": [], "outputs": []}
    cur = x_pre
    block_caches = []
    outputs = []
    for blk in params.blocks:
        cur, cache = _block_forward(cur, blk, params.config.spatial_token_cap)
        block_caches.append(cache)
        outputs.append(cur)
    final = conv2d(cur, params.refine_out.weight, params.refine_out.bias)
    out = final + x_pre
    return out, {"blocks": block_caches, "outputs": outputs, "chain_in": x_pre}


def forward_arrays(params: ModelParams, y: np.ndarray):
    """Full forward pass on a raw (C, H, W) array; returns (estimate, cache).

    The cache holds every intermediate needed for the backward pass plus a
    ``stages`` list of (name, array) pairs in execution order, used to
    attribute non-finite values to the stage that produced them.
    """
    cfg = params.config
    if y.ndim != 3 or y.shape[0] != cfg.bands:
        raise DimensionError(
            f"input shape {y.shape} does not match a {cfg.bands}-band model"
        )
    cache: dict = {"y": y}
    stages = []
    if cfg.abs_enabled:
        ys, gate_z = band_select(y, params.band_gate)
        cache["gate_z"] = gate_z
    else:
        ys = y
    cache["ys"] = ys
    stages.append(("band_select", ys))

    s, enc_steps = _conv_gelu_chain(ys, params.encoder, n_gelu=2)
    cache["enc_steps"] = enc_steps
    stages.append(("encoder", s))

    d, dec_steps = _conv_gelu_chain(s, params.decoder, n_gelu=3)
    cache["dec_steps"] = dec_steps
    stages.append(("decoder", d))

    if cfg.concat_mode == "hazy":
        fuse_in = np.concatenate([d, y], axis=0)
    elif cfg.concat_mode == "selected":
        fuse_in = np.concatenate([d, ys], axis=0)
    else:
        fuse_in = d
    x_pre = conv2d(fuse_in, params.fuse.weight, params.fuse.bias)
    cache["fuse_in"] = fuse_in
    cache["x_pre"] = x_pre
    stages.append(("fuse", x_pre))

    yhat, refine_cache = refine(x_pre, params)
    cache["refine"] = refine_cache
    for i, out in enumerate(refine_cache["outputs"]):
        stages.append((f"refine.{i}.{params.blocks[i].kind}", out))
    stages.append(("output", yhat))
    cache["stages"] = stages
    cache["yhat"] = yhat
    return yhat, cache


def backward_arrays(params: ModelParams, cache: dict, d_yhat: np.ndarray, d_selected=None):
    """Exact parameter gradients given upstream gradients.

    ``d_yhat`` is the loss gradient at the network output; ``d_selected``
    optionally adds a gradient applied directly to the gated cube (used by
    the sparsity penalty). Returns ``(grads, d_input)``.
    """
    cfg = params.config
    grads: dict = {}
    refine_cache = cache["refine"]
    if params.blocks:
        x_last = refine_cache["outputs"][-1]
        # output = refine_out(x_last) + x_pre
        cur, dw, db = conv2d_backward(d_yhat, x_last, params.refine_out.weight)
        grads["refine.out.weight"] = dw
        grads["refine.out.bias"] = db
        for i in range(len(params.blocks) - 1, -1, -1):
            blk = params.blocks[i]
            cur = _block_backward(cur, blk, refine_cache["blocks"][i], grads, f"refine.{i}.{blk.kind}")
        d_x_pre = d_yhat + cur
    else:
        d_x_pre = d_yhat

    d_fuse_in, dw, db = conv2d_backward(d_x_pre, cache["fuse_in"], params.fuse.weight)
    grads["fuse.weight"] = dw
    grads["fuse.bias"] = db
    c = cfg.bands
    d_dec_out = d_fuse_in[:c]
    d_y = None
    d_ys = np.zeros_like(cache["ys"])
    if cfg.concat_mode == "hazy":
        d_y = d_fuse_in[c:].copy()
    elif cfg.concat_mode == "selected":
        d_ys = d_ys + d_fuse_in[c:]

    d_s = _conv_gelu_chain_backward(
        np.ascontiguousarray(d_dec_out),
        params.decoder,
        cache["dec_steps"],
        grads,
        [f"decoder.{i}" for i in range(3)],
        n_gelu=3,
    )
    d_ys = d_ys + _conv_gelu_chain_backward(
        d_s, params.encoder, cache["enc_steps"], grads,
        [f"encoder.{i}" for i in range(2)], n_gelu=2,
    )
    if d_selected is not None:
        d_ys = d_ys + d_selected

    if cfg.abs_enabled:
        d_gate_z = relu_backward(d_ys, cache["gate_z"])
        grads["band_gate"] = (d_gate_z * cache["y"]).sum(axis=(1, 2))
        d_input = params.band_gate[:, np.newaxis, np.newaxis] * d_gate_z
    else:
        d_input = d_ys
    if d_y is not None:
        d_input = d_input + d_y
    return grads, d_input


def first_nonfinite_stage(cache: dict):
    """Name of the earliest forward stage with a non-finite value, or None."""
    for name, arr in cache.get("stages", []):
        if not np.isfinite(arr).all():
            return name
    return None


def forward(params: ModelParams, hazy: HsiCube) -> HsiCube:
    """Dehaze one cube; deterministic for fixed params and input."""
    yhat, _ = forward_arrays(params, hazy.data.astype(params.fuse.weight.dtype, copy=False))
    return HsiCube(data=yhat)


def forward_with_selected(params: ModelParams, hazy: HsiCube):
    """Like :func:`forward` but also returns the gated band-selection cube."""
    arr = hazy.data.astype(params.fuse.weight.dtype, copy=False)
    yhat, cache = forward_arrays(params, arr)
    return HsiCube(data=yhat), HsiCube(data=cache["ys"].copy())


# ---------------------------------------------------------------------------
# checkpoint layout

def params_to_entries(params: ModelParams) -> dict:
    """Flatten parameters for serialization, plus a concat-mode marker so a
    checkpoint fully determines the architecture."""
    entries = OrderedDict()
    entries["meta.concat_mode"] = np.array(
        [_CONCAT_CODES[params.config.concat_mode]], dtype=np.float32
    )
    for name, arr in params.named().items():
        entries[name] = arr
    return entries


def params_from_entries(entries: dict) -> ModelParams:
    """Rebuild a model from checkpoint entries, validating the layout.

    Widths and the refinement chain come from tensor shapes and names;
    missing, surplus, or mis-shaped entries raise :class:`FormatError`.
    """
    entries = dict(entries)
    code = entries.pop("meta.concat_mode", None)
    if code is None:
        raise FormatError("checkpoint lacks the meta.concat_mode entry")
    concat_mode = _CONCAT_FROM_CODE.get(int(np.rint(code.ravel()[0])))
    if concat_mode is None:
        raise FormatError(f"checkpoint has unknown concat mode code {code.ravel()[0]!r}")
    required = ("fuse.weight", "encoder.0.weight", "encoder.1.weight",
                "decoder.0.weight", "decoder.1.weight")
    for name in required:
        if name not in entries:
            raise FormatError(f"checkpoint lacks the {name} entry")
    kinds = {}
    for name in entries:
        parts = name.split(".")
        if parts[0] == "refine" and parts[1] != "out":
            idx = int(parts[1])
            kind = parts[2]
            if kind not in ("spe", "spa"):
                raise FormatError(f"checkpoint entry {name!r} has unknown block kind")
            if kinds.setdefault(idx, kind) != kind:
                raise FormatError(f"checkpoint mixes kinds for refinement block {idx}")
    chain = tuple(kinds[i] for i in sorted(kinds))
    if sorted(kinds) != list(range(len(kinds))):
        raise FormatError("checkpoint refinement blocks are not numbered contiguously")
    if chain == ():
        sse_mode = "none"
    elif chain == ("spe", "spa") * (CHAIN_LENGTH // 2):
        sse_mode = "both"
    elif chain == ("spe",) * CHAIN_LENGTH:
        sse_mode = "spectral"
    elif chain == ("spa",) * CHAIN_LENGTH:
        sse_mode = "spatial"
    else:
        raise FormatError(f"checkpoint refinement chain {chain} is not a supported layout")
    bands = int(entries["fuse.weight"].shape[0])
    if chain:
        hidden = int(entries[f"refine.0.{chain[0]}.ffn.0.weight"].shape[0])
        if hidden % bands:
            raise FormatError(
                f"FFN width {hidden} is not a multiple of the band count {bands}"
            )
        expansion = hidden // bands
    else:
        expansion = 2
    config = ModelConfig(
        bands=bands,
        enc_width=int(entries["encoder.0.weight"].shape[0]),
        feature_channels=int(entries["encoder.1.weight"].shape[0]),
        dec_widths=(
            int(entries["decoder.0.weight"].shape[0]),
            int(entries["decoder.1.weight"].shape[0]),
        ),
        ffn_expansion=expansion,
        abs_enabled="band_gate" in entries,
        sse_mode=sse_mode,
        concat_mode=concat_mode,
    )
    params = init_params(config, seed=0, dtype=np.float32)
    expected = params.named()
    for name, slot in expected.items():
        if name not in entries:
            raise FormatError(f"checkpoint lacks the {name} entry")
        arr = entries.pop(name)
        if arr.shape != slot.shape:
            raise FormatError(
                f"checkpoint entry {name} has shape {arr.shape}, expected {slot.shape}"
            )
        slot[...] = arr.astype(slot.dtype)
    if entries:
        raise FormatError(f"checkpoint has unexpected entries: {sorted(entries)}")
    return params
