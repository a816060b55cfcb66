"""Minimal encoder-decoder segmentation network with hand-written backprop.

The public ``forward`` takes and returns N x 1 x H x W arrays. Each level is
two 3x3 same-padded conv + ReLU pairs, 2x2 max-pool on the way down,
nearest-neighbour 2x upsampling and skip concatenation on the way up, and a
1x1 conv + sigmoid head.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"PIXREGCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 1

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1 or self.in_channels != 1:
            raise ValueError(f"invalid network spec: {self}")

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def conv_layers(self) -> list[tuple[str, int, int]]:
        """(name, in_channels, out_channels) for every 3x3 conv, in execution order."""
        layers = []
        cin = self.in_channels
        for level in range(self.depth):
            cout = self.base_channels * 2**level
            layers += [(f"enc{level}.conv1", cin, cout), (f"enc{level}.conv2", cout, cout)]
            cin = cout
        cout = self.base_channels * 2**self.depth
        layers += [("mid.conv1", cin, cout), ("mid.conv2", cout, cout)]
        cin = cout
        for level in reversed(range(self.depth)):
            skip = self.base_channels * 2**level
            layers += [(f"dec{level}.conv1", cin + skip, skip), (f"dec{level}.conv2", skip, skip)]
            cin = skip
        return layers

    def param_count(self) -> int:
        n = sum(9 * cin * cout + cout for _, cin, cout in self.conv_layers())
        return n + self.base_channels + 1


ParamSet = dict[str, np.ndarray]


def init_params(spec: NetworkSpec, seed: int, dtype=np.float64) -> ParamSet:
    """He-normal kernels, zero biases. Deterministic for a given seed.

    Kernels are stored as (out, 3, 3, in) so that a reshape gives the im2col
    weight matrix directly.
    """
    rng = np.random.default_rng(seed)
    params: ParamSet = {}
    for name, cin, cout in spec.conv_layers():
        std = np.sqrt(2.0 / (9 * cin))
        params[f"{name}.w"] = (rng.standard_normal((cout, 3, 3, cin)) * std).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    c = spec.base_channels
    params["head.w"] = (rng.standard_normal((1, c)) * np.sqrt(2.0 / c)).astype(dtype)
    params["head.b"] = np.zeros(1, dtype=dtype)
    return params


def identity_params(spec: NetworkSpec, gain: float = 20.0, dtype=np.float64) -> ParamSet:
    """Weights that pass the input straight through the shallowest skip path.

    The output is ``sigmoid(gain * (x - 0.5))``, so thresholding at 0.5
    reproduces any binary input. Useful as an oracle predictor.
    """
    params = {k: np.zeros_like(v) for k, v in init_params(spec, 0, dtype).items()}
    if spec.depth == 0:
        chain = ["mid.conv1", "mid.conv2"]
    else:
        chain = ["enc0.conv1", "enc0.conv2", "dec0.conv1", "dec0.conv2"]
    for name in chain:
        w = params[f"{name}.w"]
        # dec0.conv1 sees [upsampled, skip]; the skip channels come last
        src = w.shape[-1] - spec.base_channels if name == "dec0.conv1" else 0
        w[0, 1, 1, src] = 1.0
    params["head.w"][0, 0] = gain
    params["head.b"][0] = -gain / 2
    return params


# ---------------------------------------------------------------- layers
#
# Activations are channel-major (C, N, H, W). A conv zero-pads each image,
# flattens the padded grid and computes on every padded position; each of the
# nine taps is then a constant offset into the flat array, so im2col is nine
# contiguous block copies. Border positions are cropped afterwards.


def _padded_geometry(shape):
    _, n, h, w = shape
    row = w + 2
    length = n * (h + 2) * row
    return row, length, row + 1


def conv3x3_forward(x, w, b):
    c, n, h, wd = x.shape
    row, length, margin = _padded_geometry(x.shape)
    xe = np.zeros((c, length + 2 * margin), x.dtype)
    xe[:, margin : margin + length].reshape(c, n, h + 2, row)[:, :, 1:-1, 1:-1] = x
    cols = np.empty((9, c, length), x.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        start = margin + (dy - 1) * row + dx - 1
        cols[k] = xe[:, start : start + length]
    out = w.reshape(w.shape[0], -1) @ cols.reshape(9 * c, length)
    out = out.reshape(-1, n, h + 2, row)[:, :, 1:-1, 1:-1] + b[:, None, None, None]
    return out, cols


def conv3x3_backward(dout, cols, w, x_shape, need_dx=True):
    c, n, h, _ = x_shape
    row, length, margin = _padded_geometry(x_shape)
    cout = w.shape[0]
    dfull = np.zeros((cout, n, h + 2, row), dout.dtype)
    dfull[:, :, 1:-1, 1:-1] = dout
    dfull = dfull.reshape(cout, length)
    dw = (dfull @ cols.reshape(9 * c, length).T).reshape(w.shape)
    db = dout.sum(axis=(1, 2, 3))
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(cout, -1).T @ dfull).reshape(9, c, length)
    dxe = np.zeros((c, length + 2 * margin), dout.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        start = margin + (dy - 1) * row + dx - 1
        dxe[:, start : start + length] += dcols[k]
    dx = dxe[:, margin : margin + length].reshape(c, n, h + 2, row)[:, :, 1:-1, 1:-1]
    return dx, dw, db


def maxpool_forward(x):
    c, n, h, w = x.shape
    blocks = x.reshape(c, n, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(c, n, h // 2, w // 2, 4)
    # argmax returns the first maximum in (0,0),(0,1),(1,0),(1,1) scan order
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout, idx):
    c, n, h2, w2 = dout.shape
    dblocks = np.zeros((c, n, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dblocks = dblocks.reshape(c, n, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dblocks.reshape(c, n, 2 * h2, 2 * w2)


def _pool_gap(x) -> float:
    """Smallest gap between the two largest values of any 2x2 block.

    Blocks whose maximum is 0 are skipped: after a ReLU those are inactive
    units, which stay tied at 0 under small perturbations.
    """
    c, n, h, w = x.shape
    blocks = x.reshape(c, n, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
    top2 = np.sort(blocks, axis=1)[:, -2:]
    live = top2[:, 1] > 0
    return float(np.min(top2[live, 1] - top2[live, 0], initial=np.inf))


def upsample_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(dout):
    c, n, h, w = dout.shape
    return dout.reshape(c, n, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------- network


@dataclass
class ForwardCache:
    spec: NetworkSpec
    convs: dict = field(default_factory=dict)  # name -> (cols, x_shape, relu_mask)
    pools: dict = field(default_factory=dict)  # level -> argmax indices
    head_in: np.ndarray | None = None
    probs: np.ndarray | None = None
    # smallest |ReLU pre-activation| and max-pool top-two gap; only with track_kinks
    kink_margin: float = float("inf")


def forward(params: ParamSet, spec: NetworkSpec, batch: np.ndarray, track_kinks: bool = False):
    """Run the network on an N x 1 x H x W batch.

    Returns float64 probabilities of shape N x 1 x H x W and the cache needed by
    :func:`backward`. Convolutions run in the dtype of ``params``. With
    ``track_kinks`` the cache also records how close the input sits to a
    ReLU or max-pool switch (``cache.kink_margin``).
    """
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1] != spec.in_channels:
        raise ValueError(f"expected N x {spec.in_channels} x H x W input, got {batch.shape}")
    h, w = batch.shape[2:]
    m = spec.multiple
    if h % m or w % m:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {m}")
    dtype = params["head.w"].dtype
    cache = ForwardCache(spec)
    x = np.ascontiguousarray(batch.transpose(1, 0, 2, 3), dtype=dtype)

    def conv_relu(name, x):
        z, cols = conv3x3_forward(x, params[f"{name}.w"], params[f"{name}.b"])
        mask = z > 0
        cache.convs[name] = (cols, x.shape, mask)
        if track_kinks:
            cache.kink_margin = min(cache.kink_margin, float(np.min(np.abs(z))))
        return z * mask

    skips = []
    for level in range(spec.depth):
        x = conv_relu(f"enc{level}.conv2", conv_relu(f"enc{level}.conv1", x))
        skips.append(x)
        if track_kinks:
            cache.kink_margin = min(cache.kink_margin, _pool_gap(x))
        x, cache.pools[level] = maxpool_forward(x)
    x = conv_relu("mid.conv2", conv_relu("mid.conv1", x))
    for level in reversed(range(spec.depth)):
        x = np.concatenate([upsample_forward(x), skips[level]], axis=0)
        x = conv_relu(f"dec{level}.conv2", conv_relu(f"dec{level}.conv1", x))

    cache.head_in = x
    logits = np.tensordot(params["head.w"], x, axes=1) + params["head.b"][:, None, None, None]
    probs = sigmoid(logits.astype(np.float64)).transpose(1, 0, 2, 3)
    cache.probs = probs
    return probs, cache


def backward(params: ParamSet, cache: ForwardCache, grad_out: np.ndarray) -> ParamSet:
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dprobs."""
    grad_out = np.asarray(grad_out)
    if grad_out.shape != cache.probs.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != output shape {cache.probs.shape}")
    spec = cache.spec
    dtype = params["head.w"].dtype
    p = cache.probs
    dlogits = (grad_out * p * (1.0 - p)).transpose(1, 0, 2, 3).astype(dtype)

    grads: ParamSet = {}
    x = cache.head_in
    grads["head.w"] = dlogits.reshape(1, -1) @ x.reshape(x.shape[0], -1).T
    grads["head.b"] = dlogits.sum(axis=(1, 2, 3))
    dx = params["head.w"].T[:, :, None, None] * dlogits

    def conv_relu_back(name, dout, need_dx=True):
        cols, x_shape, mask = cache.convs[name]
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = conv3x3_backward(
            dout * mask, cols, params[f"{name}.w"], x_shape, need_dx
        )
        return dx

    skip_grads = {}
    for level in range(spec.depth):
        dx = conv_relu_back(f"dec{level}.conv1", conv_relu_back(f"dec{level}.conv2", dx))
        cup = dx.shape[0] - spec.base_channels * 2**level
        skip_grads[level] = dx[cup:]
        dx = upsample_backward(dx[:cup])
    dx = conv_relu_back("mid.conv1", conv_relu_back("mid.conv2", dx), need_dx=spec.depth > 0)
    for level in reversed(range(spec.depth)):
        dx = maxpool_backward(dx, cache.pools[level]) + skip_grads[level]
        dx = conv_relu_back(f"enc{level}.conv2", dx)
        dx = conv_relu_back(f"enc{level}.conv1", dx, need_dx=level > 0)

    return {k: grads[k] for k in params}


def predict(params: ParamSet, spec: NetworkSpec, image: np.ndarray) -> np.ndarray:
    """Probability map for a single H x W image of any size.

    The image is zero-padded up to the next multiple of ``2**depth`` and the
    result cropped back.
    """
    h, w = image.shape
    m = spec.multiple
    padded = np.pad(image, ((0, -h % m), (0, -w % m)))
    probs, _ = forward(params, spec, padded[None, None])
    return probs[0, 0, :h, :w]


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(params: ParamSet, spec: NetworkSpec, meta: dict | None = None) -> bytes:
    header = {
        "spec": asdict(spec),
        "meta": meta or {},
        "tensors": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    chunks += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in params.values()]
    return b"".join(chunks)


def save_checkpoint(path, params: ParamSet, spec: NetworkSpec, meta: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(params, spec, meta))


def load_checkpoint(path) -> tuple[ParamSet, NetworkSpec, dict]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Tensors come back as float32 so that re-saving reproduces the file bytes.
    """
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<HI", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 14
    header = json.loads(data[offset : offset + hlen])
    offset += hlen
    params: ParamSet = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing or missing tensor data")
    return params, NetworkSpec(**header["spec"]), header["meta"]
