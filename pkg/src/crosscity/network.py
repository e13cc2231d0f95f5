"""Stacked ConvLSTM encoder with a 1x1-convolution prediction head.

The encoder unrolls each ConvLSTM layer over the k input frames (zero
initial states) and keeps the last hidden state of the top layer as the
per-region representation [W, H, L_r]. The head broadcasts the external
context vector over the grid, concatenates it onto the representation,
and applies a tanh 1x1 conv followed by a linear 1x1 conv. Because the
head mixes nothing spatially, parameters carry no dependence on W or H
and transplant between grids of any size.

Gate order inside the fused kernels is (input, forget, output, candidate).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensor import Tensor, channel_slice, concat, conv2d

CKPT_MAGIC = b"RTPK"
CKPT_VERSION = 1


@dataclass
class ConvLSTMLayerParams:
    kernel: Tensor          # [kh, kw, Cin, 4*Ch]
    hidden_kernel: Tensor   # [kh, kw, Ch, 4*Ch]
    bias: Tensor            # [4*Ch]

    @property
    def hidden(self):
        return self.hidden_kernel.shape[2]


@dataclass
class HeadLayerParams:
    kernel: Tensor          # [1, 1, Cin, Cout]
    bias: Tensor            # [Cout]


@dataclass
class NetworkParams:
    layers: list   # ConvLSTMLayerParams
    head: list     # HeadLayerParams; last layer is the linear output

    @property
    def rep_channels(self):
        return self.layers[-1].hidden

    def all_tensors(self):
        out = []
        for l in self.layers:
            out += [l.kernel, l.hidden_kernel, l.bias]
        for h in self.head:
            out += [h.kernel, h.bias]
        return out

    def named_tensors(self):
        out = []
        for n, l in enumerate(self.layers):
            out += [(f"layer{n}.kernel", l.kernel),
                    (f"layer{n}.hidden_kernel", l.hidden_kernel),
                    (f"layer{n}.bias", l.bias)]
        for n, h in enumerate(self.head):
            out += [(f"head{n}.kernel", h.kernel), (f"head{n}.bias", h.bias)]
        return out

    def zero_grads(self):
        for t in self.all_tensors():
            t.zero_grad()

    def copy(self, requires_grad=True):
        def dup(t):
            c = Tensor(t.data.copy(), requires_grad=requires_grad)
            return c
        layers = [ConvLSTMLayerParams(dup(l.kernel), dup(l.hidden_kernel),
                                      dup(l.bias)) for l in self.layers]
        head = [HeadLayerParams(dup(h.kernel), dup(h.bias)) for h in self.head]
        return NetworkParams(layers, head)


def convlstm_cell(x_t, h_prev, c_prev, params):
    """One ConvLSTM step; no peephole terms.

    x_t: [W,H,Cin], h_prev/c_prev: [W,H,Ch] -> (h_t, c_t).
    """
    ch = params.hidden
    zero_bias = Tensor(np.zeros(4 * ch))
    gates = conv2d(x_t, params.kernel, params.bias) + \
        conv2d(h_prev, params.hidden_kernel, zero_bias)
    i = channel_slice(gates, 0, ch).sigmoid()
    f = channel_slice(gates, ch, 2 * ch).sigmoid()
    o = channel_slice(gates, 2 * ch, 3 * ch).sigmoid()
    g = channel_slice(gates, 3 * ch, 4 * ch).tanh()
    c_t = f * c_prev + i * g
    h_t = o * c_t.tanh()
    return h_t, c_t


def encode(frames, params):
    """Region representation from k input frames.

    frames: list of k Tensors [W,H,Cin] (oldest first) -> [W,H,L_r].
    """
    if len(frames) == 0:
        raise DataError("encode requires at least one input frame")
    W, H = frames[0].shape[0], frames[0].shape[1]
    seq = frames
    for layer in params.layers:
        ch = layer.hidden
        h = Tensor(np.zeros((W, H, ch)))
        c = Tensor(np.zeros((W, H, ch)))
        out_seq = []
        for x_t in seq:
            h, c = convlstm_cell(x_t, h, c, layer)
            out_seq.append(h)
        seq = out_seq
    return seq[-1]


def apply_head(rep, ext, params):
    """Prediction from a representation and a per-timestep context vector."""
    W, H = rep.shape[0], rep.shape[1]
    ext = np.asarray(ext, dtype=np.float64)
    expected = params.head[0].kernel.shape[2] - rep.shape[2]
    if ext.shape != (expected,):
        raise DataError(
            f"external feature length {ext.shape} does not match the "
            f"configured length ({expected},)")
    merged = rep
    if expected > 0:
        tiled = Tensor(np.broadcast_to(ext, (W, H, expected)).copy())
        merged = concat([rep, tiled], axis=-1)
    out = merged
    for n, layer in enumerate(params.head):
        out = conv2d(out, layer.kernel, layer.bias)
        if n < len(params.head) - 1:
            out = out.tanh()
    return out


def predict(frames, ext, params):
    """Full forward pass: encode then head. Returns [W,H,channels_out]."""
    return apply_head(encode(frames, params), ext, params)


def init_params(config, seed):
    """Glorot-uniform kernels, zero biases except forget-gate bias 1.0."""
    rng = np.random.default_rng(seed)

    def glorot(shape):
        kh, kw, cin, cout = shape
        if cin < 1 or cout < 1:
            raise DataError(f"zero channels in kernel shape {shape}")
        bound = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
        return Tensor(rng.uniform(-bound, bound, size=shape),
                      requires_grad=True)

    layers = []
    cin = config.channels_out  # service channels feed the first layer
    for _ in range(config.n_layers):
        ch = config.hidden
        ks = config.filter_size
        bias = np.zeros(4 * ch)
        bias[ch:2 * ch] = 1.0  # forget gate
        layers.append(ConvLSTMLayerParams(
            glorot((ks, ks, cin, 4 * ch)),
            glorot((ks, ks, ch, 4 * ch)),
            Tensor(bias, requires_grad=True)))
        cin = ch
    head = [
        HeadLayerParams(glorot((1, 1, cin + config.ext_len,
                                config.head_hidden)),
                        Tensor(np.zeros(config.head_hidden),
                               requires_grad=True)),
        HeadLayerParams(glorot((1, 1, config.head_hidden,
                                config.channels_out)),
                        Tensor(np.zeros(config.channels_out),
                               requires_grad=True)),
    ]
    return NetworkParams(layers, head)


# ---- checkpoint files ---------------------------------------------------

def save_checkpoint(params, path):
    named = params.named_tensors()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        f.write(struct.pack("<I", len(named)))
        for name, t in named:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.data.ndim))
            for d in t.data.shape:
                f.write(struct.pack("<I", d))
            f.write(t.data.astype("<f8").tobytes(order="C"))


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise DataError(f"{path}: checkpoint not found") from None
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    if take(1)[0] != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version")
    count = struct.unpack("<I", take(4))[0]
    tensors = {}
    for _ in range(count):
        nlen = struct.unpack("<I", take(4))[0]
        name = take(nlen).decode("utf-8")
        rank = struct.unpack("<I", take(4))[0]
        dims = [struct.unpack("<I", take(4))[0] for _ in range(rank)]
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).copy()
        tensors[name] = Tensor(data, requires_grad=True)
    layers = []
    n = 0
    while f"layer{n}.kernel" in tensors:
        layers.append(ConvLSTMLayerParams(tensors[f"layer{n}.kernel"],
                                          tensors[f"layer{n}.hidden_kernel"],
                                          tensors[f"layer{n}.bias"]))
        n += 1
    head = []
    n = 0
    while f"head{n}.kernel" in tensors:
        head.append(HeadLayerParams(tensors[f"head{n}.kernel"],
                                    tensors[f"head{n}.bias"]))
        n += 1
    if not layers or not head:
        raise DataError(f"{path}: checkpoint missing layer or head tensors")
    return NetworkParams(layers, head)
