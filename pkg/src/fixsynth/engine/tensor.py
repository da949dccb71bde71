"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op set is deliberately small: exactly the layers needed by the two
generative networks (convolutions, nearest-neighbor upsampling, leaky ReLU,
tanh, softplus, dropout) plus the arithmetic glue required to express their
losses (add/sub/neg/scale/mean/reshape, matmul, MSE).  Everything is float64
and CPU-only; matrices here are at most a few thousand entries, so clarity
beats throughput.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class EngineError(Exception):
    """Base error for the tensor engine."""


class ShapeError(EngineError):
    """Input shapes are invalid for the requested op."""


class Tensor:
    """Immutable dense value. `data` must never be mutated after construction."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _OpRecord:
    __slots__ = ("op", "input_ids", "output_id", "backward")

    def __init__(self, op, input_ids, output_id, backward):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Append-only record of primitive ops, in execution order.

    Node ids are assigned in first-use order, so every record satisfies
    max(input_ids) < output_id and a single reverse sweep is a valid
    reverse-topological traversal.  A tape is consumed by `backward` and
    cannot be reused afterwards.
    """

    def __init__(self):
        self._next_id = 0
        self._id_of: dict[int, int] = {}       # id(tensor) -> node id
        self._tensor_of: dict[int, Tensor] = {}  # node id -> tensor (keeps ids alive)
        self._produced: set[int] = set()
        self.records: list[_OpRecord] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _pop_tape(self)

    def node_id(self, t: Tensor) -> int:
        nid = self._id_of.get(id(t))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._id_of[id(t)] = nid
            self._tensor_of[nid] = t
        return nid

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], list[Optional[np.ndarray]]]) -> None:
        if self._consumed:
            raise EngineError("tape already consumed by backward()")
        input_ids = [self.node_id(t) for t in inputs]
        output_id = self.node_id(output)
        self._produced.add(output_id)
        self.records.append(_OpRecord(op, input_ids, output_id, backward))

    def op_names(self) -> list[str]:
        return [r.op for r in self.records]

    def backward(self, loss: Tensor) -> dict[str, np.ndarray] | dict[Tensor, np.ndarray]:
        return backward(self, loss)


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape) -> None:
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape) -> None:
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise EngineError("tape stack corrupted: exiting a tape that is not active")
    _TAPE_STACK.pop()


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _track(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           backward_fn: Callable[[np.ndarray], list[Optional[np.ndarray]]]) -> Tensor:
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over the tape; returns gradients for requires_grad leaves.

    Leaves not reached by the sweep get zero gradients (their true derivative).
    The tape is consumed: further recording or a second backward raises.
    """
    if tape._consumed:
        raise EngineError("tape already consumed by backward()")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {}
    loss_id = tape._id_of.get(id(loss))
    if loss_id is None:
        raise EngineError("loss tensor was not produced on this tape")
    grads[loss_id] = np.ones_like(loss.data)

    for rec in reversed(tape.records):
        g = grads.pop(rec.output_id, None)
        if g is None:
            continue
        input_grads = rec.backward(g)
        for nid, ig in zip(rec.input_ids, input_grads):
            if ig is None:
                continue
            if nid in grads:
                grads[nid] = grads[nid] + ig
            else:
                grads[nid] = ig

    out: dict[Tensor, np.ndarray] = {}
    for nid, t in tape._tensor_of.items():
        if t.requires_grad and nid not in tape._produced:
            g = grads.get(nid)
            out[t] = np.zeros_like(t.data) if g is None else g
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _track("add", (a, b), a.data + b.data, lambda g: [g, g])


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _track("sub", (a, b), a.data - b.data, lambda g: [g, -g])


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _track("neg", (a,), -a.data, lambda g: [-g])


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _track("scale", (a,), a.data * c, lambda g: [g * c])


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")
    shape = a.shape

    def back(g):
        return [np.full(shape, g.reshape(()) / n)]

    return _track("mean_all", (a,), np.asarray(a.data.mean()), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    new_shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(new_shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {new_shape}") from exc
    old_shape = a.shape
    return _track("reshape", (a,), out.copy(), lambda g: [g.reshape(old_shape)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _track("matmul", (a, b), ad @ bd,
                  lambda g: [g @ bd.T, ad.T @ g])


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (batch, in) @ (in, out) + (out,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} must be ({w.shape[1]},)")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def back(g):
        return [g @ wd.T, xd.T @ g, g.sum(axis=0)]

    return _track("linear", (x, w, b), out, back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    slope = float(slope)
    xd = x.data
    factor = np.where(xd >= 0.0, 1.0, slope)
    return _track("leaky_relu", (x,), xd * factor, lambda g: [g * factor])


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _track("tanh", (x,), y, lambda g: [g * (1.0 - y * y)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # overflow-safe: sigma(x) = (1 + tanh(x/2)) / 2
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    sig = _sigmoid(x.data)
    return _track("softplus", (x,), out, lambda g: [g * sig])


def dropout(x: Tensor, rate: float, seed: int, training: bool) -> Tensor:
    """Inverted dropout with an explicit mask seed.

    Eval mode (training=False) is the identity and records nothing, so a
    tape containing a 'dropout' record implies stochastic mode.
    """
    x = _as_tensor(x)
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.Philox(key=np.uint64(int(seed) & (2**64 - 1))))
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _track("dropout", (x,), x.data * mask, lambda g: [g * mask])


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        gd = g.reshape(()) * 2.0 / n * diff
        return [gd, -gd]

    return _track("mse_loss", (pred, target), np.asarray((diff * diff).mean()), back)


# -- convolutions -----------------------------------------------------------

def _conv_out_len(size: int, k: int, stride: int, padding: int) -> int:
    full = size + 2 * padding - k
    if full < 0:
        raise ShapeError(f"kernel {k} larger than padded input {size + 2 * padding}")
    return full // stride + 1


def _check_conv_attrs(stride: int, padding: int) -> tuple[int, int]:
    stride, padding = int(stride), int(padding)
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    return stride, padding


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation: x (B,Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    stride, padding = _check_conv_attrs(stride, padding)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d x and w, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin != Cin_w:
        raise ShapeError(f"conv2d: x has {Cin} channels but w expects {Cin_w}")
    if b.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {b.shape} must be ({Cout},)")
    Ho = _conv_out_len(H, kh, stride, padding)
    Wo = _conv_out_len(W, kw, stride, padding)

    s, p = stride, padding
    wd = w.data
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    win = win[:, :, :Ho, :Wo]
    out = np.einsum("bchwij,ocij->bohw", win, wd, optimize=True) + \
        b.data[None, :, None, None]

    def back(g):
        dw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += np.einsum(
                    "bohw,oc->bchw", g, wd[:, :, i, j], optimize=True)
        dx = dxp[:, :, p:p + H, p:p + W]
        return [dx, dw, db]

    return _track("conv2d", (x, w, b), out, back)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1D cross-correlation: x (B,Cin,L), w (Cout,Cin,k), b (Cout,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    stride, padding = _check_conv_attrs(stride, padding)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: need 3-d x and w, got {x.shape} and {w.shape}")
    B, Cin, L = x.shape
    Cout, Cin_w, k = w.shape
    if Cin != Cin_w:
        raise ShapeError(f"conv1d: x has {Cin} channels but w expects {Cin_w}")
    if b.shape != (Cout,):
        raise ShapeError(f"conv1d: bias {b.shape} must be ({Cout},)")
    Lo = _conv_out_len(L, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :Lo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Lo, Cin * k)
    wmat = w.data.reshape(Cout, Cin * k)
    out = (cols @ wmat.T).reshape(B, Lo, Cout).transpose(0, 2, 1) + b.data[None, :, None]

    def back(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * Lo, Cout)
        dw = (gmat.T @ cols).reshape(Cout, Cin, k)
        db = gmat.sum(axis=0)
        dcols = (gmat @ wmat).reshape(B, Lo, Cin, k).transpose(0, 2, 1, 3)
        dxp = np.zeros_like(xp)
        for i in range(k):
            dxp[:, :, i:i + stride * Lo:stride] += dcols[:, :, :, i]
        dx = dxp[:, :, padding:padding + L]
        return [dx, dw, db]

    return _track("conv1d", (x, w, b), out, back)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                      padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed 2D convolution (adjoint of conv2d): w is (Cin,Cout,kh,kw).

    Output spatial size: (H-1)*stride - 2*padding + kh + output_padding.
    `output_padding` keeps extra rows/columns on the bottom/right edge
    (0 <= output_padding <= padding, < stride), which lets odd kernels
    double the spatial size exactly (e.g. k=5, stride=2, padding=2,
    output_padding=1).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    stride, padding = _check_conv_attrs(stride, padding)
    op = int(output_padding)
    if op < 0 or op >= stride or op > padding:
        raise ShapeError(
            f"output_padding must satisfy 0 <= op <= padding and op < stride, "
            f"got {op} (stride {stride}, padding {padding})")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"transposed_conv2d: need 4-d x and w, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cin_w, Cout, kh, kw = w.shape
    if Cin != Cin_w:
        raise ShapeError(f"transposed_conv2d: x has {Cin} channels but w expects {Cin_w}")
    if b.shape != (Cout,):
        raise ShapeError(f"transposed_conv2d: bias {b.shape} must be ({Cout},)")
    Hf = (H - 1) * stride + kh
    Wf = (W - 1) * stride + kw
    Ho = Hf - 2 * padding + op
    Wo = Wf - 2 * padding + op
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"transposed_conv2d: padding {padding} swallows output {Hf}x{Wf}")

    s, p = stride, padding
    xd, wd = x.data, w.data
    full = np.zeros((B, Cout, Hf, Wf))
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + s * H:s, j:j + s * W:s] += np.einsum(
                "bchw,co->bohw", xd, wd[:, :, i, j], optimize=True)
    out = full[:, :, p:Hf - p + op, p:Wf - p + op] + b.data[None, :, None, None]

    def back(g):
        gf = np.pad(g, ((0, 0), (0, 0), (p, p - op), (p, p - op)))
        win = sliding_window_view(gf, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        win = win[:, :, :H, :W]
        dx = np.einsum("bohwij,coij->bchw", win, wd, optimize=True)
        dw = np.einsum("bchw,bohwij->coij", xd, win, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        return [dx, dw, db]

    return _track("transposed_conv2d", (x, w, b), out, back)


def upsample2d_nearest(x: Tensor, factor: int) -> Tensor:
    x = _as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"upsample2d_nearest: need 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        return [g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5))]

    return _track("upsample2d_nearest", (x,), out, back)


def upsample1d_nearest(x: Tensor, factor: int) -> Tensor:
    x = _as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 3:
        raise ShapeError(f"upsample1d_nearest: need 3-d input, got {x.shape}")
    B, C, L = x.shape
    out = np.repeat(x.data, factor, axis=2)

    def back(g):
        return [g.reshape(B, C, L, factor).sum(axis=3)]

    return _track("upsample1d_nearest", (x,), out, back)


# ---------------------------------------------------------------------------
# apply() dispatch over the documented op vocabulary
# ---------------------------------------------------------------------------

_APPLY_OPS: dict[str, Callable[..., Tensor]] = {
    "linear": linear,
    "conv2d": conv2d,
    "conv1d": conv1d,
    "transposed_conv2d": transposed_conv2d,
    "upsample2d_nearest": upsample2d_nearest,
    "upsample1d_nearest": upsample1d_nearest,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "softplus": softplus,
    "dropout": dropout,
    "add": add,
    "matmul": matmul,
    "mse_loss": mse_loss,
}


def apply(op_kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Dispatch one named op; records it on the active tape when tracked."""
    fn = _APPLY_OPS.get(op_kind)
    if fn is None:
        raise EngineError(f"unknown op_kind {op_kind!r}; supported: {sorted(_APPLY_OPS)}")
    return fn(*inputs, **(attrs or {}))
