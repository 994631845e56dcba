"""ShapeNet / ShiftNet: forward evaluation and hand-written reverse-mode
gradients.

The shape model holds one MLP per co-moving frame, mapping normalised
``(x, t)`` to ``q^k(x, t)``. The shift model holds one head per frame
mapping ``t`` to a displacement ``Delta^k(t)`` in physical x units; the
shape blocks are evaluated on the *shifted path* at ``x + Delta^k(t)``.

All batched routines take 1-D sample arrays ``x`` and ``t`` of length S
and return arrays of shape (S, K).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

INIT_BOUND = 1.0 / np.sqrt(2.0)

DEFAULT_SHAPE_HIDDEN = (64, 64, 64)
DEFAULT_SHIFT_HIDDEN = (32, 32, 32)


def elu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_prime(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _affine(a: np.ndarray, w: np.ndarray, b: np.ndarray, exact: bool) -> np.ndarray:
    # einsum's plain C loop gives results independent of the batch size,
    # BLAS does not; training uses BLAS, public evaluation uses einsum.
    if exact:
        return np.einsum("si,oi->so", a, w, optimize=False) + b
    return a @ w.T + b


@dataclass
class Mlp:
    """Fully connected net: ELU after every hidden layer, identity output."""

    weights: list  # weights[l] has shape (out_l, in_l)
    biases: list  # biases[l] has shape (out_l,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} do not match")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {w.shape[1]} != previous output {self.weights[l - 1].shape[0]}")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, bound: float = INIT_BOUND) -> "Mlp":
        ws, bs = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            bs.append(rng.uniform(-bound, bound, size=n_out))
        return cls(ws, bs)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_parameters(self, params) -> "Mlp":
        return Mlp(list(params[0::2]), list(params[1::2]))

    def forward(self, inputs: np.ndarray, exact: bool = True, keep: bool = False):
        """Evaluate on a batch ``inputs`` of shape (S, in).

        With ``keep=True`` also returns the cache needed by :meth:`backward`:
        per layer the layer input and, for hidden layers, ELU'(z).
        """
        a = inputs
        cache = []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = _affine(a, w, b, exact)
            if l == last:
                if keep:
                    cache.append((a, None))
                a = z
                break
            # expm1(min(z, 0)) is 0 for z > 0 and >= z otherwise, so
            # max(z, neg) is ELU(z) and neg + 1 its derivative
            neg = np.expm1(np.minimum(z, 0.0))
            if keep:
                cache.append((a, neg + 1.0))
            a = np.maximum(z, neg)
        return (a, cache) if keep else a

    def backward(self, cache, d_out: np.ndarray):
        """Reverse pass. Returns (gradients in :meth:`parameters` order,
        gradient with respect to the inputs)."""
        grads = [None] * (2 * len(self.weights))
        d = d_out
        for l in range(len(self.weights) - 1, -1, -1):
            a_in, deriv = cache[l]
            if deriv is not None:
                d = d * deriv
            grads[2 * l] = d.T @ a_in
            grads[2 * l + 1] = d.sum(axis=0)
            d = d @ self.weights[l]
        return grads, d


# -------------------------------------------------------------------- shapes

@dataclass
class ShapeModel:
    """K disjoint coordinate networks ``(x, t) -> q^k(x, t)``.

    Inputs are mapped affinely, ``(x - x_center) / x_scale`` and
    ``(t - t_center) / t_scale``, before entering the blocks; shifted
    coordinates go through the same map.
    """

    blocks: list
    x_center: float = 0.0
    x_scale: float = 1.0
    t_center: float = 0.0
    t_scale: float = 1.0

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("shape model needs at least one block")
        for k, blk in enumerate(self.blocks):
            if blk.widths[0] != 2 or blk.widths[-1] != 1:
                raise ValueError(f"shape block {k} must map R^2 -> R, has widths {blk.widths}")

    @classmethod
    def init(cls, K: int, rng, hidden=DEFAULT_SHAPE_HIDDEN, grid=None) -> "ShapeModel":
        blocks = [Mlp.init([2, *hidden, 1], rng) for _ in range(K)]
        if grid is None:
            return cls(blocks)
        return cls(blocks, **normalization_from_grid(grid))

    @property
    def K(self) -> int:
        return len(self.blocks)

    def parameters(self) -> list[np.ndarray]:
        return [p for blk in self.blocks for p in blk.parameters()]

    def with_parameters(self, params) -> "ShapeModel":
        out, i = [], 0
        for blk in self.blocks:
            n = 2 * len(blk.weights)
            out.append(blk.with_parameters(params[i:i + n]))
            i += n
        return replace(self, blocks=out)

    def normalize(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        return np.stack([(x - self.x_center) / self.x_scale, (t - self.t_center) / self.t_scale], axis=-1)


def normalization_from_grid(grid) -> dict:
    return dict(
        x_center=0.5 * (grid.x_min + grid.x_max),
        x_scale=0.5 * (grid.x_max - grid.x_min),
        t_center=0.5 * (grid.t_min + grid.t_max),
        t_scale=0.5 * (grid.t_max - grid.t_min),
    )


# -------------------------------------------------------------------- shifts

@dataclass
class PolynomialHead:
    """``Delta(t) = x_scale * sum_j coefficients[j] * (t / t_scale)**j``.

    Coefficients are stored in ascending order. With both scales at 1 the
    coefficients are the raw polynomial ones; :meth:`physical_coefficients`
    converts either way.
    """

    coefficients: np.ndarray
    t_scale: float = 1.0
    x_scale: float = 1.0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.ndim != 1 or self.coefficients.size == 0:
            raise ValueError("polynomial head needs a non-empty 1-D coefficient vector")

    @property
    def degree(self) -> int:
        return self.coefficients.size - 1

    def parameters(self):
        return [self.coefficients]

    def with_parameters(self, params):
        return replace(self, coefficients=params[0])

    def physical_coefficients(self) -> np.ndarray:
        j = np.arange(self.coefficients.size)
        return self.coefficients * self.x_scale / self.t_scale**j

    def forward(self, t, keep: bool = False):
        tau = np.asarray(t, dtype=np.float64) / self.t_scale
        powers = tau[:, None] ** np.arange(self.coefficients.size)
        out = self.x_scale * (powers @ self.coefficients)
        return (out, powers) if keep else out

    def backward(self, cache, d_out):
        return [self.x_scale * (d_out @ cache)]


@dataclass
class MlpHead:
    """``Delta(t) = x_scale * mlp((t - t_center) / t_scale)``."""

    mlp: Mlp
    t_center: float = 0.0
    t_scale: float = 1.0
    x_scale: float = 1.0

    def __post_init__(self):
        if self.mlp.widths[0] != 1 or self.mlp.widths[-1] != 1:
            raise ValueError(f"shift MLP must map R -> R, has widths {self.mlp.widths}")

    def parameters(self):
        return self.mlp.parameters()

    def with_parameters(self, params):
        return replace(self, mlp=self.mlp.with_parameters(params))

    def forward(self, t, keep: bool = False, exact: bool = True):
        tau = (np.asarray(t, dtype=np.float64)[:, None] - self.t_center) / self.t_scale
        if keep:
            out, cache = self.mlp.forward(tau, exact=exact, keep=True)
            return self.x_scale * out[:, 0], cache
        return self.x_scale * self.mlp.forward(tau, exact=exact)[:, 0]

    def backward(self, cache, d_out):
        grads, _ = self.mlp.backward(cache, self.x_scale * d_out[:, None])
        return grads


@dataclass
class ShiftModel:
    heads: list

    def __post_init__(self):
        if not self.heads:
            raise ValueError("shift model needs at least one head")

    @classmethod
    def init(cls, kinds, rng, hidden=DEFAULT_SHIFT_HIDDEN, t_center=0.0, t_scale=1.0, x_scale=1.0):
        """Build heads from ``kinds``: an int d gives a degree-d polynomial,
        ``"mlp"`` an MLP head."""
        heads = []
        for kind in kinds:
            if kind == "mlp":
                heads.append(MlpHead(Mlp.init([1, *hidden, 1], rng), t_center, t_scale, x_scale))
            else:
                d = int(kind)
                if d < 0:
                    raise ValueError("polynomial degree must be >= 0")
                coeffs = rng.uniform(-INIT_BOUND, INIT_BOUND, size=d + 1)
                # polynomial heads see t/t_scale with t_center taken as 0
                heads.append(PolynomialHead(coeffs, t_scale, x_scale))
        return cls(heads)

    @property
    def K(self) -> int:
        return len(self.heads)

    def parameters(self) -> list[np.ndarray]:
        return [p for h in self.heads for p in h.parameters()]

    def with_parameters(self, params) -> "ShiftModel":
        out, i = [], 0
        for h in self.heads:
            n = len(h.parameters())
            out.append(h.with_parameters(params[i:i + n]))
            i += n
        return ShiftModel(out)


@dataclass
class ModelGradients:
    """Gradients congruent with ``shape.parameters() + shift.parameters()``."""

    shape: list
    shift: list

    def flat(self) -> list[np.ndarray]:
        return list(self.shape) + list(self.shift)

    @classmethod
    def zeros_like(cls, shape: ShapeModel, shift: ShiftModel) -> "ModelGradients":
        return cls([np.zeros_like(p) for p in shape.parameters()],
                   [np.zeros_like(p) for p in shift.parameters()])

    def __iadd__(self, other):
        for mine, theirs in zip(self.flat(), other.flat()):
            mine += theirs
        return self


def parameter_names(shape: ShapeModel, shift: ShiftModel) -> list[str]:
    names = []
    for k, blk in enumerate(shape.blocks):
        for l in range(len(blk.weights)):
            names += [f"shape[{k}].W{l}", f"shape[{k}].b{l}"]
    for k, h in enumerate(shift.heads):
        if isinstance(h, PolynomialHead):
            names.append(f"shift[{k}].coefficients")
        else:
            for l in range(len(h.mlp.weights)):
                names += [f"shift[{k}].W{l}", f"shift[{k}].b{l}"]
    return names


# ----------------------------------------------------------------- forward

def _samples(x, t):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x, t = np.broadcast_arrays(x, t)
    return x.ravel(), t.ravel()


def _squeeze(out, scalar):
    return out[0] if scalar else out


def shape_forward(model: ShapeModel, x, t) -> np.ndarray:
    """``q^k(x, t)`` for all frames; (K,) for scalar input, else (S, K)."""
    scalar = np.ndim(x) == 0 and np.ndim(t) == 0
    xs, ts = _samples(x, t)
    inp = model.normalize(xs, ts)
    out = np.stack([blk.forward(inp)[:, 0] for blk in model.blocks], axis=1)
    return _squeeze(out, scalar)


def shift_forward(model: ShiftModel, t) -> np.ndarray:
    """``Delta^k(t)`` for all frames; (K,) for scalar input, else (S, K)."""
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64)).ravel()
    out = np.stack([h.forward(ts) for h in model.heads], axis=1)
    return _squeeze(out, scalar)


@dataclass
class ForwardResult:
    q_unshifted: np.ndarray  # (S, K)
    q_shifted: np.ndarray  # (S, K)
    shifts: np.ndarray  # (S, K)
    cache: dict = field(default_factory=dict, repr=False)


def forward_pass(shape: ShapeModel, shift: ShiftModel, x, t, exact: bool = True) -> ForwardResult:
    """Evaluate both paths: block k at (x, t) and at (x + Delta^k(t), t)."""
    if shape.K != shift.K:
        raise ValueError(f"shape model has {shape.K} blocks, shift model {shift.K}")
    xs, ts = _samples(x, t)
    inp = shape.normalize(xs, ts)
    head_out, head_cache = [], []
    for h in shift.heads:
        if isinstance(h, MlpHead):
            d, c = h.forward(ts, keep=True, exact=exact)
        else:
            d, c = h.forward(ts, keep=True)
        head_out.append(d)
        head_cache.append(c)
    shifts = np.stack(head_out, axis=1)

    q_un, q_sh, un_cache, sh_cache = [], [], [], []
    for k, blk in enumerate(shape.blocks):
        o, c = blk.forward(inp, exact=exact, keep=True)
        q_un.append(o[:, 0])
        un_cache.append(c)
        moved = inp.copy()
        moved[:, 0] = (xs + shifts[:, k] - shape.x_center) / shape.x_scale
        o, c = blk.forward(moved, exact=exact, keep=True)
        q_sh.append(o[:, 0])
        sh_cache.append(c)
    return ForwardResult(np.stack(q_un, axis=1), np.stack(q_sh, axis=1), shifts,
                         dict(unshifted=un_cache, shifted=sh_cache, heads=head_cache))


def backward_pass(shape: ShapeModel, shift: ShiftModel, fwd: ForwardResult,
                  d_shifted, d_unshifted) -> ModelGradients:
    """Reverse pass for a batch produced by :func:`forward_pass`.

    ``d_shifted`` and ``d_unshifted`` are dL/dq on the two paths, shape
    (S, K). The shift heads receive dL/dq_shifted * dq/dx at the shifted
    point, so the spatial derivative of the shape block is part of the
    chain.
    """
    d_shifted = np.asarray(d_shifted, dtype=np.float64).reshape(fwd.q_shifted.shape)
    d_unshifted = np.asarray(d_unshifted, dtype=np.float64).reshape(fwd.q_unshifted.shape)
    shape_grads, shift_grads = [], []
    d_delta = np.empty_like(fwd.shifts)
    for k, blk in enumerate(shape.blocks):
        g_un, _ = blk.backward(fwd.cache["unshifted"][k], d_unshifted[:, k:k + 1])
        g_sh, d_in = blk.backward(fwd.cache["shifted"][k], d_shifted[:, k:k + 1])
        shape_grads += [a + b for a, b in zip(g_un, g_sh)]
        d_delta[:, k] = d_in[:, 0] / shape.x_scale
    for k, h in enumerate(shift.heads):
        shift_grads += h.backward(fwd.cache["heads"][k], d_delta[:, k])
    return ModelGradients(shape_grads, shift_grads)


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "NSPOD-CHECKPOINT"
CHECKPOINT_VERSION = 1


def describe(shape: ShapeModel, shift: ShiftModel) -> dict:
    heads = []
    for h in shift.heads:
        if isinstance(h, PolynomialHead):
            heads.append(dict(type="polynomial", degree=h.degree, t_scale=h.t_scale, x_scale=h.x_scale))
        else:
            heads.append(dict(type="mlp", widths=h.mlp.widths, t_center=h.t_center,
                              t_scale=h.t_scale, x_scale=h.x_scale))
    return dict(
        shape=dict(widths=[blk.widths for blk in shape.blocks], x_center=shape.x_center,
                   x_scale=shape.x_scale, t_center=shape.t_center, t_scale=shape.t_scale),
        shift=dict(heads=heads),
    )


def _zero_mlp(widths) -> Mlp:
    return Mlp([np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
               [np.zeros(o) for o in widths[1:]])


def build_from_description(desc: dict) -> tuple[ShapeModel, ShiftModel]:
    """Zero-parameter models with the architecture in ``desc``."""
    sd = desc["shape"]
    shape = ShapeModel([_zero_mlp(w) for w in sd["widths"]], sd["x_center"], sd["x_scale"],
                       sd["t_center"], sd["t_scale"])
    heads = []
    for hd in desc["shift"]["heads"]:
        if hd["type"] == "polynomial":
            heads.append(PolynomialHead(np.zeros(hd["degree"] + 1), hd["t_scale"], hd["x_scale"]))
        elif hd["type"] == "mlp":
            heads.append(MlpHead(_zero_mlp(hd["widths"]), hd["t_center"], hd["t_scale"], hd["x_scale"]))
        else:
            raise ValueError(f"unknown shift head type {hd['type']!r}")
    return shape, ShiftModel(heads)


def encode_checkpoint(shape: ShapeModel, shift: ShiftModel, seed=None, extra=None) -> bytes:
    params = shape.parameters() + shift.parameters()
    meta = dict(describe(shape, shift), seed=seed, n_values=int(sum(p.size for p in params)))
    if extra:
        meta["extra"] = extra
    head = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{json.dumps(meta, sort_keys=True)}\n"
    body = b"".join(np.asarray(p, dtype="<f8").tobytes(order="C") for p in params)
    return head.encode("ascii") + body


def decode_checkpoint(raw: bytes):
    """Inverse of :func:`encode_checkpoint`: returns (shape, shift, meta)."""
    first = raw.find(b"\n")
    second = raw.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise ValueError("truncated checkpoint header")
    magic = raw[:first].decode("ascii", errors="replace").split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC or magic[1] != str(CHECKPOINT_VERSION):
        raise ValueError(f"not a version-{CHECKPOINT_VERSION} checkpoint")
    meta = json.loads(raw[first + 1:second].decode("ascii"))
    shape, shift = build_from_description(meta)
    template = shape.parameters() + shift.parameters()
    payload = np.frombuffer(raw[second + 1:], dtype="<f8")
    if payload.size != meta["n_values"] or payload.size != sum(p.size for p in template):
        raise ValueError(f"checkpoint holds {payload.size} values, expected {meta['n_values']}")
    params, i = [], 0
    for p in template:
        params.append(payload[i:i + p.size].reshape(p.shape).astype(np.float64))
        i += p.size
    n_shape = len(shape.parameters())
    return shape.with_parameters(params[:n_shape]), shift.with_parameters(params[n_shape:]), meta


def save_checkpoint(path, shape, shift, seed=None, extra=None) -> None:
    Path(path).write_bytes(encode_checkpoint(shape, shift, seed, extra))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
