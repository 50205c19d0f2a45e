"""Small convolutional denoiser with a hand-written parameter VJP.

Complex images are handled as two real channels (real, imaginary). The
network is a stack of circularly padded convolutions with a smooth softplus
nonlinearity between them and, by default, a residual skip from input to
output, so the all-zero parameter vector is exactly the identity map.

The only derivative the training scheme needs is the vector-Jacobian product
of the network output against its parameters at a fixed input, so that is
what ``param_vjp`` provides; no general autodiff is involved. For a complex
cotangent v it returns the gradient of Re <f(x), v> in the flat parameter
vector, which is ordinary real backpropagation against the cotangent's real
and imaginary channels.

``spectral_normalize`` rescales each convolution by its estimated operator
norm (power iteration with persistent state) whenever that estimate exceeds
one; layers already at or below unit norm are left untouched, which keeps
the near-identity initialization intact.
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class ConvArch:
    """Layer widths (first and last must be 2 for the complex channels)."""

    channels: tuple[int, ...] = (2, 16, 16, 2)
    ksize: int = 3
    residual: bool = True

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("need at least one convolution layer")
        if self.channels[0] != 2 or self.channels[-1] != 2:
            raise ValueError(f"first and last channel counts must be 2, got {self.channels}")
        if any(c < 1 for c in self.channels):
            raise ValueError(f"channel counts must be positive, got {self.channels}")
        if self.ksize < 1:
            raise ValueError(f"kernel size must be positive, got {self.ksize}")

    @property
    def n_layers(self) -> int:
        return len(self.channels) - 1


def _layer_shapes(arch: ConvArch):
    k = arch.ksize
    return [
        ((cout, cin, k, k), (cout,))
        for cin, cout in zip(arch.channels[:-1], arch.channels[1:])
    ]


def n_params(arch: ConvArch) -> int:
    return sum(int(np.prod(ws)) + bs[0] for ws, bs in _layer_shapes(arch))


@dataclass
class DenoiserParams:
    """Flat parameter vector plus the power-iteration state, tied to a grid size."""

    arch: ConvArch
    height: int
    width: int
    theta: np.ndarray
    sn_state: tuple[np.ndarray, ...]

    def __post_init__(self):
        expected = n_params(self.arch)
        if self.theta.shape != (expected,):
            raise ValueError(f"theta has shape {self.theta.shape}, expected ({expected},)")

    def layers(self):
        """Per-layer (weights, bias) views into the flat vector."""
        out = []
        pos = 0
        for wshape, bshape in _layer_shapes(self.arch):
            wn = int(np.prod(wshape))
            out.append((self.theta[pos : pos + wn].reshape(wshape), self.theta[pos + wn : pos + wn + bshape[0]]))
            pos += wn + bshape[0]
        return out


def init_params(arch: ConvArch, height: int, width: int, seed: int) -> DenoiserParams:
    """Near-identity initialization: the final layer starts close to zero."""
    if arch.ksize > height or arch.ksize > width:
        raise ValueError(f"kernel size {arch.ksize} exceeds grid {height}x{width}")
    rng = np.random.default_rng(seed)
    chunks = []
    n_layers = arch.n_layers
    for l, (wshape, bshape) in enumerate(_layer_shapes(arch)):
        fan_in = wshape[1] * wshape[2] * wshape[3]
        std = 1.0 / np.sqrt(fan_in)
        if l == n_layers - 1:
            std *= 1e-2
        chunks.append(rng.normal(0.0, std, size=int(np.prod(wshape))))
        chunks.append(np.zeros(bshape[0]))
    theta = np.concatenate(chunks)
    sn_state = []
    for cin in arch.channels[:-1]:
        u = rng.standard_normal((cin, height, width))
        sn_state.append(u / np.linalg.norm(u))
    return DenoiserParams(arch, height, width, theta, tuple(sn_state))


def _as_channels(x: np.ndarray) -> np.ndarray:
    return np.stack([x.real, x.imag]).astype(np.float64, copy=False)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: DenoiserParams, xr: np.ndarray, want_cache: bool):
    layers = params.layers()
    n_layers = len(layers)
    cache = []
    a = xr
    for l, (w, b) in enumerate(layers):
        z = K.conv2d(a, w, b)
        if l < n_layers - 1:
            if want_cache:
                cache.append((a, z))
            a = _softplus(z)
        else:
            if want_cache:
                cache.append((a, z))
            a = z
    return a, cache


def _check_input(params: DenoiserParams, x: np.ndarray):
    if x.shape != (params.height, params.width):
        raise ValueError(
            f"input shape {x.shape} does not match configured grid "
            f"({params.height}, {params.width})"
        )


def denoise(params: DenoiserParams, x: np.ndarray) -> np.ndarray:
    """Apply the network to a complex image; pure, no state is touched."""
    _check_input(params, x)
    x = np.asarray(x, dtype=np.complex128)
    out, _ = _forward(params, _as_channels(x), want_cache=False)
    res = out[0] + 1j * out[1]
    return x + res if params.arch.residual else res


def param_vjp(params: DenoiserParams, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient of Re <f(x), v> in the flat parameter vector, x held fixed."""
    _check_input(params, x)
    if v.shape != x.shape:
        raise ValueError(f"cotangent shape {v.shape} does not match input {x.shape}")
    x = np.asarray(x, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    layers = params.layers()
    _, cache = _forward(params, _as_channels(x), want_cache=True)
    g = _as_channels(v)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        a_in, z = cache[l]
        w, _ = layers[l]
        gw, gb = K.conv2d_weight_grad(a_in, g, params.arch.ksize, params.arch.ksize)
        grads[l] = (gw, gb)
        if l > 0:
            g = K.conv2d_input_grad(g, w) * _sigmoid(cache[l - 1][1])
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def spectral_normalize(params: DenoiserParams, n_iters: int = 5) -> DenoiserParams:
    """Divide each convolution by max(estimated norm, 1); returns new params.

    The persistent power-iteration vectors ride along in ``sn_state``, so
    repeated calls refine the estimate. Biases are untouched.
    """
    if n_iters < 1:
        raise ValueError(f"power iteration needs at least one step, got {n_iters}")
    theta = params.theta.copy()
    out = DenoiserParams(params.arch, params.height, params.width, theta, params.sn_state)
    new_state = []
    for (w, _), u in zip(out.layers(), params.sn_state):
        sigma = 0.0
        u = u.copy()
        for _ in range(n_iters):
            t = K.conv2d(u, w)
            tn = np.linalg.norm(t)
            if tn == 0.0:
                sigma = 0.0
                break
            t /= tn
            u = K.conv2d_input_grad(t, w)
            sigma = np.linalg.norm(u)
            if sigma == 0.0:
                break
            u /= sigma
        if sigma > 1.0:
            w /= sigma
        new_state.append(u)
    return replace(out, sn_state=tuple(new_state))


_CKPT_MAGIC = "eqmri-params"
_CKPT_VERSION = 1


def save_params(path, params: DenoiserParams) -> None:
    """Write a checkpoint: text manifest, blank line, raw little-endian float64."""
    header = "\n".join(
        [
            _CKPT_MAGIC,
            f"version: {_CKPT_VERSION}",
            "channels: " + ",".join(str(c) for c in params.arch.channels),
            f"ksize: {params.arch.ksize}",
            f"residual: {int(params.arch.residual)}",
            f"height: {params.height}",
            f"width: {params.width}",
            f"theta_len: {params.theta.size}",
        ]
    )
    blobs = [np.ascontiguousarray(params.theta, dtype="<f8").tobytes()]
    blobs += [np.ascontiguousarray(u, dtype="<f8").tobytes() for u in params.sn_state]
    Path(path).write_bytes(header.encode() + b"\n\n" + b"".join(blobs))


def load_params(path) -> DenoiserParams:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0 or not raw.startswith(_CKPT_MAGIC.encode()):
        raise ValueError(f"{path} is not a parameter checkpoint")
    fields = {}
    for line in raw[:sep].decode().splitlines()[1:]:
        key, _, val = line.partition(":")
        fields[key.strip()] = val.strip()
    try:
        if int(fields["version"]) != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {fields['version']}")
        arch = ConvArch(
            channels=tuple(int(c) for c in fields["channels"].split(",")),
            ksize=int(fields["ksize"]),
            residual=bool(int(fields["residual"])),
        )
        height, width = int(fields["height"]), int(fields["width"])
        theta_len = int(fields["theta_len"])
    except KeyError as exc:
        raise ValueError(f"checkpoint {path} is missing field {exc}") from None
    if theta_len != n_params(arch):
        raise ValueError(f"checkpoint theta length {theta_len} does not match layer spec")
    body = raw[sep + 2 :]
    counts = [theta_len] + [cin * height * width for cin in arch.channels[:-1]]
    if len(body) != 8 * sum(counts):
        raise ValueError(f"checkpoint {path} is truncated")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    theta = flat[:theta_len]
    sn_state = []
    pos = theta_len
    for cin in arch.channels[:-1]:
        n = cin * height * width
        sn_state.append(flat[pos : pos + n].reshape(cin, height, width))
        pos += n
    return DenoiserParams(arch, height, width, theta, tuple(sn_state))
