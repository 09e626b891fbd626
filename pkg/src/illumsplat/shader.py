"""Small MLP mapping (BRDF features, illumination, encoded view) to specular colour."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import FOURIER_DIM, IDE_DIM
from .errors import InvalidInputError
from .gaussians import N_BRDF, sigmoid

VARIANTS = ("full", "outgoing-radiance", "no-ide")
HIDDEN = 64
OUTPUT_BIAS = -2.0


def uses_brdf(variant: str) -> bool:
    return variant != "outgoing-radiance"


def uses_ide(variant: str) -> bool:
    return variant != "no-ide"


def input_layout(variant: str, feature_dim: int):
    """Widths of the concatenated shader input blocks (rho, L, enc)."""
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    rho = N_BRDF if uses_brdf(variant) else 0
    enc = IDE_DIM if uses_ide(variant) else FOURIER_DIM
    return rho, feature_dim, enc


@dataclass
class NeuralShader:
    variant: str
    weights: list  # [W0, W1, W2], W_k of shape (fan_in, fan_out)
    biases: list

    @property
    def layout(self):
        return input_layout(self.variant, self.feature_dim)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def feature_dim(self):
        rho = N_BRDF if uses_brdf(self.variant) else 0
        enc = IDE_DIM if uses_ide(self.variant) else FOURIER_DIM
        return self.input_dim - rho - enc

    def params(self) -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{k}"] = w
            out[f"b{k}"] = b
        return out

    def set_params(self, params: dict):
        n = len(self.weights)
        self.weights = [params[f"w{k}"] for k in range(n)]
        self.biases = [params[f"b{k}"] for k in range(n)]

    def copy(self):
        return replace(self, weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases])

    def astype(self, dtype):
        return replace(self, weights=[w.astype(dtype) for w in self.weights],
                       biases=[b.astype(dtype) for b in self.biases])


@dataclass
class ShaderGrads:
    rho: np.ndarray
    illumination: np.ndarray
    encoding: np.ndarray
    tint: np.ndarray
    params: dict = field(default_factory=dict)


@dataclass
class RadianceSample:
    diffuse: np.ndarray
    specular: np.ndarray
    colour: np.ndarray


def init_shader(variant="full", feature_dim=24, hidden=HIDDEN, rng=None, dtype=np.float32):
    """He-uniform weights, zero hidden biases, output bias -2 (small initial specular)."""
    rng = np.random.default_rng() if rng is None else rng
    in_dim = sum(input_layout(variant, feature_dim))
    dims = [in_dim, hidden, hidden, 3]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    biases[-1][:] = OUTPUT_BIAS
    return NeuralShader(variant=variant, weights=weights, biases=biases)


def assemble_input(rho, illumination, encoding, shader: NeuralShader):
    n_rho, n_l, n_enc = shader.layout
    L = np.atleast_2d(illumination)
    enc = np.atleast_2d(encoding)
    blocks = []
    if n_rho:
        rho = np.atleast_2d(rho)
        if rho.shape[-1] != n_rho:
            raise InvalidInputError(f"BRDF features have width {rho.shape[-1]}, expected {n_rho}")
        blocks.append(rho)
    if L.shape[-1] != n_l:
        raise InvalidInputError(f"illumination has width {L.shape[-1]}, expected {n_l}")
    if enc.shape[-1] != n_enc:
        raise InvalidInputError(f"encoding has width {enc.shape[-1]}, expected {n_enc}")
    blocks += [L, enc]
    return np.concatenate(blocks, axis=-1)


def _forward(x, shader):
    acts = [x]
    h = x
    last = len(shader.weights) - 1
    for k, (w, b) in enumerate(zip(shader.weights, shader.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def specular_color(rho, illumination, encoding, tint, shader: NeuralShader):
    """c_s = tint * sigmoid(MLP(rho | L | enc)); rho is ignored by the outgoing-radiance variant."""
    single = np.asarray(illumination).ndim == 1
    x = assemble_input(rho, illumination, encoding, shader)
    out = np.atleast_2d(tint) * sigmoid(_forward(x, shader)[-1])
    return out[0] if single else out


def shader_backward(rho, illumination, encoding, tint, shader: NeuralShader, upstream) -> ShaderGrads:
    single = np.asarray(illumination).ndim == 1
    x = assemble_input(rho, illumination, encoding, shader)
    acts = _forward(x, shader)
    s = sigmoid(acts[-1])
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    tint2 = np.atleast_2d(tint)
    d_tint = g * s
    delta = g * tint2 * s * (1.0 - s)

    params = {}
    n = len(shader.weights)
    for k in range(n - 1, -1, -1):
        params[f"w{k}"] = acts[k].T @ delta
        params[f"b{k}"] = delta.sum(axis=0)
        delta = delta @ shader.weights[k].T
        if k > 0:
            delta = delta * (acts[k] > 0)

    n_rho, n_l, _ = shader.layout
    d_rho = delta[:, :n_rho] if n_rho else np.zeros_like(np.atleast_2d(rho), dtype=delta.dtype)
    d_l = delta[:, n_rho:n_rho + n_l]
    d_enc = delta[:, n_rho + n_l:]
    if single:
        d_rho, d_l, d_enc, d_tint = d_rho[0], d_l[0], d_enc[0], d_tint[0]
    return ShaderGrads(rho=d_rho, illumination=d_l, encoding=d_enc, tint=d_tint,
                       params={k: params[k] for k in sorted(params)})


def shade(diffuse_raw, specular, warmup=False) -> RadianceSample:
    """Outgoing colour clamp(sigmoid(diffuse_raw) + c_s, 0, 1); warm-up drops c_s."""
    c_d = sigmoid(np.asarray(diffuse_raw))
    c_s = np.zeros_like(c_d) if warmup else np.asarray(specular)
    return RadianceSample(diffuse=c_d, specular=c_s, colour=np.clip(c_d + c_s, 0.0, 1.0))


def shade_backward(diffuse_raw, specular, upstream, warmup=False):
    """Gradients (d_diffuse_raw, d_specular); zero where the sum is clamped."""
    c_d = sigmoid(np.asarray(diffuse_raw))
    c_s = np.zeros_like(c_d) if warmup else np.asarray(specular)
    total = c_d + c_s
    g = np.where((total > 0.0) & (total < 1.0), upstream, 0.0)
    d_spec = np.zeros_like(g) if warmup else g
    return g * c_d * (1.0 - c_d), d_spec
