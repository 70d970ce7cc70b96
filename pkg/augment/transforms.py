"""
Augmentation operations.

Images are (C, H, W) float arrays in [0, 1]; vectors are 1-D feature arrays.
A magnitude in [0, 10] maps linearly onto each op's parameter range; at
magnitude 0 every parameterized op is the identity.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from dhalab.exceptions import UnknownTransformError

MAX_MAGNITUDE = 10.0
FILL = 0.5

IMAGE_OPS = (
    'AutoContrast', 'Equalize', 'Rotate', 'Posterize', 'Solarize', 'Color', 'Contrast',
    'Brightness', 'Sharpness', 'ShearX', 'ShearY', 'TranslateX', 'TranslateY', 'Identity',
)
VECTOR_OPS = ('Identity', 'GaussianNoise', 'Scale', 'Shift', 'FeatureDropout')

# ops whose parameter flips sign when `negate` is set
SIGNED_OPS = frozenset({
    'Rotate', 'Color', 'Contrast', 'Brightness', 'Sharpness', 'ShearX', 'ShearY',
    'TranslateX', 'TranslateY', 'Scale', 'Shift',
})


@dataclass(frozen=True)
class TransformOp:
    kind: str
    magnitude: float = 0.0
    negate: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ValueError(f"{self.kind}: magnitude {self.magnitude} outside [0, {MAX_MAGNITUDE}]")

    def level(self, maxval):
        value = self.magnitude / MAX_MAGNITUDE * maxval
        return -value if self.negate and self.kind in SIGNED_OPS else value


def catalog(kind):
    return IMAGE_OPS if kind == 'image' else VECTOR_OPS


# image ops

def _grayscale(x):
    if x.shape[0] == 3:
        return np.tensordot([0.299, 0.587, 0.114], x, axes=1)[None]
    return x.mean(axis=0, keepdims=True)


def _blend(degenerate, x, factor):
    return degenerate + factor * (x - degenerate)


def _auto_contrast(x, op):
    lo = x.min(axis=(1, 2), keepdims=True)
    hi = x.max(axis=(1, 2), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, (x - lo) / span, x)


def _equalize(x, op):
    out = np.empty_like(x)
    for c, channel in enumerate(x):
        levels = np.rint(channel * 255).astype(np.int64)
        hist = np.bincount(levels.ravel(), minlength=256)
        cdf = hist.cumsum()
        cdf_min = cdf[hist > 0][0]
        total = levels.size
        if total == cdf_min:
            out[c] = channel
            continue
        lut = np.rint((cdf - cdf_min) / (total - cdf_min) * 255)
        out[c] = lut[levels] / 255.0
    return out


def _rotate(x, op):
    angle = op.level(30.0)
    if angle == 0:
        return x
    return ndimage.rotate(x, angle, axes=(2, 1), reshape=False, order=1, mode='constant', cval=FILL)


def _posterize(x, op):
    bits = 8 - int(round(op.level(4.0)))
    if bits >= 8:
        return x
    mask = ~((1 << (8 - bits)) - 1) & 0xFF
    return (np.rint(x * 255).astype(np.int64) & mask) / 255.0


def _solarize(x, op):
    threshold = 1.0 - op.level(1.0)
    if threshold >= 1.0:
        return x
    return np.where(x >= threshold, 1.0 - x, x)


def _enhance(degenerate_of):
    def apply(x, op):
        factor = 1.0 + op.level(0.9)
        if factor == 1.0:
            return x
        return _blend(degenerate_of(x), x, factor)
    return apply


def _sharpness_degenerate(x):
    kernel = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0
    return np.stack([ndimage.convolve(channel, kernel, mode='nearest') for channel in x])


def _affine(matrix_of):
    def apply(x, op):
        amount = op.level(1.0)
        if amount == 0:
            return x
        matrix, offset = matrix_of(amount, x.shape[1:])
        return np.stack([
            ndimage.affine_transform(channel, matrix, offset=offset, order=1, mode='constant', cval=FILL)
            for channel in x
        ])
    return apply


def _shear_x(amount, hw):
    s = 0.3 * amount
    # output (r, c) samples input (r, c + s * r)
    return np.array([[1.0, 0.0], [s, 1.0]]), np.zeros(2)


def _shear_y(amount, hw):
    s = 0.3 * amount
    return np.array([[1.0, s], [0.0, 1.0]]), np.zeros(2)


def _translate_x(amount, hw):
    return np.eye(2), np.array([0.0, -amount * hw[1] / 3.0])


def _translate_y(amount, hw):
    return np.eye(2), np.array([-amount * hw[0] / 3.0, 0.0])


_IMAGE_FNS = {
    'AutoContrast': _auto_contrast,
    'Equalize': _equalize,
    'Rotate': _rotate,
    'Posterize': _posterize,
    'Solarize': _solarize,
    'Color': _enhance(_grayscale),
    'Contrast': _enhance(lambda x: np.full_like(x, _grayscale(x).mean())),
    'Brightness': _enhance(np.zeros_like),
    'Sharpness': _enhance(_sharpness_degenerate),
    'ShearX': _affine(_shear_x),
    'ShearY': _affine(_shear_y),
    'TranslateX': _affine(_translate_x),
    'TranslateY': _affine(_translate_y),
    'Identity': lambda x, op: x,
}


# vector ops

def _gaussian_noise(x, op):
    std = op.level(0.1)
    if std == 0:
        return x
    return x + np.random.default_rng(op.seed).normal(0.0, std, size=x.shape)


def _feature_dropout(x, op):
    rate = op.level(0.5)
    if rate == 0:
        return x
    keep = np.random.default_rng(op.seed).random(x.shape) >= rate
    return np.where(keep, x, 0.0)


_VECTOR_FNS = {
    'Identity': lambda x, op: x,
    'GaussianNoise': _gaussian_noise,
    'Scale': lambda x, op: x * (1.0 + op.level(0.5)),
    'Shift': lambda x, op: x + op.level(0.2),
    'FeatureDropout': _feature_dropout,
}


def apply_transform(x, op):
    """Apply one op to a single (C, H, W) image or 1-D feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        fn = _IMAGE_FNS.get(op.kind)
        if fn is None:
            raise UnknownTransformError(f"unknown image transform {op.kind!r}")
        return np.clip(fn(x, op), 0.0, 1.0)
    fn = _VECTOR_FNS.get(op.kind)
    if fn is None:
        raise UnknownTransformError(f"unknown vector transform {op.kind!r}")
    return fn(x, op)


def apply_pair(x, first, second):
    return apply_transform(apply_transform(x, first), second)
