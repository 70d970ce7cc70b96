"""Candidate operations on a supernet edge, keyed by name in catalog order."""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

from autodiff import functional as F

PRIMITIVES = [
    'sep_conv_3x3',
    'sep_conv_5x5',
    'dil_conv_3x3',
    'dil_conv_5x5',
    'max_pool_3x3',
    'avg_pool_3x3',
    'identity',
]

PARAMETER_FREE = ('max_pool_3x3', 'avg_pool_3x3', 'identity')


def _conv_block_shapes(prefix, C, kernel):
    return {
        f'{prefix}dw': (C, 1, kernel, kernel),
        f'{prefix}pw': (C, C, 1, 1),
        f'{prefix}scale': (C,),
        f'{prefix}shift': (C,),
    }


def _conv_block(x, p, prefix, kernel, dilation):
    # relu -> depthwise -> pointwise -> per-channel affine
    C = x.shape[1]
    h = F.relu(x)
    h = F.conv2d(h, p[f'{prefix}dw'], padding=dilation * (kernel - 1) // 2, dilation=dilation, groups=C)
    h = F.conv2d(h, p[f'{prefix}pw'])
    return F.affine(h, p[f'{prefix}scale'], p[f'{prefix}shift'])


@dataclass(frozen=True)
class OpSpec:
    name: str
    shapes: Callable[[int], Dict[str, Tuple[int, ...]]]
    apply: Callable

    def param_count(self, C):
        return sum(math.prod(shape) for shape in self.shapes(C).values())

    @property
    def parametric(self):
        return self.name not in PARAMETER_FREE


def _sep_conv(kernel):
    return OpSpec(
        f'sep_conv_{kernel}x{kernel}',
        lambda C: {**_conv_block_shapes('a.', C, kernel), **_conv_block_shapes('b.', C, kernel)},
        lambda x, p: _conv_block(_conv_block(x, p, 'a.', kernel, 1), p, 'b.', kernel, 1),
    )


def _dil_conv(kernel):
    return OpSpec(
        f'dil_conv_{kernel}x{kernel}',
        lambda C: _conv_block_shapes('', C, kernel),
        lambda x, p: _conv_block(x, p, '', kernel, 2),
    )


OPS = {
    'sep_conv_3x3': _sep_conv(3),
    'sep_conv_5x5': _sep_conv(5),
    'dil_conv_3x3': _dil_conv(3),
    'dil_conv_5x5': _dil_conv(5),
    'max_pool_3x3': OpSpec('max_pool_3x3', lambda C: {}, lambda x, p: F.max_pool2d(x)),
    'avg_pool_3x3': OpSpec('avg_pool_3x3', lambda C: {}, lambda x, p: F.avg_pool2d(x)),
    'identity': OpSpec('identity', lambda C: {}, lambda x, p: x),
}
