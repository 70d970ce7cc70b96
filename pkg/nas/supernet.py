"""
Weight-sharing supernet over a CellSpace.

Parameters live outside the network as a flat name -> array mapping so the
trainer can step them functionally; `forward` wraps whatever it is handed.
"""
import math

import numpy as np

from autodiff import Tensor, as_tensor
from autodiff import functional as F

from .operations import OPS
from .space import INPUT_NODES


def stem_shapes(spec):
    C = spec.channels
    if spec.is_image:
        return {'stem.weight': (C, spec.input_shape[0], 3, 3), 'stem.scale': (C,), 'stem.shift': (C,)}
    return {'stem.weight': (spec.input_shape[0], C), 'stem.scale': (C,), 'stem.shift': (C,)}


def classifier_shapes(spec):
    return {'classifier.weight': (spec.channels, spec.num_classes), 'classifier.bias': (spec.num_classes,)}


def edge_prefix(cell, node, predecessor, op):
    return f'cells.{cell}.n{node}.p{predecessor}.{op}.'


def stem(spec, p, x):
    """(N, C_in, H, W) images or (N, d) vectors -> (N, C, H', W') feature maps."""
    if spec.is_image:
        h = F.conv2d(x, p['stem.weight'], stride=spec.stem_stride, padding=1)
        return F.affine(h, p['stem.scale'], p['stem.shift'])
    h = F.affine(x @ p['stem.weight'], p['stem.scale'], p['stem.shift'])
    return h.reshape(h.shape[0], spec.channels, 1, 1)


def classify(p, h):
    return F.global_avg_pool(h) @ p['classifier.weight'] + p['classifier.bias']


class Supernet:
    def __init__(self, spec, space):
        self.spec = spec
        self.space = space

    def param_shapes(self):
        shapes = dict(stem_shapes(self.spec))
        for cell in range(self.spec.num_cells):
            for node in self.space.nodes:
                for predecessor in self.space.predecessors(node):
                    for op in self.space.ops:
                        prefix = edge_prefix(cell, node, predecessor, op)
                        for suffix, shape in OPS[op].shapes(self.spec.channels).items():
                            shapes[prefix + suffix] = shape
        shapes.update(classifier_shapes(self.spec))
        return shapes

    def init_params(self, rng):
        """He-normal weights, unit scales, zero shifts and biases."""
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith('scale'):
                params[name] = np.ones(shape)
            elif name.endswith(('shift', 'bias')):
                params[name] = np.zeros(shape)
            else:
                fan_in = math.prod(shape[1:]) if len(shape) == 4 else shape[0]
                params[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        return params

    def child_param_names(self, genotype):
        names = list(stem_shapes(self.spec))
        for cell in range(self.spec.num_cells):
            for edge in genotype.edges:
                prefix = edge_prefix(cell, edge.node, edge.predecessor, edge.op)
                names.extend(prefix + suffix for suffix in OPS[edge.op].shapes(self.spec.channels))
        names.extend(classifier_shapes(self.spec))
        return names

    def forward(self, params, x, node_weights):
        """
        Logits for input batch `x`.

        `node_weights[j]` weighs node j's slots. Slots whose weight is a
        constant zero are skipped, so one-hot constants evaluate exactly the
        child network they select.
        """
        p = {name: as_tensor(value) for name, value in params.items()}
        s0 = s1 = stem(self.spec, p, as_tensor(x))
        for cell in range(self.spec.num_cells):
            out = self._cell(cell, p, s0, s1, node_weights)
            s0, s1 = s1, out
        return classify(p, s1)

    def _cell(self, cell, p, s0, s1, node_weights):
        states = [s0, s1]
        for node, weights in zip(self.space.nodes, node_weights):
            weights = as_tensor(weights)
            if weights.shape != (self.space.num_slots(node),):
                raise ValueError(f"node {node} expects {self.space.num_slots(node)} weights, got {weights.shape}")
            if weights.requires_grad:
                slots = range(weights.shape[0])
            else:
                slots = np.flatnonzero(weights.data)
            outputs = []
            for slot in slots:
                predecessor, op = self.space.decode(int(slot))
                prefix = edge_prefix(cell, node, predecessor, op)
                local = {suffix: p[prefix + suffix] for suffix in OPS[op].shapes(self.spec.channels)}
                outputs.append(OPS[op].apply(states[predecessor], local))
            if not outputs:
                states.append(Tensor(np.zeros(s1.shape)))
                continue
            if len(slots) != weights.shape[0]:
                weights = weights[np.asarray(slots)]
            states.append(F.mix(weights, outputs))
        return F.mean(F.stack(states[INPUT_NODES:]), axis=0)


class ChildNetwork:
    """A discrete cell materialized from a genotype, holding only the weights it uses."""

    def __init__(self, supernet, genotype, params):
        self.spec = supernet.spec
        self.space = supernet.space
        self.genotype = genotype
        self.params = {name: params[name] for name in supernet.child_param_names(genotype)}

    def param_count(self):
        return int(sum(np.size(value) for value in self.params.values()))

    def forward(self, x, params=None):
        p = {name: as_tensor(value) for name, value in (params or self.params).items()}
        s0 = s1 = stem(self.spec, p, as_tensor(x))
        for cell in range(self.spec.num_cells):
            states = [s0, s1]
            for node in self.space.nodes:
                out = None
                for edge in self.genotype.edges_for(node):
                    prefix = edge_prefix(cell, node, edge.predecessor, edge.op)
                    local = {suffix: p[prefix + suffix] for suffix in OPS[edge.op].shapes(self.spec.channels)}
                    y = OPS[edge.op].apply(states[edge.predecessor], local)
                    out = y if out is None else out + y
                states.append(out)
            s0, s1 = s1, F.mean(F.stack(states[INPUT_NODES:]), axis=0)
        return classify(p, s1)
