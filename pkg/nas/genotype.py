"""Discrete cells: extraction from alpha, parameter accounting and text export."""
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from dhalab.exceptions import ConstraintError

from .operations import OPS, PARAMETER_FREE
from .supernet import classifier_shapes, stem_shapes

logger = logging.getLogger(__name__)

EDGES_PER_NODE = 2


@dataclass(frozen=True)
class GenotypeEdge:
    node: int
    predecessor: int
    op: str
    alpha: float = 0.0


@dataclass(frozen=True)
class Genotype:
    edges: Tuple[GenotypeEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, 'edges', tuple(sorted(self.edges, key=lambda e: (e.node, e.predecessor))))

    def edges_for(self, node):
        return [edge for edge in self.edges if edge.node == node]

    @property
    def nodes(self):
        return sorted({edge.node for edge in self.edges})

    def node_weights(self, space):
        """One-hot slot weights per node, usable as supernet node weights."""
        weights = []
        for node in space.nodes:
            w = np.zeros(space.num_slots(node))
            for edge in self.edges_for(node):
                w[space.slot(edge.predecessor, edge.op)] = 1.0
            weights.append(w)
        return weights

    def structure(self):
        return tuple((e.node, e.predecessor, e.op) for e in self.edges)

    def structural_hash(self):
        text = ";".join(f"{node},{pred},{op}" for node, pred, op in self.structure())
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def op_share(self):
        """Fraction of retained edges per op name."""
        counts = Counter(edge.op for edge in self.edges)
        total = sum(counts.values())
        return {op: counts[op] / total for op in OPS if counts[op]}

    def to_text(self):
        return "".join(f"{e.node},{e.predecessor},{e.op},{e.alpha!r}\n" for e in self.edges)

    @classmethod
    def from_text(cls, text):
        edges = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 4 or parts[2] not in OPS:
                raise ValueError(f"genotype line {number}: expected node,predecessor,op_name,alpha_value")
            edges.append(GenotypeEdge(int(parts[0]), int(parts[1]), parts[2], float(parts[3])))
        return cls(tuple(edges))


def extract_child(alphas, space):
    """
    Per node, keep the two edges with the largest max-|alpha| and the
    strongest op on each. Ties go to the lower predecessor, then to the
    earlier catalog op. Edges whose alphas are all zero carry the identity op.
    """
    alphas = getattr(alphas, 'alphas', alphas)
    edges = []
    for node, alpha in zip(space.nodes, alphas):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (space.num_slots(node),):
            raise ValueError(f"node {node} expects {space.num_slots(node)} alpha entries, got {alpha.shape}")
        per_edge = np.abs(alpha).reshape(node, len(space.ops))
        if not per_edge.any():
            logger.warning("all-zero alpha node=%d; falling back to identity edges", node)
            edges.extend(GenotypeEdge(node, p, 'identity', 0.0) for p in range(EDGES_PER_NODE))
            continue
        strength = per_edge.max(axis=1)
        # stable sort on -strength keeps lower predecessors first among ties
        kept = np.argsort(-strength, kind='stable')[:EDGES_PER_NODE]
        for predecessor in sorted(int(p) for p in kept):
            if strength[predecessor] == 0.0:
                edges.append(GenotypeEdge(node, predecessor, 'identity', 0.0))
                continue
            k = int(np.argmax(per_edge[predecessor]))
            edges.append(GenotypeEdge(node, predecessor, space.ops[k], float(alpha[predecessor * len(space.ops) + k])))
    return Genotype(tuple(edges))


def param_count(genotype, spec, space=None):
    """
    Trainable parameters of the materialized child network, stem and
    classifier included. Accepts a Genotype or an ArchState.
    """
    if not isinstance(genotype, Genotype):
        genotype = extract_child(genotype, space or genotype.space)
    fixed = sum(int(np.prod(shape)) for shape in {**stem_shapes(spec), **classifier_shapes(spec)}.values())
    cell = sum(OPS[edge.op].param_count(spec.channels) for edge in genotype.edges)
    return fixed + spec.num_cells * cell


def check_constraint(count, limit):
    """Inclusive budget check; a limit of None never fails."""
    return limit is None or count <= limit


def repair_genotype(genotype, alphas, space, spec, limit):
    """
    Swap parametric ops for parameter-free ones until the child fits `limit`.

    The parametric edge with the smallest |alpha| goes first; it takes the
    parameter-free op with the largest |alpha| on the same edge.
    """
    if check_constraint(param_count(genotype, spec), limit):
        return genotype
    alphas = getattr(alphas, 'alphas', alphas)
    by_node = dict(zip(space.nodes, alphas))
    edges = list(genotype.edges)
    while not check_constraint(param_count(Genotype(tuple(edges)), spec), limit):
        parametric = [i for i, e in enumerate(edges) if OPS[e.op].parametric]
        if not parametric:
            raise ConstraintError(
                f"parameter limit {limit} is below the parameter-free child ({param_count(Genotype(tuple(edges)), spec)})")
        target = min(parametric, key=lambda i: (abs(edges[i].alpha), edges[i].node, edges[i].predecessor))
        edge = edges[target]
        alpha = np.asarray(by_node[edge.node])
        candidates = [(abs(alpha[space.slot(edge.predecessor, op)]), -space.ops.index(op), op) for op in PARAMETER_FREE]
        _, _, op = max(candidates)
        edges[target] = replace(edge, op=op, alpha=float(alpha[space.slot(edge.predecessor, op)]))
        logger.info("constraint repair node=%d predecessor=%d %s->%s limit=%s",
                    edge.node, edge.predecessor, edge.op, op, limit)
    return Genotype(tuple(edges))
