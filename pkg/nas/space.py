"""Cell search space: node/slot indexing shared by the supernet, the codes and genotypes."""
from dataclasses import dataclass
from typing import Tuple

from .operations import PRIMITIVES

INPUT_NODES = 2


@dataclass(frozen=True)
class CellSpace:
    """
    A cell DAG with two input nodes (0, 1) followed by `num_nodes`
    intermediate nodes. Node j reads every node i < j; each (i, j) edge holds
    one slot per catalog op, so node j has j * len(ops) slots and slot
    `i * len(ops) + k` is op k on the edge from i.
    """
    num_nodes: int = 4
    ops: Tuple[str, ...] = tuple(PRIMITIVES)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError(f"a cell needs at least one intermediate node, got {self.num_nodes}")

    @property
    def nodes(self):
        return range(INPUT_NODES, INPUT_NODES + self.num_nodes)

    def predecessors(self, node):
        return range(node)

    def num_slots(self, node):
        return node * len(self.ops)

    def slot(self, predecessor, op):
        return predecessor * len(self.ops) + self.ops.index(op)

    def decode(self, slot):
        """slot -> (predecessor, op name)"""
        predecessor, k = divmod(slot, len(self.ops))
        return predecessor, self.ops[k]

    @property
    def edges(self):
        return [(i, j) for j in self.nodes for i in self.predecessors(j)]


@dataclass(frozen=True)
class NetworkSpec:
    """Macro skeleton around the searched cell: stem, stacked cells, classifier."""
    input_shape: Tuple[int, ...]
    num_classes: int
    channels: int = 8
    num_cells: int = 2
    stem_stride: int = 1

    @property
    def is_image(self):
        return len(self.input_shape) == 3
