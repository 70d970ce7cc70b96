from .tensor import Graph, Tensor, as_tensor, no_grad
from . import functional
from .gradcheck import finite_diff_check

__all__ = ["Graph", "Tensor", "as_tensor", "no_grad", "functional", "finite_diff_check"]
