from .gradcheck import compare_gradients, finite_diff_grad
from .ops import op_kinds
from .tensor import ComputationGraph, Tensor, active_graph, backward, constant, forward

__all__ = [
    "Tensor",
    "ComputationGraph",
    "active_graph",
    "backward",
    "constant",
    "forward",
    "finite_diff_grad",
    "compare_gradients",
    "op_kinds",
]
