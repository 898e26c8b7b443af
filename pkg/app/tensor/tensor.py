"""
可微分张量核心：Tensor、计算图（动态录制）以及前向/反向传播入口
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.exceptions import BackwardError, GraphConsumedError, ShapeMismatchError
from .ops import get_op

logger = logging.getLogger(__name__)


class Tensor:
    """n维双精度数组，可参与计算图"""

    def __init__(
        self,
        values: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        """
        Args:
            values: 数组数据（复制为连续的 float64，并设为只读）
            requires_grad: 是否需要梯度
            name: 可选名称（参数名）
        """
        arr = np.array(values, dtype=np.float64, copy=True, order="C")
        if any(d <= 0 for d in arr.shape):
            raise ShapeMismatchError(
                "tensor", f"dimension sizes must be positive, got {arr.shape}", [arr.shape]
            )
        arr.setflags(write=False)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, values: np.ndarray, requires_grad: bool) -> "Tensor":
        """包装运算输出：已是连续 float64 时不再复制"""
        arr = np.asarray(values, dtype=np.float64, order="C")
        arr.setflags(write=False)
        tensor = cls.__new__(cls)
        tensor.values = arr
        tensor.requires_grad = bool(requires_grad)
        tensor.name = None
        tensor.grad = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeMismatchError("item", "tensor is not a scalar", [self.shape])
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """累加梯度；requires_grad=False 的张量从不累加"""
        if not self.requires_grad:
            return
        if grad.shape != self.shape:
            raise ShapeMismatchError(
                "accumulate_grad", "gradient shape differs from tensor", [grad.shape, self.shape]
            )
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def constant(values: Any) -> Tensor:
    """不需要梯度的常量张量（图像、噪声、标签）"""
    return Tensor(values, requires_grad=False)


@dataclass
class Node:
    """计算图中的一条运算记录"""

    node_id: int
    op_kind: str
    input_ids: Tuple[int, ...]
    output: Tensor
    attrs: Dict[str, Any] = field(default_factory=dict)
    ctx: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.op_kind == "leaf"


_local = threading.local()


def _graph_stack() -> List["ComputationGraph"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph() -> Optional["ComputationGraph"]:
    """当前线程正在录制的计算图（没有则为 None）"""
    stack = _graph_stack()
    return stack[-1] if stack else None


class ComputationGraph:
    """按前向顺序录制的动态计算图，反向传播后即作废"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._index: Dict[int, int] = {}
        self.consumed = False

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def node_id_of(self, tensor: Tensor) -> int:
        """返回张量对应的节点 id，首次出现的张量登记为叶子节点"""
        key = id(tensor)
        if key not in self._index:
            self._index[key] = self._append("leaf", (), tensor, {}, {})
        return self._index[key]

    def has(self, tensor: Tensor) -> bool:
        return id(tensor) in self._index

    def record(
        self,
        op_kind: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        attrs: Dict[str, Any],
        ctx: Dict[str, Any],
    ) -> int:
        if self.consumed:
            raise GraphConsumedError()
        input_ids = tuple(self.node_id_of(t) for t in inputs)
        node_id = self._append(op_kind, input_ids, output, attrs, ctx)
        self._index[id(output)] = node_id
        return node_id

    def _append(self, op_kind, input_ids, output, attrs, ctx) -> int:
        node_id = len(self.nodes)
        self.nodes.append(Node(node_id, op_kind, input_ids, output, attrs, ctx))
        return node_id

    def leaves(self) -> List[Tensor]:
        return [n.output for n in self.nodes if n.is_leaf]


def forward(op_kind: str, inputs: Sequence[Tensor], **attrs: Any) -> Tensor:
    """
    执行一次前向运算，并在活动计算图中追加节点

    Args:
        op_kind: 运算类型（add, mul, matmul, conv2d, ...）
        inputs: 输入张量列表
        **attrs: 运算属性（stride, padding, axis, ...）

    Returns:
        输出张量
    """
    op = get_op(op_kind)
    arrays = [t.values for t in inputs]
    op.check(arrays, attrs)
    out_values, ctx = op.forward(arrays, attrs)
    graph = active_graph()
    requires_grad = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_values, requires_grad)
    if graph is not None:
        graph.record(op_kind, inputs, out, attrs, ctx)
    return out


def backward(graph: ComputationGraph, output: Tensor) -> Dict[int, np.ndarray]:
    """
    反向模式自动微分

    Args:
        graph: 录制了 output 的计算图
        output: 标量输出张量

    Returns:
        节点 id -> 梯度数组 的映射；同时把梯度累加到 requires_grad 的叶子张量上
    """
    if graph.consumed:
        raise GraphConsumedError()
    if output.size != 1:
        raise BackwardError(f"backward needs a scalar output, got shape {output.shape}")
    if not graph.has(output):
        raise BackwardError("output tensor was not produced by this graph")

    out_id = graph.node_id_of(output)
    grads: Dict[int, np.ndarray] = {out_id: np.ones(output.shape)}

    for node in reversed(graph.nodes[: out_id + 1]):
        grad = grads.get(node.node_id)
        if grad is None or not node.output.requires_grad:
            continue
        if node.is_leaf:
            node.output.accumulate_grad(grad)
            continue
        op = get_op(node.op_kind)
        inputs = [graph.nodes[i].output for i in node.input_ids]
        needs = [t.requires_grad for t in inputs]
        input_grads = op.backward(
            grad, [t.values for t in inputs], node.output.values, node.attrs, node.ctx, needs
        )
        for input_id, g, need in zip(node.input_ids, input_grads, needs):
            if not need or g is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + g
            else:
                grads[input_id] = g

    graph.consumed = True
    logger.debug(f"[Tensor] backward visited {len(graph.nodes)} nodes")
    return grads
