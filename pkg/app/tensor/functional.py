"""
各运算的函数式封装，模型代码通过这些函数构建计算图
"""

from typing import Optional, Sequence, Tuple, Union

from .tensor import Tensor, forward

IntPair = Union[int, Tuple[int, int]]


def add(a: Tensor, b: Optional[Tensor] = None, alpha: float = 1.0, scalar: float = 0.0) -> Tensor:
    if b is None:
        return forward("add", [a], scalar=scalar)
    return forward("add", [a, b], alpha=alpha, scalar=scalar)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return forward("add", [a, b], alpha=-1.0)


def mul(a: Tensor, b: Optional[Tensor] = None, scalar: Optional[float] = None) -> Tensor:
    if b is None:
        return forward("mul", [a], scalar=scalar)
    return forward("mul", [a, b])


def scale(a: Tensor, factor: float) -> Tensor:
    return forward("mul", [a], scalar=factor)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward("matmul", [a, b])


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return forward("affine", [x, weight, bias])


def conv2d(x: Tensor, weight: Tensor, stride: IntPair = 1, padding: IntPair = 0) -> Tensor:
    return forward("conv2d", [x, weight], stride=stride, padding=padding)


def conv2d_transpose(
    x: Tensor,
    weight: Tensor,
    stride: IntPair = 1,
    padding: IntPair = 0,
    output_padding: IntPair = 0,
) -> Tensor:
    return forward(
        "conv2d_transpose",
        [x, weight],
        stride=stride,
        padding=padding,
        output_padding=output_padding,
    )


def relu(x: Tensor) -> Tensor:
    return forward("relu", [x])


def sigmoid(x: Tensor) -> Tensor:
    return forward("sigmoid", [x])


def avg_pool2d(x: Tensor, kernel_size: IntPair, stride: Optional[IntPair] = None) -> Tensor:
    return forward(
        "avg_pool2d", [x], kernel_size=kernel_size, stride=stride if stride is not None else kernel_size
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return forward("reshape", [x], shape=tuple(int(d) for d in shape))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    return forward("sum", [x], axis=axis)


def mean(x: Tensor, axis=None) -> Tensor:
    return forward("mean", [x], axis=axis)


def exp(x: Tensor) -> Tensor:
    return forward("exp", [x])


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    return forward("log", [x], floor=floor)


def square(x: Tensor) -> Tensor:
    return forward("square", [x])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return forward("concat", list(tensors), axis=axis)
