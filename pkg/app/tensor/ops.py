"""
运算注册表：每种运算的形状检查、前向计算和反向梯度

卷积语义固定为互相关 + 显式零填充；权重布局:
    conv2d            w: (C_out, C_in, kh, kw)
    conv2d_transpose  w: (C_in, C_out, kh, kw)   # 与 conv2d 共用同一数组时互为伴随
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..utils.exceptions import ShapeMismatchError, UnknownOpError

Arrays = Sequence[np.ndarray]
Attrs = Dict[str, Any]

_PROB_EDGE = np.finfo(np.float64).epsneg


class Op:
    """运算基类，子类实现 check / forward / backward"""

    kind: str = ""
    arity: Tuple[int, ...] = (1,)

    def check(self, arrays: Arrays, attrs: Attrs) -> None:
        if len(arrays) not in self.arity:
            raise ShapeMismatchError(
                self.kind,
                f"expected {' or '.join(map(str, self.arity))} inputs, got {len(arrays)}",
                [a.shape for a in arrays],
            )

    def forward(self, arrays: Arrays, attrs: Attrs) -> Tuple[np.ndarray, Dict[str, Any]]:
        raise NotImplementedError

    def backward(
        self,
        grad: np.ndarray,
        arrays: Arrays,
        out: np.ndarray,
        attrs: Attrs,
        ctx: Dict[str, Any],
        needs: List[bool],
    ) -> List[Optional[np.ndarray]]:
        raise NotImplementedError

    def _mismatch(self, message: str, arrays: Arrays):
        return ShapeMismatchError(self.kind, message, [a.shape for a in arrays])


_OPS: Dict[str, Op] = {}


def register(cls):
    _OPS[cls.kind] = cls()
    return cls


def get_op(op_kind: str) -> Op:
    try:
        return _OPS[op_kind]
    except KeyError:
        raise UnknownOpError(op_kind) from None


def op_kinds() -> List[str]:
    return sorted(_OPS)


def _same_shape(op: Op, arrays: Arrays) -> None:
    if len({a.shape for a in arrays}) > 1:
        raise op._mismatch(
            "inputs must have identical shapes (no broadcasting)", arrays
        )


def _pair(value, name: str, op: Op, arrays: Arrays, minimum: int) -> Tuple[int, int]:
    if isinstance(value, (tuple, list)):
        pair = tuple(int(v) for v in value)
    else:
        pair = (int(value), int(value))
    if len(pair) != 2 or any(v < minimum for v in pair):
        raise op._mismatch(f"{name} must be integers >= {minimum}, got {value}", arrays)
    return pair


def _axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------- 逐元素运算


@register
class Add(Op):
    """a + alpha * b + scalar（单输入时为 a + scalar）"""

    kind = "add"
    arity = (1, 2)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        _same_shape(self, arrays)

    def forward(self, arrays, attrs):
        out = arrays[0] + float(attrs.get("scalar", 0.0))
        if len(arrays) == 2:
            out = out + float(attrs.get("alpha", 1.0)) * arrays[1]
        return out, {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        grads = [grad]
        if len(arrays) == 2:
            grads.append(float(attrs.get("alpha", 1.0)) * grad)
        return grads


@register
class Mul(Op):
    """逐元素乘积 a * b，或单输入 a * scalar"""

    kind = "mul"
    arity = (1, 2)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if len(arrays) == 1 and "scalar" not in attrs:
            raise self._mismatch("single-input mul needs a scalar attribute", arrays)
        _same_shape(self, arrays)

    def forward(self, arrays, attrs):
        if len(arrays) == 1:
            return arrays[0] * float(attrs["scalar"]), {}
        return arrays[0] * arrays[1], {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        if len(arrays) == 1:
            return [grad * float(attrs["scalar"])]
        a, b = arrays
        return [grad * b if needs[0] else None, grad * a if needs[1] else None]


class _Unary(Op):
    arity = (1,)


@register
class Relu(_Unary):
    kind = "relu"

    def forward(self, arrays, attrs):
        return np.maximum(arrays[0], 0.0), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        return [grad * (arrays[0] > 0)]


@register
class Sigmoid(_Unary):
    kind = "sigmoid"

    def forward(self, arrays, attrs):
        # |x| > 37 时 tanh 饱和，输出夹在开区间 (0, 1) 内的相邻浮点数上
        out = 0.5 * (1.0 + np.tanh(0.5 * arrays[0]))
        return np.clip(out, _PROB_EDGE, 1.0 - _PROB_EDGE), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        return [grad * out * (1.0 - out)]


@register
class Exp(_Unary):
    kind = "exp"

    def forward(self, arrays, attrs):
        return np.exp(arrays[0]), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        return [grad * out]


@register
class Log(_Unary):
    """log(max(x, floor))，被截断的位置梯度为零"""

    kind = "log"

    def forward(self, arrays, attrs):
        floor = float(attrs.get("floor", 0.0))
        x = arrays[0]
        return np.log(np.maximum(x, floor) if floor > 0 else x), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        floor = float(attrs.get("floor", 0.0))
        x = arrays[0]
        if floor > 0:
            return [np.where(x > floor, grad / np.maximum(x, floor), 0.0)]
        return [grad / x]


@register
class Square(_Unary):
    kind = "square"

    def forward(self, arrays, attrs):
        return np.square(arrays[0]), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        return [2.0 * arrays[0] * grad]


# ---------------------------------------------------------------- 线性代数


@register
class Matmul(Op):
    kind = "matmul"
    arity = (2,)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        a, b = arrays
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise self._mismatch(
                f"needs (m,k)@(k,n), got {a.shape} and {b.shape}", arrays
            )

    def forward(self, arrays, attrs):
        return arrays[0] @ arrays[1], {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        a, b = arrays
        return [grad @ b.T if needs[0] else None, a.T @ grad if needs[1] else None]


@register
class Affine(Op):
    """x @ W + b，唯一允许偏置广播的运算"""

    kind = "affine"
    arity = (3,)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x, w, b = arrays
        if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
            raise self._mismatch("needs x (B,in), W (in,out), b (out,)", arrays)
        if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
            raise self._mismatch(
                f"in/out mismatch: x {x.shape}, W {w.shape}, b {b.shape}", arrays
            )

    def forward(self, arrays, attrs):
        x, w, b = arrays
        return x @ w + b, {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        x, w, _ = arrays
        return [
            grad @ w.T if needs[0] else None,
            x.T @ grad if needs[1] else None,
            grad.sum(axis=0) if needs[2] else None,
        ]


# ---------------------------------------------------------------- 卷积与池化
#
# 卷积统一走 im2col：窗口展开成 (B·Ho·Wo, C·kh·kw) 的连续矩阵后做一次矩阵乘法，
# 反向时复用前向缓存的矩阵；col2im 只剩 kh·kw 次按步长的切片累加。


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C, Ho, Wo, kh, kw) 的滑动窗口视图"""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> 行按 (b, i, j)、列按 (c, u, v) 排列的连续矩阵"""
    win = _windows(xp, kh, kw, sh, sw)[:, :, :ho, :wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, xp.shape[1] * kh * kw)


def _col2im(cols: np.ndarray, hp: int, wp: int, sh: int, sw: int) -> np.ndarray:
    """(B, Ho, Wo, C, kh, kw) 的窗口贡献按步长累加成 (B, C, Hp, Wp)"""
    b, ho, wo, c, kh, kw = cols.shape
    target = np.zeros((b, hp, wp, c))
    for i in range(kh):
        for j in range(kw):
            target[:, i : i + ho * sh : sh, j : j + wo * sw : sw, :] += cols[..., i, j]
    return target.transpose(0, 3, 1, 2)


def _channels_last(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B·H·W, C)"""
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


def _channels_first(mat: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    """(B·H·W, C) -> 连续的 (B, C, H, W)"""
    return np.ascontiguousarray(mat.reshape(b, h, w, -1).transpose(0, 3, 1, 2))


@register
class Conv2d(Op):
    kind = "conv2d"
    arity = (2,)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x, w = arrays
        if x.ndim != 4 or w.ndim != 4:
            raise self._mismatch("needs x (B,C,H,W) and w (O,C,kh,kw)", arrays)
        if x.shape[1] != w.shape[1]:
            raise self._mismatch(
                f"input channels {x.shape[1]} != weight channels {w.shape[1]}", arrays
            )
        sh, sw = _pair(attrs.get("stride", 1), "stride", self, arrays, 1)
        ph, pw = _pair(attrs.get("padding", 0), "padding", self, arrays, 0)
        if x.shape[2] + 2 * ph < w.shape[2] or x.shape[3] + 2 * pw < w.shape[3]:
            raise self._mismatch("kernel larger than padded input", arrays)

    def forward(self, arrays, attrs):
        x, w = arrays
        sh, sw = _pair(attrs.get("stride", 1), "stride", self, arrays, 1)
        ph, pw = _pair(attrs.get("padding", 0), "padding", self, arrays, 0)
        kh, kw = w.shape[2:]
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        ho = (xp.shape[2] - kh) // sh + 1
        wo = (xp.shape[3] - kw) // sw + 1
        cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
        out = cols @ w.reshape(w.shape[0], -1).T
        return _channels_first(out, x.shape[0], ho, wo), {"cols": cols, "padded_shape": xp.shape}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        x, w = arrays
        sh, sw = _pair(attrs.get("stride", 1), "stride", self, arrays, 1)
        ph, pw = _pair(attrs.get("padding", 0), "padding", self, arrays, 0)
        b, _, ho, wo = grad.shape
        g = _channels_last(grad)
        dx = dw = None
        if needs[1]:
            dw = (g.T @ ctx["cols"]).reshape(w.shape)
        if needs[0]:
            dcols = (g @ w.reshape(w.shape[0], -1)).reshape(b, ho, wo, *w.shape[1:])
            _, _, hp, wp = ctx["padded_shape"]
            dxp = _col2im(dcols, hp, wp, sh, sw)
            dx = dxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
        return [dx, dw]


@register
class Conv2dTranspose(Op):
    kind = "conv2d_transpose"
    arity = (2,)

    def _geometry(self, arrays, attrs):
        x, w = arrays
        sh, sw = _pair(attrs.get("stride", 1), "stride", self, arrays, 1)
        ph, pw = _pair(attrs.get("padding", 0), "padding", self, arrays, 0)
        oph, opw = _pair(attrs.get("output_padding", 0), "output_padding", self, arrays, 0)
        kh, kw = w.shape[2:]
        full_h = (x.shape[2] - 1) * sh + kh + oph
        full_w = (x.shape[3] - 1) * sw + kw + opw
        return sh, sw, ph, pw, kh, kw, full_h, full_w

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x, w = arrays
        if x.ndim != 4 or w.ndim != 4:
            raise self._mismatch("needs x (B,C,H,W) and w (C,O,kh,kw)", arrays)
        if x.shape[1] != w.shape[0]:
            raise self._mismatch(
                f"input channels {x.shape[1]} != weight channels {w.shape[0]}", arrays
            )
        sh, sw, ph, pw, _, _, full_h, full_w = self._geometry(arrays, attrs)
        oph, opw = _pair(attrs.get("output_padding", 0), "output_padding", self, arrays, 0)
        if oph >= sh or opw >= sw:
            raise self._mismatch("output_padding must be smaller than stride", arrays)
        if full_h - 2 * ph <= 0 or full_w - 2 * pw <= 0:
            raise self._mismatch("padding removes the whole output", arrays)

    def forward(self, arrays, attrs):
        x, w = arrays
        sh, sw, ph, pw, kh, kw, full_h, full_w = self._geometry(arrays, attrs)
        b, _, h, wd = x.shape
        xm = _channels_last(x)
        cols = (xm @ w.reshape(w.shape[0], -1)).reshape(b, h, wd, w.shape[1], kh, kw)
        full = _col2im(cols, full_h, full_w, sh, sw)
        out = full[:, :, ph : full_h - ph, pw : full_w - pw]
        return np.ascontiguousarray(out), {"x_mat": xm}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        x, w = arrays
        sh, sw, ph, pw, kh, kw, _, _ = self._geometry(arrays, attrs)
        b, _, h, wd = x.shape
        gp = np.pad(grad, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gcols = _im2col(gp, kh, kw, sh, sw, h, wd)
        dx = dw = None
        if needs[0]:
            dx = _channels_first(gcols @ w.reshape(w.shape[0], -1).T, b, h, wd)
        if needs[1]:
            dw = (ctx["x_mat"].T @ gcols).reshape(w.shape)
        return [dx, dw]


@register
class AvgPool2d(Op):
    kind = "avg_pool2d"
    arity = (1,)

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x = arrays[0]
        if x.ndim != 4:
            raise self._mismatch("needs x (B,C,H,W)", arrays)
        kh, kw = _pair(attrs.get("kernel_size", 2), "kernel_size", self, arrays, 1)
        _pair(attrs.get("stride", (kh, kw)), "stride", self, arrays, 1)
        if kh > x.shape[2] or kw > x.shape[3]:
            raise self._mismatch("pooling window larger than input", arrays)

    def forward(self, arrays, attrs):
        kh, kw = _pair(attrs.get("kernel_size", 2), "kernel_size", self, arrays, 1)
        sh, sw = _pair(attrs.get("stride", (kh, kw)), "stride", self, arrays, 1)
        win = _windows(arrays[0], kh, kw, sh, sw)
        return win.mean(axis=(4, 5)), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        x = arrays[0]
        kh, kw = _pair(attrs.get("kernel_size", 2), "kernel_size", self, arrays, 1)
        sh, sw = _pair(attrs.get("stride", (kh, kw)), "stride", self, arrays, 1)
        b, c, ho, wo = grad.shape
        share = (grad / (kh * kw)).transpose(0, 2, 3, 1)[..., None, None]
        share = np.broadcast_to(share, (b, ho, wo, c, kh, kw))
        return [np.ascontiguousarray(_col2im(share, x.shape[2], x.shape[3], sh, sw))]


# ---------------------------------------------------------------- 形状与归约


@register
class Reshape(_Unary):
    kind = "reshape"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        shape = tuple(int(d) for d in attrs.get("shape", ()))
        if int(np.prod(shape, dtype=np.int64)) != arrays[0].size or any(d <= 0 for d in shape):
            raise self._mismatch(f"cannot reshape {arrays[0].shape} into {shape}", arrays)

    def forward(self, arrays, attrs):
        return arrays[0].reshape(tuple(attrs["shape"])), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        return [grad.reshape(arrays[0].shape)]


class _Reduce(_Unary):
    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        axis = attrs.get("axis")
        ndim = arrays[0].ndim
        for a in (axis,) if isinstance(axis, int) else (axis or ()):
            if not -ndim <= a < ndim:
                raise self._mismatch(f"axis {a} out of range for {ndim}-d input", arrays)

    def _expand(self, grad, arrays, attrs):
        x = arrays[0]
        axes = _axes(attrs.get("axis"), x.ndim)
        kept = [1 if i in axes else d for i, d in enumerate(x.shape)]
        return np.broadcast_to(np.reshape(grad, kept), x.shape), axes


@register
class Sum(_Reduce):
    kind = "sum"

    def forward(self, arrays, attrs):
        return np.sum(arrays[0], axis=_axes(attrs.get("axis"), arrays[0].ndim)), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        g, _ = self._expand(grad, arrays, attrs)
        return [np.array(g)]


@register
class Mean(_Reduce):
    kind = "mean"

    def forward(self, arrays, attrs):
        return np.mean(arrays[0], axis=_axes(attrs.get("axis"), arrays[0].ndim)), {}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        g, axes = self._expand(grad, arrays, attrs)
        count = int(np.prod([arrays[0].shape[a] for a in axes]))
        return [np.array(g) / count]


@register
class Concat(Op):
    kind = "concat"
    arity = tuple(range(1, 65))

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        axis = int(attrs.get("axis", 0))
        ndim = arrays[0].ndim
        if not -ndim <= axis < ndim:
            raise self._mismatch(f"axis {axis} out of range", arrays)
        axis %= ndim
        ref = [d for i, d in enumerate(arrays[0].shape) if i != axis]
        for a in arrays[1:]:
            if a.ndim != ndim or [d for i, d in enumerate(a.shape) if i != axis] != ref:
                raise self._mismatch(f"shapes differ outside axis {axis}", arrays)

    def forward(self, arrays, attrs):
        axis = int(attrs.get("axis", 0)) % arrays[0].ndim
        return np.concatenate(arrays, axis=axis), {"sizes": [a.shape[axis] for a in arrays]}

    def backward(self, grad, arrays, out, attrs, ctx, needs):
        axis = int(attrs.get("axis", 0)) % arrays[0].ndim
        bounds = np.cumsum(ctx["sizes"])[:-1]
        return list(np.split(grad, bounds, axis=axis))
