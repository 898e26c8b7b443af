"""
SSVR 自定义异常类
定义各种业务异常类型，用于统一错误处理和进程退出码
"""

from typing import Any, Dict, Optional

# 进程退出码
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class SSVRError(Exception):
    """SSVR 基础异常类"""

    def __init__(
        self,
        message: str,
        error_code: str = None,
        exit_code: int = EXIT_DATA,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.exit_code = exit_code
        self.details = details or {}


class UsageError(SSVRError):
    """命令行用法异常"""

    def __init__(self, message: str, field: str = None):
        super().__init__(
            message=message,
            error_code="USAGE_ERROR",
            exit_code=EXIT_USAGE,
            details={"field": field} if field else {},
        )


class ConfigError(SSVRError):
    """配置异常（未知键、非法取值）"""

    def __init__(self, message: str, key: str = None, line: int = None):
        details = {}
        if key:
            details["key"] = key
        if line:
            details["line"] = line
        super().__init__(
            message=message,
            error_code="CONFIG_ERROR",
            exit_code=EXIT_USAGE,
            details=details,
        )


class DataError(SSVRError):
    """数据异常基类"""

    def __init__(self, message: str, error_code: str = "DATA_ERROR", **details):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=EXIT_DATA,
            details={k: v for k, v in details.items() if v is not None},
        )


class ManifestError(DataError):
    """清单（CSV/图像目录）读取异常"""

    def __init__(self, message: str, path: str = None, line: int = None):
        super().__init__(message, "MANIFEST_ERROR", path=path, line=line)


class RulesetError(DataError):
    """关键词规则文件异常"""

    def __init__(self, message: str, path: str = None, line: int = None):
        super().__init__(message, "RULESET_ERROR", path=path, line=line)


class SplitError(DataError):
    """数据集划分异常"""

    def __init__(self, message: str):
        super().__init__(message, "SPLIT_ERROR")


class AugmentationError(DataError):
    """数据增强参数异常"""

    def __init__(self, message: str):
        super().__init__(message, "AUGMENTATION_ERROR")


class MixedBatchError(DataError):
    """有标签与无标签样本混在同一个minibatch"""

    def __init__(self, message: str = "minibatch mixes labeled and unlabeled images"):
        super().__init__(message, "MIXED_BATCH_ERROR")


class OutputError(DataError):
    """输出文件或目录写入失败"""

    def __init__(self, message: str, path: str = None):
        super().__init__(message, "OUTPUT_WRITE_FAILED", path=path)


class CheckpointError(DataError):
    """检查点异常基类"""

    def __init__(self, message: str, path: str = None, error_code: str = None):
        super().__init__(message, error_code or "CHECKPOINT_ERROR", path=path)


class CheckpointNotFoundError(CheckpointError):
    """检查点文件不存在"""

    def __init__(self, path: str):
        super().__init__(
            f"Checkpoint {path} not found", path, "CHECKPOINT_NOT_FOUND"
        )


class CheckpointCorruptError(CheckpointError):
    """检查点文件损坏（截断或校验失败）"""

    def __init__(self, message: str, path: str = None):
        super().__init__(message, path, "CHECKPOINT_CORRUPT")


class CheckpointVersionError(CheckpointError):
    """检查点格式版本不匹配"""

    def __init__(self, found: int, expected: int, path: str = None):
        super().__init__(
            f"Checkpoint format version {found} is not supported (expected {expected})",
            path,
            "CHECKPOINT_VERSION_MISMATCH",
        )
        self.details.update({"found": found, "expected": expected})


class NumericalError(SSVRError):
    """数值异常基类"""

    def __init__(self, message: str, error_code: str = "NUMERICAL_ERROR", **details):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=EXIT_NUMERICAL,
            details={k: v for k, v in details.items() if v is not None},
        )


class NonFiniteLossError(NumericalError):
    """损失出现 NaN/Inf"""

    def __init__(self, term: str, epoch: int = None, phase: str = None):
        where = f" at epoch {epoch}" if epoch is not None else ""
        if phase:
            where += f" ({phase} phase)"
        super().__init__(
            f"Non-finite {term} loss{where}",
            "NON_FINITE_LOSS",
            term=term,
            epoch=epoch,
            phase=phase,
        )


class UndefinedCorrelationError(NumericalError):
    """常数向量的相关系数无定义"""

    def __init__(self, message: str = "Pearson correlation is undefined for a constant vector"):
        super().__init__(message, "UNDEFINED_CORRELATION")


class TensorError(NumericalError):
    """张量运算异常基类"""


class ShapeMismatchError(TensorError):
    """形状不匹配"""

    def __init__(self, op_kind: str, message: str, shapes=None):
        super().__init__(
            f"{op_kind}: {message}",
            "SHAPE_MISMATCH",
            op=op_kind,
            shapes=[tuple(s) for s in shapes] if shapes else None,
        )


class UnknownOpError(TensorError):
    """未注册的运算类型"""

    def __init__(self, op_kind: str):
        super().__init__(f"Unknown op kind: {op_kind}", "UNKNOWN_OP", op=op_kind)


class GraphConsumedError(TensorError):
    """计算图已经执行过反向传播"""

    def __init__(self):
        super().__init__(
            "Computation graph was already consumed by a backward pass",
            "GRAPH_CONSUMED",
        )


class BackwardError(TensorError):
    """反向传播前置条件不满足"""

    def __init__(self, message: str):
        super().__init__(message, "BACKWARD_ERROR")
