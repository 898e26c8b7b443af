"""
基于关键词规则的报告严重程度提取
"""

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Optional, Pattern, Tuple, Union

from ..utils.exceptions import RulesetError
from .dataset import SEVERITY_CLASSES

logger = logging.getLogger(__name__)

DEFAULT_RULES_FILE = "default_rules.tsv"


@dataclass(frozen=True)
class KeywordRule:
    severity: int
    phrase: str
    pattern: Pattern = field(compare=False, repr=False)

    @classmethod
    def build(cls, severity: int, phrase: str) -> "KeywordRule":
        words = phrase.split()
        if not words:
            raise ValueError("rule phrase must be non-empty")
        if severity not in SEVERITY_CLASSES:
            raise ValueError(f"rule severity must be in 0..3, got {severity}")
        # 整词/整短语匹配，短语内部任意空白
        body = r"\s+".join(re.escape(w) for w in words)
        return cls(severity, " ".join(words), re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE))

    def matches(self, text: str) -> bool:
        return self.pattern.search(text) is not None


@dataclass(frozen=True)
class KeywordRuleset:
    """有序规则列表；cohort_only 为 True 时只给队列内的报告打标签"""

    rules: Tuple[KeywordRule, ...] = ()
    cohort_only: bool = False

    def __len__(self) -> int:
        return len(self.rules)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, str]], cohort_only: bool = False) -> "KeywordRuleset":
        return cls(tuple(KeywordRule.build(s, p) for s, p in pairs), cohort_only)


def parse_ruleset(text: str, source: str = "<string>", cohort_only: bool = False) -> KeywordRuleset:
    """
    解析规则文本：每行 `<severity 0-3><TAB><phrase>`，`#` 开头为注释

    Raises:
        RulesetError: 格式错误的行（附行号）
    """
    rules: List[KeywordRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.strip("\r\n").split("\t", 1)
        if len(parts) != 2:
            raise RulesetError(f"{source}:{lineno}: expected '<severity>\\t<phrase>'", source, lineno)
        sev_text, phrase = parts[0].strip(), parts[1].strip()
        if not sev_text.isdigit():
            raise RulesetError(f"{source}:{lineno}: severity {sev_text!r} is not 0..3", source, lineno)
        try:
            rules.append(KeywordRule.build(int(sev_text), phrase))
        except ValueError as e:
            raise RulesetError(f"{source}:{lineno}: {e}", source, lineno) from e
    return KeywordRuleset(tuple(rules), cohort_only)


def load_ruleset(path: Union[str, Path], cohort_only: bool = False) -> KeywordRuleset:
    path = Path(path)
    if not path.exists():
        raise RulesetError(f"ruleset file {path} not found", str(path))
    ruleset = parse_ruleset(path.read_text(encoding="utf-8"), str(path), cohort_only)
    logger.info(f"[Labels] 读取规则 {path}: {len(ruleset)} 条")
    return ruleset


def default_ruleset(cohort_only: bool = False) -> KeywordRuleset:
    """随包发布的默认规则"""
    text = resources.files(__package__).joinpath(DEFAULT_RULES_FILE).read_text(encoding="utf-8")
    return parse_ruleset(text, DEFAULT_RULES_FILE, cohort_only)


def extract_label(
    report_text: Optional[str], rules: KeywordRuleset, in_cohort: bool = True
) -> Optional[int]:
    """
    按规则顺序匹配报告，返回第一条命中规则的类别

    Args:
        report_text: 报告文本
        rules: 关键词规则
        in_cohort: 报告是否属于队列（规则集 cohort_only 时，队列外直接返回 None）

    Returns:
        0..3，未命中返回 None
    """
    if not report_text or (rules.cohort_only and not in_cohort):
        return None
    for rule in rules.rules:
        if rule.matches(report_text):
            return rule.severity
    return None
