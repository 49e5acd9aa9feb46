"""Process-wide warning counters for rare but legal degenerate paths.

These never raise; they let tests and reports observe how often guards
fired (zero-norm projection fallback, batches without positive pairs, ...).
"""

from collections import Counter

WARNINGS: Counter = Counter()


def bump(name: str, n: int = 1) -> None:
    WARNINGS[name] += n


def reset() -> None:
    WARNINGS.clear()
