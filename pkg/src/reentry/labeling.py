"""Thread patterns and self-supervised label derivation.

All labels here are mechanical functions of the author sequence of an
observed context:

* ``sp`` (spread pattern): focused conversations, at most two distinct
  participants, get label 1; expansionary ones get 0.
* ``rt`` (repeated target): 1 iff the target user already authored an
  earlier turn of the context.
* ``ta`` (turn authorship): one indicator per non-final turn saying
  whether its author is the target user.
"""

from __future__ import annotations

from dataclasses import dataclass

from reentry.corpus import Instance, Turn

TASK_SPREAD = "sp"
TASK_REPEAT = "rt"
TASK_AUTHORSHIP = "ta"
ALL_TASKS = (TASK_SPREAD, TASK_REPEAT, TASK_AUTHORSHIP)


def _symbol(i: int) -> str:
    # A..Z for the first 26 distinct authors, then A1, A2, ...
    return chr(ord("A") + i) if i < 26 else f"A{i - 25}"


def thread_pattern(context: tuple[Turn, ...]) -> str:
    """Canonical author-sequence encoding by order of first appearance.

    The i-th distinct author maps to the i-th letter, so [u5, u9, u5]
    becomes "ABA" and any bijective renaming of user ids leaves the
    pattern unchanged.
    """
    if not context:
        raise ValueError("context must be non-empty")
    seen: dict[str, str] = {}
    out = []
    for turn in context:
        if turn.author not in seen:
            seen[turn.author] = _symbol(len(seen))
        out.append(seen[turn.author])
    return "".join(out)


def sp_label(context: tuple[Turn, ...]) -> int:
    """1 for a focused context (at most two distinct authors), else 0."""
    if not context:
        raise ValueError("context must be non-empty")
    return int(len({t.author for t in context}) <= 2)


def rt_label(context: tuple[Turn, ...], target: str) -> int:
    """1 iff the target authored any turn before the final one."""
    if context[-1].author != target:
        raise ValueError("target must author the final context turn")
    return int(any(t.author == target for t in context[:-1]))


def ta_labels(context: tuple[Turn, ...], target: str) -> tuple[int, ...]:
    """Per-turn authorship indicators for turns 1..m-1 (final turn excluded,
    its author is the target by construction)."""
    if len(context) < 2:
        raise ValueError("turn-authorship labels need at least two turns")
    if context[-1].author != target:
        raise ValueError("target must author the final context turn")
    return tuple(int(t.author == target) for t in context[:-1])


def invert_labels(instance: Instance, tasks: set[str]) -> Instance:
    """Flip the selected self-supervised labels; the main label is untouched."""
    unknown = tasks - set(ALL_TASKS)
    if unknown:
        raise ValueError(f"unknown tasks {sorted(unknown)}; expected subset of {ALL_TASKS}")
    return Instance(
        conv_id=instance.conv_id,
        position=instance.position,
        context=instance.context,
        target=instance.target,
        label_reentry=instance.label_reentry,
        label_focused=1 - instance.label_focused if TASK_SPREAD in tasks else instance.label_focused,
        label_repeated=1 - instance.label_repeated if TASK_REPEAT in tasks else instance.label_repeated,
        label_authorship=tuple(1 - y for y in instance.label_authorship)
        if TASK_AUTHORSHIP in tasks else instance.label_authorship,
        history=instance.history,
    )


@dataclass
class PatternStats:
    """Instance count and re-entry rate per thread pattern."""

    counts: dict[str, int]
    rates: dict[str, float]

    def rows(self) -> list[tuple[str, int, float]]:
        """(pattern, count, rate) sorted by count descending, then pattern."""
        return sorted(((p, self.counts[p], self.rates[p]) for p in self.counts),
                      key=lambda r: (-r[1], r[0]))


def pattern_stats(instances: list[Instance]) -> PatternStats:
    """Count instances and average the main label per thread pattern."""
    counts: dict[str, int] = {}
    positives: dict[str, int] = {}
    for ins in instances:
        pattern = thread_pattern(ins.context)
        counts[pattern] = counts.get(pattern, 0) + 1
        positives[pattern] = positives.get(pattern, 0) + ins.label_reentry
    rates = {p: positives[p] / counts[p] for p in counts}
    return PatternStats(counts=counts, rates=rates)


def parse_tasks(spec: str) -> set[str]:
    """Parse a comma-separated task list like "sp,rt,ta"; '' means none."""
    tokens = {t.strip() for t in spec.split(",") if t.strip()}
    unknown = tokens - set(ALL_TASKS)
    if unknown:
        raise ValueError(f"unknown tasks {sorted(unknown)}; expected subset of {ALL_TASKS}")
    return tokens
