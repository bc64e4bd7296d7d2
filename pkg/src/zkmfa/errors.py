"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid parameters and malformed in-memory
inputs; the classes below exist where callers need to distinguish outcomes
(file corruption, protocol state violations, authentication failures).
"""

from __future__ import annotations

from dataclasses import dataclass


class FormatError(ValueError):
    """Serialized bytes or an ingested file violate the declared format."""


class ProtocolStateError(RuntimeError):
    """A session operation was invoked in the wrong state."""


class InsufficientStableBits(RuntimeError):
    """Stable-bit collection ran out of budget before reaching the key length."""

    def __init__(self, collected: int, needed: int, draws: int):
        super().__init__(
            f"collected only {collected} stable bits (need {needed}) "
            f"after {draws} challenge draws"
        )
        self.collected = collected
        self.needed = needed
        self.draws = draws


@dataclass
class FragmentStatus:
    """Per-fragment outcome of a reconciliation attempt.

    ``distance`` is the Hamming distance at which the digest matched, or
    None if unresolved. ``candidates_checked`` counts every digest
    comparison including the direct (distance-0) check; it stays 0 for
    fragments never attempted because an earlier one already failed.
    """

    index: int
    resolved: bool
    distance: int | None
    candidates_checked: int
    attempted: bool = True


class ReconciliationFailure(RuntimeError):
    """No candidate within the Hamming budget matched a fragment digest."""

    def __init__(self, statuses: list[FragmentStatus]):
        failed = [s.index for s in statuses if s.attempted and not s.resolved]
        super().__init__(f"unresolved fragments: {failed}")
        self.statuses = statuses
