"""Edge-label categories predicted per 13x13 cell."""
from __future__ import annotations

import enum


class EdgeLabel(enum.IntEnum):
    CONVEX = 0
    CONCAVE = 1
    OCCLUSION = 2
    NO_EDGE = 3

    @property
    def char(self) -> str:
        return _CHARS[self]

    @classmethod
    def from_char(cls, ch: str) -> "EdgeLabel":
        try:
            return cls(_CHARS.index(ch))
        except ValueError:
            raise ValueError(f"unknown edge label character {ch!r}") from None


# convex, concave, occlusion, none
_CHARS = "CVON"
N_EDGE_LABELS = len(EdgeLabel)
