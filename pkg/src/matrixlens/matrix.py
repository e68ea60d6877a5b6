"""Integer matrix value shared by the grid decoder, calculation tracer, and service."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class MatrixValue:
    """Rectangular matrix of exact integers."""

    values: tuple[tuple[int, ...], ...]

    @classmethod
    def from_lists(cls, rows: list[list[int]]) -> "MatrixValue":
        if not rows or not rows[0]:
            raise ValueError("matrix must have at least one row and column")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("matrix rows have unequal lengths")
        return cls(tuple(tuple(int(v) for v in r) for r in rows))

    @property
    def rows(self) -> int:
        return len(self.values)

    @property
    def cols(self) -> int:
        return len(self.values[0])

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def at(self, r: int, c: int) -> int:
        return self.values[r][c]

    def to_lists(self) -> list[list[int]]:
        return [list(r) for r in self.values]

    def transposed(self) -> "MatrixValue":
        return MatrixValue(tuple(zip(*self.values)))
