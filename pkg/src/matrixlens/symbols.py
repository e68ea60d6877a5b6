"""Symbol category table shared by the generator, detector, and grid decoder."""

from __future__ import annotations

# Category id -> display glyph for the 16 recognized symbol classes.
CLASS_GLYPHS: dict[int, str] = {
    0: "+",
    1: "−",
    2: "0",
    3: "1",
    4: "2",
    5: "3",
    6: "4",
    7: "5",
    8: "6",
    9: "7",
    10: "8",
    11: "9",
    12: "=",
    13: "[",
    14: "]",
    15: "×",
}

NUM_CLASSES = 16

PLUS_CLASS = 0
MINUS_CLASS = 1
EQUALS_CLASS = 12
LEFT_BRACKET_CLASS = 13
RIGHT_BRACKET_CLASS = 14
TIMES_CLASS = 15

# Digit d in 0..9 is category d + 2.
DIGIT_CLASSES = tuple(range(2, 12))

BRACKET_CLASSES = (LEFT_BRACKET_CLASS, RIGHT_BRACKET_CLASS)

# Operator/bracket categories that never contribute to a matrix entry.
NON_CONTENT_CLASSES = (
    PLUS_CLASS,
    EQUALS_CLASS,
    LEFT_BRACKET_CLASS,
    RIGHT_BRACKET_CLASS,
    TIMES_CLASS,
)


def digit_class(digit: int) -> int:
    """Category id for a decimal digit 0..9."""
    if not 0 <= digit <= 9:
        raise ValueError(f"not a decimal digit: {digit}")
    return digit + 2


def class_digit(class_id: int) -> int:
    """Decimal digit for a digit-category id; raises for non-digit classes."""
    if class_id not in DIGIT_CLASSES:
        raise ValueError(f"class {class_id} ({CLASS_GLYPHS.get(class_id, '?')}) is not a digit")
    return class_id - 2


def is_digit_class(class_id: int) -> bool:
    return class_id in DIGIT_CLASSES
