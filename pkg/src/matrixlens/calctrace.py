"""Step-by-step calculation traces for determinants (diagonal rule), matrix
addition, and matrix multiplication, with an independent verifier.

Traces carry exact integer arithmetic; expression strings use '×' for
products and parenthesize negative operands, e.g. "3 × (−4) × 8 = −96".
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from typing import Union

from .matrix import MatrixValue

MINUS = "−"   # −
TIMES = "×"   # ×

ROLE_A = "a"
ROLE_B = "b"
ROLE_RESULT = "result"


@dataclass(frozen=True)
class CellRef:
    role: str  # "a" | "b" | "result"
    row: int
    col: int


@dataclass
class CalcStep:
    kind: str                      # select | multiply | accumulate | emit-result
    cells: list[CellRef]
    expression: str
    value: int | None = None
    sign: int = 0                  # +1/-1 for signed diagonal products, else 0


@dataclass
class CalcTrace:
    op: str                        # det | add | mul
    a: MatrixValue
    b: MatrixValue | None
    steps: list[CalcStep]
    result: Union[MatrixValue, int]


def fmt_value(v: int) -> str:
    """Plain signed integer with the typographic minus."""
    return str(v).replace("-", MINUS)


def fmt_operand(v: int) -> str:
    """Operand in an expression: negatives are parenthesized."""
    return f"({fmt_value(v)})" if v < 0 else str(v)


def _product_expression(factors: list[int], value: int) -> str:
    lhs = f" {TIMES} ".join(fmt_operand(f) for f in factors)
    return f"{lhs} = {fmt_value(value)}"


def _sum_expression(terms: list[int], value: int) -> str:
    lhs = " + ".join(fmt_operand(t) for t in terms)
    return f"{lhs} = {fmt_value(value)}"


def det_cofactor(m: MatrixValue) -> int:
    """Independent determinant oracle: Laplace cofactor expansion."""
    if not m.is_square:
        raise ValueError("Matrix is not square")
    n = m.rows
    if n == 1:
        return m.at(0, 0)
    total = 0
    for j in range(n):
        minor = MatrixValue.from_lists(
            [[m.at(r, c) for c in range(n) if c != j] for r in range(1, n)]
        )
        total += (-1) ** j * m.at(0, j) * det_cofactor(minor)
    return total


def _diagonals(n: int) -> list[tuple[int, list[tuple[int, int]]]]:
    """Signed diagonal paths of the n<=3 diagonal rule, in emission order.

    Main diagonals run left to right by starting column, then anti-diagonals
    right to left in the appended-columns presentation.
    """
    if n == 1:
        return [(1, [(0, 0)])]
    if n == 2:
        return [(1, [(0, 0), (1, 1)]), (-1, [(0, 1), (1, 0)])]
    main = [(1, [(r, (j + r) % 3) for r in range(3)]) for j in range(3)]
    anti = [(-1, [(r, (j - r) % 3) for r in range(3)]) for j in (4, 3, 2)]
    return main + anti


def det_trace(m: MatrixValue) -> CalcTrace:
    """Diagonal-rule determinant trace for orders 1..3.

    Emits one multiply step per signed diagonal product, an accumulate step
    with the signed sum, and an emit step carrying the final value.
    """
    if not m.is_square:
        raise ValueError("Matrix is not square")
    n = m.rows
    if n > 3:
        raise ValueError("unsupported order for diagonal rule")

    steps: list[CalcStep] = []
    if n == 1:
        value = m.at(0, 0)
        steps.append(CalcStep("emit-result", [CellRef(ROLE_A, 0, 0)], fmt_value(value), value))
        return CalcTrace("det", m, None, steps, value)

    products: list[tuple[int, int]] = []  # (sign, product)
    for sign, path in _diagonals(n):
        factors = [m.at(r, c) for r, c in path]
        prod = 1
        for f in factors:
            prod *= f
        products.append((sign, prod))
        steps.append(CalcStep(
            kind="multiply",
            cells=[CellRef(ROLE_A, r, c) for r, c in path],
            expression=_product_expression(factors, prod),
            value=prod,
            sign=sign,
        ))

    det = sum(s * p for s, p in products)
    main_terms = [p for s, p in products if s > 0]
    anti_terms = [p for s, p in products if s < 0]
    lhs = " + ".join(fmt_operand(p) for p in main_terms)
    lhs += f" {MINUS} ({' + '.join(fmt_operand(p) for p in anti_terms)})"
    steps.append(CalcStep("accumulate", [], f"{lhs} = {fmt_value(det)}", det))
    steps.append(CalcStep("emit-result", [], fmt_value(det), det))
    return CalcTrace("det", m, None, steps, det)


def add_trace(a: MatrixValue, b: MatrixValue) -> CalcTrace:
    """Element-wise addition trace, one step per cell in row-major order."""
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError(f"shape mismatch {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    steps: list[CalcStep] = []
    out: list[list[int]] = []
    for r in range(a.rows):
        row: list[int] = []
        for c in range(a.cols):
            value = a.at(r, c) + b.at(r, c)
            row.append(value)
            steps.append(CalcStep(
                kind="emit-result",
                cells=[CellRef(ROLE_A, r, c), CellRef(ROLE_B, r, c), CellRef(ROLE_RESULT, r, c)],
                expression=_sum_expression([a.at(r, c), b.at(r, c)], value),
                value=value,
            ))
        out.append(row)
    return CalcTrace("add", a, b, steps, MatrixValue.from_lists(out))


def mul_trace(a: MatrixValue, b: MatrixValue) -> CalcTrace:
    """Matrix product trace: select, expression, and emit steps per result cell."""
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions {a.cols}≠{b.rows}")
    k = a.cols
    steps: list[CalcStep] = []
    out: list[list[int]] = []
    for i in range(a.rows):
        row: list[int] = []
        for j in range(b.cols):
            operand_cells = [CellRef(ROLE_A, i, t) for t in range(k)] + \
                            [CellRef(ROLE_B, t, j) for t in range(k)]
            value = sum(a.at(i, t) * b.at(t, j) for t in range(k))
            row.append(value)
            terms = " + ".join(
                f"{fmt_operand(a.at(i, t))} {TIMES} {fmt_operand(b.at(t, j))}"
                for t in range(k)
            )
            steps.append(CalcStep("select", list(operand_cells),
                                  f"row {i + 1} of A, column {j + 1} of B"))
            steps.append(CalcStep("multiply", list(operand_cells),
                                  f"{terms} = {fmt_value(value)}", value))
            steps.append(CalcStep("emit-result", [CellRef(ROLE_RESULT, i, j)],
                                  fmt_value(value), value))
        out.append(row)
    return CalcTrace("mul", a, b, steps, MatrixValue.from_lists(out))


# ── Verification ────────────────────────────────────────────────────────

@dataclass
class StepCheck:
    index: int
    ok: bool
    detail: str = ""


@dataclass
class VerifyReport:
    passed: bool
    result_ok: bool
    step_checks: list[StepCheck]
    warnings: list[str] = field(default_factory=list)


_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant,
                  ast.Add, ast.Sub, ast.Mult, ast.USub, ast.UAdd)


def eval_expression(text: str) -> int:
    """Evaluate the left side of an expression string with +, −, × and parens."""
    lhs = text.split("=")[0]
    source = lhs.replace(TIMES, "*").replace(MINUS, "-").strip()
    tree = ast.parse(source, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"unexpected token in expression {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, int):
            raise ValueError(f"non-integer constant in expression {text!r}")
    return int(eval(compile(tree, "<expr>", "eval")))  # noqa: S307 - AST-whitelisted


def _cell_value(trace: CalcTrace, ref: CellRef) -> int:
    if ref.role == ROLE_A:
        return trace.a.at(ref.row, ref.col)
    if ref.role == ROLE_B:
        if trace.b is None:
            raise ValueError("trace has no second operand")
        return trace.b.at(ref.row, ref.col)
    if ref.role == ROLE_RESULT:
        if isinstance(trace.result, MatrixValue):
            return trace.result.at(ref.row, ref.col)
        return int(trace.result)
    raise ValueError(f"unknown cell role {ref.role!r}")


def _expected_step_value(trace: CalcTrace, step: CalcStep) -> int | None:
    """Recompute a step's value from its cell references alone."""
    if step.kind == "select":
        return None
    if trace.op == "det":
        if step.kind == "multiply":
            prod = 1
            for ref in step.cells:
                prod *= _cell_value(trace, ref)
            return prod
        # accumulate and emit both carry the determinant
        total = 0
        for s in trace.steps:
            if s.kind == "multiply":
                prod = 1
                for ref in s.cells:
                    prod *= _cell_value(trace, ref)
                total += s.sign * prod
        if trace.a.rows == 1:
            return trace.a.at(0, 0)
        return total
    if trace.op == "add":
        refs = [r for r in step.cells if r.role != ROLE_RESULT]
        return sum(_cell_value(trace, r) for r in refs)
    if trace.op == "mul":
        if step.kind == "multiply":
            a_refs = [r for r in step.cells if r.role == ROLE_A]
            b_refs = [r for r in step.cells if r.role == ROLE_B]
            return sum(_cell_value(trace, ra) * _cell_value(trace, rb)
                       for ra, rb in zip(a_refs, b_refs))
        if step.kind == "emit-result":
            return _cell_value(trace, step.cells[0])
    raise ValueError(f"cannot verify step kind {step.kind!r} for op {trace.op!r}")


def _oracle_result(trace: CalcTrace) -> Union[MatrixValue, int]:
    """Recompute the trace result through a separate code path."""
    if trace.op == "det":
        return det_cofactor(trace.a)
    if trace.b is None:
        raise ValueError(f"binary op {trace.op!r} missing second operand")
    if trace.op == "add":
        return MatrixValue.from_lists(
            [[trace.a.at(r, c) + trace.b.at(r, c) for c in range(trace.a.cols)]
             for r in range(trace.a.rows)]
        )
    if trace.op == "mul":
        return MatrixValue.from_lists(
            [[sum(trace.a.at(i, t) * trace.b.at(t, j) for t in range(trace.a.cols))
              for j in range(trace.b.cols)]
             for i in range(trace.a.rows)]
        )
    raise ValueError(f"unknown op {trace.op!r}")


def verify_trace(trace: CalcTrace) -> VerifyReport:
    """Check the result against a dense/cofactor oracle and every step value
    against its cell references and expression text. Failures are reported,
    never raised."""
    warnings: list[str] = []
    checks: list[StepCheck] = []

    if not trace.steps:
        warnings.append("empty trace: nothing to verify")

    for i, step in enumerate(trace.steps):
        try:
            expected = _expected_step_value(trace, step)
        except Exception as exc:  # noqa: BLE001 - malformed step is a failed check
            checks.append(StepCheck(i, False, f"unverifiable: {exc}"))
            continue
        if expected is None:
            checks.append(StepCheck(i, True, "no value (selection step)"))
            continue
        if step.value != expected:
            checks.append(StepCheck(i, False, f"value {step.value} != recomputed {expected}"))
            continue
        if "=" in step.expression or step.kind == "emit-result":
            try:
                from_expr = eval_expression(step.expression)
            except ValueError as exc:
                checks.append(StepCheck(i, False, str(exc)))
                continue
            if from_expr != expected:
                checks.append(StepCheck(i, False,
                                        f"expression evaluates to {from_expr}, not {expected}"))
                continue
        checks.append(StepCheck(i, True))

    oracle = _oracle_result(trace)
    result_ok = trace.result == oracle
    if not result_ok:
        warnings.append(f"result {trace.result!r} disagrees with oracle {oracle!r}")
    passed = result_ok and all(c.ok for c in checks)
    return VerifyReport(passed=passed, result_ok=result_ok,
                        step_checks=checks, warnings=warnings)


# ── Serialization ───────────────────────────────────────────────────────

def trace_to_dict(trace: CalcTrace) -> dict:
    return {
        "op": trace.op,
        "a": trace.a.to_lists(),
        "b": trace.b.to_lists() if trace.b is not None else None,
        "steps": [
            {
                "kind": s.kind,
                "cells": [[c.role, c.row, c.col] for c in s.cells],
                "expression": s.expression,
                "value": s.value,
                "sign": s.sign,
            }
            for s in trace.steps
        ],
        "result": trace.result.to_lists() if isinstance(trace.result, MatrixValue)
                  else trace.result,
    }


def trace_from_dict(d: dict) -> CalcTrace:
    steps = [
        CalcStep(
            kind=s["kind"],
            cells=[CellRef(role, int(r), int(c)) for role, r, c in s["cells"]],
            expression=s["expression"],
            value=s["value"],
            sign=s.get("sign", 0),
        )
        for s in d["steps"]
    ]
    result = d["result"]
    if isinstance(result, list):
        result = MatrixValue.from_lists(result)
    return CalcTrace(
        op=d["op"],
        a=MatrixValue.from_lists(d["a"]),
        b=MatrixValue.from_lists(d["b"]) if d.get("b") is not None else None,
        steps=steps,
        result=result,
    )


def trace_to_json(trace: CalcTrace) -> str:
    return json.dumps(trace_to_dict(trace), ensure_ascii=False, indent=2)


def trace_from_json(text: str) -> CalcTrace:
    return trace_from_dict(json.loads(text))


def build_trace(mode: str, a: MatrixValue, b: MatrixValue | None = None) -> CalcTrace:
    """Dispatch on mode; binary modes require b."""
    if mode == "det":
        return det_trace(a)
    if b is None:
        raise ValueError(f"mode {mode!r} needs two operands")
    if mode == "add":
        return add_trace(a, b)
    if mode == "mul":
        return mul_trace(a, b)
    raise ValueError(f"unknown mode {mode!r}")
