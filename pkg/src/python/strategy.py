"""
The evolvable router heuristic and its canonical text form (StrategyDoc).

A StrategyDoc has one ``key = value`` declaration per line. Blank lines and
``#`` comments are ignored. Keys:

    cost = (+ base_len (* 10.0 overflow_excess) history)
    grid = <divisor> <dx> <dy>            one line per candidate grid
    order = hpwl-asc | hpwl-desc | pin-count-desc | id
    pass = pulse <fraction> | rebalance | compaction <min_hp> <divisor>
    pattern = L [Z] [3-bend]
    rrr_rounds = <int>
    seed = <int>
    soft_reserve = <float in [0, 1]>

Serialization sorts keys alphabetically; repeated keys keep their order.
"""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .errors import StrategyError

VARIABLES: Tuple[str, ...] = (
    "demand",
    "cap",
    "overflow_excess",
    "pin_density",
    "base_len",
    "via_penalty",
    "history",
)

COST_CEILING = 1e12
MIN_DIVISOR = 1e-9
EXP_ARG_CEILING = 50.0
POW_EXP_CEILING = 8.0
FULL_RESOLUTION_DIVISOR = 1024
MAX_RRR_ROUNDS = 64

BASELINE_PATH = Path(__file__).resolve().parents[2] / "models" / "baseline_strategy.txt"


# ----- cost expressions ------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Op:
    op: str
    args: Tuple["Expr", ...]


Expr = Union[Const, Var, Op]

# operator -> (min arity, max arity or None)
OPERATORS: Dict[str, Tuple[int, Optional[int]]] = {
    "+": (2, None),
    "-": (2, 2),
    "*": (2, None),
    "/": (2, 2),
    "min": (2, None),
    "max": (2, None),
    "pow": (2, 2),
    "exp": (1, 1),
}


def _clamp(value: float) -> float:
    if value != value or value <= 0.0:
        return 0.0
    return COST_CEILING if value > COST_CEILING else value


def _pow(base: float, exponent: float) -> float:
    exponent = min(max(exponent, 0.0), POW_EXP_CEILING)
    if base == 0.0:
        return 0.0 if exponent > 0.0 else 1.0
    log_value = exponent * math.log(base)
    if log_value > math.log(COST_CEILING):
        return COST_CEILING
    return math.exp(log_value)


def apply_operator(op: str, values: Sequence[float]) -> float:
    """Clamped semantics shared by the compiler and the tree-walk evaluator."""
    if op == "+":
        result = sum(values)
    elif op == "-":
        result = values[0] - values[1]
    elif op == "*":
        result = 1.0
        for v in values:
            result *= v
            if result > COST_CEILING:
                result = COST_CEILING
    elif op == "/":
        result = values[0] / max(values[1], MIN_DIVISOR)
    elif op == "min":
        result = min(values)
    elif op == "max":
        result = max(values)
    elif op == "pow":
        result = _pow(values[0], values[1])
    elif op == "exp":
        result = math.exp(min(values[0], EXP_ARG_CEILING))
    else:
        raise StrategyError(f"unknown operator '{op}'")
    return _clamp(result)


def evaluate_expr(expr: Expr, env: Dict[str, float]) -> float:
    if isinstance(expr, Const):
        return _clamp(expr.value)
    if isinstance(expr, Var):
        return _clamp(env[expr.name])
    return apply_operator(expr.op, [evaluate_expr(a, env) for a in expr.args])


def compile_expr(expr: Expr) -> Callable[[Sequence[float]], float]:
    """Compile to a closure over a value tuple ordered like ``VARIABLES``."""
    if isinstance(expr, Const):
        value = _clamp(expr.value)
        return lambda v: value
    if isinstance(expr, Var):
        index = VARIABLES.index(expr.name)
        return lambda v: _clamp(v[index])
    parts = [compile_expr(a) for a in expr.args]
    op = expr.op
    if op == "+" and len(parts) == 2:
        left, right = parts
        return lambda v: _clamp(left(v) + right(v))
    if op == "*" and len(parts) == 2:
        left, right = parts
        return lambda v: _clamp(left(v) * right(v))
    return lambda v: apply_operator(op, [p(v) for p in parts])


def _tokenize(text: str) -> List[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_expr(text: str, line: Optional[int] = None) -> Expr:
    tokens = _tokenize(text)
    if not tokens:
        raise StrategyError("empty cost expression", line)
    position = 0

    def parse() -> Expr:
        nonlocal position
        if position >= len(tokens):
            raise StrategyError("unexpected end of cost expression", line)
        token = tokens[position]
        position += 1
        if token == "(":
            if position >= len(tokens):
                raise StrategyError("unexpected end of cost expression", line)
            op = tokens[position]
            position += 1
            if op not in OPERATORS:
                raise StrategyError(f"unknown operator '{op}'", line)
            args = []
            while position < len(tokens) and tokens[position] != ")":
                args.append(parse())
            if position >= len(tokens):
                raise StrategyError("missing ')' in cost expression", line)
            position += 1
            low, high = OPERATORS[op]
            if len(args) < low or (high is not None and len(args) > high):
                raise StrategyError(f"operator '{op}' takes {low}..{high or 'n'} arguments, got {len(args)}", line)
            return Op(op, tuple(args))
        if token == ")":
            raise StrategyError("unexpected ')' in cost expression", line)
        if token in VARIABLES:
            return Var(token)
        try:
            value = float(token)
        except ValueError:
            raise StrategyError(f"unknown cost variable '{token}'", line) from None
        if not math.isfinite(value) or value < 0:
            raise StrategyError(f"constants must be finite and non-negative, got {token}", line)
        return Const(value)

    expr = parse()
    if position != len(tokens):
        raise StrategyError("trailing tokens after cost expression", line)
    return expr


def format_number(value: float) -> str:
    return repr(float(value))


def format_expr(expr: Expr) -> str:
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, Var):
        return expr.name
    return "(" + " ".join([expr.op] + [format_expr(a) for a in expr.args]) + ")"


def expr_constants(expr: Expr) -> List[Const]:
    if isinstance(expr, Const):
        return [expr]
    if isinstance(expr, Var):
        return []
    found: List[Const] = []
    for arg in expr.args:
        found.extend(expr_constants(arg))
    return found


def replace_constant(expr: Expr, index: int, value: float) -> Expr:
    """Return ``expr`` with its ``index``-th constant (pre-order) set to ``value``."""
    counter = [0]

    def walk(node: Expr) -> Expr:
        if isinstance(node, Const):
            hit = counter[0] == index
            counter[0] += 1
            return Const(value) if hit else node
        if isinstance(node, Var):
            return node
        return Op(node.op, tuple(walk(a) for a in node.args))

    return walk(expr)


# ----- strategy --------------------------------------------------------------

class OrderPolicy(str, Enum):
    HPWL_ASC = "hpwl-asc"
    HPWL_DESC = "hpwl-desc"
    PIN_COUNT_DESC = "pin-count-desc"
    ID = "id"


PATTERN_SHAPES: Tuple[str, ...] = ("L", "Z", "3-bend")


@dataclass(frozen=True)
class GridCandidate:
    divisor: int
    offset: Tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class PostPass:
    kind: str
    top_fraction: float = 0.0
    min_hp: float = 0.0
    divisor: int = 0

    def render(self) -> str:
        if self.kind == "pulse":
            return f"pulse {format_number(self.top_fraction)}"
        if self.kind == "compaction":
            return f"compaction {format_number(self.min_hp)} {self.divisor}"
        return self.kind


@dataclass(frozen=True)
class RouterStrategy:
    cost_expr: Expr
    order_policy: OrderPolicy = OrderPolicy.HPWL_ASC
    soft_reserve: float = 0.0
    pattern_set: Tuple[str, ...] = ("L",)
    grid_candidates: Tuple[GridCandidate, ...] = (GridCandidate(FULL_RESOLUTION_DIVISOR),)
    post_passes: Tuple[PostPass, ...] = ()
    rrr_max_rounds: int = 8
    seed: int = 0

    @cached_property
    def cost_fn(self) -> Callable[[Sequence[float]], float]:
        return compile_expr(self.cost_expr)

    def validate(self) -> "RouterStrategy":
        if not self.pattern_set:
            raise StrategyError("pattern set must not be empty")
        unknown = [s for s in self.pattern_set if s not in PATTERN_SHAPES]
        if unknown:
            raise StrategyError(f"unknown pattern shapes {unknown}")
        if not self.grid_candidates:
            raise StrategyError("at least one grid candidate is required")
        for candidate in self.grid_candidates:
            if candidate.divisor < 1:
                raise StrategyError(f"grid divisor must be positive, got {candidate.divisor}")
        if not 0.0 <= self.soft_reserve <= 1.0:
            raise StrategyError(f"soft_reserve must lie in [0, 1], got {self.soft_reserve}")
        if not 1 <= self.rrr_max_rounds <= MAX_RRR_ROUNDS:
            raise StrategyError(f"rrr_rounds must lie in [1, {MAX_RRR_ROUNDS}], got {self.rrr_max_rounds}")
        if not 0 <= self.seed < 2 ** 64:
            raise StrategyError("seed must be a 64-bit unsigned integer")
        for post in self.post_passes:
            if post.kind == "pulse" and not 0.0 < post.top_fraction <= 1.0:
                raise StrategyError(f"pulse fraction must lie in (0, 1], got {post.top_fraction}")
            if post.kind == "compaction" and (post.divisor < 1 or post.min_hp < 0):
                raise StrategyError("compaction needs min_hp >= 0 and a positive divisor")
            if post.kind not in ("pulse", "rebalance", "compaction"):
                raise StrategyError(f"unknown post pass '{post.kind}'")
        _check_variables(self.cost_expr)
        return self


def _check_variables(expr: Expr) -> None:
    if isinstance(expr, Var) and expr.name not in VARIABLES:
        raise StrategyError(f"unknown cost variable '{expr.name}'")
    if isinstance(expr, Op):
        if expr.op not in OPERATORS:
            raise StrategyError(f"unknown operator '{expr.op}'")
        for arg in expr.args:
            _check_variables(arg)


def baseline_strategy() -> RouterStrategy:
    """R0: a minimal FastRoute-like seed."""
    return RouterStrategy(cost_expr=parse_expr("(+ base_len (* 10.0 overflow_excess) history)"))


# ----- StrategyDoc -----------------------------------------------------------

_SCALAR_KEYS = ("cost", "order", "pattern", "rrr_rounds", "seed", "soft_reserve")
_LIST_KEYS = ("grid", "pass")


def _int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise StrategyError(f"{what} must be an integer, got '{text}'", line) from None


def _float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise StrategyError(f"{what} must be a number, got '{text}'", line) from None
    if not math.isfinite(value):
        raise StrategyError(f"{what} must be finite", line)
    return value


def _parse_pass(value: str, line: int) -> PostPass:
    parts = value.split()
    if not parts:
        raise StrategyError("empty pass declaration", line)
    kind, args = parts[0], parts[1:]
    if kind == "pulse" and len(args) == 1:
        return PostPass("pulse", top_fraction=_float(args[0], "pulse fraction", line))
    if kind == "rebalance" and not args:
        return PostPass("rebalance")
    if kind == "compaction" and len(args) == 2:
        return PostPass(
            "compaction",
            min_hp=_float(args[0], "compaction min_hp", line),
            divisor=_int(args[1], "compaction divisor", line),
        )
    raise StrategyError(f"malformed pass declaration '{value}'", line)


def parse_strategy(text: str) -> RouterStrategy:
    """Parse a StrategyDoc (syntax only; call ``validate`` for semantics)."""
    scalars: Dict[str, Tuple[str, int]] = {}
    grids: List[GridCandidate] = []
    passes: List[PostPass] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise StrategyError(f"expected 'key = value', got '{content}'", number)
        if key == "grid":
            parts = value.split()
            if len(parts) != 3:
                raise StrategyError("grid takes '<divisor> <dx> <dy>'", number)
            divisor, dx, dy = (_int(p, "grid field", number) for p in parts)
            grids.append(GridCandidate(divisor, (dx, dy)))
        elif key == "pass":
            passes.append(_parse_pass(value, number))
        elif key in _SCALAR_KEYS:
            if key in scalars:
                raise StrategyError(f"duplicate key '{key}'", number)
            scalars[key] = (value, number)
        else:
            raise StrategyError(f"unknown key '{key}'", number)

    missing = [k for k in ("cost", "order", "pattern", "rrr_rounds") if k not in scalars]
    if missing:
        raise StrategyError(f"missing keys {missing}")

    cost_text, cost_line = scalars["cost"]
    order_text, order_line = scalars["order"]
    try:
        order = OrderPolicy(order_text)
    except ValueError:
        raise StrategyError(f"unknown order policy '{order_text}'", order_line) from None
    pattern_text, _ = scalars["pattern"]
    rounds_text, rounds_line = scalars["rrr_rounds"]
    seed_text, seed_line = scalars.get("seed", ("0", 0))
    reserve_text, reserve_line = scalars.get("soft_reserve", ("0.0", 0))

    return RouterStrategy(
        cost_expr=parse_expr(cost_text, cost_line),
        order_policy=order,
        soft_reserve=_float(reserve_text, "soft_reserve", reserve_line),
        pattern_set=tuple(s for s in PATTERN_SHAPES if s in pattern_text.split())
        + tuple(s for s in pattern_text.split() if s not in PATTERN_SHAPES),
        grid_candidates=tuple(grids),
        post_passes=tuple(passes),
        rrr_max_rounds=_int(rounds_text, "rrr_rounds", rounds_line),
        seed=_int(seed_text, "seed", seed_line),
    )


def load_strategy(text: str) -> RouterStrategy:
    """Parse and validate."""
    return parse_strategy(text).validate()


def serialize_strategy(strategy: RouterStrategy) -> str:
    lines: List[Tuple[str, str]] = [
        ("cost", format_expr(strategy.cost_expr)),
        ("order", strategy.order_policy.value),
        ("pattern", " ".join(strategy.pattern_set)),
        ("rrr_rounds", str(strategy.rrr_max_rounds)),
        ("seed", str(strategy.seed)),
        ("soft_reserve", format_number(strategy.soft_reserve)),
    ]
    lines += [("grid", f"{g.divisor} {g.offset[0]} {g.offset[1]}") for g in strategy.grid_candidates]
    lines += [("pass", p.render()) for p in strategy.post_passes]
    ordered = sorted(enumerate(lines), key=lambda item: (item[1][0], item[0]))
    return "".join(f"{key} = {value}\n" for _, (key, value) in ordered)


def lines_modified(before: str, after: str) -> int:
    """Lines of code modified between two documents (LoCM)."""
    matcher = difflib.SequenceMatcher(a=before.splitlines(), b=after.splitlines(), autojunk=False)
    total = 0
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag != "equal":
            total += max(i2 - i1, j2 - j1)
    return total


def baseline_document() -> str:
    if BASELINE_PATH.exists():
        return BASELINE_PATH.read_text(encoding="utf-8")
    return serialize_strategy(baseline_strategy())
