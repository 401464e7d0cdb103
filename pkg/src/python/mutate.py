"""
Mutation providers and the line patch format.

A patch is a fenced block of line edits against the current StrategyDoc::

    ```patch
    # optional one-line summary
    replace 3 pattern = L Z
    insert 0 grid = 4 1 1
    delete 5
    ```

Indices are 0-based and refer to the document as already modified by the
preceding edits. Providers only ever return patches; applying them is pure
and touches nothing but the candidate document.
"""
from __future__ import annotations

import difflib
import json
import logging
import os
import re
import shlex
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import requests
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel, ConfigDict, Field

from .errors import MutationError, PatchRejected, StrategyError
from .evaluate import QorRecord
from .pareto import ObjectiveSpec
from .strategy import (
    VARIABLES,
    Const,
    GridCandidate,
    Op,
    OrderPolicy,
    PATTERN_SHAPES,
    PostPass,
    RouterStrategy,
    Var,
    expr_constants,
    lines_modified,
    load_strategy,
    parse_strategy,
    replace_constant,
    serialize_strategy,
)

logger = logging.getLogger(__name__)

PROMPT_PATH = Path(__file__).resolve().parents[2] / "models" / "prompts" / "mutation_prompt.md.j2"

_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


# ----- patches ---------------------------------------------------------------

class EditKind(str, Enum):
    REPLACE = "replace"
    INSERT = "insert"
    DELETE = "delete"


@dataclass(frozen=True)
class LineEdit:
    kind: EditKind
    index: int
    text: str = ""

    def render(self) -> str:
        if self.kind is EditKind.DELETE:
            return f"delete {self.index}"
        return f"{self.kind.value} {self.index} {self.text}"


@dataclass(frozen=True)
class Patch:
    edits: Tuple[LineEdit, ...] = ()
    summary: str = ""

    @property
    def loc_modified(self) -> int:
        return len(self.edits)

    def render(self) -> str:
        body = [f"# {self.summary}"] if self.summary else []
        body += [e.render() for e in self.edits]
        return "```patch\n" + "".join(line + "\n" for line in body) + "```\n"


@dataclass(frozen=True)
class AppliedPatch:
    doc: str
    loc_modified: int


def parse_patch(reply: str) -> Patch:
    """Patch from the first fenced block of a provider reply."""
    match = _FENCE.search(reply)
    if match is None:
        raise MutationError("reply contains no fenced patch block")
    edits: List[LineEdit] = []
    summary = ""
    for number, raw in enumerate(match.group(1).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            summary = summary or line.lstrip("#").strip()
            continue
        parts = line.split(maxsplit=2)
        try:
            kind = EditKind(parts[0])
            index = int(parts[1])
        except (ValueError, IndexError):
            raise MutationError(f"patch line {number} is not an edit: '{line}'") from None
        if kind is EditKind.DELETE:
            if len(parts) != 2:
                raise MutationError(f"patch line {number}: delete takes only an index")
            edits.append(LineEdit(kind, index))
        else:
            if len(parts) != 3:
                raise MutationError(f"patch line {number}: {kind.value} needs text")
            edits.append(LineEdit(kind, index, parts[2]))
    return Patch(edits=tuple(edits), summary=summary)


def apply_patch(doc: str, patch: Patch) -> AppliedPatch:
    """All edits or none; the result must load as a valid strategy."""
    lines = doc.splitlines()
    for edit in patch.edits:
        upper = len(lines) if edit.kind is EditKind.INSERT else len(lines) - 1
        if not 0 <= edit.index <= upper:
            raise PatchRejected(f"{edit.kind.value} index {edit.index} outside 0..{upper}")
        if edit.kind is EditKind.REPLACE:
            lines[edit.index] = edit.text
        elif edit.kind is EditKind.INSERT:
            lines.insert(edit.index, edit.text)
        else:
            del lines[edit.index]
    text = "".join(line + "\n" for line in lines)
    try:
        load_strategy(text)
    except StrategyError as exc:
        raise PatchRejected(f"patched document is invalid: {exc}", text=text) from exc
    return AppliedPatch(doc=text, loc_modified=lines_modified(doc, text))


def diff_patch(before: str, after: str, summary: str = "") -> Patch:
    """Minimal edit list turning ``before`` into ``after``."""
    old, new = before.splitlines(), after.splitlines()
    edits: List[LineEdit] = []
    matcher = difflib.SequenceMatcher(a=old, b=new, autojunk=False)
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            continue
        common = min(i2 - i1, j2 - j1)
        edits += [LineEdit(EditKind.REPLACE, j1 + k, new[j1 + k]) for k in range(common)]
        edits += [LineEdit(EditKind.DELETE, j1 + common) for _ in range(i2 - i1 - common)]
        edits += [LineEdit(EditKind.INSERT, j1 + k, new[j1 + k]) for k in range(common, j2 - j1)]
    return Patch(edits=tuple(edits), summary=summary)


# ----- context ---------------------------------------------------------------

class VersionEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    candidate_id: str
    parent_id: Optional[str] = None
    summary: str = ""


class MutationContext(BaseModel):
    """Everything a provider sees; rebuilt from the run directory each iteration."""
    model_config = ConfigDict(frozen=True)

    history: List[QorRecord]
    current_doc: str
    version_log: List[VersionEntry]
    objective_spec: ObjectiveSpec = Field(default_factory=ObjectiveSpec)
    baseline: QorRecord
    repair_notes: List[str] = Field(default_factory=list)

    def with_note(self, note: str) -> "MutationContext":
        return self.model_copy(update={"repair_notes": self.repair_notes + [note]})

    def to_document(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)


def render_prompt(ctx: MutationContext, template: Path = PROMPT_PATH) -> str:
    env = Environment(
        loader=FileSystemLoader(str(template.parent)),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
    )
    ok = [r for r in ctx.history if r.ok]
    return env.get_template(template.name).render(
        ctx=ctx,
        objectives=ctx.objective_spec.keys,
        ok_records=ok,
        numbered_doc=list(enumerate(ctx.current_doc.splitlines())),
        variables=VARIABLES,
        shapes=PATTERN_SHAPES,
        policies=[p.value for p in OrderPolicy],
    )


# ----- providers -------------------------------------------------------------

class MutationProvider(ABC):
    name = "provider"

    @abstractmethod
    def propose(self, ctx: MutationContext) -> Patch:
        """Next patch against ``ctx.current_doc``."""


Move = Callable[[RouterStrategy, np.random.Generator], Optional[Tuple[RouterStrategy, str]]]

_TERM_VARIABLES = ("via_penalty", "pin_density", "history", "demand", "overflow_excess")
_TERM_WEIGHTS = (0.5, 1.0, 2.0, 4.0)
_CONSTANT_FACTORS = (0.5, 0.8, 1.25, 2.0)
_GRID_DIVISORS = (2, 3, 4, 6, 8)
_PULSE_FRACTIONS = (0.1, 0.2, 0.3)
_COMPACTION_MIN_HP = (0.0, 50.0, 100.0)
_COMPACTION_DIVISORS = (4, 8, 16)
_SOFT_RESERVES = (0.0, 0.05, 0.1, 0.2)
MAX_COST_TERMS = 8
MAX_GRID_CANDIDATES = 4
MAX_POST_PASSES = 4


def _pick(rng: np.random.Generator, options: Sequence):
    return options[int(rng.integers(len(options)))]


def _perturb_constant(s: RouterStrategy, rng):
    constants = expr_constants(s.cost_expr)
    if not constants:
        return None
    index = int(rng.integers(len(constants)))
    old = constants[index].value
    new = round(old * _pick(rng, _CONSTANT_FACTORS), 6)
    if new == old:
        return None
    return replace(s, cost_expr=replace_constant(s.cost_expr, index, new)), f"scale cost constant #{index} {old} -> {new}"


def _add_cost_term(s: RouterStrategy, rng):
    expr = s.cost_expr
    args = expr.args if isinstance(expr, Op) and expr.op == "+" else (expr,)
    if len(args) >= MAX_COST_TERMS:
        return None
    name, weight = _pick(rng, _TERM_VARIABLES), _pick(rng, _TERM_WEIGHTS)
    term = Op("*", (Const(weight), Var(name)))
    return replace(s, cost_expr=Op("+", tuple(args) + (term,))), f"add cost term {weight} * {name}"


def _remove_cost_term(s: RouterStrategy, rng):
    expr = s.cost_expr
    if not (isinstance(expr, Op) and expr.op == "+" and len(expr.args) > 2):
        return None
    index = 1 + int(rng.integers(len(expr.args) - 1))
    args = expr.args[:index] + expr.args[index + 1:]
    return replace(s, cost_expr=Op("+", args)), f"drop cost term #{index}"


def _toggle_pattern(s: RouterStrategy, rng):
    shape = _pick(rng, PATTERN_SHAPES)
    shapes = set(s.pattern_set) ^ {shape}
    if not shapes:
        return None
    ordered = tuple(p for p in PATTERN_SHAPES if p in shapes)
    return replace(s, pattern_set=ordered), f"toggle {shape} patterns"


def _add_grid(s: RouterStrategy, rng):
    if len(s.grid_candidates) >= MAX_GRID_CANDIDATES:
        return None
    divisor = _pick(rng, _GRID_DIVISORS)
    candidate = GridCandidate(divisor, (int(rng.integers(divisor)), int(rng.integers(divisor))))
    if candidate in s.grid_candidates:
        return None
    return replace(s, grid_candidates=s.grid_candidates + (candidate,)), f"add candidate grid /{divisor} {candidate.offset}"


def _remove_grid(s: RouterStrategy, rng):
    if len(s.grid_candidates) < 2:
        return None
    index = int(rng.integers(len(s.grid_candidates)))
    kept = s.grid_candidates[:index] + s.grid_candidates[index + 1:]
    return replace(s, grid_candidates=kept), f"remove candidate grid #{index}"


def _insert_pass(s: RouterStrategy, rng):
    if len(s.post_passes) >= MAX_POST_PASSES:
        return None
    kind = _pick(rng, ("pulse", "rebalance", "compaction"))
    if kind == "pulse":
        post = PostPass("pulse", top_fraction=_pick(rng, _PULSE_FRACTIONS))
    elif kind == "compaction":
        post = PostPass("compaction", min_hp=_pick(rng, _COMPACTION_MIN_HP), divisor=_pick(rng, _COMPACTION_DIVISORS))
    else:
        post = PostPass("rebalance")
    at = int(rng.integers(len(s.post_passes) + 1))
    passes = s.post_passes[:at] + (post,) + s.post_passes[at:]
    return replace(s, post_passes=passes), f"insert {post.render()} pass at {at}"


def _remove_pass(s: RouterStrategy, rng):
    if not s.post_passes:
        return None
    index = int(rng.integers(len(s.post_passes)))
    return replace(s, post_passes=s.post_passes[:index] + s.post_passes[index + 1:]), f"remove pass #{index}"


def _reorder_passes(s: RouterStrategy, rng):
    if len(s.post_passes) < 2:
        return None
    i = int(rng.integers(len(s.post_passes) - 1))
    passes = list(s.post_passes)
    passes[i], passes[i + 1] = passes[i + 1], passes[i]
    if tuple(passes) == s.post_passes:
        return None
    return replace(s, post_passes=tuple(passes)), f"swap passes {i} and {i + 1}"


def _change_order(s: RouterStrategy, rng):
    policy = _pick(rng, [p for p in OrderPolicy if p is not s.order_policy])
    return replace(s, order_policy=policy), f"order nets by {policy.value}"


def _change_rounds(s: RouterStrategy, rng):
    rounds = min(max(s.rrr_max_rounds + _pick(rng, (-2, 2)), 1), 16)
    if rounds == s.rrr_max_rounds:
        return None
    return replace(s, rrr_max_rounds=rounds), f"rrr rounds {s.rrr_max_rounds} -> {rounds}"


def _change_reserve(s: RouterStrategy, rng):
    reserve = _pick(rng, [r for r in _SOFT_RESERVES if r != s.soft_reserve])
    return replace(s, soft_reserve=reserve), f"soft reserve {s.soft_reserve} -> {reserve}"


EDIT_MENU: Tuple[Tuple[str, Move], ...] = (
    ("perturb-constant", _perturb_constant),
    ("add-cost-term", _add_cost_term),
    ("remove-cost-term", _remove_cost_term),
    ("toggle-pattern", _toggle_pattern),
    ("add-grid", _add_grid),
    ("remove-grid", _remove_grid),
    ("insert-pass", _insert_pass),
    ("remove-pass", _remove_pass),
    ("reorder-passes", _reorder_passes),
    ("change-order", _change_order),
    ("change-rrr-rounds", _change_rounds),
    ("change-soft-reserve", _change_reserve),
)


class ScriptedProvider(MutationProvider):
    """Deterministic mutator: a pure function of (seed, history length, attempt)."""

    name = "scripted"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def propose(self, ctx: MutationContext) -> Patch:
        try:
            strategy = parse_strategy(ctx.current_doc)
        except StrategyError as exc:
            raise MutationError(f"current document does not parse: {exc}") from exc
        rng = np.random.default_rng([self.seed, len(ctx.history), len(ctx.repair_notes)])
        start = int(rng.integers(len(EDIT_MENU)))
        for step in range(len(EDIT_MENU)):
            name, move = EDIT_MENU[(start + step) % len(EDIT_MENU)]
            outcome = move(strategy, rng)
            if outcome is None:
                continue
            mutated, summary = outcome
            doc = serialize_strategy(mutated)
            if doc != ctx.current_doc:
                logger.debug("scripted move %s: %s", name, summary)
                return diff_patch(ctx.current_doc, doc, summary)
        raise MutationError("no applicable edit for the current document")


def _request_payload(ctx: MutationContext, template: Path) -> dict:
    return {"prompt": render_prompt(ctx, template), "context": ctx.model_dump(mode="json")}


class CommandProvider(MutationProvider):
    """Runs a command with the request on stdin and reads the reply from stdout."""

    name = "command"

    def __init__(self, command, timeout_s: float = 300.0, template: Path = PROMPT_PATH):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("command provider needs a command")
        self.timeout_s = timeout_s
        self.template = template

    def propose(self, ctx: MutationContext) -> Patch:
        payload = json.dumps(_request_payload(ctx, self.template), sort_keys=True)
        try:
            proc = subprocess.run(
                self.command,
                input=payload,
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired:
            raise MutationError(f"provider command timed out after {self.timeout_s}s") from None
        except OSError as exc:
            raise MutationError(f"provider command failed to start: {exc}") from exc
        if proc.returncode != 0:
            raise MutationError(f"provider command exited {proc.returncode}: {proc.stderr.strip()[:500]}")
        return parse_patch(proc.stdout)


class HttpProvider(MutationProvider):
    """One POST per proposal; bearer token from the environment."""

    name = "http"

    def __init__(self, endpoint: str, token_env: str = "ROUTER_EVOLVE_TOKEN", timeout_s: float = 300.0,
                 model: Optional[str] = None, template: Path = PROMPT_PATH):
        self.endpoint = endpoint
        self.token_env = token_env
        self.timeout_s = timeout_s
        self.model = model
        self.template = template

    def propose(self, ctx: MutationContext) -> Patch:
        token = os.getenv(self.token_env)
        if not token:
            raise MutationError(f"{self.token_env} is not set")
        headers = {"Content-Type": "application/json", "Authorization": f"Bearer {token}"}
        payload = _request_payload(ctx, self.template)
        if self.model:
            payload["model"] = self.model
        try:
            r = requests.post(self.endpoint, headers=headers, json=payload, timeout=self.timeout_s)
        except requests.exceptions.RequestException as exc:
            raise MutationError(f"provider request failed: {exc}") from exc
        if r.status_code >= 400:
            raise MutationError(f"provider returned {r.status_code}: {r.text[:500]}")
        try:
            reply = r.json().get("reply", "")
        except (ValueError, AttributeError):
            reply = r.text
        return parse_patch(reply if isinstance(reply, str) else "")


def make_provider(config, seed: int = 0) -> MutationProvider:
    """Provider for a ``ProviderConfig``."""
    if config.kind == "scripted":
        return ScriptedProvider(seed)
    if config.kind == "command":
        return CommandProvider(config.command, timeout_s=config.timeout_s)
    if config.kind == "http":
        return HttpProvider(config.endpoint, token_env=config.token_env, timeout_s=config.timeout_s, model=config.model)
    raise ValueError(f"unknown provider kind '{config.kind}'")
