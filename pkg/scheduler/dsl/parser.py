"""
Concrete syntax of the policy language.

A policy is a block of ``key = value`` lines::

    # fair share by weighted virtual runtime
    name = fair_vruntime
    description = "EEVDF-like fair share"
    tags = fair, latency
    preemptive = true
    param slice_base = 3000 in [100, 100000]
    priority = -vruntime
    slice = slice_base

Expressions use ``+ - * /``, unary minus, parentheses and the calls
``min(a, b, ...)``, ``max(a, b, ...)`` and ``clamp(x, lo, hi)``. Identifiers
are task features or declared params. ``slice = inf`` marks run-to-completion
and is only legal with ``preemptive = false``.
"""

import json
import re
from typing import Collection, Dict, List, Optional, Tuple

from scheduler.dsl.expr import BinOp, Call, Const, Expr, FeatureRef, Neg, ParamRef, format_number, render_expr
from scheduler.dsl.policy import DEFAULT_SLICE, NAME_RE, TAG_RE, ParamDecl, PolicySpec, validate_policy
from scheduler.errors import DuplicateParam, InvalidSpec, PolicySyntaxError, UnknownIdentifier
from scheduler.models import FEATURES

CALLS = ("min", "max", "clamp")
RESERVED = frozenset(CALLS + ("inf", "in", "param"))

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/(),])"
)
_PARAM_RE = re.compile(
    r"^param\s+(?P<name>[^\s=]+)\s*=\s*(?P<value>[^\s]+)\s+in\s*\[\s*(?P<lo>[^,\]]+?)\s*,\s*(?P<hi>[^\]]+?)\s*\]\s*$"
)
_KEY_RE = re.compile(r"^(?P<key>[A-Za-z_]+)\s*=\s*(?P<rest>.*?)\s*$")
_KEYS = ("name", "description", "tags", "preemptive", "priority", "slice")

Token = Tuple[str, str, int]  # kind, text, column (1-based)


def _tokenize(text: str, line: int, col_offset: int) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, col_offset + pos)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), col_offset + pos))
        pos = match.end()
    return tokens


class _ExprParser:
    """Recursive-descent parser over one expression's tokens."""

    def __init__(self, tokens: List[Token], params: Collection[str], line: int, end_col: int):
        self.tokens = tokens
        self.params = set(params)
        self.line = line
        self.end_col = end_col
        self.pos = 0

    def _peek(self, offset: int = 0) -> Optional[Token]:
        idx = self.pos + offset
        return self.tokens[idx] if idx < len(self.tokens) else None

    def _error(self, message: str, token: Optional[Token] = None) -> PolicySyntaxError:
        col = token[2] if token else self.end_col
        return PolicySyntaxError(message, self.line, col)

    def _take(self, text: Optional[str] = None) -> Token:
        token = self._peek()
        if token is None:
            raise self._error("unexpected end of expression")
        if text is not None and token[1] != text:
            raise self._error(f"expected '{text}', found '{token[1]}'", token)
        self.pos += 1
        return token

    def parse(self) -> Expr:
        if not self.tokens:
            raise self._error("empty expression")
        expr = self._sum()
        leftover = self._peek()
        if leftover is not None:
            raise self._error(f"unexpected '{leftover[1]}'", leftover)
        return expr

    def _sum(self) -> Expr:
        expr = self._product()
        while (tok := self._peek()) is not None and tok[1] in ("+", "-"):
            self.pos += 1
            expr = BinOp(op="add" if tok[1] == "+" else "sub", left=expr, right=self._product())
        return expr

    def _product(self) -> Expr:
        expr = self._unary()
        while (tok := self._peek()) is not None and tok[1] in ("*", "/"):
            self.pos += 1
            expr = BinOp(op="mul" if tok[1] == "*" else "div", left=expr, right=self._unary())
        return expr

    def _unary(self) -> Expr:
        tok = self._peek()
        if tok is not None and tok[1] == "-":
            self.pos += 1
            nxt = self._peek()
            if nxt is not None and nxt[0] == "num":
                self.pos += 1
                return Const(value=-float(nxt[1]))
            return Neg(arg=self._unary())
        return self._atom()

    def _atom(self) -> Expr:
        tok = self._take()
        kind, text, _ = tok
        if kind == "num":
            return Const(value=float(text))
        if kind == "ident":
            if text in CALLS:
                self._take("(")
                args = [self._sum()]
                while (sep := self._peek()) is not None and sep[1] == ",":
                    self.pos += 1
                    args.append(self._sum())
                self._take(")")
                try:
                    return Call(op=text, args=tuple(args))
                except ValueError as exc:
                    raise self._error(f"bad call to {text}: {exc.errors()[0]['msg']}", tok) from None
            if text in self.params:
                return ParamRef(name=text)
            if text in FEATURES:
                return FeatureRef(name=text)
            raise UnknownIdentifier(text)
        if text == "(":
            expr = self._sum()
            self._take(")")
            return expr
        raise self._error(f"unexpected '{text}'", tok)


def parse_expr(text: str, params: Collection[str] = (), line: int = 1, col_offset: int = 1) -> Expr:
    """Parse one expression; identifiers must be features or names in ``params``."""
    tokens = _tokenize(text, line, col_offset)
    return _ExprParser(tokens, params, line, col_offset + len(text)).parse()


def _strip_comment(raw: str) -> str:
    in_string = False
    escaped = False
    for idx, ch in enumerate(raw):
        if escaped:
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return raw[:idx]
    return raw


def _number(text: str, line: int, col: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise PolicySyntaxError(f"expected a number, found '{text}'", line, col) from None


def parse_policy(source: str) -> PolicySpec:
    """
    Parse policy source into a validated PolicySpec.

    Raises:
        PolicySyntaxError: malformed lines or expressions (with line/column).
        UnknownIdentifier: an expression names neither a feature nor a param.
        DuplicateParam: a param is declared twice or shadows a feature.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    fields: Dict[str, Tuple[str, int, int]] = {}
    params: Dict[str, ParamDecl] = {}

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = _strip_comment(raw)
        if not text.strip():
            continue
        indent = len(text) - len(text.lstrip())
        stripped = text.strip()
        if stripped.startswith("param ") or stripped.startswith("param\t"):
            match = _PARAM_RE.match(stripped)
            if not match:
                raise PolicySyntaxError("expected 'param NAME = VALUE in [MIN, MAX]'", lineno, indent + 1)
            name = match.group("name")
            if not NAME_RE.match(name) or name in RESERVED:
                raise PolicySyntaxError(f"invalid param name '{name}'", lineno, indent + 7)
            if name in params:
                raise DuplicateParam(f"param '{name}' declared twice", {"name": name, "line": lineno})
            if name in FEATURES:
                raise DuplicateParam(f"param '{name}' shadows a task feature", {"name": name, "line": lineno})
            col = indent + match.start("value") + 1
            value = _number(match.group("value"), lineno, col)
            lo = _number(match.group("lo"), lineno, indent + match.start("lo") + 1)
            hi = _number(match.group("hi"), lineno, indent + match.start("hi") + 1)
            if not lo <= value <= hi:
                raise PolicySyntaxError(f"param '{name}' value {value} outside [{lo}, {hi}]", lineno, col)
            params[name] = ParamDecl(value=value, min=lo, max=hi)
            continue

        match = _KEY_RE.match(stripped)
        if not match:
            raise PolicySyntaxError("expected 'key = value'", lineno, indent + 1)
        key = match.group("key")
        if key not in _KEYS:
            raise PolicySyntaxError(f"unknown key '{key}'", lineno, indent + 1)
        if key in fields:
            raise PolicySyntaxError(f"duplicate key '{key}'", lineno, indent + 1)
        fields[key] = (match.group("rest"), lineno, indent + match.start("rest") + 1)

    if "priority" not in fields:
        raise PolicySyntaxError("missing 'priority = ...' line", 0, 0)

    name = "policy"
    if "name" in fields:
        name, line, col = fields["name"]
        if not NAME_RE.match(name):
            raise PolicySyntaxError(f"invalid policy name '{name}'", line, col)

    description = ""
    if "description" in fields:
        text, line, col = fields["description"]
        try:
            description = json.loads(text)
        except json.JSONDecodeError:
            raise PolicySyntaxError("description must be a double-quoted string", line, col) from None
        if not isinstance(description, str):
            raise PolicySyntaxError("description must be a double-quoted string", line, col)

    tags: Tuple[str, ...] = ()
    if "tags" in fields:
        text, line, col = fields["tags"]
        tags = tuple(t.strip() for t in text.split(",") if t.strip())
        for tag in tags:
            if not TAG_RE.match(tag):
                raise PolicySyntaxError(f"invalid tag '{tag}'", line, col)

    preemptive = False
    if "preemptive" in fields:
        text, line, col = fields["preemptive"]
        if text not in ("true", "false"):
            raise PolicySyntaxError("preemptive must be true or false", line, col)
        preemptive = text == "true"

    text, line, col = fields["priority"]
    priority_expr = parse_expr(text, params, line, col)

    slice_expr: Optional[Expr] = None
    if "slice" in fields:
        text, line, col = fields["slice"]
        if text == "inf":
            if preemptive:
                raise PolicySyntaxError("slice = inf requires preemptive = false", line, col)
        elif not preemptive:
            raise PolicySyntaxError("non-preemptive policies take 'slice = inf'", line, col)
        else:
            slice_expr = parse_expr(text, params, line, col)
    elif preemptive:
        slice_expr = Const(value=float(DEFAULT_SLICE))

    spec = PolicySpec(
        name=name,
        description=description,
        tags=tags,
        params=params,
        priority_expr=priority_expr,
        slice_expr=slice_expr,
        preemptive=preemptive,
    )
    try:
        return validate_policy(spec)
    except InvalidSpec as exc:
        raise PolicySyntaxError(exc.message, 0, 0) from None


def render_policy(spec: PolicySpec) -> str:
    """Canonical source text; ``parse_policy(render_policy(s)) == s``."""
    lines = [f"name = {spec.name}"]
    if spec.description:
        lines.append(f"description = {json.dumps(spec.description, ensure_ascii=False)}")
    if spec.tags:
        lines.append(f"tags = {', '.join(spec.tags)}")
    lines.append(f"preemptive = {'true' if spec.preemptive else 'false'}")
    for name, decl in spec.params.items():
        lines.append(
            f"param {name} = {format_number(decl.value)} in "
            f"[{format_number(decl.min)}, {format_number(decl.max)}]"
        )
    lines.append(f"priority = {render_expr(spec.priority_expr)}")
    lines.append(f"slice = {render_expr(spec.slice_expr) if spec.slice_expr is not None else 'inf'}")
    return "\n".join(lines) + "\n"
