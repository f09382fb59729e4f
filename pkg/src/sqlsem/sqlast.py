"""SQL frontend: tokenizer, recursive-descent parser, and canonical renderer.

The supported subset is a single SELECT statement with optional INNER/LEFT
joins, WHERE, GROUP BY, HAVING, ORDER BY and LIMIT clauses, the aggregate
functions COUNT/SUM/AVG/MIN/MAX, scalar subqueries in WHERE, and WITH clauses
(inlined into derived tables at parse time). Everything else that looks like
SQL raises UnsupportedConstruct; everything that does not raises
SqlSyntaxError.

Node ids are assigned in pre-order over the final tree, so two parses of the
same text produce identical trees and structural equality is plain equality.
Leaf texts keep their lexeme verbatim (identifier case, quoting style, number
spelling); rendering normalizes only whitespace, redundant parentheses,
explicit ASC, bare table aliases (to AS) and bare JOIN (to INNER JOIN), which
makes parse -> render -> parse a fixed point.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .errors import DataError, SqlsemError


class SqlSyntaxError(SqlsemError):
    """Input is not parseable as SQL at all."""


class UnsupportedConstruct(SqlsemError):
    """Input is recognizable SQL but uses a construct outside the subset."""


class UnknownIdentifier(SqlsemError):
    """Strict resolution found a table or column absent from the schema."""


class Kind(str, Enum):
    SELECT = "Select"
    FROM = "From"
    JOIN = "Join"
    WHERE = "Where"
    GROUP_BY = "GroupBy"
    HAVING = "Having"
    ORDER_BY = "OrderBy"
    LIMIT = "Limit"
    COLUMN = "Column"
    TABLE = "Table"
    LITERAL = "Literal"
    BINARY_OP = "BinaryOp"
    UNARY_OP = "UnaryOp"
    FUNC_CALL = "FuncCall"
    ALIAS = "Alias"
    STAR = "Star"
    SUBQUERY = "Subquery"
    LIST_ROOT = "ListRoot"


@dataclass(frozen=True)
class AstNode:
    id: int
    kind: Kind
    text: str
    children: tuple[int, ...]


@dataclass(frozen=True)
class SqlAst:
    """Immutable tree; ``nodes[i].id == i`` and ids are pre-order."""

    root: int
    nodes: tuple[AstNode, ...]

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def children(self, node_id: int) -> tuple[AstNode, ...]:
        return tuple(self.nodes[c] for c in self.nodes[node_id].children)

    def walk(self, node_id: int | None = None):
        """Pre-order iterator over the subtree rooted at node_id (default root)."""
        stack = [self.root if node_id is None else node_id]
        while stack:
            nid = stack.pop()
            node = self.nodes[nid]
            yield node
            stack.extend(reversed(node.children))

    def subtree_ids(self, node_id: int) -> frozenset[int]:
        return frozenset(n.id for n in self.walk(node_id))


ExprAst = SqlAst  # expression trees share the node shape, restricted kinds


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    types: tuple[str, ...] = ()


@dataclass(frozen=True)
class Schema:
    tables: tuple[Table, ...]
    dialect: str = "sqlite"

    def table(self, name: str) -> Table | None:
        wanted = unquote_ident(name).casefold()
        for t in self.tables:
            if t.name.casefold() == wanted:
                return t
        return None

    @staticmethod
    def from_json(obj: dict) -> "Schema":
        if not isinstance(obj, dict) or "tables" not in obj:
            raise DataError("schema JSON must be an object with a 'tables' list")
        tables = []
        for t in obj["tables"]:
            name, cols = t.get("name"), t.get("columns")
            if not isinstance(name, str) or not isinstance(cols, list):
                raise DataError(f"schema table entry malformed: {t!r}")
            types = tuple(t.get("types", ()))
            if types and len(types) != len(cols):
                raise DataError(f"schema table {name}: types/columns length mismatch")
            tables.append(Table(name, tuple(cols), types))
        return Schema(tuple(tables), dialect=obj.get("dialect", "sqlite"))

    def to_json(self) -> dict:
        return {
            "dialect": self.dialect,
            "tables": [
                {"name": t.name, "columns": list(t.columns), "types": list(t.types)}
                for t in self.tables
            ],
        }

    @staticmethod
    def load(path: str) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return Schema.from_json(json.load(fh))


def unquote_ident(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in ("`", '"'):
        return text[1:-1].replace(text[0] * 2, text[0])
    return text


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<str>'(?:[^']|'')*')
  | (?P<qid>`[^`]*`|"[^"]*")
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|<>|!=|=|<|>|\+|-|\*|/|\(|\)|,|\.|;)
    """,
    re.VERBOSE,
)

_SUPPORTED_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "JOIN", "INNER", "LEFT", "OUTER", "ON", "AS", "AND", "OR", "NOT",
    "ASC", "DESC", "WITH",
}
# Recognizable SQL we deliberately refuse; seeing one of these where an
# expression or clause is expected classifies the input as unsupported.
_UNSUPPORTED_KEYWORDS = {
    "DISTINCT", "UNION", "EXCEPT", "INTERSECT", "CROSS", "RIGHT", "FULL",
    "IN", "EXISTS", "BETWEEN", "LIKE", "IS", "NULL", "CASE", "OVER",
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "NATURAL",
    "OFFSET", "USING", "VALUES", "GLOB",
}

AGGREGATE_FUNCS = ("COUNT", "SUM", "AVG", "MIN", "MAX")


@dataclass(frozen=True)
class _Tok:
    type: str  # num str qid id op kw eof
    value: str
    pos: int

    @property
    def upper(self) -> str:
        return self.value.upper()


def tokenize(sql: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise SqlSyntaxError(f"unexpected character {sql[pos]!r} at offset {pos}")
        pos = m.end()
        group = m.lastgroup
        if group == "ws":
            continue
        value = m.group()
        if group == "id" and value.upper() in (_SUPPORTED_KEYWORDS | _UNSUPPORTED_KEYWORDS):
            toks.append(_Tok("kw", value, m.start()))
        else:
            toks.append(_Tok(group, value, m.start()))
    toks.append(_Tok("eof", "", len(sql)))
    return toks


# --- mutable parse tree ----------------------------------------------------


class _T:
    __slots__ = ("kind", "text", "children")

    def __init__(self, kind: Kind, text: str = "", children: list["_T"] | None = None):
        self.kind = kind
        self.text = text
        self.children = children if children is not None else []

    def copy(self) -> "_T":
        return _T(self.kind, self.text, [c.copy() for c in self.children])


def _freeze(root: _T) -> SqlAst:
    nodes: list[AstNode] = []

    def visit(t: _T) -> int:
        nid = len(nodes)
        nodes.append(None)  # type: ignore[arg-type]  # reserve pre-order slot
        child_ids = tuple(visit(c) for c in t.children)
        nodes[nid] = AstNode(nid, t.kind, t.text, child_ids)
        return nid

    visit(root)
    return SqlAst(root=0, nodes=tuple(nodes))


# --- parser ----------------------------------------------------------------

_COMPARISON_OPS = {"=", "!=", "<>", "<", ">", "<=", ">="}
_STMT_KEYWORDS = {"INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "VALUES"}


class _Parser:
    def __init__(self, toks: list[_Tok], ctes: dict[str, _T] | None = None):
        self.toks = toks
        self.i = 0
        self.ctes = ctes if ctes is not None else {}

    # token helpers
    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        if tok.type != "eof":
            self.i += 1
        return tok

    def at_kw(self, *words: str) -> bool:
        t = self.peek()
        return t.type == "kw" and t.upper in words

    def eat_kw(self, word: str) -> bool:
        if self.at_kw(word):
            self.next()
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.eat_kw(word):
            t = self.peek()
            raise SqlSyntaxError(f"expected {word} at offset {t.pos}, found {t.value!r}")

    def expect_op(self, op: str) -> None:
        t = self.peek()
        if t.type == "op" and t.value == op:
            self.next()
            return
        raise SqlSyntaxError(f"expected {op!r} at offset {t.pos}, found {t.value!r}")

    def at_op(self, *ops: str) -> bool:
        t = self.peek()
        return t.type == "op" and t.value in ops

    def refuse(self, construct: str) -> None:
        raise UnsupportedConstruct(f"{construct} is outside the supported subset")

    # entry points
    def parse_statement(self) -> _T:
        t = self.peek()
        if t.type == "kw" and t.upper in _STMT_KEYWORDS:
            self.refuse(f"{t.upper} statement")
        if self.at_kw("WITH"):
            self.next()
            while True:
                name_tok = self.peek()
                if name_tok.type not in ("id", "qid"):
                    raise SqlSyntaxError(f"expected CTE name at offset {name_tok.pos}")
                self.next()
                self.expect_kw("AS")
                self.expect_op("(")
                cte = self.parse_select()
                self.expect_op(")")
                self.ctes[unquote_ident(name_tok.value).casefold()] = cte
                if not self.at_op(","):
                    break
                self.next()
        stmt = self.parse_select()
        if self.at_op(";"):
            self.next()
        tail = self.peek()
        if tail.type != "eof":
            if tail.type == "kw" and tail.upper in ("UNION", "EXCEPT", "INTERSECT"):
                self.refuse(f"{tail.upper} set operation")
            raise SqlSyntaxError(f"trailing input at offset {tail.pos}: {tail.value!r}")
        return stmt

    def parse_select(self) -> _T:
        self.expect_kw("SELECT")
        if self.at_kw("DISTINCT"):
            self.refuse("SELECT DISTINCT")
        select = _T(Kind.SELECT)
        select.children.append(self.parse_select_item())
        while self.at_op(","):
            self.next()
            select.children.append(self.parse_select_item())
        self.expect_kw("FROM")
        select.children.append(self.parse_from())
        if self.eat_kw("WHERE"):
            select.children.append(_T(Kind.WHERE, children=[self.parse_expr(allow_subquery=True)]))
        if self.at_kw("GROUP"):
            self.next()
            self.expect_kw("BY")
            group = _T(Kind.GROUP_BY)
            group.children.append(self.parse_expr())
            while self.at_op(","):
                self.next()
                group.children.append(self.parse_expr())
            select.children.append(group)
        if self.eat_kw("HAVING"):
            if select.children[-1].kind != Kind.GROUP_BY:
                self.refuse("HAVING without GROUP BY")
            select.children.append(_T(Kind.HAVING, children=[self.parse_expr()]))
        if self.at_kw("ORDER"):
            self.next()
            self.expect_kw("BY")
            order = _T(Kind.ORDER_BY)
            order.children.append(self.parse_order_key())
            while self.at_op(","):
                self.next()
                order.children.append(self.parse_order_key())
            select.children.append(order)
        if self.eat_kw("LIMIT"):
            count = self.peek()
            if count.type != "num":
                raise SqlSyntaxError(f"LIMIT expects a number at offset {count.pos}")
            self.next()
            if self.at_kw("OFFSET"):
                self.refuse("LIMIT ... OFFSET")
            select.children.append(_T(Kind.LIMIT, children=[_T(Kind.LITERAL, count.value)]))
        return select

    def parse_select_item(self) -> _T:
        if self.at_op("*"):
            self.next()
            return _T(Kind.STAR, "*")
        expr = self.parse_expr()
        if self.eat_kw("AS"):
            alias = self.peek()
            if alias.type not in ("id", "qid"):
                raise SqlSyntaxError(f"expected alias name at offset {alias.pos}")
            self.next()
            return _T(Kind.ALIAS, alias.value, [expr])
        return expr

    def parse_from(self) -> _T:
        item = self.parse_from_item()
        while True:
            if self.at_op(","):
                self.refuse("comma join")
            if self.at_kw("CROSS", "RIGHT", "FULL", "NATURAL"):
                self.refuse(f"{self.peek().upper} join")
            join_type = None
            if self.at_kw("JOIN"):
                self.next()
                join_type = "INNER"
            elif self.at_kw("INNER"):
                self.next()
                self.expect_kw("JOIN")
                join_type = "INNER"
            elif self.at_kw("LEFT"):
                self.next()
                self.eat_kw("OUTER")
                self.expect_kw("JOIN")
                join_type = "LEFT"
            if join_type is None:
                break
            right = self.parse_from_item()
            self.expect_kw("ON")
            cond = self.parse_expr()
            item = _T(Kind.JOIN, join_type, [item, right, cond])
        return _T(Kind.FROM, children=[item])

    def parse_from_item(self) -> _T:
        t = self.peek()
        if t.type == "op" and t.value == "(":
            self.next()
            inner = self.parse_select()
            self.expect_op(")")
            sub = _T(Kind.SUBQUERY, children=[inner])
            alias = self._maybe_alias(required=True)
            return _T(Kind.ALIAS, alias, [sub])
        if t.type not in ("id", "qid"):
            raise SqlSyntaxError(f"expected table name at offset {t.pos}, found {t.value!r}")
        self.next()
        key = unquote_ident(t.value).casefold()
        if key in self.ctes:
            sub = _T(Kind.SUBQUERY, children=[self.ctes[key].copy()])
            alias = self._maybe_alias(required=False)
            return _T(Kind.ALIAS, alias if alias else t.value, [sub])
        table = _T(Kind.TABLE, t.value)
        alias = self._maybe_alias(required=False)
        return _T(Kind.ALIAS, alias, [table]) if alias else table

    def _maybe_alias(self, required: bool) -> str | None:
        if self.eat_kw("AS"):
            tok = self.peek()
            if tok.type not in ("id", "qid"):
                raise SqlSyntaxError(f"expected alias name at offset {tok.pos}")
            self.next()
            return tok.value
        tok = self.peek()
        if tok.type in ("id", "qid"):
            self.next()
            return tok.value
        if required:
            raise SqlSyntaxError(f"derived table requires an alias at offset {tok.pos}")
        return None

    def parse_order_key(self) -> _T:
        expr = self.parse_expr()
        if self.at_kw("DESC"):
            self.next()
            return _T(Kind.UNARY_OP, "DESC", [expr])
        self.eat_kw("ASC")  # explicit ASC equals the default and is dropped
        return expr

    # expression grammar (precedence climbing)
    def parse_expr(self, allow_subquery: bool = False) -> _T:
        return self.parse_or(allow_subquery)

    def parse_or(self, sub: bool) -> _T:
        left = self.parse_and(sub)
        while self.at_kw("OR"):
            op = self.next().value
            left = _T(Kind.BINARY_OP, op, [left, self.parse_and(sub)])
        return left

    def parse_and(self, sub: bool) -> _T:
        left = self.parse_not(sub)
        while self.at_kw("AND"):
            op = self.next().value
            left = _T(Kind.BINARY_OP, op, [left, self.parse_not(sub)])
        return left

    def parse_not(self, sub: bool) -> _T:
        if self.at_kw("NOT"):
            op = self.next().value
            return _T(Kind.UNARY_OP, op, [self.parse_not(sub)])
        return self.parse_comparison(sub)

    def parse_comparison(self, sub: bool) -> _T:
        left = self.parse_additive(sub)
        if self.at_kw("IN", "BETWEEN", "LIKE", "IS", "EXISTS", "GLOB"):
            self.refuse(f"{self.peek().upper} predicate")
        if self.at_op(*_COMPARISON_OPS):
            op = self.next().value
            right = self.parse_additive(sub)
            return _T(Kind.BINARY_OP, op, [left, right])
        return left

    def parse_additive(self, sub: bool) -> _T:
        left = self.parse_multiplicative(sub)
        while self.at_op("+", "-"):
            op = self.next().value
            left = _T(Kind.BINARY_OP, op, [left, self.parse_multiplicative(sub)])
        return left

    def parse_multiplicative(self, sub: bool) -> _T:
        left = self.parse_unary(sub)
        while self.at_op("*", "/"):
            op = self.next().value
            left = _T(Kind.BINARY_OP, op, [left, self.parse_unary(sub)])
        return left

    def parse_unary(self, sub: bool) -> _T:
        if self.at_op("-"):
            op = self.next().value
            return _T(Kind.UNARY_OP, op, [self.parse_unary(sub)])
        return self.parse_primary(sub)

    def parse_primary(self, sub: bool) -> _T:
        t = self.peek()
        if t.type == "num" or t.type == "str":
            self.next()
            return _T(Kind.LITERAL, t.value)
        if t.type == "op" and t.value == "(":
            if self.peek(1).type == "kw" and self.peek(1).upper == "SELECT":
                if not sub:
                    self.refuse("subquery outside WHERE")
                self.next()
                inner = self.parse_select()
                self.expect_op(")")
                return _T(Kind.SUBQUERY, children=[inner])
            self.next()
            expr = self.parse_expr(sub)
            self.expect_op(")")
            return expr
        if t.type in ("id", "qid"):
            if t.type == "id" and self.peek(1).type == "op" and self.peek(1).value == "(":
                return self.parse_func_call(sub)
            return self.parse_column_ref()
        if t.type == "kw":
            if t.upper in _UNSUPPORTED_KEYWORDS:
                self.refuse(f"{t.upper}")
            raise SqlSyntaxError(f"unexpected keyword {t.value!r} at offset {t.pos}")
        raise SqlSyntaxError(f"unexpected token {t.value!r} at offset {t.pos}")

    def parse_func_call(self, sub: bool) -> _T:
        name = self.next()
        if name.upper not in AGGREGATE_FUNCS:
            self.refuse(f"function {name.value}")
        self.expect_op("(")
        if self.at_kw("DISTINCT"):
            self.refuse("DISTINCT inside an aggregate")
        if self.at_op("*"):
            self.next()
            arg = _T(Kind.STAR, "*")
        else:
            arg = self.parse_expr(sub)
        self.expect_op(")")
        if self.at_kw("OVER"):
            self.refuse("window function")
        return _T(Kind.FUNC_CALL, name.value, [arg])

    def parse_column_ref(self) -> _T:
        first = self.next()
        if self.at_op("."):
            self.next()
            second = self.peek()
            if second.type == "op" and second.value == "*":
                self.refuse("qualified star")
            if second.type not in ("id", "qid"):
                raise SqlSyntaxError(f"expected column after '.' at offset {second.pos}")
            self.next()
            return _T(Kind.COLUMN, f"{first.value}.{second.value}")
        return _T(Kind.COLUMN, first.value)


def parse(sql: str, schema: Schema | None = None, *, strict: bool = False) -> SqlAst:
    """Parse one statement of the supported subset into a SqlAst.

    With ``strict`` set (and a schema given), table and column references are
    resolved case-insensitively against the schema and unresolvable ones raise
    UnknownIdentifier. Without it, resolution failures are left to execution.
    """
    if not isinstance(sql, str) or not sql.strip():
        raise SqlSyntaxError("empty statement")
    tree = _Parser(tokenize(sql)).parse_statement()
    ast = _freeze(tree)
    if strict and schema is not None:
        resolve_identifiers(ast, schema)
    return ast


# --- renderer ---------------------------------------------------------------

_PRECEDENCE = {
    "OR": 1, "AND": 2,
    "=": 4, "!=": 4, "<>": 4, "<": 4, ">": 4, "<=": 4, ">=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6,
}
_UNARY_PREC = 7


def _prec(node: AstNode) -> int:
    if node.kind is Kind.BINARY_OP:
        return _PRECEDENCE[node.text.upper()]
    if node.kind is Kind.UNARY_OP and node.text.upper() != "DESC":
        return _UNARY_PREC
    return 9


def render_expr(ast: SqlAst, node_id: int) -> str:
    node = ast.node(node_id)
    kind = node.kind
    if kind in (Kind.COLUMN, Kind.TABLE, Kind.LITERAL, Kind.STAR):
        return node.text
    if kind is Kind.BINARY_OP:
        op_prec = _PRECEDENCE[node.text.upper()]
        left, right = node.children
        lhs = render_expr(ast, left)
        rhs = render_expr(ast, right)
        if _prec(ast.node(left)) < op_prec:
            lhs = f"({lhs})"
        # parenthesize equal precedence on the right to preserve tree shape
        if _prec(ast.node(right)) <= op_prec:
            rhs = f"({rhs})"
        return f"{lhs} {node.text} {rhs}"
    if kind is Kind.UNARY_OP:
        (child,) = node.children
        body = render_expr(ast, child)
        if node.text.upper() == "DESC":
            return f"{body} DESC"
        if _prec(ast.node(child)) < _UNARY_PREC:
            body = f"({body})"
        return f"{node.text} {body}" if node.text.upper() == "NOT" else f"{node.text}{body}"
    if kind is Kind.FUNC_CALL:
        (arg,) = node.children
        return f"{node.text}({render_expr(ast, arg)})"
    if kind is Kind.ALIAS:
        (child,) = node.children
        return f"{render_expr(ast, child)} AS {node.text}"
    if kind is Kind.SUBQUERY:
        (inner,) = node.children
        return f"({_render_select(ast, inner)})"
    raise SqlsemError(f"cannot render node kind {kind} as an expression")


def _clause(ast: SqlAst, select_id: int, kind: Kind) -> AstNode | None:
    for child in ast.children(select_id):
        if child.kind is kind:
            return child
    return None


def _render_from_item(ast: SqlAst, node_id: int) -> str:
    node = ast.node(node_id)
    if node.kind is Kind.TABLE:
        return node.text
    if node.kind is Kind.ALIAS:
        (child_id,) = node.children
        return f"{_render_from_item(ast, child_id)} AS {node.text}"
    if node.kind is Kind.SUBQUERY:
        (inner,) = node.children
        return f"({_render_select(ast, inner)})"
    if node.kind is Kind.JOIN:
        left, right, cond = node.children
        return (
            f"{_render_from_item(ast, left)} {node.text} JOIN "
            f"{_render_from_item(ast, right)} ON {render_expr(ast, cond)}"
        )
    raise SqlsemError(f"cannot render node kind {node.kind} in FROM")


def _render_select(ast: SqlAst, select_id: int) -> str:
    select = ast.node(select_id)
    items = [c for c in select.children if ast.node(c).kind not in
             (Kind.FROM, Kind.WHERE, Kind.GROUP_BY, Kind.HAVING, Kind.ORDER_BY, Kind.LIMIT)]
    parts = ["SELECT " + ", ".join(render_expr(ast, i) for i in items)]
    from_node = _clause(ast, select_id, Kind.FROM)
    parts.append("FROM " + _render_from_item(ast, from_node.children[0]))
    where = _clause(ast, select_id, Kind.WHERE)
    if where:
        parts.append("WHERE " + render_expr(ast, where.children[0]))
    group = _clause(ast, select_id, Kind.GROUP_BY)
    if group:
        parts.append("GROUP BY " + ", ".join(render_expr(ast, k) for k in group.children))
    having = _clause(ast, select_id, Kind.HAVING)
    if having:
        parts.append("HAVING " + render_expr(ast, having.children[0]))
    order = _clause(ast, select_id, Kind.ORDER_BY)
    if order:
        parts.append("ORDER BY " + ", ".join(render_expr(ast, k) for k in order.children))
    limit = _clause(ast, select_id, Kind.LIMIT)
    if limit:
        parts.append("LIMIT " + ast.node(limit.children[0]).text)
    return " ".join(parts)


def render(ast: SqlAst) -> str:
    """Canonical SQL text; parse(render(parse(x))) == parse(x)."""
    return _render_select(ast, ast.root)


# --- identifier resolution ---------------------------------------------------


def _exported_columns(ast: SqlAst, select_id: int, schema: Schema) -> list[str]:
    """Output column names of a query block, for derived-table resolution."""
    out: list[str] = []
    for child in ast.children(select_id):
        if child.kind in (Kind.FROM, Kind.WHERE, Kind.GROUP_BY, Kind.HAVING,
                          Kind.ORDER_BY, Kind.LIMIT):
            continue
        if child.kind is Kind.ALIAS:
            out.append(unquote_ident(child.text))
        elif child.kind is Kind.COLUMN:
            out.append(unquote_ident(child.text.split(".")[-1]))
        elif child.kind is Kind.STAR:
            for cols in _from_scope(ast, select_id, schema).values():
                out.extend(cols)
        else:
            out.append(render_expr(ast, child.id))
    return out


def _from_scope(ast: SqlAst, select_id: int, schema: Schema) -> dict[str, list[str]]:
    """Maps binding name (alias or table name, casefolded) -> column names."""
    scope: dict[str, list[str]] = {}

    def visit(node_id: int) -> None:
        node = ast.node(node_id)
        if node.kind is Kind.TABLE:
            table = schema.table(node.text)
            if table is None:
                raise UnknownIdentifier(f"unknown table {node.text!r}")
            scope[unquote_ident(node.text).casefold()] = list(table.columns)
        elif node.kind is Kind.ALIAS:
            (child_id,) = node.children
            child = ast.node(child_id)
            if child.kind is Kind.TABLE:
                table = schema.table(child.text)
                if table is None:
                    raise UnknownIdentifier(f"unknown table {child.text!r}")
                scope[unquote_ident(node.text).casefold()] = list(table.columns)
            else:  # derived table
                (inner,) = child.children
                scope[unquote_ident(node.text).casefold()] = _exported_columns(ast, inner, schema)
        elif node.kind is Kind.JOIN:
            visit(node.children[0])
            visit(node.children[1])

    from_node = _clause(ast, select_id, Kind.FROM)
    visit(from_node.children[0])
    return scope


def resolve_identifiers(ast: SqlAst, schema: Schema, select_id: int | None = None) -> None:
    """Raise UnknownIdentifier for any unresolvable table/column reference."""
    select_id = ast.root if select_id is None else select_id
    scope = _from_scope(ast, select_id, schema)

    def check_expr(node_id: int) -> None:
        node = ast.node(node_id)
        if node.kind is Kind.SUBQUERY:
            resolve_identifiers(ast, schema, node.children[0])  # uncorrelated scope
            return
        if node.kind is Kind.COLUMN:
            text = node.text
            if "." in text and not text.startswith(("`", '"')):
                qual, col = text.split(".", 1)
                cols = scope.get(unquote_ident(qual).casefold())
                if cols is None:
                    raise UnknownIdentifier(f"unknown table or alias {qual!r}")
                if unquote_ident(col).casefold() not in (c.casefold() for c in cols):
                    raise UnknownIdentifier(f"unknown column {text!r}")
            else:
                wanted = unquote_ident(text).casefold()
                if not any(wanted in (c.casefold() for c in cols) for cols in scope.values()):
                    raise UnknownIdentifier(f"unknown column {text!r}")
            return
        for child in node.children:
            check_expr(child)

    def check_from(node_id: int) -> None:
        node = ast.node(node_id)
        if node.kind is Kind.JOIN:
            check_from(node.children[0])
            check_from(node.children[1])
            check_expr(node.children[2])
        elif node.kind is Kind.ALIAS:
            check_from(node.children[0])
        elif node.kind is Kind.SUBQUERY:
            resolve_identifiers(ast, schema, node.children[0])

    for child in ast.children(select_id):
        if child.kind is Kind.FROM:
            check_from(child.children[0])
        else:
            check_expr(child.id)
