"""Recursive-descent parser for ``.mela`` model files."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from . import ast as A
from .diagnostics import Diagnostic, ERROR


class ParseError(Exception):
    """Raised when a model cannot be parsed; carries the diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, INT, FLOAT, OP, EOF
    text: str
    line: int
    col: int


_UNICODE = {"↑": "up", "↓": "down", "→": "->", "←": "<-", "∥": "|", "×": "*", "÷": "/"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<float>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|<-|[(){}\[\],;=+\-*/.|:#%↑↓→←∥×÷])
    """,
    re.VERBOSE,
)

KEYWORDS = {"param", "space", "agent", "env", "init", "nil", "up", "down"}


def tokenize(text: str) -> list:
    tokens = []
    line, line_start = 1, 0
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        col = i - line_start + 1
        if m is None:
            raise ParseError([Diagnostic(ERROR, f"unexpected character {text[i]!r}", line, col, "lexical")])
        kind = m.lastgroup
        s = m.group()
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "op":
            s = _UNICODE.get(s, s)
            tokens.append(Token("IDENT" if s in ("up", "down") else "OP", s, line, col))
        else:
            tokens.append(Token(kind.upper(), s, line, col))
        nl = s.count("\n") if kind == "ws" else 0
        if nl:
            line += nl
            line_start = i + s.rfind("\n") + 1
        i = m.end()
    tokens.append(Token("EOF", "", line, i - line_start + 1))
    return tokens


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.vars: tuple = ()  # location variables of the agent being parsed

    # -- token helpers --

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("OP", "IDENT")

    def error(self, msg: str, tok: Optional[Token] = None, code="syntax"):
        tok = tok or self.tok
        raise ParseError([Diagnostic(ERROR, msg, tok.line, tok.col, code)])

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def ident(self, what="identifier") -> Token:
        if self.tok.kind != "IDENT" or self.tok.text in KEYWORDS:
            self.error(f"expected {what}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def integer(self) -> int:
        neg = self.accept("-")
        if self.tok.kind != "INT":
            self.error(f"expected integer, found {self.tok.text!r}")
        v = int(self.advance().text)
        return -v if neg else v

    def pos(self, tok=None) -> A.Pos:
        tok = tok or self.tok
        return A.Pos(tok.line, tok.col)

    # -- model --

    def model(self) -> A.ModelDef:
        params, agents, envs = {}, {}, {}
        space, init = None, None
        while self.tok.kind != "EOF":
            t = self.tok
            if self.accept("param"):
                name = self.ident("parameter name")
                self.expect("=")
                value = self.signed_number()
                self.expect(";")
                if name.text in params:
                    self.error(f"duplicate definition of parameter {name.text!r}", name, "duplicate")
                params[name.text] = value
            elif self.accept("space"):
                if space is not None:
                    self.error("duplicate space declaration", t, "duplicate")
                space = self.space_decl()
                if not (self.toks[self.i - 1].text == "}" and not self.at(";")):
                    self.expect(";")
            elif self.accept("agent"):
                agent = self.agent_def()
                if agent.name in agents or agent.name in envs:
                    self.error(f"duplicate definition of {agent.name!r}", t, "duplicate")
                agents[agent.name] = agent
            elif self.accept("env"):
                env = self.env_def()
                if env.name in envs or env.name in agents:
                    self.error(f"duplicate definition of {env.name!r}", t, "duplicate")
                envs[env.name] = env
            elif self.accept("init"):
                if init is not None:
                    self.error("duplicate init declaration", t, "duplicate")
                init = self.init_decl()
            else:
                self.error(f"expected 'param', 'space', 'agent', 'env' or 'init', found {t.text!r}")
        return A.ModelDef(params, space, agents, tuple(envs.values()), tuple(init or ()))

    def signed_number(self) -> float:
        neg = self.accept("-")
        if self.tok.kind not in ("INT", "FLOAT"):
            self.error(f"expected number, found {self.tok.text!r}")
        v = float(self.advance().text)
        return -v if neg else v

    # -- space --

    def space_decl(self):
        t = self.ident("space kind")
        kind = t.text
        if kind == "nested":
            self.expect("(")
            inner = self.space_decl()
            if not isinstance(inner, (A.Line, A.Grid2D)):
                self.error("nested inner space must be line or grid2d", t)
            self.expect(",")
            outer = self.space_decl()
            if not isinstance(outer, A.Graph):
                self.error("nested outer space must be a graph", t)
            self.expect(")")
            entry = None
            opts = {}
            while self.tok.kind == "IDENT" and self.peek().text == "=":
                key = self.advance()
                self.expect("=")
                if key.text == "entry":
                    entry = self.literal_location()
                else:
                    opts[key.text] = self.option_value(key)
            if opts:
                inner = self.apply_options(inner, opts, t)
            return A.Nested(inner, outer, entry)
        if kind == "graph":
            self.expect("{")
            adjacency = []
            seen = set()
            while not self.at("}"):
                vt = self.tok
                v = self.integer()
                if v in seen:
                    self.error(f"duplicate vertex {v}", vt, "duplicate")
                seen.add(v)
                self.expect(":")
                self.expect("[")
                nbrs = []
                while not self.at("]"):
                    nbrs.append(self.integer())
                    if not self.accept(","):
                        break
                self.expect("]")
                self.expect(";")
                adjacency.append((v, tuple(nbrs)))
            self.expect("}")
            return A.Graph(tuple(adjacency))
        dims = {"line": 1, "grid2d": 2, "grid3d": 3}
        if kind not in dims:
            self.error(f"unknown space kind {kind!r}", t)
        self.expect("(")
        args = [self.integer()]
        while self.accept(","):
            args.append(self.integer())
        self.expect(")")
        if len(args) != dims[kind]:
            self.error(f"{kind} takes {dims[kind]} dimension(s), got {len(args)}", t)
        decl = {"line": A.Line, "grid2d": A.Grid2D, "grid3d": A.Grid3D}[kind](*args)
        opts = {}
        while self.tok.kind == "IDENT" and self.tok.text in ("boundary", "neighbourhood") and self.peek().text == "=":
            key = self.advance()
            self.expect("=")
            opts[key.text] = self.option_value(key)
        return self.apply_options(decl, opts, t) if opts else decl

    def option_value(self, key: Token) -> str:
        allowed = {"boundary": (A.PERIODIC, A.CLOSED), "neighbourhood": (A.VON_NEUMANN, A.MOORE)}
        if key.text not in allowed:
            self.error(f"unknown space option {key.text!r}", key)
        v = self.ident("option value")
        if v.text not in allowed[key.text]:
            self.error(f"invalid {key.text} {v.text!r}; expected one of {', '.join(allowed[key.text])}", v)
        return v.text

    def apply_options(self, decl, opts, tok):
        from dataclasses import replace

        if not isinstance(decl, (A.Line, A.Grid2D, A.Grid3D)):
            self.error("boundary/neighbourhood options apply to line and grid spaces only", tok)
        return replace(decl, **opts)

    def literal_location(self) -> A.Location:
        if self.accept("("):
            coords = [self.integer()]
            while self.accept(","):
                coords.append(self.integer())
            self.expect(")")
            return tuple(coords)
        return (self.integer(),)

    # -- agents --

    def agent_def(self) -> A.AgentDef:
        name = self.ident("agent name")
        self.expect("(")
        params = [self.ident("location variable").text]
        while self.accept(","):
            params.append(self.ident("location variable").text)
        self.expect(")")
        if len(set(params)) != len(params):
            self.error("repeated location variable", name)
        if len(params) > 3:
            self.error("agents take at most 3 location coordinates", name)
        self.expect("=")
        self.vars = tuple(params)
        body = self.body()
        self.vars = ()
        self.expect(";")
        return A.AgentDef(name.text, tuple(params), body, self.pos(name))

    def body(self) -> A.ProcessTerm:
        if self.at("nil"):
            t = self.advance()
            if self.at("+"):
                self.error("nil may only appear as a whole agent body", t)
            return A.Nil()
        terms = [self.term()]
        while self.accept("+"):
            if self.at("nil"):
                self.error("nil may only appear as a whole agent body")
            terms.append(self.term())
        return A.make_choice(terms)

    def term(self) -> A.ProcessTerm:
        t = self.tok
        if self.at("("):
            self.advance()
            name, value = self.action_pair()
            return self.prefix(A.ActionSpec(name, A.NO_INFLUENCE, "", value, None, self.pos(t)))
        if self.at("->"):
            self.advance()
            targets = self.target_set()
            self.expect("(")
            name, value = self.action_pair()
            return self.prefix(A.ActionSpec(name, A.INFLUENCE, "", value, targets, self.pos(t)))
        if self.at("<-"):
            self.advance()
            self.expect("(")
            name, value = self.action_pair()
            return self.prefix(A.ActionSpec(name, A.PASSIVE, "", value, None, self.pos(t)))
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            self.advance()
            self.expect("(")
            loc = self.coord_list(")")
            self.expect(")")
            return A.ConstantRef(t.text, loc, self.pos(t))
        self.error(f"expected action prefix or constant, found {t.text or 'end of input'!r}")

    def action_pair(self):
        name = self.ident("action name").text
        self.expect(",")
        value = self.expr()
        self.expect(")")
        return name, value

    def prefix(self, action: A.ActionSpec) -> A.Prefix:
        if self.accept("."):
            mode = A.KEEP
        elif self.accept("up"):
            mode = A.CREATE
        elif self.accept("down"):
            mode = A.DESTROY
        else:
            self.error(f"expected mode '.', 'up' or 'down', found {self.tok.text!r}")
        action = A.ActionSpec(action.name, action.kind, mode, action.value, action.targets, action.pos)
        return A.Prefix(action, self.continuation())

    def continuation(self) -> A.Continuation:
        t = self.ident("continuation agent")
        self.expect("(")
        dest = self.destination()
        self.expect(")")
        return A.Continuation(t.text, dest, self.pos(t))

    def destination(self):
        t = self.tok
        if t.kind == "IDENT" and t.text in ("new", "new_v") and self.peek().text == "(":
            self.advance()
            self.expect("(")
            args = self.coord_list(")")
            self.expect(")")
            return A.NewLocation(args) if t.text == "new" else A.NewOuterLocation(args)
        if t.kind == "IDENT" and t.text == "U" and self.peek().text == "(":
            self.advance()
            self.expect("(")
            locs = [self.loc_item()]
            while self.accept(","):
                locs.append(self.loc_item())
            self.expect(")")
            return A.UniformOver(tuple(locs))
        if self.accept("{"):
            entries = []
            while True:
                loc = self.loc_item()
                self.expect("[")
                p = self.expr()
                self.expect("]")
                entries.append((loc, p))
                if not self.accept(","):
                    break
            self.expect("}")
            return A.Empirical(tuple(entries))
        return A.AtLocation(self.coord_list(")"))

    def target_set(self):
        self.expect("{")
        if self.tok.kind == "IDENT" and self.tok.text == "all" and self.peek().text == "}":
            self.advance()
            self.expect("}")
            return A.AllLocations()
        locs = [self.loc_item()]
        while self.accept(","):
            locs.append(self.loc_item())
        self.expect("}")
        here = tuple(A.CVar(v) for v in self.vars)
        if self.vars and len(locs) == 1 and locs[0] == here:
            return A.Here()
        return A.LocationList(tuple(locs))

    def loc_item(self) -> tuple:
        """A location: ``c`` or ``(c1, c2, ...)``."""
        if self.at("("):
            save = self.i
            self.advance()
            coords = self.coord_list(")")
            if self.accept(")"):
                if len(coords) > 1 or not self.at_coord_operator():
                    return coords
            # a parenthesised scalar followed by an operator: reparse as an expression
            self.i = save
        return (self.coord_expr(),)

    def at_coord_operator(self) -> bool:
        return self.at("+") or self.at("-") or self.at("*") or self.at("%") or (
            self.tok.kind == "IDENT" and self.tok.text == "mod"
        )

    def init_decl(self) -> tuple:
        self.expect("=")
        entries = [self.init_entry()]
        while self.accept("|"):
            entries.append(self.init_entry())
        self.expect(";")
        return tuple(entries)

    def init_entry(self) -> A.InitEntry:
        t = self.ident("agent or environment name")
        loc = None
        if self.at("("):
            loc = self.literal_location()
        count = 1
        if self.accept("["):
            ct = self.tok
            count = self.integer()
            if count < 1:
                self.error("multiplicity must be a positive integer", ct)
            self.expect("]")
        return A.InitEntry(t.text, loc, count, self.pos(t))

    def env_def(self) -> A.EnvDef:
        name = self.ident("environment factor name")
        self.expect("=")
        self.expect("->")
        self.vars = ()
        targets = self.target_set()
        self.expect("(")
        action, rate = self.action_pair()
        self.expect(".")
        again = self.ident("environment factor name")
        if again.text != name.text:
            self.error(f"environment factor {name.text!r} must continue as itself", again)
        self.expect(";")
        return A.EnvDef(name.text, targets, action, rate, self.pos(name))

    # -- coordinate expressions --

    def coord_list(self, closer: str) -> tuple:
        if self.at(closer):
            self.error("expected location coordinates")
        coords = [self.coord_expr()]
        while self.accept(","):
            coords.append(self.coord_expr())
        return tuple(coords)

    def coord_expr(self):
        left = self.coord_term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = A.CBin(op, left, self.coord_term())
        return left

    def coord_term(self):
        left = self.coord_atom()
        while self.at("*") or self.at("%") or (self.tok.kind == "IDENT" and self.tok.text == "mod"):
            self.advance()
            op = "*" if self.toks[self.i - 1].text == "*" else "mod"
            left = A.CBin(op, left, self.coord_atom())
        return left

    def coord_atom(self):
        t = self.tok
        if t.kind == "INT":
            self.advance()
            return A.CInt(int(t.text))
        if self.accept("-"):
            if self.tok.kind == "INT":
                return A.CInt(-int(self.advance().text))
            return A.CBin("-", A.CInt(0), self.coord_atom())
        if self.accept("("):
            e = self.coord_expr()
            self.expect(")")
            return e
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            self.advance()
            return A.CVar(t.text)
        self.error(f"expected location coordinate, found {t.text or 'end of input'!r}")

    # -- rate expressions --

    def expr(self):
        left = self.mul()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = A.BinOp(op, left, self.mul())
        return left

    def mul(self):
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            left = A.BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.accept("-"):
            if self.tok.kind in ("INT", "FLOAT"):
                return A.Num(-float(self.advance().text))
            return A.Neg(self.unary())
        return self.atom()

    def atom(self):
        t = self.tok
        if t.kind in ("INT", "FLOAT"):
            self.advance()
            return A.Num(float(t.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("#"):
            name = self.ident("agent name")
            self.expect("(")
            loc = self.coord_list(")")
            self.expect(")")
            return A.Count(name.text, loc, self.pos(name))
        if t.kind == "IDENT" and t.text in ("min", "max") and self.peek().text == "(":
            self.advance()
            self.expect("(")
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            if len(args) < 2:
                self.error(f"{t.text} takes at least two arguments", t)
            return A.Call(t.text, tuple(args))
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            self.advance()
            return A.Param(t.text, self.pos(t))
        self.error(f"expected expression, found {t.text or 'end of input'!r}")


def parse_model(text: str) -> A.ModelDef:
    """Parse MELA source text into a :class:`ModelDef`.

    Raises :class:`ParseError` with line/column diagnostics on lexical errors,
    syntax errors and duplicate definitions.
    """
    return Parser(text).model()


def parse_file(path) -> A.ModelDef:
    with open(path, encoding="utf-8") as f:
        return parse_model(f.read())


def parse_expr(text: str, vars=()) -> A.RateExpr:
    p = Parser(text)
    p.vars = tuple(vars)
    e = p.expr()
    if p.tok.kind != "EOF":
        p.error(f"unexpected {p.tok.text!r} after expression")
    return e
