"""
Textual front-end for `.bip` files: lexer, recursive-descent parser and
pretty printer.

The parser never raises on malformed input. Syntax errors become
diagnostics and parsing resumes at the next declaration. The printer emits
the canonical form, and parsing it back yields a structurally equal model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from expressions import (
    BOOL, INT, INT_MAX, PRECEDENCE, TRUE, UNARY_PRECEDENCE,
    Assignment, Binary, BipError, Const, Expression, SourceSpan, StateTest, Unary, Var,
)
from model import (
    ArchitectureDef, Atom, Compound, Connector, Diagnostic, InitSpec, Instance, Model,
    Parameter, Port, PortRef, PriorityPattern, PriorityRule, SafetyProperty, Transition,
    VarDecl, errors_only, validate_model,
)

logger = logging.getLogger(__name__)

KEYWORDS = {
    "atom", "state", "init", "port", "var", "on", "from", "to", "provided", "do",
    "compound", "connector", "export", "up", "down", "priority", "property",
    "architecture", "param", "coordinator", "component", "int", "bool", "true", "false",
}

TOP_LEVEL = {"atom", "compound", "architecture", "property"}
ATOM_MEMBERS = {"port", "var", "state", "init", "on"}
COMPOUND_MEMBERS = {"component", "connector", "priority", "export"}
ARCH_MEMBERS = {"param", "coordinator", "connector", "priority", "property"}

# Longest first so that `<=` wins over `<`.
SYMBOLS = [":=", "->", "<=", ">=", "==", "!=", "&&", "||",
           "{", "}", "(", ")", ",", ";", ":", ".", "@", "'", "[", "]",
           "<", ">", "!", "+", "-", "*", "/", "%"]


class ModelError(BipError):
    """Raised by `load_model` when a file does not parse or validate."""

    def __init__(self, path, diagnostics: List[Diagnostic]):
        self.path = path
        self.diagnostics = diagnostics
        super().__init__(f"{path}: {len(diagnostics)} error(s); first: {diagnostics[0]}")


# -------------------------------------------------------------------
# LEXER
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Token:
    kind: str    # "id", "int", "kw", "sym", "eof"
    text: str
    span: SourceSpan


class _SyntaxError(Exception):
    def __init__(self, message: str, span: SourceSpan):
        super().__init__(message)
        self.span = span


def tokenize(text: str, file: str = "<input>") -> Tuple[List[Token], List[Diagnostic]]:
    tokens: List[Token] = []
    diagnostics: List[Diagnostic] = []
    i, line, line_start, n = 0, 1, 0, len(text)

    def span(start, end):
        return SourceSpan(file, start, end, line, start - line_start + 1)

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line, line_start = line + 1, i
            continue
        if ch.isspace():
            i += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i + 1
            while j < n and text[j].isascii() and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            tokens.append(Token("kw" if word in KEYWORDS else "id", word, span(i, j)))
            i = j
            continue
        if ch.isascii() and ch.isdigit():
            j = i + 1
            while j < n and text[j].isascii() and text[j].isdigit():
                j += 1
            tokens.append(Token("int", text[i:j], span(i, j)))
            i = j
            continue
        for sym in SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("sym", sym, span(i, i + len(sym))))
                i += len(sym)
                break
        else:
            diagnostics.append(Diagnostic("syntax", f"unexpected character {ch!r}", span(i, i + 1)))
            i += 1
    tokens.append(Token("eof", "", span(n, n)))
    return tokens, diagnostics


# -------------------------------------------------------------------
# PARSER
# -------------------------------------------------------------------
class Parser:
    """Recursive-descent parser producing a `Model`.

    Args:
        text: source text
        file: name used in source spans
    """

    def __init__(self, text: str, file: str = "<input>"):
        self.tokens, self.diagnostics = tokenize(text, file)
        self.pos = 0

    # ---------------------------------------------------------------
    # token helpers
    # ---------------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind in ("kw", "sym") and self.tok.text == text

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.pos += 1
        return t

    def accept(self, text: str) -> Optional[Token]:
        return self.advance() if self.at(text) else None

    def fail(self, expected: str):
        found = "end of file" if self.tok.kind == "eof" else f"'{self.tok.text}'"
        raise _SyntaxError(f"expected {expected} but found {found}", self.tok.span)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"'{text}'")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "id":
            self.fail(what)
        return self.advance()

    def report(self, err: _SyntaxError):
        self.diagnostics.append(Diagnostic("syntax", str(err), err.span))

    def sync(self, stops):
        while self.tok.kind != "eof" and not (self.tok.kind in ("kw", "sym") and self.tok.text in stops):
            self.advance()

    def body(self, members, parse_member):
        """Parse `{ member* }`, recovering at member boundaries."""
        self.expect("{")
        while not self.at("}"):
            if self.tok.kind == "eof" or (self.tok.kind == "kw" and self.tok.text in TOP_LEVEL - members):
                self.fail("'}'")
            start = self.pos
            try:
                parse_member()
            except _SyntaxError as err:
                self.report(err)
                if self.pos == start:
                    self.advance()
                self.sync(members | TOP_LEVEL | {"}"})
                if self.tok.kind == "kw" and self.tok.text in TOP_LEVEL - members:
                    return
        self.advance()

    # ---------------------------------------------------------------
    # model
    # ---------------------------------------------------------------
    def parse_model(self) -> Model:
        atoms, compounds, properties, architectures = [], [], [], []
        while self.tok.kind != "eof":
            start = self.pos
            try:
                if self.at("atom"):
                    atoms.append(self.parse_atom())
                elif self.at("compound"):
                    compounds.append(self.parse_compound())
                elif self.at("property"):
                    properties.append(self.parse_property())
                elif self.at("architecture"):
                    architectures.append(self.parse_architecture())
                else:
                    self.fail("'atom', 'compound', 'property' or 'architecture'")
            except _SyntaxError as err:
                self.report(err)
                if self.pos == start:
                    self.advance()
                self.sync(TOP_LEVEL)
        return Model(tuple(atoms), tuple(compounds), tuple(properties), tuple(architectures))

    # ---------------------------------------------------------------
    # atoms
    # ---------------------------------------------------------------
    def parse_atom(self) -> Atom:
        start = self.expect("atom").span
        name = self.ident("atom name").text
        ports, variables, states, inits, transitions = [], [], [], [], []

        def member():
            if self.at("port"):
                ports.append(self.parse_port())
            elif self.at("var"):
                variables.append(self.parse_var())
            elif self.at("state"):
                self.advance()
                states.append(self.ident("state name").text)
            elif self.at("init"):
                inits.append(self.parse_init())
            elif self.at("on"):
                transitions.append(self.parse_transition())
            else:
                self.fail("'port', 'var', 'state', 'init', 'on' or '}'")

        self.body(ATOM_MEMBERS, member)
        for extra in inits[1:]:
            self.diagnostics.append(Diagnostic("duplicate-init", f"atom '{name}' has more than one init", extra.span))
        return Atom(name, tuple(ports), tuple(variables), tuple(states),
                    inits[0] if inits else None, tuple(transitions), span=start)

    def parse_port(self) -> Port:
        self.expect("port")
        tok = self.ident("port name")
        exported = self.id_list() if self.at("(") else ()
        return Port(tok.text, exported, span=tok.span)

    def id_list(self) -> Tuple[str, ...]:
        self.expect("(")
        names = [self.ident("variable name").text]
        while self.accept(","):
            names.append(self.ident("variable name").text)
        self.expect(")")
        return tuple(names)

    def parse_var(self) -> VarDecl:
        self.expect("var")
        if self.at("int") or self.at("bool"):
            kind = self.advance().text
        else:
            self.fail("'int' or 'bool'")
        tok = self.ident("variable name")
        return VarDecl(tok.text, INT if kind == "int" else BOOL, span=tok.span)

    def parse_init(self) -> InitSpec:
        start = self.expect("init").span
        guard = self.expression() if self.accept("provided") else TRUE
        action = self.action() if self.accept("do") else ()
        self.expect("->")
        target = self.ident("state name").text
        return InitSpec(target, guard, action, span=start)

    def parse_transition(self) -> Transition:
        start = self.expect("on").span
        port = self.ident("port name").text
        self.expect("from")
        source = self.ident("state name").text
        self.expect("to")
        target = self.ident("state name").text
        guard = self.expression() if self.accept("provided") else TRUE
        action = self.action() if self.accept("do") else ()
        return Transition(port, source, target, guard, action, span=start)

    def action(self) -> Tuple[Assignment, ...]:
        assigns = [self.assignment()]
        while self.accept(";"):
            assigns.append(self.assignment())
        return tuple(assigns)

    def assignment(self) -> Assignment:
        start = self.tok.span
        target = self.path()
        self.expect(":=")
        return Assignment(target, self.expression(), span=start)

    def path(self) -> Tuple[str, ...]:
        parts = [self.ident().text]
        while self.at(".") and self.peek().kind == "id":
            self.advance()
            parts.append(self.advance().text)
        return tuple(parts)

    # ---------------------------------------------------------------
    # compounds
    # ---------------------------------------------------------------
    def parse_compound(self) -> Compound:
        start = self.expect("compound").span
        name = self.ident("compound name").text
        instances, connectors, priorities, exports = [], [], [], []

        def member():
            if self.at("component"):
                self.advance()
                tok = self.ident("component name")
                self.expect(":")
                instances.append(Instance(tok.text, self.ident("component type").text, span=tok.span))
            elif self.at("connector"):
                connectors.append(self.parse_connector())
            elif self.at("priority"):
                priorities.append(self.parse_priority())
            elif self.at("export"):
                self.advance()
                self.expect("port")
                exports.append(self.ident("port name").text)
            else:
                self.fail("'component', 'connector', 'priority', 'export' or '}'")

        self.body(COMPOUND_MEMBERS, member)
        return Compound(name, tuple(instances), tuple(connectors), tuple(priorities), tuple(exports), span=start)

    def parse_connector(self) -> Connector:
        self.expect("connector")
        tok = self.ident("connector name")
        self.expect("(")
        ends = [self.end()]
        while self.accept(","):
            ends.append(self.end())
        self.expect(")")
        export = None
        if self.at("export") and not (self.peek().kind == "kw" and self.peek().text == "port"):
            self.advance()
            etok = self.ident("exported port name")
            export = Port(etok.text, self.id_list() if self.at("(") else (), span=etok.span)
        variables = []
        while self.at("var"):
            variables.append(self.parse_var())
        guard = self.expression() if self.accept("provided") else TRUE
        up = self.action() if self.accept("up") else ()
        down = self.action() if self.accept("down") else ()
        return Connector(tok.text, tuple(ends), export, tuple(variables), guard, up, down, span=tok.span)

    def end(self) -> PortRef:
        start = self.tok.span
        path = self.path()
        return PortRef(path, trigger=bool(self.accept("'")), span=start)

    def parse_priority(self) -> PriorityRule:
        start = self.expect("priority").span
        low = self.pattern()
        self.expect("<")
        high = self.pattern()
        return PriorityRule(low, high, span=start)

    def pattern(self) -> PriorityPattern:
        name = self.ident("connector name").text
        if not self.accept("["):
            return PriorityPattern(name)
        mask = [self.path()]
        while self.accept(","):
            mask.append(self.path())
        self.expect("]")
        return PriorityPattern(name, tuple(mask))

    # ---------------------------------------------------------------
    # properties and architectures
    # ---------------------------------------------------------------
    def parse_property(self) -> SafetyProperty:
        self.expect("property")
        tok = self.ident("property name")
        self.expect("{")
        predicate = self.expression()
        self.expect("}")
        return SafetyProperty(tok.text, predicate, span=tok.span)

    def parse_architecture(self) -> ArchitectureDef:
        start = self.expect("architecture").span
        name = self.ident("architecture name").text
        parameters, coordinators, connectors, priorities, props = [], [], [], [], []

        def member():
            if self.at("param"):
                self.advance()
                tok = self.ident("parameter name")
                self.expect(":")
                self.expect("{")
                interface = [self.ident("port name").text]
                while self.accept(","):
                    interface.append(self.ident("port name").text)
                self.expect("}")
                parameters.append(Parameter(tok.text, tuple(interface), span=tok.span))
            elif self.at("coordinator"):
                self.advance()
                tok = self.ident("coordinator name")
                self.expect(":")
                coordinators.append(Instance(tok.text, self.ident("coordinator type").text, span=tok.span))
            elif self.at("connector"):
                connectors.append(self.parse_connector())
            elif self.at("priority"):
                priorities.append(self.parse_priority())
            elif self.at("property"):
                self.advance()
                props.append(self.ident("property name"))
            else:
                self.fail("'param', 'coordinator', 'connector', 'priority', 'property' or '}'")

        self.body(ARCH_MEMBERS, member)
        if not props:
            self.diagnostics.append(Diagnostic("syntax", f"architecture '{name}' names no property", start))
        for extra in props[1:]:
            self.diagnostics.append(Diagnostic("syntax", f"architecture '{name}' names more than one property", extra.span))
        return ArchitectureDef(name, tuple(parameters), tuple(coordinators), tuple(connectors),
                               tuple(priorities), props[0].text if props else "", span=start)

    # ---------------------------------------------------------------
    # expressions
    # ---------------------------------------------------------------
    def expression(self, min_prec: int = 1) -> Expression:
        left = self.unary()
        while self.tok.kind == "sym" and PRECEDENCE.get(self.tok.text, 0) >= min_prec:
            op = self.advance()
            right = self.expression(PRECEDENCE[op.text] + 1)
            left = Binary(op.text, left, right, span=op.span)
        return left

    def unary(self) -> Expression:
        tok = self.tok
        if self.at("-"):
            self.advance()
            if self.tok.kind == "int":
                return Const(self.integer(negative=True), span=tok.span)
            return Unary("-", self.unary(), span=tok.span)
        if self.at("!"):
            self.advance()
            return Unary("!", self.unary(), span=tok.span)
        return self.primary()

    def integer(self, negative: bool = False) -> int:
        tok = self.advance()
        value = int(tok.text)
        limit = INT_MAX + 1 if negative else INT_MAX
        if value > limit:
            raise _SyntaxError(f"integer literal {tok.text} out of 64-bit range", tok.span)
        return -value if negative else value

    def primary(self) -> Expression:
        tok = self.tok
        if tok.kind == "int":
            return Const(self.integer(), span=tok.span)
        if self.at("true") or self.at("false"):
            self.advance()
            return Const(tok.text == "true", span=tok.span)
        if self.accept("("):
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.kind == "id":
            path = self.path()
            if self.accept("@"):
                return StateTest(path, self.ident("state name").text, span=tok.span)
            return Var(path, span=tok.span)
        self.fail("expression")


def parse(source: str, file: str = "<input>") -> Tuple[Model, List[Diagnostic]]:
    """
    Parse `.bip` source text.

    Returns the model and every diagnostic found. Validation runs only when
    the text is syntactically clean.
    """
    parser = Parser(source, file)
    try:
        model = parser.parse_model()
    except RecursionError:
        last = parser.tok.span
        parser.diagnostics.append(Diagnostic("syntax", "expression nested too deeply", last))
        model = Model()
    diagnostics = list(parser.diagnostics)
    if not diagnostics:
        diagnostics = validate_model(model)
    logger.debug(f"parse {file}: {len(model.atoms)} atoms, {len(model.compounds)} compounds, "
                 f"{len(diagnostics)} diagnostic(s)")
    return model, diagnostics


def load_model(path) -> Model:
    """Read, parse and validate a `.bip` file; raise ModelError on any error diagnostic."""
    path = Path(path)
    source = path.read_bytes().decode("utf-8", errors="replace")
    model, diagnostics = parse(source, str(path))
    errors = errors_only(diagnostics)
    if errors:
        raise ModelError(path, errors)
    logger.info(f"Loaded {path.name}: root '{model.root.name}', "
                f"{len(model.atoms)} atom types, {len(model.compounds)} compound types")
    return model


# -------------------------------------------------------------------
# PRETTY PRINTER
# -------------------------------------------------------------------
def format_expression(e: Expression, min_prec: int = 0) -> str:
    if isinstance(e, Const):
        if type(e.value) is bool:
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, StateTest):
        return f"{e.name}@{e.state}"
    if isinstance(e, Unary):
        operand = e.operand
        if isinstance(operand, Const) and type(operand.value) is int:
            return f"{e.op}({format_expression(operand)})"
        return e.op + format_expression(operand, UNARY_PRECEDENCE)
    if isinstance(e, Binary):
        prec = PRECEDENCE[e.op]
        text = f"{format_expression(e.left, prec)} {e.op} {format_expression(e.right, prec + 1)}"
        return f"({text})" if prec < min_prec else text
    raise TypeError(f"not an expression: {e!r}")


def format_action(action) -> str:
    return "; ".join(f"{a.name} := {format_expression(a.expr)}" for a in action)


def _guarded(guard: Expression, action, action_kw: str = "do") -> str:
    text = ""
    if guard != TRUE:
        text += f" provided {format_expression(guard)}"
    if action:
        text += f" {action_kw} {format_action(action)}"
    return text


def format_connector(c: Connector) -> str:
    ends = ", ".join(e.text + ("'" if e.trigger else "") for e in c.ends)
    text = f"connector {c.name}({ends})"
    if c.export is not None:
        text += f" export {c.export.name}"
        if c.export.exported:
            text += f"({', '.join(c.export.exported)})"
    for v in c.variables:
        text += f" var {v.type} {v.name}"
    if c.guard != TRUE:
        text += f" provided {format_expression(c.guard)}"
    if c.up:
        text += f" up {format_action(c.up)}"
    if c.down:
        text += f" down {format_action(c.down)}"
    return text


def _format_atom(a: Atom) -> List[str]:
    lines = [f"atom {a.name} {{"]
    for p in a.ports:
        lines.append(f"  port {p.name}" + (f"({', '.join(p.exported)})" if p.exported else ""))
    lines += [f"  var {v.type} {v.name}" for v in a.variables]
    lines += [f"  state {s}" for s in a.states]
    if a.init is not None:
        lines.append(f"  init{_guarded(a.init.guard, a.init.action)} -> {a.init.target}")
    for t in a.transitions:
        lines.append(f"  on {t.port} from {t.source} to {t.target}{_guarded(t.guard, t.action)}")
    lines.append("}")
    return lines


def _format_rule(r: PriorityRule) -> str:
    return f"priority {r.low.text} < {r.high.text}"


def _format_compound(c: Compound) -> List[str]:
    lines = [f"compound {c.name} {{"]
    lines += [f"  component {i.name} : {i.type_name}" for i in c.instances]
    lines += [f"  {format_connector(k)}" for k in c.connectors]
    lines += [f"  {_format_rule(r)}" for r in c.priorities]
    lines += [f"  export port {p}" for p in c.exports]
    lines.append("}")
    return lines


def _format_architecture(a: ArchitectureDef) -> List[str]:
    lines = [f"architecture {a.name} {{"]
    lines += [f"  param {p.name} : {{ {', '.join(p.interface)} }}" for p in a.parameters]
    lines += [f"  coordinator {i.name} : {i.type_name}" for i in a.coordinators]
    lines += [f"  {format_connector(k)}" for k in a.connectors]
    lines += [f"  {_format_rule(r)}" for r in a.priorities]
    lines.append(f"  property {a.property}")
    lines.append("}")
    return lines


def pretty_print(model: Model) -> str:
    """Canonical text of a model: atoms, compounds, properties, then architectures."""
    blocks = [_format_atom(a) for a in model.atoms]
    blocks += [_format_compound(c) for c in model.compounds]
    blocks += [[f"property {p.name} {{ {format_expression(p.predicate)} }}"] for p in model.properties]
    blocks += [_format_architecture(a) for a in model.architectures]
    return "\n\n".join("\n".join(b) for b in blocks) + ("\n" if blocks else "")
