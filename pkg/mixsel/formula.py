# Copyright 2024-present, the mixsel developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################

"""Model formulas: parsing, canonical rendering and component surgery.

Grammar (whitespace insensitive)::

    formula  := ident "~" rhs
    rhs      := term { "+" term }
    term     := "1" | "0" | ident | smooth | random
    random   := "(" rexpr "|" ident ")"
    rexpr    := [ ("0"|"1") "+" ] ident { "+" ident } | "1"
    smooth   := "s(" ident [ "," "bs" "=" quoted ] [ "," "k" "=" integer ]
                [ "," "g" "=" integer ] ")"
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace

from mixsel.errors import FormulaError, FormulaSyntaxError, UnknownBasisError

__all__ = ["INTERCEPT", "FixedTerm", "RandomTerm", "SmoothTerm", "ModelFormula",
        "parse_formula", "render_formula", "render_rhs",
        "reduce_by_component_names", "add_random", "drop_random",
        "replace_random", "add_fixed", "drop_fixed", "to_smooth", "to_linear"]

logger = logging.getLogger('mixsel')

INTERCEPT = "(Intercept)"

DEFAULT_BASIS = "trunc"
DEFAULT_DEGREE = 3
DEFAULT_KNOTS = 10

# labels of smoothing bases we recognise but fit with the truncated basis
SUBSTITUTED_BASES = frozenset(["ps", "tp", "cr", "cs", "cc", "bs", "ts", "ds",
    "re", "gp", "ad", "fs", "sz", "so"])

_IDENT = re.compile(r'[A-Za-z_.][A-Za-z0-9_.]*\Z')

def _check_name(name, what):
    if not isinstance(name, str) or not _IDENT.match(name):
        raise FormulaError("Invalid {} name: {!r}".format(what, name))


@dataclass(frozen=True)
class FixedTerm:
    """A linear fixed effect on a single variable."""
    variable: str

    def __post_init__(self):
        _check_name(self.variable, "variable")

    def render(self):
        return self.variable


@dataclass(frozen=True)
class RandomTerm:
    """Random effects of one grouping variable.

    :param group: Name of the grouping variable
    :param has_intercept: Whether the term has a random intercept
    :param slopes: Names of the variables with random slopes
    :param correlated: True when all components form one correlated block
        per group level. Single component terms are always correlated.
    """
    group: str
    has_intercept: bool = True
    slopes: tuple = ()
    correlated: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'slopes', tuple(self.slopes))
        _check_name(self.group, "group")
        for s in self.slopes:
            _check_name(s, "slope")
        if len(set(self.slopes)) != len(self.slopes):
            raise FormulaError("Repeated slope in random term for {}".format(
                self.group))
        if not self.has_intercept and not self.slopes:
            raise FormulaError("Random term for {} has no components".format(
                self.group))
        if len(self.component_names) == 1 and not self.correlated:
            object.__setattr__(self, 'correlated', True)

    @property
    def component_names(self):
        return ((INTERCEPT,) if self.has_intercept else ()) + self.slopes

    @property
    def n_components(self):
        return len(self.component_names)

    def key(self):
        return (self.group, frozenset(self.slopes), self.has_intercept,
                self.correlated)

    def split(self):
        """One single-component term per component."""
        terms = []
        if self.has_intercept:
            terms.append(RandomTerm(self.group, True, ()))
        for s in self.slopes:
            terms.append(RandomTerm(self.group, False, (s,)))
        return tuple(terms)

    def render(self):
        if not self.correlated:
            return " + ".join(t.render() for t in self.split())
        parts = ["1" if self.has_intercept else "0"] + list(self.slopes)
        return "({} | {})".format(" + ".join(parts), self.group)


@dataclass(frozen=True)
class SmoothTerm:
    """A penalized spline of one variable in mixed model form.

    Only the truncated polynomial basis is fitted; other known basis labels
    are accepted, fitted with it, and kept in `label` for rendering.
    """
    variable: str
    basis_type: str = DEFAULT_BASIS
    g: int = DEFAULT_DEGREE
    k: int = DEFAULT_KNOTS
    label: str = None

    def __post_init__(self):
        _check_name(self.variable, "smooth variable")
        if self.basis_type != DEFAULT_BASIS:
            if self.basis_type not in SUBSTITUTED_BASES:
                raise UnknownBasisError("Unknown basis type {!r} in s({})".format(
                    self.basis_type, self.variable))
            logger.warning("Basis {!r} of s({}) is fitted with the truncated "
                    "polynomial basis".format(self.basis_type, self.variable))
            object.__setattr__(self, 'label', self.basis_type)
            object.__setattr__(self, 'basis_type', DEFAULT_BASIS)
        if self.label == DEFAULT_BASIS:
            object.__setattr__(self, 'label', None)
        if int(self.g) != self.g or self.g < 1:
            raise FormulaError("Smooth degree g must be an integer >= 1")
        if int(self.k) != self.k or self.k < 2:
            raise FormulaError("Smooth knot count k must be an integer >= 2")
        object.__setattr__(self, 'g', int(self.g))
        object.__setattr__(self, 'k', int(self.k))

    def render(self):
        args = [self.variable]
        if self.label is not None:
            args.append('bs = "{}"'.format(self.label))
        if self.k != DEFAULT_KNOTS:
            args.append('k = {}'.format(self.k))
        if self.g != DEFAULT_DEGREE:
            args.append('g = {}'.format(self.g))
        return "s({})".format(", ".join(args))


@dataclass(frozen=True)
class ModelFormula:
    """Parsed model specification.

    :param response: Name of the response column
    :param intercept: Whether the fixed part has an intercept
    :param fixed: Linear fixed terms, in formula order
    :param randoms: Random effect terms, in formula order
    :param smooths: Smooth terms, in formula order
    """
    response: str
    intercept: bool = True
    fixed: tuple = ()
    randoms: tuple = ()
    smooths: tuple = ()

    def __post_init__(self):
        _check_name(self.response, "response")
        fixed = tuple(FixedTerm(t) if isinstance(t, str) else t
                for t in self.fixed)
        randoms = []
        for t in self.randoms:
            randoms.extend(t.split() if not t.correlated else (t,))
        object.__setattr__(self, 'fixed', fixed)
        object.__setattr__(self, 'randoms', tuple(randoms))
        object.__setattr__(self, 'smooths', tuple(self.smooths))

        names = [t.variable for t in self.fixed]
        if len(set(names)) != len(names):
            raise FormulaError("Duplicate fixed term in formula")
        smooth_names = [t.variable for t in self.smooths]
        if len(set(smooth_names)) != len(smooth_names):
            raise FormulaError("Duplicate smooth term in formula")
        both = set(names) & set(smooth_names)
        if both:
            raise FormulaError("Variable {} is both a linear term and a "
                    "smooth".format(", ".join(sorted(both))))
        keys = [t.key() for t in self.randoms]
        if len(set(keys)) != len(keys):
            raise FormulaError("Duplicate random term in formula")
        if self.response in self.variables(include_response=False):
            raise FormulaError("Response {} also used as a predictor".format(
                self.response))

    @property
    def fixed_names(self):
        return tuple(t.variable for t in self.fixed)

    @property
    def smooth_names(self):
        return tuple(t.variable for t in self.smooths)

    @property
    def group_names(self):
        """Grouping variables in order of first use."""
        return tuple(dict.fromkeys(t.group for t in self.randoms))

    @property
    def n_random_components(self):
        return sum(t.n_components for t in self.randoms)

    def variables(self, include_response=True):
        """All referenced column names, response first."""
        out = [self.response] if include_response else []
        out.extend(self.fixed_names)
        out.extend(self.smooth_names)
        for t in self.randoms:
            out.append(t.group)
            out.extend(t.slopes)
        return list(dict.fromkeys(out))

    def rhs(self):
        parts = [] if self.intercept else ["0"]
        parts.extend(t.render() for t in self.fixed)
        parts.extend(t.render() for t in self.smooths)
        parts.extend(t.render() for t in self.randoms)
        if not parts:
            parts = ["1"]
        return " + ".join(parts)

    def render(self):
        return "{} ~ {}".format(self.response, self.rhs())

    def __str__(self):
        return self.render()


def render_formula(f):
    """Canonical text of a formula.

    :param f: The formula
    :type f: :class:`ModelFormula`
    :rtype: str
    """
    return f.render()

def render_rhs(f):
    """Right hand side only, as shown in stepwise traces: ``~ (1 | g)``."""
    return "~ {}".format(f.rhs())


class _Token:
    __slots__ = ('kind', 'value', 'pos')

    def __init__(self, kind, value, pos):
        self.kind = kind
        self.value = value
        self.pos = pos

_TOKEN_RE = re.compile(r'''\s*(?:
    (?P<NUMBER>\d+(?:\.\d*)?) |
    (?P<IDENT>[A-Za-z_.][A-Za-z0-9_.]*) |
    (?P<STRING>"[^"]*"|'[^']*') |
    (?P<OP>[~+()|,=:*/^-])
    )''', re.VERBOSE)


class _Parser:
    """Recursive descent over the token list of one formula."""

    def __init__(self, text):
        self.text = text
        self.tokens = self._lex(text)
        self.i = 0

    def _offset(self, pos):
        return len(self.text[:pos].encode('utf-8'))

    def error(self, message, pos=None):
        if pos is None:
            pos = self.peek().pos
        return FormulaSyntaxError(message, self._offset(pos))

    def _lex(self, text):
        tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                raise FormulaSyntaxError("Unexpected character {!r}".format(
                    text[pos]), self._offset(pos))
            kind = m.lastgroup
            value = m.group(kind)
            tokens.append(_Token(kind, value, m.start(kind)))
            pos = m.end()
        tokens.append(_Token('EOF', '', len(text)))
        return tokens

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        if tok.kind != 'EOF':
            self.i += 1
        return tok

    def accept(self, value):
        tok = self.peek()
        if tok.kind == 'OP' and tok.value == value:
            self.i += 1
            return tok
        return None

    def expect(self, value):
        tok = self.accept(value)
        if tok is None:
            found = self.peek().value or 'end of formula'
            raise self.error("Expected '{}' but found '{}'".format(value, found))
        return tok

    def expect_ident(self, what):
        tok = self.peek()
        if tok.kind != 'IDENT':
            found = tok.value or 'end of formula'
            raise self.error("Expected {} but found '{}'".format(what, found))
        return self.next().value

    def _unsupported(self):
        tok = self.peek()
        if tok.kind != 'OP':
            return
        if tok.value in (':', '*', '^'):
            raise self.error("Interaction terms are not supported")
        if tok.value == '/':
            raise self.error("Nested grouping shorthand is not supported")
        if tok.value == '-':
            raise self.error("Removing terms with '-' is not supported")

    def parse(self):
        response = self.expect_ident("response variable")
        self._unsupported()
        self.expect('~')

        state = {'intercept': True, 'fixed': [], 'randoms': [], 'smooths': []}
        self.term(state)
        self._unsupported()
        while self.accept('+'):
            self.term(state)
            self._unsupported()
        tok = self.peek()
        if tok.kind != 'EOF':
            raise self.error("Unexpected '{}'".format(tok.value))

        return ModelFormula(response, state['intercept'], tuple(state['fixed']),
                tuple(state['randoms']), tuple(state['smooths']))

    def term(self, state):
        tok = self.peek()
        if tok.kind == 'NUMBER':
            self.next()
            if tok.value == '1':
                state['intercept'] = True
            elif tok.value == '0':
                state['intercept'] = False
            else:
                raise self.error("Only 0 or 1 may appear as a number term",
                        tok.pos)
        elif tok.kind == 'IDENT':
            self.next()
            if self.peek().kind == 'OP' and self.peek().value == '(':
                if tok.value != 's':
                    raise self.error("Unknown function '{}'".format(tok.value),
                            tok.pos)
                state['smooths'].append(self.smooth(tok))
            else:
                state['fixed'].append(FixedTerm(tok.value))
        elif tok.kind == 'OP' and tok.value == '(':
            state['randoms'].append(self.random())
        else:
            found = tok.value or 'end of formula'
            raise self.error("Expected a term but found '{}'".format(found))

    def random(self):
        start = self.expect('(')
        if self.peek().kind == 'OP' and self.peek().value == '|':
            raise self.error("Empty random-term expression")

        intercept = None
        slopes = []
        while True:
            tok = self.peek()
            if tok.kind == 'NUMBER' and tok.value in ('0', '1'):
                self.next()
                if intercept is not None:
                    raise self.error("Intercept given twice in random term",
                            tok.pos)
                intercept = tok.value == '1'
            elif tok.kind == 'IDENT':
                slopes.append(self.next().value)
            else:
                found = tok.value or 'end of formula'
                raise self.error("Expected a variable in random term but "
                        "found '{}'".format(found))
            self._unsupported()
            if not self.accept('+'):
                break

        self.expect('|')
        if self.peek().kind == 'OP' and self.peek().value == '|':
            raise self.error("Double-bar terms are not supported, write one "
                    "term per component")
        group = self.expect_ident("grouping variable")
        self._unsupported()
        self.expect(')')

        if intercept is None:
            intercept = True
        if not intercept and not slopes:
            raise self.error("Empty random-term expression", start.pos)
        try:
            return RandomTerm(group, intercept, tuple(slopes), True)
        except FormulaError as e:
            raise self.error(str(e), start.pos)

    def smooth(self, name_tok):
        self.expect('(')
        variable = self.expect_ident("smooth variable")
        options = {}
        while self.accept(','):
            key_tok = self.peek()
            key = self.expect_ident("smooth option")
            if key not in ('bs', 'k', 'g'):
                raise self.error("Unknown smooth option '{}'".format(key),
                        key_tok.pos)
            if key in options:
                raise self.error("Smooth option '{}' given twice".format(key),
                        key_tok.pos)
            self.expect('=')
            val = self.next()
            if key == 'bs':
                if val.kind != 'STRING':
                    raise self.error("bs expects a quoted basis name", val.pos)
                options['bs'] = val.value[1:-1]
            else:
                if val.kind != 'NUMBER' or not val.value.isdigit():
                    raise self.error("{} expects an integer".format(key), val.pos)
                options[key] = int(val.value)
        self.expect(')')
        try:
            return SmoothTerm(variable, options.get('bs', DEFAULT_BASIS),
                    options.get('g', DEFAULT_DEGREE),
                    options.get('k', DEFAULT_KNOTS))
        except UnknownBasisError:
            raise
        except FormulaError as e:
            raise self.error(str(e), name_tok.pos)


def parse_formula(text):
    """Parse formula text into a :class:`ModelFormula`.

    :param text: Formula, e.g. ``"Reaction ~ 1 + Days + (1 + Days | Subject)"``
    :type text: str
    :return: The parsed formula
    :rtype: :class:`ModelFormula`
    :raises FormulaSyntaxError: When the text does not match the grammar
    :raises UnknownBasisError: For smoothing bases that are not known
    """
    if not isinstance(text, str):
        raise FormulaError("Formula must be a string")
    return _Parser(text).parse()

def reduce_by_component_names(f, kept):
    """Keep only the named components of each random term.

    Terms that keep nothing are removed; surviving components of a correlated
    block stay correlated.

    :param f: The formula to reduce
    :param kept: One sequence of component names per random term of `f`,
        names being ``"(Intercept)"`` or slope variables
    :rtype: :class:`ModelFormula`
    """
    if len(kept) != len(f.randoms):
        raise FormulaError("Expected {} component lists, got {}".format(
            len(f.randoms), len(kept)))

    randoms = []
    seen = set()
    for term, names in zip(f.randoms, kept):
        names = list(names)
        unknown = [n for n in names if n not in term.component_names]
        if unknown:
            raise FormulaError("Components {} are not part of {}".format(
                ", ".join(unknown), term.render()))
        has_intercept = INTERCEPT in names
        slopes = tuple(s for s in term.slopes if s in names)
        if not has_intercept and not slopes:
            continue
        new = RandomTerm(term.group, has_intercept, slopes, term.correlated)
        if new.key() in seen:
            continue
        seen.add(new.key())
        randoms.append(new)

    return replace(f, randoms=tuple(randoms))


def add_random(f, term):
    """Formula with `term` appended to the random part."""
    return replace(f, randoms=f.randoms + (term,))


def drop_random(f, index):
    """Formula without the random term at `index`."""
    return replace(f, randoms=f.randoms[:index] + f.randoms[index + 1:])


def replace_random(f, index, terms):
    """Formula with the random term at `index` replaced by `terms`."""
    return replace(f, randoms=f.randoms[:index] + tuple(terms)
            + f.randoms[index + 1:])


def add_fixed(f, variable):
    return replace(f, fixed=f.fixed + (FixedTerm(variable),))


def drop_fixed(f, variable):
    return replace(f, fixed=tuple(t for t in f.fixed if t.variable != variable))


def to_smooth(f, variable, basis_type=DEFAULT_BASIS):
    """Replace the linear term of `variable` by a smooth of it."""
    f = drop_fixed(f, variable)
    return replace(f, smooths=f.smooths + (SmoothTerm(variable, basis_type),))


def to_linear(f, variable):
    """Replace the smooth of `variable` by a linear term."""
    f = replace(f, smooths=tuple(t for t in f.smooths if t.variable != variable))
    return add_fixed(f, variable)
