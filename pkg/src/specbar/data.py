"""Datasets of state transitions and the dynamics expression language.

Transition data is either supplied directly (inline arrays or paired CSV
files) or generated from per-dimension dynamics expressions with additive
diagonal Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .geometry import RectSet

__all__ = [
    "Dataset",
    "DynamicsModel",
    "ExpressionError",
    "parse_expression",
    "parse_dynamics",
    "load_samples",
    "sample_transitions",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired states and successors, shape (N, n) each."""

    x: np.ndarray
    xp: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        xp = np.atleast_2d(np.asarray(self.xp, dtype=float))
        if x.shape != xp.shape:
            raise ValueError(f"x has shape {x.shape} but xp has shape {xp.shape}")
        if x.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not (np.isfinite(x).all() and np.isfinite(xp).all()):
            raise ValueError("dataset contains NaN or Inf entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xp", xp)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_dims(self) -> int:
        return self.x.shape[1]


def _load_one(source: Union[str, Path, Sequence], base_dir: Union[str, Path, None]) -> np.ndarray:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
        except ValueError as exc:
            raise ValueError(f"malformed CSV {path}: {exc}") from None
        return arr
    try:
        arr = np.asarray(source, dtype=float)
    except ValueError as exc:
        raise ValueError(f"ragged or non-numeric sample rows: {exc}") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("samples must be a list of coordinate rows")
    return arr


def load_samples(
    x_source: Union[str, Path, Sequence],
    xp_source: Union[str, Path, Sequence],
    base_dir: Union[str, Path, None] = None,
) -> Dataset:
    """Build a Dataset from inline arrays or headerless CSV paths."""
    return Dataset(_load_one(x_source, base_dir), _load_one(xp_source, base_dir))


# --- dynamics expression language -----------------------------------------

class ExpressionError(ValueError):
    """Raised on malformed dynamics expressions, with source position."""


_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}


def _tokenize(text: str) -> list[tuple[str, object, int]]:
    tokens: list[tuple[str, object, int]] = []
    i, size = 0, len(text)
    while i < size:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < size and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < size and text[j] in "eE":
                k = j + 1
                if k < size and text[k] in "+-":
                    k += 1
                if k < size and text[k].isdigit():
                    j = k
                    while j < size and text[j].isdigit():
                        j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExpressionError(f"bad number {text[i:j]!r} at position {i}") from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < size and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {ch!r} at position {i}")
    tokens.append(("end", None, size))
    return tokens


class _Parser:
    def __init__(self, text: str, n_dims: int):
        self.text = text
        self.n_dims = n_dims
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, symbol: str):
        kind, value, at = self.peek()
        if kind != "op" or value != symbol:
            raise ExpressionError(f"expected {symbol!r} at position {at} in {self.text!r}")
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, _, at = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing input at position {at} in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = ("bin", value, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = ("bin", value, node, self.unary())
            else:
                return node

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value in "+-":
            self.advance()
            inner = self.unary()
            return inner if value == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.primary()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            # right-associative; exponent may carry a sign
            return ("bin", "^", base, self.unary())
        return base

    def primary(self):
        kind, value, at = self.advance()
        if kind == "num":
            return ("num", value)
        if kind == "name":
            nxt_kind, nxt_value, _ = self.peek()
            if nxt_kind == "op" and nxt_value == "(":
                if value not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {value!r} at position {at}")
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return ("call", value, arg)
            if value in _CONSTANTS:
                return ("num", _CONSTANTS[value])
            if value.startswith("x") and value[1:].isdigit():
                index = int(value[1:])
                if not 1 <= index <= self.n_dims:
                    raise ExpressionError(
                        f"variable {value!r} out of range for {self.n_dims}-dimensional state"
                    )
                return ("var", index - 1)
            raise ExpressionError(f"unknown identifier {value!r} at position {at}")
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token at position {at} in {self.text!r}")


def parse_expression(text: str, n_dims: int):
    """Parse one infix expression over x1..xn into an AST."""
    return _Parser(text, n_dims).parse()


def _evaluate(node, columns: list[np.ndarray]):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return columns[node[1]]
    if kind == "neg":
        return -_evaluate(node[1], columns)
    if kind == "call":
        return _FUNCTIONS[node[1]](_evaluate(node[2], columns))
    op = node[1]
    left = _evaluate(node[2], columns)
    right = _evaluate(node[3], columns)
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        return left / right
    # integer exponents keep negative bases legal
    if np.isscalar(right) and float(right).is_integer():
        return left ** int(right)
    return np.power(left, right)


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Per-dimension update expressions with diagonal Gaussian noise."""

    expressions: tuple
    sources: tuple
    noise_std: np.ndarray

    @property
    def n_dims(self) -> int:
        return len(self.expressions)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Noise-free map f(x) applied row-wise; x has shape (N, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_dims:
            raise ValueError(f"state dimension {x.shape[1]} does not match model ({self.n_dims})")
        columns = [x[:, j] for j in range(self.n_dims)]
        out = np.empty_like(x)
        for j, node in enumerate(self.expressions):
            out[:, j] = _evaluate(node, columns)
        return out

    def step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One stochastic transition f(x) + w."""
        mean = self.evaluate(x)
        if np.any(self.noise_std > 0):
            mean = mean + rng.normal(0.0, self.noise_std, size=mean.shape)
        return mean


def parse_dynamics(exprs: Sequence[str], noise_std: Union[float, Sequence[float]] = 0.0) -> DynamicsModel:
    """Parse one expression per state dimension into a DynamicsModel."""
    if not exprs:
        raise ValueError("dynamics need at least one expression")
    n = len(exprs)
    nodes = tuple(parse_expression(text, n) for text in exprs)
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (n,)).copy()
    if np.any(std < 0):
        raise ValueError("noise standard deviations must be >= 0")
    return DynamicsModel(expressions=nodes, sources=tuple(exprs), noise_std=std)


def sample_transitions(model: DynamicsModel, n_samples: int, bounds: RectSet, seed: int) -> Dataset:
    """Uniform states over the bounds box paired with one noisy step each."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if bounds.dimension != model.n_dims:
        raise ValueError("bounds dimension does not match the dynamics")
    rng = np.random.default_rng(seed)
    x = rng.uniform(bounds.lower, bounds.upper, size=(n_samples, model.n_dims))
    return Dataset(x, model.step(x, rng))
