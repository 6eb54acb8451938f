"""Nonlinear dictionary columns appended to the linear regression.

Each entry evaluates one scalar function of lagged node/input windows and
contributes one extra column; entries sharing a group id form one extra
sparsity group after the linear ones, so the same element/group priors act
on nonlinear terms.  Evaluators only see strictly lagged samples (lags
1..lag_window), never the current target sample.

Built-in families: monomials over lagged signals, Hill activation
x^h / (K^h + x^h), Hill repression 1 / (1 + (x/K)^h), and a small arithmetic
expression language over named lagged signals (see `expression_entry`).
"""
from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass

import numpy as np

from .model import TimeSeries
from .regression import GroupLayout, RegressionProblem, build_problem

__all__ = [
    "DictionaryEntry",
    "DictionaryEvaluationError",
    "monomial_entry",
    "hill_activation_entry",
    "hill_repression_entry",
    "expression_entry",
    "load_dictionary",
    "build_nonlinear_problem",
]


class DictionaryEvaluationError(RuntimeError):
    """An evaluator produced a non-finite value; carries entry and row info."""


@dataclass(frozen=True)
class DictionaryEntry:
    """One nonlinear regressor.

    ``evaluator(y_lags, u_lags)`` receives windows shaped (p, lag_window) and
    (m, lag_window) where column d-1 holds the signal d steps before the
    predicted sample, and returns a scalar.
    """

    label: str
    group_id: int
    lag_window: int
    evaluator: object

    def __post_init__(self):
        if self.lag_window < 1:
            raise ValueError("lag_window must be at least 1")
        if self.group_id < 0:
            raise ValueError("group_id must be nonnegative")


def _signal(y_lags, u_lags, kind: str, index: int, lag: int):
    window = y_lags if kind == "y" else u_lags
    return window[index, lag - 1]


def monomial_entry(label: str, group_id: int, sources, exponents) -> DictionaryEntry:
    """Product of lagged signals raised to integer powers.

    ``sources`` is a list of ("y"|"u", index, lag) triples aligned with
    ``exponents``.
    """
    sources = [(str(k), int(i), int(l)) for k, i, l in sources]
    exponents = [float(e) for e in exponents]
    if len(sources) != len(exponents):
        raise ValueError("sources and exponents must align")
    lagw = max(l for _, _, l in sources)

    def evaluate(y_lags, u_lags):
        val = 1.0
        for (kind, idx, lag), e in zip(sources, exponents):
            val *= _signal(y_lags, u_lags, kind, idx, lag) ** e
        return val

    return DictionaryEntry(label=label, group_id=group_id, lag_window=lagw, evaluator=evaluate)


def hill_activation_entry(label, group_id, source, h, K) -> DictionaryEntry:
    kind, idx, lag = str(source[0]), int(source[1]), int(source[2])
    h, K = float(h), float(K)

    def evaluate(y_lags, u_lags):
        x = abs(_signal(y_lags, u_lags, kind, idx, lag))
        return x**h / (K**h + x**h)

    return DictionaryEntry(label=label, group_id=group_id, lag_window=lag, evaluator=evaluate)


def hill_repression_entry(label, group_id, source, h, K) -> DictionaryEntry:
    kind, idx, lag = str(source[0]), int(source[1]), int(source[2])
    h, K = float(h), float(K)

    def evaluate(y_lags, u_lags):
        x = abs(_signal(y_lags, u_lags, kind, idx, lag))
        return 1.0 / (1.0 + (x / K) ** h)

    return DictionaryEntry(label=label, group_id=group_id, lag_window=lag, evaluator=evaluate)


_ALLOWED_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_ALLOWED_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def _parse_var(name: str):
    # y<node>_l<lag> or u<input>_l<lag>, 1-based indices
    kind = name[0]
    if kind not in ("y", "u") or "_l" not in name:
        raise ValueError(f"unknown variable '{name}' (expected y<i>_l<d> or u<j>_l<d>)")
    idx_part, lag_part = name[1:].split("_l", 1)
    try:
        idx, lag = int(idx_part), int(lag_part)
    except ValueError:
        raise ValueError(f"unknown variable '{name}'") from None
    if idx < 1 or lag < 1:
        raise ValueError(f"variable '{name}' must use 1-based index and lag")
    return kind, idx - 1, lag


def _compile_expression(expr: str):
    """Compile the +, -, *, /, power grammar over lagged-signal names."""
    tree = ast.parse(expr.replace("^", "**"), mode="eval")
    variables = {}

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
            left, right = walk(node.left), walk(node.right)
            op = _ALLOWED_BINOPS[type(node.op)]
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _ALLOWED_UNARY:
            sub = walk(node.operand)
            op = _ALLOWED_UNARY[type(node.op)]
            return lambda env: op(sub(env))
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            val = float(node.value)
            return lambda env: val
        if isinstance(node, ast.Name):
            key = node.id
            if key not in variables:
                variables[key] = _parse_var(key)
            return lambda env: env[key]
        raise ValueError(f"unsupported syntax in expression: {ast.dump(node)}")

    fn = walk(tree)
    return fn, variables


def expression_entry(label: str, group_id: int, expr: str) -> DictionaryEntry:
    """Entry from an arithmetic expression over named lagged signals.

    Variables are ``y<i>_l<d>`` (node i, lag d) and ``u<j>_l<d>``, 1-based;
    operators are + - * / and power (^ or **); constants are numeric
    literals.  Example: ``"0.5*y1_l1^2 - u1_l2"``.
    """
    fn, variables = _compile_expression(expr)
    if not variables:
        raise ValueError("expression references no lagged signal")
    lagw = max(lag for _, _, lag in variables.values())

    def evaluate(y_lags, u_lags):
        env = {
            name: _signal(y_lags, u_lags, kind, idx, lag)
            for name, (kind, idx, lag) in variables.items()
        }
        return fn(env)

    return DictionaryEntry(label=label, group_id=group_id, lag_window=lagw, evaluator=evaluate)


def load_dictionary(spec) -> list:
    """Build entries from a JSON file path or an already-parsed list.

    Each item: {"label", "kind": monomial|hill_act|hill_rep|custom_expr,
    "group_id", "params", "sources"} with kind-specific params; see README.
    """
    if isinstance(spec, (str, bytes)) or hasattr(spec, "__fspath__"):
        with open(spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    entries = []
    for i, item in enumerate(spec):
        kind = item.get("kind")
        label = item.get("label", f"f{i}")
        gid = int(item.get("group_id", i))
        params = item.get("params", {})
        if kind == "monomial":
            entries.append(monomial_entry(label, gid, item["sources"], params["exponents"]))
        elif kind == "hill_act":
            entries.append(hill_activation_entry(label, gid, item["sources"][0], params["h"], params["K"]))
        elif kind == "hill_rep":
            entries.append(hill_repression_entry(label, gid, item["sources"][0], params["h"], params["K"]))
        elif kind == "custom_expr":
            entries.append(expression_entry(label, gid, params["expr"]))
        else:
            raise ValueError(f"entry {i}: unknown kind {kind!r}")
    return entries


def build_nonlinear_problem(data: TimeSeries, node: int, k: int, entries) -> RegressionProblem:
    """Linear lag-k regression extended with one column per dictionary entry.

    Entries sharing a group id become one group appended after the linear
    ones; group ids must be contiguous from zero.  Raises
    DictionaryEvaluationError if an evaluator returns a non-finite value.
    """
    entries = list(entries)
    base = build_problem(data, node, k)
    if not entries:
        return base
    for e in entries:
        if e.lag_window > k:
            raise ValueError(f"entry '{e.label}': lag_window {e.lag_window} exceeds k={k}")
    gids = sorted({e.group_id for e in entries})
    if gids != list(range(len(gids))):
        raise ValueError("dictionary group ids must be contiguous from zero")

    ordered = sorted(range(len(entries)), key=lambda i: (entries[i].group_id, i))
    n_rows = base.n_rows
    cols = np.empty((n_rows, len(entries)))
    row_times = np.arange(data.T, k, -1)  # 1-based predicted times, descending
    for r, t in enumerate(row_times):
        y_lags = data.Y[:, t - 2 :: -1][:, :k] if t > 1 else np.zeros((data.p, k))
        u_lags = data.U[:, t - 2 :: -1][:, :k] if t > 1 else np.zeros((data.m, k))
        for c, ei in enumerate(ordered):
            entry = entries[ei]
            val = float(entry.evaluator(y_lags[:, : entry.lag_window], u_lags[:, : entry.lag_window]))
            if not math.isfinite(val):
                raise DictionaryEvaluationError(
                    f"entry '{entry.label}' returned {val!r} at row {r} (time {t})"
                )
            cols[r, c] = val

    lay = base.layout
    sizes = list(lay.sizes)
    sources = list(lay.sources)
    for gid in gids:
        members = [e for e in entries if e.group_id == gid]
        sizes.append(len(members))
        sources.append(("dict", gid))
    new_layout = GroupLayout(
        p=lay.p, m=lay.m, k=lay.k, sizes=tuple(sizes), sources=tuple(sources),
        self_index=lay.self_index,
    )
    return RegressionProblem(
        node=node, y=base.y, Phi=np.hstack([base.Phi, cols]), layout=new_layout
    )
