"""
Game Instance Model

Defines the data every solver consumes: a one-sided game (GameSpec), a
game with private information on both sides (GameSpecTwoSided), and a
bare table of the non-revealing value u (AbstractU) for instances whose
u is prescribed by its shape rather than by a payoff tensor.

Interchange Format (one JSON object per file):
- One-sided: states, actions1, actions2, payoff[s][a][b],
  rate{kind: "exogenous", matrix[s][s']} or rate{kind: "endogenous",
  tensor[s][s'][a][b]}, discount, initial_belief
- Two-sided: states1, states2, actions1, actions2, payoff[s1][s2][a][b],
  rate1[s][s'][a], rate2[s][s'][b] (a plain [s][s'] matrix is accepted and
  used for every action), discount, initial_belief1, initial_belief2
- Abstract u: u{grid_resolution, values}, optionally states, rate,
  discount and initial_belief so the bound and HJ solvers can run on it

Conventions:
1. Beliefs list the probability of each state in the order of `states`
2. Rates are per unit time, payoffs are dimensionless
3. Beliefs off by at most 1e-9 in total mass are renormalized on load,
   anything further off is rejected
4. Every instance is validated on construction and immutable afterwards
"""

import json
import math
import hashlib
import logging
import pathlib
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

BELIEF_RENORMALIZE_TOL = 1e-9
ROW_SUM_TOL = 1e-12
RATE_KINDS = ('exogenous', 'endogenous')


class SpecParseError(ValueError):
    """The spec file is not a JSON object."""


class SpecValidationError(ValueError):
    """One or more invariants of a game instance are violated."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class DimensionMismatchError(SpecValidationError):
    """At least one array has the wrong shape for the declared sets."""


class UnsupportedDimensionError(ValueError):
    """A grid solver was asked for more states than it handles."""


@dataclass(frozen=True)
class Violation:
    """A single failed invariant: the field and the rule it breaks."""
    field: str
    rule: str
    dimension: bool = False

    def __str__(self):
        return f"{self.field} {self.rule}"


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _raise_for(violations):
    if not violations:
        return
    if any(v.dimension for v in violations):
        raise DimensionMismatchError(violations)
    raise SpecValidationError(violations)


def _normalized_belief(belief):
    """Renormalize a belief whose mass is within round-off of one."""
    arr = np.array(belief, dtype=float)
    if arr.ndim == 1 and arr.size and np.all(np.isfinite(arr)):
        total = arr.sum()
        if total != 1.0 and abs(total - 1.0) <= BELIEF_RENORMALIZE_TOL and np.all(arr >= 0):
            logger.debug(f"Renormalizing belief with mass {total!r}")
            arr = arr / total
    return arr


# ---------------------------------------------------------------------------
# Invariant checks shared by documents and instances
# ---------------------------------------------------------------------------

def _check_labels(name, labels):
    violations = []
    if len(labels) < 1:
        violations.append(Violation(name, "must contain at least one label", dimension=True))
    seen = set()
    for label in labels:
        if label in seen:
            violations.append(Violation(name, f"contains duplicate label '{label}'"))
        seen.add(label)
    return violations


def _check_belief(name, belief, n):
    if belief.shape != (n,):
        return [Violation(name, f"has shape {belief.shape}, expected ({n},)", dimension=True)]
    if not np.all(np.isfinite(belief)):
        return [Violation(name, "contains non-finite entries")]
    violations = []
    for i in np.flatnonzero(belief < 0):
        violations.append(Violation(f"{name}[{i}]", f"is negative ({belief[i]:.12g})"))
    total = belief.sum()
    if abs(total - 1.0) > BELIEF_RENORMALIZE_TOL:
        violations.append(Violation(name, f"sums to {total:.12g}"))
    return violations


def _check_generator(name, R):
    """Check sign and row-sum conditions of R[s][s'][...] for every action index."""
    violations = []
    if not np.all(np.isfinite(R)):
        return [Violation(name, "contains non-finite entries")]
    n = R.shape[0]
    for idx in np.ndindex(*R.shape[2:]):
        block = R[(slice(None), slice(None)) + idx]
        suffix = "".join(f"[{i}]" for i in idx)
        tag = f" (actions {idx})" if idx else ""
        for s in range(n):
            for t in range(n):
                if s != t and block[s, t] < 0:
                    violations.append(Violation(f"{name}[{s}][{t}]{suffix}", f"is negative ({block[s, t]:.12g})"))
            row_sum = block[s].sum()
            scale = max(1.0, float(np.abs(block[s]).max()))
            if abs(row_sum) > ROW_SUM_TOL * scale:
                violations.append(Violation(name, f"row {s}{tag} sums to {row_sum:.12g}"))
    return violations


def _check_discount(discount):
    try:
        value = float(discount)
    except (TypeError, ValueError):
        return [Violation("discount", "must be a number")]
    if not math.isfinite(value) or value <= 0:
        return [Violation("discount", "must be positive")]
    return []


def _check_array(name, array, expected_shape):
    if array.shape != tuple(expected_shape):
        return [Violation(name, f"has shape {array.shape}, expected {tuple(expected_shape)}", dimension=True)]
    if not np.all(np.isfinite(array)):
        return [Violation(name, "contains non-finite entries")]
    return []


def _game_violations(states, actions1, actions2, payoff, rate_kind, rate_array, discount, belief):
    S, A, B = len(states), len(actions1), len(actions2)
    violations = []
    violations += _check_labels("states", states)
    violations += _check_labels("actions1", actions1)
    violations += _check_labels("actions2", actions2)
    violations += _check_array("payoff", payoff, (S, A, B))
    if rate_kind not in RATE_KINDS:
        violations.append(Violation("rate.kind", f"must be one of {list(RATE_KINDS)}, got '{rate_kind}'"))
    else:
        expected = (S, S) if rate_kind == 'exogenous' else (S, S, A, B)
        shape_issues = _check_array("rate", rate_array, expected)
        violations += shape_issues if shape_issues else _check_generator("rate", rate_array)
    violations += _check_discount(discount)
    violations += _check_belief("initial_belief", belief, S)
    return violations


def _two_sided_violations(states1, states2, actions1, actions2, payoff, rate1, rate2,
                          discount, belief1, belief2):
    S1, S2, A, B = len(states1), len(states2), len(actions1), len(actions2)
    violations = []
    violations += _check_labels("states1", states1)
    violations += _check_labels("states2", states2)
    violations += _check_labels("actions1", actions1)
    violations += _check_labels("actions2", actions2)
    violations += _check_array("payoff", payoff, (S1, S2, A, B))
    for name, R, shape in (("rate1", rate1, (S1, S1, A)), ("rate2", rate2, (S2, S2, B))):
        shape_issues = _check_array(name, R, shape)
        violations += shape_issues if shape_issues else _check_generator(name, R)
    violations += _check_discount(discount)
    violations += _check_belief("initial_belief1", belief1, S1)
    violations += _check_belief("initial_belief2", belief2, S2)
    return violations


def stage_weight(r, n):
    """lambda_n = 1 - exp(-r/n), the weight of one stage of length 1/n."""
    if n < 1:
        raise ValueError(f"Stage frequency must be at least 1, got {n}")
    return float(-math.expm1(-r / n))


def as_belief(p, n_states, name="belief"):
    """
    Coerce p to a belief vector over n_states states.

    A scalar is accepted for two states and read as the probability of the
    first state.

    Raises:
        DimensionMismatchError: If the length does not match n_states
        ValueError: If entries are negative or the mass is not one
    """
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.shape == (1,) and n_states == 2:
        arr = np.array([arr[0], 1.0 - arr[0]])
    if arr.shape != (n_states,):
        raise DimensionMismatchError([Violation(name, f"has {arr.size} entries, expected {n_states}", dimension=True)])
    arr = _normalized_belief(arr)
    violations = _check_belief(name, arr, n_states)
    if violations:
        raise ValueError("; ".join(str(v) for v in violations))
    return arr


def grid_point_count(n_states, resolution):
    """Number of points k/m with k in N^S and sum(k) = m."""
    return math.comb(resolution + n_states - 1, n_states - 1)


def _abstract_u_violations(resolution, values, states, rate_matrix, discount, belief):
    violations = []
    violations += _check_labels("states", states)
    if not isinstance(resolution, (int, np.integer)) or resolution < 1:
        violations.append(Violation("u.grid_resolution", "must be a positive integer"))
        return violations
    expected = grid_point_count(len(states), int(resolution))
    if values.ndim != 1 or values.size != expected:
        violations.append(Violation("u.values", f"has {values.size} entries, expected {expected}", dimension=True))
    elif not np.all(np.isfinite(values)):
        violations.append(Violation("u.values", "contains non-finite entries"))
    if rate_matrix is not None:
        S = len(states)
        shape_issues = _check_array("rate", rate_matrix, (S, S))
        violations += shape_issues if shape_issues else _check_generator("rate", rate_matrix)
    if discount is not None:
        violations += _check_discount(discount)
    if belief is not None:
        violations += _check_belief("initial_belief", belief, len(states))
    return violations


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateData:
    """Generator of the state chain, either fixed or indexed by the action pair.

    Attributes:
        kind (str): 'exogenous' (matrix R[s][s']) or 'endogenous'
            (tensor R[s][s'][a][b])
        matrix (np.ndarray): The generator for the exogenous kind
        tensor (np.ndarray): The action-indexed generators for the endogenous kind
    """
    kind: str
    matrix: np.ndarray = None
    tensor: np.ndarray = None

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise SpecValidationError([Violation("rate.kind", f"must be one of {list(RATE_KINDS)}, got '{self.kind}'")])
        if self.kind == 'exogenous':
            if self.matrix is None:
                raise SpecValidationError([Violation("rate.matrix", "is required for the exogenous kind")])
            object.__setattr__(self, 'matrix', _frozen(self.matrix))
            object.__setattr__(self, 'tensor', None)
        else:
            if self.tensor is None:
                raise SpecValidationError([Violation("rate.tensor", "is required for the endogenous kind")])
            object.__setattr__(self, 'tensor', _frozen(self.tensor))
            object.__setattr__(self, 'matrix', None)

    @classmethod
    def exogenous(cls, matrix):
        return cls('exogenous', matrix=matrix)

    @classmethod
    def endogenous(cls, tensor):
        return cls('endogenous', tensor=tensor)

    @property
    def array(self):
        return self.matrix if self.kind == 'exogenous' else self.tensor

    @property
    def n_states(self):
        return self.array.shape[0]

    def generator(self, a=None, b=None):
        """Generator under the action pair (a, b); the pair is ignored when exogenous."""
        if self.kind == 'exogenous':
            return self.matrix
        if a is None or b is None:
            raise ValueError("Endogenous rates need an action pair")
        return self.tensor[:, :, a, b]

    def as_tensor(self, n_actions1, n_actions2):
        """R[s][s'][a][b] for every action pair, broadcasting an exogenous matrix."""
        if self.kind == 'endogenous':
            return self.tensor
        return np.broadcast_to(self.matrix[:, :, None, None],
                               self.matrix.shape + (n_actions1, n_actions2))

    @property
    def is_zero(self):
        return not np.any(self.array)

    @property
    def max_exit_rate(self):
        """max over states and actions of |R(s,s)|."""
        diag = np.diagonal(self.array, axis1=0, axis2=1)
        return float(np.abs(diag).max()) if diag.size else 0.0

    def to_document(self):
        if self.kind == 'exogenous':
            return {"kind": self.kind, "matrix": self.matrix.tolist()}
        return {"kind": self.kind, "tensor": self.tensor.tolist()}


def _coerce_rate(rate):
    if isinstance(rate, RateData):
        return rate
    if isinstance(rate, dict):
        return RateData(rate.get('kind'), matrix=rate.get('matrix'), tensor=rate.get('tensor'))
    arr = np.asarray(rate, dtype=float)
    if arr.ndim == 2:
        return RateData.exogenous(arr)
    return RateData.endogenous(arr)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """A one-sided game: player 1 observes the chain, player 2 only sees actions.

    Attributes:
        states (tuple): Labels of S
        actions1 (tuple): Labels of A (maximizer)
        actions2 (tuple): Labels of B (minimizer)
        payoff (np.ndarray): g[s][a][b], payoff to player 1
        rate (RateData): Generator of the state chain
        discount (float): r > 0 per unit time
        initial_belief (np.ndarray): p over S

    Raises:
        SpecValidationError: If any invariant fails
        DimensionMismatchError: If an array does not fit the declared sets
    """
    states: tuple
    actions1: tuple
    actions2: tuple
    payoff: np.ndarray
    rate: RateData
    discount: float
    initial_belief: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'states', tuple(str(s) for s in self.states))
        object.__setattr__(self, 'actions1', tuple(str(a) for a in self.actions1))
        object.__setattr__(self, 'actions2', tuple(str(b) for b in self.actions2))
        object.__setattr__(self, 'payoff', _frozen(self.payoff))
        object.__setattr__(self, 'rate', _coerce_rate(self.rate))
        object.__setattr__(self, 'discount', float(self.discount))
        object.__setattr__(self, 'initial_belief', _frozen(_normalized_belief(self.initial_belief)))
        _raise_for(_game_violations(self.states, self.actions1, self.actions2, self.payoff,
                                    self.rate.kind, self.rate.array, self.discount,
                                    self.initial_belief))

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_actions1(self):
        return len(self.actions1)

    @property
    def n_actions2(self):
        return len(self.actions2)

    @property
    def is_exogenous(self):
        return self.rate.kind == 'exogenous'

    @property
    def max_abs_payoff(self):
        return float(np.abs(self.payoff).max())

    def rate_tensor(self):
        return self.rate.as_tensor(self.n_actions1, self.n_actions2)

    def with_belief(self, belief):
        """Same game started from another belief."""
        return GameSpec(self.states, self.actions1, self.actions2, self.payoff,
                        self.rate, self.discount, belief)


@dataclass(frozen=True, eq=False)
class GameSpecTwoSided:
    """A game where each player privately observes its own chain.

    Player 1 observes s1 (generator R1 indexed by its action a), player 2
    observes s2 (generator R2 indexed by its action b); the payoff
    g[s1][s2][a][b] goes to player 1.
    """
    states1: tuple
    states2: tuple
    actions1: tuple
    actions2: tuple
    payoff: np.ndarray
    rate1: np.ndarray
    rate2: np.ndarray
    discount: float
    initial_belief1: np.ndarray
    initial_belief2: np.ndarray

    def __post_init__(self):
        for name in ('states1', 'states2', 'actions1', 'actions2'):
            object.__setattr__(self, name, tuple(str(x) for x in getattr(self, name)))
        object.__setattr__(self, 'payoff', _frozen(self.payoff))
        n1, n2 = len(self.actions1), len(self.actions2)
        object.__setattr__(self, 'rate1', _frozen(_per_action(self.rate1, n1)))
        object.__setattr__(self, 'rate2', _frozen(_per_action(self.rate2, n2)))
        object.__setattr__(self, 'discount', float(self.discount))
        object.__setattr__(self, 'initial_belief1', _frozen(_normalized_belief(self.initial_belief1)))
        object.__setattr__(self, 'initial_belief2', _frozen(_normalized_belief(self.initial_belief2)))
        _raise_for(_two_sided_violations(self.states1, self.states2, self.actions1, self.actions2,
                                         self.payoff, self.rate1, self.rate2, self.discount,
                                         self.initial_belief1, self.initial_belief2))

    @property
    def n_states1(self):
        return len(self.states1)

    @property
    def n_states2(self):
        return len(self.states2)

    @property
    def n_actions1(self):
        return len(self.actions1)

    @property
    def n_actions2(self):
        return len(self.actions2)

    @property
    def max_abs_payoff(self):
        return float(np.abs(self.payoff).max())


def _per_action(rate, n_actions):
    """Accept R[s][s'] or R[s][s'][a]; return the per-action form."""
    arr = np.asarray(rate, dtype=float)
    if arr.ndim == 2:
        return np.repeat(arr[:, :, None], n_actions, axis=2)
    return arr


@dataclass(frozen=True, eq=False)
class AbstractU:
    """The non-revealing value u given directly as a table on a belief grid.

    Attributes:
        grid_resolution (int): m, the grid has points k/m with sum(k) = m
        values (np.ndarray): u at every grid point, in BeliefGrid order
        states (tuple): Labels of S (defaults to two states)
        rate (RateData): Optional exogenous generator for dynamic solvers
        discount (float): Optional r > 0
        initial_belief (np.ndarray): Optional default belief
    """
    grid_resolution: int
    values: np.ndarray
    states: tuple = ('s1', 's2')
    rate: RateData = None
    discount: float = None
    initial_belief: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, 'states', tuple(str(s) for s in self.states))
        object.__setattr__(self, 'values', _frozen(self.values))
        if self.rate is not None:
            rate = _coerce_rate(self.rate)
            if rate.kind != 'exogenous':
                raise SpecValidationError([Violation("rate.kind", "must be 'exogenous' for an abstract u")])
            object.__setattr__(self, 'rate', rate)
        if self.discount is not None:
            object.__setattr__(self, 'discount', float(self.discount))
        if self.initial_belief is not None:
            object.__setattr__(self, 'initial_belief', _frozen(_normalized_belief(self.initial_belief)))
        _raise_for(_abstract_u_violations(self.grid_resolution, self.values, self.states,
                                          None if self.rate is None else self.rate.matrix,
                                          self.discount, self.initial_belief))

    @property
    def n_states(self):
        return len(self.states)

    @property
    def has_dynamics(self):
        return self.rate is not None and self.discount is not None

    @property
    def max_abs_payoff(self):
        return float(np.abs(self.values).max())

    def require_dynamics(self):
        if not self.has_dynamics:
            missing = [name for name in ('rate', 'discount') if getattr(self, name) is None]
            raise ValueError(f"Abstract u is missing required fields: {missing}")


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------

def _document_kind(doc):
    if 'u' in doc:
        return 'abstract_u'
    if 'states1' in doc or 'states2' in doc:
        return 'two_sided'
    return 'game'


def _document_array(doc, key, violations, name=None):
    name = name or key
    if key not in doc:
        violations.append(Violation(name, "is required", dimension=True))
        return None
    try:
        return np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError):
        violations.append(Violation(name, "is not a rectangular numeric array", dimension=True))
        return None


def _document_labels(doc, key, violations):
    labels = doc.get(key)
    if not isinstance(labels, list):
        violations.append(Violation(key, "must be a list of labels", dimension=True))
        return None
    return [str(x) for x in labels]


def _document_violations(doc):
    kind = _document_kind(doc)
    violations = []
    if kind == 'abstract_u':
        u = doc['u']
        if not isinstance(u, dict):
            return [Violation("u", "must be an object with grid_resolution and values")]
        values = _document_array(u, 'values', violations, name="u.values")
        states = _document_labels(doc, 'states', violations) if 'states' in doc else ['s1', 's2']
        rate = None
        if 'rate' in doc:
            rate_doc = doc['rate']
            if not isinstance(rate_doc, dict) or rate_doc.get('kind', 'exogenous') != 'exogenous':
                violations.append(Violation("rate.kind", "must be 'exogenous' for an abstract u"))
            else:
                rate = _document_array(rate_doc, 'matrix', violations, name="rate.matrix")
        belief = _document_array(doc, 'initial_belief', violations) if 'initial_belief' in doc else None
        if values is None or states is None:
            return violations
        if belief is not None:
            belief = _normalized_belief(belief)
        return violations + _abstract_u_violations(u.get('grid_resolution'), values, states, rate,
                                                   doc.get('discount'), belief)

    if kind == 'two_sided':
        labels = [_document_labels(doc, key, violations)
                  for key in ('states1', 'states2', 'actions1', 'actions2')]
        arrays = [_document_array(doc, key, violations)
                  for key in ('payoff', 'rate1', 'rate2', 'initial_belief1', 'initial_belief2')]
        if any(x is None for x in labels + arrays):
            return violations
        payoff, rate1, rate2, b1, b2 = arrays
        rate1 = _per_action(rate1, len(labels[2])) if rate1.ndim == 2 else rate1
        rate2 = _per_action(rate2, len(labels[3])) if rate2.ndim == 2 else rate2
        return violations + _two_sided_violations(*labels, payoff, rate1, rate2, doc.get('discount'),
                                                  _normalized_belief(b1), _normalized_belief(b2))

    labels = [_document_labels(doc, key, violations) for key in ('states', 'actions1', 'actions2')]
    payoff = _document_array(doc, 'payoff', violations)
    belief = _document_array(doc, 'initial_belief', violations)
    rate_doc = doc.get('rate')
    rate_kind, rate_array = None, None
    if not isinstance(rate_doc, dict):
        violations.append(Violation("rate", "must be an object with kind and matrix or tensor", dimension=True))
    else:
        rate_kind = rate_doc.get('kind')
        key = 'tensor' if rate_kind == 'endogenous' else 'matrix'
        rate_array = _document_array(rate_doc, key, violations, name=f"rate.{key}")
    if 'discount' not in doc:
        violations.append(Violation("discount", "is required"))
    if any(x is None for x in labels) or payoff is None or belief is None or rate_array is None:
        return violations
    return violations + _game_violations(*labels, payoff, rate_kind, rate_array, doc.get('discount'),
                                         _normalized_belief(belief))


def validate(spec):
    """
    List every violated invariant of a spec instance or document.

    Args:
        spec: GameSpec, GameSpecTwoSided, AbstractU or the dict form of any of them

    Returns:
        list[Violation]: Empty iff every invariant holds; str(v) reads like
            "initial_belief sums to 1.2"
    """
    try:
        if isinstance(spec, (GameSpec, GameSpecTwoSided, AbstractU)):
            spec = to_document(spec)
        if not isinstance(spec, dict):
            return [Violation("document", f"must be a JSON object, got {type(spec).__name__}")]
        return _document_violations(spec)
    except Exception as e:
        logger.debug(f"Validation could not inspect document: {str(e)}")
        return [Violation("document", f"could not be inspected: {str(e)}")]


def to_document(spec):
    """Plain dict form of a spec, the same shape as the JSON interchange format."""
    if isinstance(spec, GameSpec):
        return {
            "states": list(spec.states),
            "actions1": list(spec.actions1),
            "actions2": list(spec.actions2),
            "payoff": spec.payoff.tolist(),
            "rate": spec.rate.to_document(),
            "discount": spec.discount,
            "initial_belief": spec.initial_belief.tolist(),
        }
    if isinstance(spec, GameSpecTwoSided):
        return {
            "states1": list(spec.states1),
            "states2": list(spec.states2),
            "actions1": list(spec.actions1),
            "actions2": list(spec.actions2),
            "payoff": spec.payoff.tolist(),
            "rate1": spec.rate1.tolist(),
            "rate2": spec.rate2.tolist(),
            "discount": spec.discount,
            "initial_belief1": spec.initial_belief1.tolist(),
            "initial_belief2": spec.initial_belief2.tolist(),
        }
    if isinstance(spec, AbstractU):
        doc = {
            "u": {"grid_resolution": int(spec.grid_resolution), "values": spec.values.tolist()},
            "states": list(spec.states),
        }
        if spec.rate is not None:
            doc["rate"] = spec.rate.to_document()
        if spec.discount is not None:
            doc["discount"] = spec.discount
        if spec.initial_belief is not None:
            doc["initial_belief"] = spec.initial_belief.tolist()
        return doc
    raise TypeError(f"Unsupported spec type: {type(spec).__name__}")


def from_document(doc):
    """
    Build a typed instance from the dict form.

    Raises:
        SpecParseError: If doc is not a dict
        SpecValidationError: If any invariant is violated
        DimensionMismatchError: If any violation is a shape mismatch
    """
    if not isinstance(doc, dict):
        raise SpecParseError(f"Spec document must be a JSON object, got {type(doc).__name__}")
    _raise_for(_document_violations(doc))

    kind = _document_kind(doc)
    if kind == 'abstract_u':
        return AbstractU(
            grid_resolution=int(doc['u']['grid_resolution']),
            values=doc['u']['values'],
            states=doc.get('states', ('s1', 's2')),
            rate=doc.get('rate'),
            discount=doc.get('discount'),
            initial_belief=doc.get('initial_belief'),
        )
    if kind == 'two_sided':
        return GameSpecTwoSided(
            states1=doc['states1'], states2=doc['states2'],
            actions1=doc['actions1'], actions2=doc['actions2'],
            payoff=doc['payoff'], rate1=doc['rate1'], rate2=doc['rate2'],
            discount=doc['discount'],
            initial_belief1=doc['initial_belief1'], initial_belief2=doc['initial_belief2'],
        )
    return GameSpec(
        states=doc['states'], actions1=doc['actions1'], actions2=doc['actions2'],
        payoff=doc['payoff'], rate=doc['rate'], discount=doc['discount'],
        initial_belief=doc['initial_belief'],
    )


def load_spec(path):
    """
    Load and validate a game instance from a JSON file.

    Args:
        path (str or pathlib.Path): Path to the JSON document

    Returns:
        GameSpec, GameSpecTwoSided or AbstractU

    Raises:
        FileNotFoundError: If the file does not exist
        SpecParseError: If the file is not a JSON object
        SpecValidationError: If any invariant is violated
    """
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    if path.is_dir():
        raise ValueError(f"Path is a directory: {path}")

    logger.info(f"Loading spec from {path}")
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise SpecParseError(f"Malformed spec file {path}: {str(e)}")

    spec = from_document(doc)
    logger.debug(f"Loaded {type(spec).__name__} from {path}")
    return spec


def save_spec(spec, path):
    """Write spec as JSON; floats use their shortest repr so reloads are bit-exact."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(to_document(spec), fh, indent=2)
        fh.write("\n")
    logger.info(f"Spec written to {path}")
    return path


def spec_hash(spec):
    """SHA-256 of the canonical document, stable across runs and machines."""
    canonical = json.dumps(to_document(spec), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def swap_players(spec):
    """
    Exchange the roles of the two players of a two-sided game.

    The new maximizer is the old minimizer: it observes the old second chain
    and receives -g. Values satisfy v'(p2, p1) = -v(p1, p2).
    """
    if not isinstance(spec, GameSpecTwoSided):
        raise TypeError("swap_players expects a GameSpecTwoSided")
    return GameSpecTwoSided(
        states1=spec.states2, states2=spec.states1,
        actions1=spec.actions2, actions2=spec.actions1,
        payoff=-np.transpose(spec.payoff, (1, 0, 3, 2)),
        rate1=spec.rate2, rate2=spec.rate1,
        discount=spec.discount,
        initial_belief1=spec.initial_belief2, initial_belief2=spec.initial_belief1,
    )


def explicit_example(r=1.0, pi=1.0, p=0.5):
    """
    Two-state game with a closed-form limit value.

    Payoffs [[1,0],[0,0]] in s1 and [[0,0],[0,1]] in s2, states switching at
    rate pi, so u(p) = p(1-p) where p is the probability of s1.
    """
    return GameSpec(
        states=('s1', 's2'),
        actions1=('a1', 'a2'),
        actions2=('b1', 'b2'),
        payoff=[[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]],
        rate=RateData.exogenous([[-pi, pi], [pi, -pi]]),
        discount=r,
        initial_belief=[p, 1.0 - p],
    )


def counterexample_curve(p, curvature=0.5):
    """u(0)=u(1)=0, u=1 on [1/3, 2/3], strictly convex on the outer thirds."""
    p = np.asarray(p, dtype=float)
    left = 3.0 * p * (1.0 - curvature * (1.0 - 3.0 * p))
    q = 1.0 - p
    right = 3.0 * q * (1.0 - curvature * (1.0 - 3.0 * q))
    return np.where(p <= 1.0 / 3.0, left, np.where(p >= 2.0 / 3.0, right, 1.0))


def counterexample_u(resolution=300, curvature=0.5, rho12=1.0, rho21=1.0, discount=1.0, p=0.1):
    """
    Two-state abstract u whose limit value is strictly below the cav u bound.

    Args:
        resolution (int): Grid resolution m; multiples of 3 put 1/3 and 2/3 on the grid
        curvature (float): c in (0, 1], convexity of the outer pieces 3p(1 - c(1 - 3p))
        rho12, rho21 (float): Switching rates of the chain
        discount (float): r
        p (float): Initial probability of s1
    """
    if not 0 < curvature <= 1:
        raise ValueError(f"curvature must lie in (0, 1], got {curvature}")
    grid = np.arange(resolution + 1) / resolution
    return AbstractU(
        grid_resolution=resolution,
        values=counterexample_curve(grid, curvature),
        states=('s1', 's2'),
        rate=RateData.exogenous([[-rho12, rho12], [rho21, -rho21]]),
        discount=discount,
        initial_belief=[p, 1.0 - p],
    )
