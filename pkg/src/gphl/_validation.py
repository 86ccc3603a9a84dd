"""Error types, argument checks and the memory budget shared by all modules."""

from __future__ import annotations

import math
import os

import numpy as np

DEFAULT_MEM_BUDGET = 4 * 1024**3
MEM_ENV = "GPHL_MEM_BUDGET_BYTES"


class GPHLError(Exception):
    """Base class. `exit_code` is what the CLI returns for this failure."""

    exit_code = 4
    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self), "exit_code": self.exit_code}


class DomainError(GPHLError, ValueError):
    exit_code = 2
    kind = "domain"


class SchemaError(GPHLError, ValueError):
    exit_code = 2
    kind = "schema"


class MemoryBudgetError(GPHLError, MemoryError):
    exit_code = 3
    kind = "memory"

    def __init__(self, what, required, budget):
        self.required = int(required)
        self.budget = int(budget)
        super().__init__(f"{what} needs {self.required} bytes, budget is {self.budget} bytes")

    def to_dict(self):
        d = super().to_dict()
        d.update(required_bytes=self.required, budget_bytes=self.budget)
        return d


class SizeRefusal(GPHLError):
    exit_code = 3
    kind = "size"


class NumericalError(GPHLError, ArithmeticError):
    exit_code = 4
    kind = "numerical"


class ConvergenceError(NumericalError):
    kind = "convergence"


class InsufficientDataError(NumericalError):
    kind = "insufficient_data"


class SingularDressingError(NumericalError):
    kind = "singular_dressing"


class DivergenceError(NumericalError):
    kind = "divergence"


def memory_budget(budget=None):
    """Budget in bytes: env var beats the explicit value, which beats the default."""
    env = os.environ.get(MEM_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"{MEM_ENV} must be an integer byte count, got {env!r}")
    if budget is not None:
        return int(budget)
    return DEFAULT_MEM_BUDGET


def check_budget(nbytes, what, budget=None):
    b = memory_budget(budget)
    if nbytes > b:
        raise MemoryBudgetError(what, nbytes, b)
    return nbytes


def check_positive(name, value, strict=True):
    v = float(value)
    if not math.isfinite(v) or (v <= 0 if strict else v < 0):
        raise DomainError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value!r}")
    return v


def check_beta(beta):
    b = float(beta)
    if not (0.0 < b <= 1.0):
        raise DomainError(f"beta must lie in (0, 1], got {beta!r}")
    return b


def check_count(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def is_dyadic(M):
    """True for M = 2^l with l >= 0 an integer."""
    try:
        m = float(M)
    except (TypeError, ValueError):
        return False
    if not math.isfinite(m) or m < 1:
        return False
    mant, _ = math.frexp(m)
    return mant == 0.5


def check_dyadic(name, M):
    if not is_dyadic(M):
        raise DomainError(f"{name} must be a dyadic number 2^l with l >= 0, got {M!r}")
    return int(round(math.log2(float(M))))


def as_complex(a, name="array"):
    arr = np.asarray(a)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr.astype(np.complex128, copy=False)
