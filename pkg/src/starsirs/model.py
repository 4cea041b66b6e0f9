"""Process parameters, states and the lumped star transition rates."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Variant(str, enum.Enum):
    """Which vertices receive immunity after recovering.

    ``X`` is the SIRS process, ``Y`` gives immunity to the root only, and
    ``SIS`` has no immune state at all.
    """

    X = "x"
    Y = "y"
    SIS = "sis"

    @property
    def code(self) -> int:
        return _VARIANT_CODES[self]

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected x, y or sis") from None


_VARIANT_CODES = {Variant.X: 0, Variant.Y: 1, Variant.SIS: 2}


class VertexState(enum.IntEnum):
    S = 0
    I = 1
    R = 2


@dataclass(frozen=True)
class ProcessParams:
    n: int
    lam: float
    alpha: float = 1.0
    variant: Variant = Variant.X

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if self.variant is not Variant.SIS and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    def as_dict(self) -> dict:
        return {"n": self.n, "lambda": self.lam, "alpha": self.alpha,
                "variant": self.variant.value}


@dataclass(frozen=True)
class StarState:
    """Lumped star configuration: root state plus leaf counts.

    ``recovered`` stays 0 for the Y and SIS variants.
    """

    root: VertexState
    infected: int
    recovered: int = 0
    time: float = 0.0

    def check(self, n: int) -> None:
        if self.infected < 0 or self.recovered < 0 or self.infected + self.recovered > n:
            raise ValueError(f"invalid leaf counts for n={n}: {self}")

    @property
    def absorbed(self) -> bool:
        return self.infected == 0 and self.root != VertexState.I


@dataclass(frozen=True)
class SurvivalSample:
    tau: float
    psi: int
    events: int
    min_non_immune_fraction: float
    censored: bool = False


# transition kinds of the lumped chain
ROOT_RECOVERY = "root_recovery"
ROOT_DEIMMUNIZATION = "root_deimmunization"
ROOT_REINFECTION = "root_reinfection"
LEAF_INFECTION = "leaf_infection"
LEAF_RECOVERY = "leaf_recovery"
LEAF_DEIMMUNIZATION = "leaf_deimmunization"


def star_transition_rates(state: StarState, params: ProcessParams) -> list[tuple[str, float]]:
    """Exit rates of the lumped chain from ``state``.

    Rates for transitions that cannot occur in ``params.variant`` are left
    out; zero rates of structurally possible transitions are kept.
    """
    n, lam, alpha = params.n, params.lam, params.alpha
    state.check(n)
    i, r = state.infected, state.recovered
    has_leaf_immunity = params.variant is Variant.X
    if not has_leaf_immunity and r:
        raise ValueError(f"variant {params.variant.value} cannot have recovered leaves")
    rates = []
    if state.root == VertexState.I:
        rates.append((ROOT_RECOVERY, 1.0))
        rates.append((LEAF_INFECTION, lam * (n - i - r)))
    elif state.root == VertexState.R:
        if params.variant is Variant.SIS:
            raise ValueError("SIS root cannot be recovered")
        rates.append((ROOT_DEIMMUNIZATION, alpha))
    else:
        rates.append((ROOT_REINFECTION, lam * i))
    rates.append((LEAF_RECOVERY, float(i)))
    if has_leaf_immunity:
        rates.append((LEAF_DEIMMUNIZATION, alpha * r))
    return rates
