"""Value types shared by the estimator, diagnostics, simulation and CLI."""

import math
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Input data or configuration violates a model invariant.

    ``errors`` lists every violation found, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupedData:
    """N observation matrices over the same p variables."""

    groups: tuple
    variable_names: tuple = None
    group_names: tuple = None

    def __post_init__(self):
        groups = tuple(_frozen(np.atleast_2d(g)) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        p = groups[0].shape[1] if groups else 0
        if self.variable_names is None:
            object.__setattr__(self, "variable_names", tuple(f"V{j + 1}" for j in range(p)))
        else:
            object.__setattr__(self, "variable_names", tuple(str(v) for v in self.variable_names))
        if self.group_names is None:
            object.__setattr__(self, "group_names", tuple(str(g + 1) for g in range(len(groups))))
        else:
            object.__setattr__(self, "group_names", tuple(str(v) for v in self.group_names))

    @property
    def N(self):
        return len(self.groups)

    @property
    def p(self):
        return self.groups[0].shape[1]

    @property
    def sizes(self):
        return tuple(g.shape[0] for g in self.groups)

    def stacked(self):
        """All rows in group order, plus the 0-based group index of each row."""
        X = np.vstack(self.groups)
        gid = np.repeat(np.arange(self.N), self.sizes)
        return X, gid

    def with_groups(self, groups):
        return GroupedData(groups, self.variable_names, self.group_names)


@dataclass(frozen=True)
class CellMask:
    """Per-group boolean matrices; ``True`` marks an observed (unflagged) cell."""

    masks: tuple

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(_frozen(m, bool) for m in self.masks))

    @classmethod
    def ones(cls, sizes, p):
        return cls(tuple(np.ones((n, p), dtype=bool) for n in sizes))

    @classmethod
    def from_stacked(cls, W, sizes):
        cuts = np.cumsum(sizes)[:-1]
        return cls(tuple(np.split(np.asarray(W, dtype=bool), cuts)))

    def stacked(self):
        return np.vstack(self.masks)

    def column_sums(self):
        return np.array([m.sum(axis=0) for m in self.masks])

    def n_flagged(self):
        return int(sum((~m).sum() for m in self.masks))


@dataclass(frozen=True)
class RegularizationSpec:
    """Diagonal targets ``target[k]``, mixing weights ``rho[k]`` and condition bounds ``kappa[k]``."""

    target: np.ndarray
    rho: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", _frozen(self.target))
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "kappa", _frozen(self.kappa))

    def apply(self, sigma):
        """Regularized covariances ``(1 - rho) * sigma + rho * target``."""
        rho = self.rho[:, None, None]
        return (1.0 - rho) * np.asarray(sigma) + rho * self.target


@dataclass(frozen=True)
class MixtureParams:
    pi: np.ndarray  # (N, N), row g = mixture weights of group g
    mu: np.ndarray  # (N, p)
    sigma: np.ndarray  # (N, p, p)
    sigma_reg: np.ndarray  # (N, p, p)
    reg: RegularizationSpec

    def __post_init__(self):
        for name in ("pi", "mu", "sigma", "sigma_reg"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def N(self):
        return self.pi.shape[0]

    @property
    def p(self):
        return self.mu.shape[1]


@dataclass(frozen=True)
class PenaltyMatrix:
    """Per-cell flagging costs, one (n_g, p) matrix per group."""

    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(_frozen(m) for m in self.q))

    def stacked(self):
        return np.vstack(self.q)


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component probabilities, one (n_g, N) matrix per group."""

    t: tuple

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(_frozen(m) for m in self.t))

    @classmethod
    def from_stacked(cls, T, sizes):
        cuts = np.cumsum(sizes)[:-1]
        return cls(tuple(np.split(np.asarray(T), cuts)))

    def stacked(self):
        return np.vstack(self.t)


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings.

    ``h`` overrides the per-group minimum number of observed cells per
    variable; when ``None`` it is ``ceil(h_fraction * n_g)``. ``penalty``,
    when given, is used as-is on the internal (robustly standardized) scale
    instead of being derived from the initial estimates. With
    ``condition_bound`` each EM update is shrunk toward the target whenever
    its regularized covariance would exceed the condition bound.
    """

    alpha: float = 0.75
    h: tuple = None
    h_fraction: float = 0.75
    eps_conv: float = 1e-4
    max_iter: int = 100
    penalty: PenaltyMatrix = None
    seed: int = 0
    condition_bound: bool = True

    def resolve_h(self, sizes):
        if self.h is not None:
            return tuple(int(v) for v in self.h)
        return tuple(int(math.ceil(self.h_fraction * n)) for n in sizes)


@dataclass(frozen=True)
class Standardization:
    """Per-variable robust center and scale used internally by the fit."""

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "scale", _frozen(self.scale))

    def transform(self, X):
        return (np.asarray(X) - self.center) / self.scale

    def inverse_params(self, params):
        """Map parameters fitted on standardized data back to the data scale."""
        s = self.scale
        outer = np.outer(s, s)
        reg = RegularizationSpec(params.reg.target * outer, params.reg.rho, params.reg.kappa)
        return MixtureParams(
            pi=params.pi,
            mu=params.mu * s + self.center,
            sigma=params.sigma * outer,
            sigma_reg=params.sigma_reg * outer,
            reg=reg,
        )


@dataclass(frozen=True)
class FitResult:
    """Output of :func:`cellmggmm.estimator.fit`.

    ``params`` are on the original data scale. ``objective_trace`` and
    ``penalty`` refer to the internal standardized problem; ``reg.kappa`` is
    the condition bound that was imposed on that scale.
    """

    params: MixtureParams
    mask: CellMask
    resp: Responsibilities
    objective_trace: tuple
    iterations: int
    converged: bool
    standardization: Standardization
    penalty: PenaltyMatrix = None
    alpha: float = None
    h: tuple = field(default=None)


def validate(data, cfg):
    """Check every data/config invariant; raise :class:`ValidationError` listing all violations."""
    errors = []
    if data.N < 1:
        raise ValidationError(["at least one group is required"])
    p = data.groups[0].shape[1]
    if p < 1:
        errors.append("data must have at least one variable")
    for g, X in enumerate(data.groups):
        if X.ndim != 2 or X.shape[1] != p:
            errors.append(f"group {g} has {X.shape[-1]} variables, expected {p}")
            continue
        if X.shape[0] < 2:
            errors.append(f"group {g} has {X.shape[0]} observations, need at least 2")
        for i, j in zip(*np.nonzero(~np.isfinite(X))):
            errors.append(f"non-finite entry at (g={g}, i={i}, j={j})")
    if len(data.variable_names) != p:
        errors.append(f"{len(data.variable_names)} variable names for {p} variables")
    if len(data.group_names) != data.N:
        errors.append(f"{len(data.group_names)} group names for {data.N} groups")

    if not np.isfinite(cfg.alpha) or cfg.alpha < 0.5:
        errors.append(f"alpha below 0.5 (got {cfg.alpha})")
    elif cfg.alpha > 1:
        errors.append(f"alpha above 1 (got {cfg.alpha})")
    if not cfg.eps_conv > 0:
        errors.append(f"eps_conv must be positive (got {cfg.eps_conv})")
    if int(cfg.max_iter) < 1:
        errors.append(f"max_iter must be at least 1 (got {cfg.max_iter})")

    sizes = data.sizes
    if cfg.h is not None and len(cfg.h) != data.N:
        errors.append(f"h has {len(cfg.h)} entries for {data.N} groups")
    else:
        for g, (hg, n) in enumerate(zip(cfg.resolve_h(sizes), sizes)):
            if not math.ceil(0.5 * n) <= hg <= n:
                errors.append(f"h for group {g} is {hg}, must lie in [{math.ceil(0.5 * n)}, {n}]")

    if cfg.penalty is not None:
        q = cfg.penalty.q
        if len(q) != data.N:
            errors.append(f"penalty has {len(q)} groups, expected {data.N}")
        else:
            for g, (m, n) in enumerate(zip(q, sizes)):
                if m.shape != (n, p):
                    errors.append(f"penalty for group {g} has shape {m.shape}, expected {(n, p)}")
                elif not (np.all(np.isfinite(m)) and np.all(m >= 0)):
                    errors.append(f"penalty for group {g} has negative or non-finite entries")
    if errors:
        raise ValidationError(errors)
