"""The latent parameter state shared by the prior, posterior and sampler."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .var_core import TransitionStack


class SupportError(ValueError):
    """A state component lies outside its support."""

    def __init__(self, component: str, message: str = ""):
        super().__init__(f"{component}: {message or 'outside support'}")
        self.component = component


@dataclass(frozen=True)
class ParamState:
    """Coefficients plus every scale, tree and noise parameter of the model.

    ``u`` has shape ``(m, p, p)`` (symmetric, diagonal ignored), ``W`` is
    ``(p, p_star)`` and ``Zstar`` is ``(N, p_star)``.
    """

    C: TransitionStack
    r: np.ndarray
    s: np.ndarray
    u: np.ndarray
    W: np.ndarray
    Zstar: np.ndarray
    sigma2: float

    def __post_init__(self):
        if not isinstance(self.C, TransitionStack):
            object.__setattr__(self, "C", TransitionStack(self.C))
        for name in ("r", "s", "u", "W", "Zstar"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def d(self) -> int:
        return self.C.d

    @property
    def p(self) -> int:
        return self.C.p

    @property
    def m(self) -> int:
        return self.s.shape[0]

    @property
    def p_star(self) -> int:
        return self.W.shape[1]

    @property
    def N(self) -> int:
        return self.Zstar.shape[0]

    def noise_cov(self) -> np.ndarray:
        return self.W @ self.W.T + self.sigma2 * np.eye(self.p)

    def with_(self, **changes) -> "ParamState":
        return replace(self, **changes)

    def check_support(self) -> None:
        if self.r.shape != (self.d,) or np.any(~(self.r > 0)) or not np.all(np.isfinite(self.r)):
            raise SupportError("r", "lag scales must be positive and finite")
        if np.any(self.s < 0) or abs(self.s.sum() - 1.0) > 1e-10:
            raise SupportError("s", "tree weights must lie on the simplex")
        if self.u.shape != (self.m, self.p, self.p):
            raise SupportError("u", f"expected shape {(self.m, self.p, self.p)}, got {self.u.shape}")
        iu = np.triu_indices(self.p, 1)
        ue = self.u[:, iu[0], iu[1]]
        if np.any(~(ue > 0)) or np.any(~(ue < 1)):
            raise SupportError("u", "tree weights must lie in (0, 1)")
        if not np.allclose(self.u, np.transpose(self.u, (0, 2, 1))):
            raise SupportError("u", "tree weight matrices must be symmetric")
        if self.W.shape[0] != self.p or self.Zstar.shape[1] != self.W.shape[1]:
            raise SupportError("W", "factor loadings and latent factors disagree in shape")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.Zstar))):
            raise SupportError("W", "non-finite factor entries")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise SupportError("sigma2", "noise variance must be positive")
