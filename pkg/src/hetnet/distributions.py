"""Distribution algebra for entrance/exit fluctuation laws.

The predictor only ever needs a handful of exact operations on laws: linear
pushforward, independent sums, sign conditioning of a designated scalar, and
power-law transforms of that scalar.  Each variant below supports vectorized
sampling via ``draw(rng, n)`` and carries a symmetry tag used for the
analytic fast paths:

* ``symmetric``            -- X and -X equidistributed;
* ``strongly-asymmetric``  -- every draw is a positive multiple of one fixed
  direction vector (a ray), so any linear functional that does not vanish on
  that direction has a.s. constant sign;
* ``general``              -- no structure claimed; Monte Carlo only.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Distribution",
    "Dirac",
    "Gaussian",
    "Pushforward",
    "Sum",
    "Empirical",
    "HalfLine",
    "SYMMETRIC",
    "ASYMMETRIC",
    "GENERAL",
]

SYMMETRIC = "symmetric"
ASYMMETRIC = "strongly-asymmetric"
GENERAL = "general"


class Distribution:
    """Base class; subclasses implement ``draw`` and set ``symmetry``."""

    symmetry = GENERAL
    dim = None

    # a ray distribution: draws == (positive scalar) * ray_direction
    ray_direction = None

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean_estimate(self, rng, n=20000):
        return self.draw(rng, n).mean(axis=0)


class Dirac(Distribution):
    def __init__(self, point):
        self.point = np.atleast_1d(np.asarray(point, dtype=float))
        self.dim = self.point.shape[0]
        if np.all(self.point == 0.0):
            self.symmetry = SYMMETRIC
        else:
            self.symmetry = ASYMMETRIC
            self.ray_direction = self.point.copy()

    def draw(self, rng, n):
        return np.tile(self.point, (n, 1))

    def __repr__(self):
        return f"Dirac({self.point})"


class Gaussian(Distribution):
    """Centered-or-not Gaussian; covariance must be symmetric PSD."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.dim = self.mean.shape[0]
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        w, v = np.linalg.eigh(0.5 * (self.cov + self.cov.T))
        if np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
            raise ValueError("covariance must be positive semidefinite")
        self._factor = v * np.sqrt(np.clip(w, 0.0, None))
        self.symmetry = SYMMETRIC if np.all(self.mean == 0.0) else GENERAL

    def draw(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._factor.T

    def __repr__(self):
        return f"Gaussian(dim={self.dim})"


class Pushforward(Distribution):
    """Image of a law under a (possibly rectangular) matrix."""

    def __init__(self, matrix, base: Distribution):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.base = base
        self.dim = self.matrix.shape[0]
        if base.symmetry == SYMMETRIC:
            self.symmetry = SYMMETRIC
        elif base.ray_direction is not None:
            direction = self.matrix @ base.ray_direction
            if np.linalg.norm(direction) > 0:
                self.symmetry = ASYMMETRIC
                self.ray_direction = direction
            else:
                self.symmetry = GENERAL
        else:
            self.symmetry = base.symmetry

    def draw(self, rng, n):
        return self.base.draw(rng, n) @ self.matrix.T

    def __repr__(self):
        return f"Pushforward({self.matrix.shape}, {self.base!r})"


class Sum(Distribution):
    """Sum of independent laws (components drawn from the same rng stream)."""

    def __init__(self, parts):
        self.parts = [p for p in parts if p is not None]
        if not self.parts:
            raise ValueError("empty sum")
        self.dim = self.parts[0].dim
        if all(p.symmetry == SYMMETRIC for p in self.parts):
            self.symmetry = SYMMETRIC
        elif len(self.parts) == 1:
            self.symmetry = self.parts[0].symmetry
            self.ray_direction = self.parts[0].ray_direction
        else:
            nontrivial = [p for p in self.parts if not _is_zero_dirac(p)]
            if len(nontrivial) == 1:
                self.symmetry = nontrivial[0].symmetry
                self.ray_direction = nontrivial[0].ray_direction
            else:
                self.symmetry = GENERAL

    def draw(self, rng, n):
        out = self.parts[0].draw(rng, n)
        for p in self.parts[1:]:
            out = out + p.draw(rng, n)
        return out

    def __repr__(self):
        return f"Sum({self.parts!r})"


def _is_zero_dirac(p):
    return isinstance(p, Dirac) and np.all(p.point == 0.0)


class Empirical(Distribution):
    def __init__(self, samples, symmetry=GENERAL):
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))
        self.dim = self.samples.shape[1]
        self.symmetry = symmetry

    def draw(self, rng, n):
        idx = rng.integers(0, self.samples.shape[0], size=n)
        return self.samples[idx]

    def __repr__(self):
        return f"Empirical(n={self.samples.shape[0]}, dim={self.dim})"


class HalfLine(Distribution):
    """Sign-conditioned exit fluctuation built from a kappa law.

    Draws kappa = (kappa^1, ..., kappa^{nu-1}) conditioned on
    sgn(kappa^1) = ``sign`` by rejection, then assembles

        sum over terms of  scale * |kappa^1|^exponent * factor * direction

    where ``factor`` is 1 (stable-coordinate term, constant coefficient
    already folded into ``scale``) or kappa^2 (second-coordinate term), plus
    an optional independent Gaussian embedded in the listed coordinates.
    All directions live in the local chart of the saddle that produced the
    exit; dimension is the chart dimension.

    A term list with a single constant-factor term and no Gaussian is a ray:
    a.s. positive multiples of scale * direction.
    """

    def __init__(self, base, sign, terms, dim, gauss_cov=None, gauss_coords=None,
                 max_tries=200):
        self.base = base
        self.sign = int(sign)
        self.terms = list(terms)  # (scale, exponent, use_kappa2, direction)
        self.dim = dim
        self.gauss = None
        self.gauss_coords = None
        if gauss_cov is not None:
            self.gauss = Gaussian(np.zeros(len(gauss_coords)), gauss_cov)
            self.gauss_coords = np.asarray(gauss_coords, dtype=int)
        self.max_tries = max_tries

        if not self.terms and self.gauss is not None:
            self.symmetry = SYMMETRIC
        elif (
            len(self.terms) == 1
            and not self.terms[0][2]
            and self.gauss is None
        ):
            self.symmetry = ASYMMETRIC
            scale, _, _, direction = self.terms[0]
            self.ray_direction = scale * np.asarray(direction, dtype=float)
        else:
            self.symmetry = GENERAL

    def draw_kappa(self, rng, n):
        """Rejection-sample the kappa law conditioned on the sign of kappa^1."""
        out = np.empty((n, self.base.dim))
        got = 0
        for _ in range(self.max_tries):
            block = self.base.draw(rng, max(n, 256))
            keep = block[np.sign(block[:, 0]) == self.sign]
            take = min(n - got, keep.shape[0])
            out[got : got + take] = keep[:take]
            got += take
            if got == n:
                return out
        raise RuntimeError(
            f"sign conditioning on sgn(kappa^1)={self.sign:+d} kept too few draws; "
            "branch probability is (numerically) zero"
        )

    def draw(self, rng, n):
        out = np.zeros((n, self.dim))
        if self.terms:
            kap = self.draw_kappa(rng, n)
            a1 = np.abs(kap[:, 0])
            for scale, exponent, use_kappa2, direction in self.terms:
                coef = scale * a1**exponent
                if use_kappa2:
                    coef = coef * kap[:, 1]
                out += coef[:, None] * np.asarray(direction, dtype=float)
        if self.gauss is not None:
            g = self.gauss.draw(rng, n)
            out[:, self.gauss_coords] += g
        return out

    def __repr__(self):
        kinds = ["eta+" if t[2] else "eta-" for t in self.terms]
        if self.gauss is not None:
            kinds.append("N")
        return f"HalfLine({'+'.join(kinds) or '0'}, sign={self.sign:+d})"
