"""Entrance-exit maps at saddles, recursion over admissible sequences,
branch probabilities, sequence-set classification, and exit-measure
prediction.

The central object is the asymptotic Poincare map ``psi``: given an entrance
triple (point, alpha, law) at a saddle it produces, for each of the two
outgoing branches, the rescaled dwell time, the branch probability, the
downstream landing point, the exit scaling exponent and the exit fluctuation
law.  Iterating ``psi`` over the binary tree of branch choices assigns a
limiting probability pi to every admissible sequence of saddles.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import flow
from .distributions import (
    ASYMMETRIC,
    GENERAL,
    SYMMETRIC,
    Dirac,
    Distribution,
    Gaussian,
    HalfLine,
    Pushforward,
    Sum,
)
from .flow import EntranceData
from .network import NetworkSpec, chart_to_local

__all__ = [
    "InvalidEntranceError",
    "ExitData",
    "BetaCase",
    "AdmissibleSequence",
    "ExitMeasure",
    "stable_cov",
    "unstable_cov",
    "kappa_dist",
    "beta_exponent",
    "exit_distribution",
    "split_probabilities",
    "psi",
    "enumerate_sequences",
    "classify_set",
    "exit_measure",
    "dwell_fluctuation_samples",
]

N_KAPPA = 100_000
_EQ_RTOL = 1e-9
_ATOM_EPS = 1e-12
_ATOM_FRAC = 1e-3


class InvalidEntranceError(ValueError):
    """Entrance data violates the admissibility (nondegeneracy) conditions."""


@dataclass
class ExitData:
    """One branch of the exit tuple produced at a saddle.

    ``F`` is the exit fluctuation law at the moment the process leaves the
    saddle box (ambient tangent coordinates in concrete mode, local chart
    coordinates in abstract mode); transport along the outgoing connection is
    a separate step (``flow.pushforward_connection``).  ``x`` is the landing
    point: the entry point of the next saddle box, or the exit-leaf point.
    """

    t: float
    p: float
    x: Optional[np.ndarray]
    beta: float
    F: Optional[Distribution]
    sign: int
    case: "BetaCase"
    p_stderr: float = 0.0


@dataclass(frozen=True)
class BetaCase:
    branch: int  # 1..4, the four exponent regimes
    boundary: bool  # equality subcase
    components: tuple  # subset of ("N", "eta-", "eta+")

    def __str__(self):
        b = "=" if self.boundary else ""
        return f"case{self.branch}{b}:{'+'.join(self.components)}"


@dataclass
class AdmissibleSequence:
    root: str
    steps: list  # [(saddle_id, sign), ...]
    pi: float
    dwell: list
    alphas: list
    betas: list
    tags: list
    probs: list
    terminal_exit: Optional[np.ndarray] = None
    terminal_leaf: Optional[str] = None
    pi_stderr: float = 0.0
    degenerate: bool = False
    net: Optional[NetworkSpec] = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return len(self.steps)

    def key(self) -> str:
        return " ".join(f"{s}{'+' if sg > 0 else '-'}" for s, sg in self.steps)


# ---------------------------------------------------------------------------
# local diffusion data


def _chart_diffusion(spec: NetworkSpec, saddle_id: int):
    """(BB*) in the saddle chart: constant matrix, or a callable of local y.

    Abstract networks carry no diffusion data; by convention they use the
    identity, which is inconsequential for the symmetric / strongly
    asymmetric fast paths (branch statistics there do not depend on the
    diffusion matrix).
    """
    s = spec.saddle(saddle_id)
    if spec.fld is None:
        return np.eye(s.d), None
    if spec.fld.sigma_fn is None:
        B = s.vinv @ spec.fld.sigma
        return B @ B.T, None

    def bbt(y):
        x = s.position + s.eigenvectors @ y
        B = s.vinv @ spec.fld.sigma_at(x)
        return B @ B.T

    return None, bbt


def _quad_cov(lams, pairs_idx, bbt_fn, y_of_s, s_grid):
    m = len(pairs_idx)
    out = np.zeros((m, m))
    vals = np.array([bbt_fn(y_of_s(s)) for s in s_grid])
    for a, k in enumerate(pairs_idx):
        for b, j in enumerate(pairs_idx):
            w = np.exp(-(lams[k] + lams[j]) * s_grid)
            out[a, b] = np.trapz(w * vals[:, k, j], s_grid)
    return out


def stable_cov(spec: NetworkSpec, saddle_id: int, y0=None) -> np.ndarray:
    """Covariance of the Gaussian picked up along the stable directions:
    entry (k, j) = int_0^inf exp(-(lam_k+lam_j)s) (BB*)^{kj}(S_A^s y0) ds
    for k, j < nu."""
    s = spec.saddle(saddle_id)
    nu = s.nu
    lams = s.eigenvalues
    assert np.all(lams[: nu - 1] > 0)
    const, bbt_fn = _chart_diffusion(spec, saddle_id)
    idx = list(range(nu - 1))
    if const is not None:
        denom = lams[idx][:, None] + lams[idx][None, :]
        return const[np.ix_(idx, idx)] / denom
    if y0 is None:
        raise ValueError("y0 required for state-dependent diffusion")
    y0 = np.asarray(y0, dtype=float)
    t_star = 12 * math.log(10.0) / (2.0 * lams[nu - 2])
    grid = np.linspace(0.0, t_star, 4001)
    return _quad_cov(lams, idx, bbt_fn, lambda t: np.exp(lams * t) * y0, grid)


def unstable_cov(spec: NetworkSpec, saddle_id: int, sign: int) -> np.ndarray:
    """Covariance of the fresh Gaussian along the contracting directions at
    exit: entry (k, j) = int_{-inf}^0 exp(-(lam_k+lam_j)s)
    (BB*)^{kj}(S_A^s(sign R v1)) ds for k, j >= nu."""
    s = spec.saddle(saddle_id)
    nu = s.nu
    lams = s.eigenvalues
    assert np.all(lams[nu - 1 :] < 0)
    const, bbt_fn = _chart_diffusion(spec, saddle_id)
    idx = list(range(nu - 1, s.d))
    if const is not None:
        denom = lams[idx][:, None] + lams[idx][None, :]
        return -const[np.ix_(idx, idx)] / denom
    t_star = -12 * math.log(10.0) / (2.0 * abs(lams[nu - 1]))
    grid = np.linspace(t_star, 0.0, 4001)
    y1 = np.zeros(s.d)
    y1[0] = sign * s.radius
    return _quad_cov(lams, idx, bbt_fn, lambda t: np.exp(lams * t) * y1, grid)


# ---------------------------------------------------------------------------
# entrance processing


def _entrance_chart_data(spec: NetworkSpec, saddle_id: int, entrance: EntranceData):
    """Local base point nu-coordinate and the chart-coordinates image of mu."""
    s = spec.saddle(saddle_id)
    nu = s.nu
    frame = getattr(entrance, "frame", "ambient")
    nu_override = getattr(entrance, "nu_coord", None)
    if nu_override is not None:
        y0_nu = float(nu_override)
    else:
        y0 = chart_to_local(s, entrance.point, check_domain=False)
        if np.max(np.abs(y0[: nu - 1])) > 0.05 * s.radius:
            raise InvalidEntranceError(
                f"entrance point at saddle {saddle_id} is off the stable "
                f"manifold: unstable chart coordinates {y0[: nu - 1]}"
            )
        y0_nu = float(y0[nu - 1])
    if abs(y0_nu) < _ATOM_EPS:
        raise InvalidEntranceError(
            f"entrance at saddle {saddle_id} has zero nu-coordinate"
        )
    if frame == "chart":
        mu_chart = entrance.mu
    else:
        mu_chart = Pushforward(s.vinv, entrance.mu)
    return y0_nu, mu_chart


def kappa_dist(spec: NetworkSpec, saddle_id: int, entrance: EntranceData) -> Distribution:
    """Law of the branch-selecting vector kappa over R^{nu-1}: the chart image
    of the entrance fluctuation plus, when alpha = 1, an independent Gaussian
    accumulated along the stable approach."""
    s = spec.saddle(saddle_id)
    nu = s.nu
    y0_nu, mu_chart = _entrance_chart_data(spec, saddle_id, entrance)
    sel = np.eye(s.d)[: nu - 1]
    xi0 = Pushforward(sel, mu_chart)
    if entrance.alpha < 1.0:
        if xi0.ray_direction is not None:
            ray = xi0.ray_direction
            if abs(ray[0]) < 1e-12 * max(np.linalg.norm(ray), 1e-300):
                raise InvalidEntranceError(
                    "alpha < 1 and the entrance fluctuation has zero first "
                    "chart coordinate (transport nondegeneracy violated)"
                )
            if nu > 2 and abs(ray[1]) < 1e-12 * np.linalg.norm(ray):
                raise InvalidEntranceError(
                    "alpha < 1, nu > 2 and the entrance fluctuation has zero "
                    "second chart coordinate"
                )
        return xi0
    y0_vec = np.zeros(s.d)
    y0_vec[nu - 1] = y0_nu
    n0 = Gaussian(np.zeros(nu - 1), stable_cov(spec, saddle_id, y0_vec))
    return Sum([xi0, n0])


def beta_exponent(saddle, alpha: float):
    """Exit scaling exponent and the regime that produced it.

    Four regimes, split by nu and by how the leading contraction compares to
    the expansion; equality is detected with relative tolerance 1e-9 and
    recorded as a boundary subcase (then two fluctuation components share the
    leading order).
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must be in (0,1]")
    lams = saddle.eigenvalues
    nu = saddle.nu
    lam1 = lams[0]
    lam_nu = lams[nu - 1]

    def close(a, b):
        return abs(a - b) <= _EQ_RTOL * max(abs(a), abs(b))

    if nu == 2:
        lhs = -alpha * lam_nu
        if close(lhs, lam1):
            return 1.0, BetaCase(1, True, ("N", "eta-"))
        if lhs > lam1:
            return 1.0, BetaCase(1, False, ("N",))
        return -alpha * lam_nu / lam1, BetaCase(2, False, ("eta-",))
    lam2 = lams[1]
    lhs = -lam_nu
    rhs = lam1 - lam2
    if close(lhs, rhs):
        return alpha * (1.0 - lam2 / lam1), BetaCase(3, True, ("eta+", "eta-"))
    if lhs > rhs:
        return alpha * (1.0 - lam2 / lam1), BetaCase(3, False, ("eta+",))
    return -alpha * lam_nu / lam1, BetaCase(4, False, ("eta-",))


def exit_distribution(spec: NetworkSpec, saddle_id: int, entrance: EntranceData,
                      sign: int, kappa: Optional[Distribution] = None) -> Distribution:
    """Law of the exit fluctuation on the branch sgn(kappa^1) = sign,
    assembled from the regime's components:

    * a fresh Gaussian N along the contracting eigendirections,
    * eta-  : a power of |kappa^1| times the (fixed, nonzero) entrance
      nu-coordinate, along v_nu -- one-sided, hence strongly asymmetric,
    * eta+  : a power of |kappa^1| times kappa^2, along v_2 (nu > 2 only).

    Concrete mode returns the law in ambient tangent coordinates; abstract
    mode stays in the local chart.
    """
    s = spec.saddle(saddle_id)
    nu, d = s.nu, s.d
    lams = s.eigenvalues
    if kappa is None:
        kappa = kappa_dist(spec, saddle_id, entrance)
    y0_nu, _ = _entrance_chart_data(spec, saddle_id, entrance)
    _, case = beta_exponent(s, entrance.alpha)

    terms = []
    if "eta-" in case.components:
        scale = s.radius ** (lams[nu - 1] / lams[0]) * y0_nu
        terms.append((scale, -lams[nu - 1] / lams[0], False, _unit(d, nu - 1)))
    if "eta+" in case.components:
        scale = s.radius ** (lams[1] / lams[0])
        terms.append((scale, -lams[1] / lams[0], True, _unit(d, 1)))
    gauss_cov = gauss_coords = None
    if "N" in case.components:
        gauss_cov = unstable_cov(spec, saddle_id, sign)
        gauss_coords = list(range(nu - 1, d))

    if not terms:
        # pure N: an honest Gaussian, exactly symmetric
        embed = np.zeros((d, d - nu + 1))
        embed[nu - 1 :, :] = np.eye(d - nu + 1)
        law = Pushforward(embed, Gaussian(np.zeros(d - nu + 1), gauss_cov))
    else:
        law = HalfLine(kappa, sign, terms, dim=d, gauss_cov=gauss_cov,
                       gauss_coords=gauss_coords)
    if getattr(entrance, "frame", "ambient") == "chart" or not spec.is_concrete:
        return law
    return Pushforward(s.eigenvectors, law)


def _unit(d, k):
    v = np.zeros(d)
    v[k] = 1.0
    return v


def split_probabilities(kappa: Distribution, n_kappa: int = N_KAPPA,
                        rng: Optional[np.random.Generator] = None):
    """Branch probabilities (p_minus, p_plus, stderr) from the sign of
    kappa^1.  Symmetric laws split exactly 1/2; ray laws give 0/1; anything
    else is estimated by Monte Carlo with the reported standard error."""
    if kappa.symmetry == SYMMETRIC:
        return 0.5, 0.5, 0.0
    if kappa.ray_direction is not None:
        first = kappa.ray_direction[0]
        if abs(first) < 1e-12 * max(np.linalg.norm(kappa.ray_direction), 1e-300):
            raise InvalidEntranceError(
                "strongly asymmetric kappa with vanishing first coordinate"
            )
        return (0.0, 1.0, 0.0) if first > 0 else (1.0, 0.0, 0.0)
    if rng is None:
        rng = np.random.default_rng(0)
    draws = kappa.draw(rng, n_kappa)[:, 0]
    atom_frac = np.mean(np.abs(draws) < _ATOM_EPS)
    if atom_frac > _ATOM_FRAC:
        raise InvalidEntranceError(
            f"kappa^1 has an atom at 0 (fraction {atom_frac:.2%} of draws)"
        )
    p_plus = float(np.mean(draws > 0))
    se = math.sqrt(max(p_plus * (1 - p_plus), 1e-300) / n_kappa)
    return 1.0 - p_plus, p_plus, se


def dwell_fluctuation_samples(kappa: Distribution, lambda1: float,
                              rng: np.random.Generator, n: int = 10000):
    """Samples of the O(1) dwell-time correction -ln|kappa^1| / lambda1
    (diagnostic only; the limiting dwell coefficient is alpha / lambda1)."""
    draws = kappa.draw(rng, n)[:, 0]
    draws = draws[np.abs(draws) > _ATOM_EPS]
    return -np.log(np.abs(draws)) / lambda1


# ---------------------------------------------------------------------------
# the entrance-exit map


def psi(spec: NetworkSpec, saddle_id: int, entrance: EntranceData,
        rng: Optional[np.random.Generator] = None, n_kappa: int = N_KAPPA):
    """Entrance-exit map at one saddle: the (minus, plus) exit pair.

    Shared across the pair: rescaled dwell time t = alpha / lambda_1 and the
    exit exponent beta; the branch probabilities sum to one exactly.  The
    fluctuation law of a branch with zero probability is undefined and left
    as None.
    """
    s = spec.saddle(saddle_id)
    kappa = kappa_dist(spec, saddle_id, entrance)
    p_minus, p_plus, se = split_probabilities(kappa, n_kappa=n_kappa, rng=rng)
    t = entrance.alpha / s.lambda1
    beta, case = beta_exponent(s, entrance.alpha)
    out = []
    for sign, p in ((-1, p_minus), (+1, p_plus)):
        conn = spec.connection(saddle_id, sign)
        if conn.is_leaf:
            x = conn.exit_point
        elif spec.is_concrete:
            x = conn.entry_point
        else:
            x = spec.saddle(conn.target).position
        F = None
        if p > 0.0:
            F = exit_distribution(spec, saddle_id, entrance, sign, kappa=kappa)
        out.append(ExitData(t=t, p=p, x=x, beta=beta, F=F, sign=sign,
                            case=case, p_stderr=se))
    return out[0], out[1]


def _next_entrance(spec: NetworkSpec, conn, exit_data: ExitData) -> EntranceData:
    """Entrance data at the connection target, per network mode."""
    if spec.is_concrete:
        ent = flow.pushforward_connection(conn, exit_data)
        ent.frame = "ambient"
        ent.nu_coord = conn.entrance_nu_coord
        return ent
    M = conn.transport
    if M is None:
        M = np.eye(spec.saddle(conn.target).d)
    mu = Pushforward(M, exit_data.F)
    if exit_data.beta == 1.0:
        mu = Sum([mu, Gaussian(np.zeros(mu.dim), np.eye(mu.dim))])
    ent = EntranceData(point=spec.saddle(conn.target).position,
                       alpha=exit_data.beta, mu=mu)
    ent.frame = "chart"
    ent.nu_coord = conn.entrance_nu_coord
    return ent


def _branch_rng(seed: int, steps) -> np.random.Generator:
    h = 0
    for sid, sg in steps:
        h = (h * 1_000_003 + 2 * sid + (1 if sg > 0 else 0) + 1) % (1 << 63)
    return np.random.Generator(np.random.Philox(key=[seed, h]))


def root_entrance(spec: NetworkSpec, x0=None, step: float = flow.DEFAULT_STEP):
    """Initial entrance (first saddle id, EntranceData, description string)."""
    if spec.is_concrete:
        if x0 is None:
            raise ValueError("concrete network needs a starting point x0")
        flow.populate_network(spec, step=step)
        sid, _ = flow.first_saddle_hit(spec, x0, step=step)
        t_tilde, ent = flow.initial_entrance(spec, x0, first_saddle=sid, step=step)
        ent.frame = "ambient"
        ent.nu_coord = None
        return sid, ent, f"x0->z{sid}"
    sid = 0
    d = spec.d
    ent = EntranceData(point=spec.saddle(sid).position, alpha=1.0,
                       mu=Gaussian(np.zeros(d), np.eye(d)))
    ent.frame = "chart"
    ent.nu_coord = spec.root_nu_coord if spec.root_nu_coord is not None else 1.0
    return sid, ent, f"root->z{sid}"


def enumerate_sequences(spec: NetworkSpec, x0=None, depth: int = 3,
                        seed: int = 0, prune: bool = False,
                        n_kappa: int = N_KAPPA,
                        step: float = flow.DEFAULT_STEP,
                        paths=None, max_sequences: int = 1 << 17):
    """Expand the binary tree of branch choices to the given depth.

    Branches that terminate at exit leaves stop early and carry the exit
    point.  With ``prune`` zero-probability subtrees are dropped; otherwise
    they appear with pi = 0 (their dwell/alpha chains are still exact, their
    branch probabilities past the dead choice are undefined).  ``paths``
    restricts the expansion to the given step lists (set mode).
    InvalidEntranceError inside a branch marks the sequence degenerate
    rather than dropping it.  Sequence pi standard errors accumulate the
    relative Monte Carlo errors of the branch probabilities.
    """
    sid0, ent0, root_name = root_entrance(spec, x0=x0, step=step)
    if paths is not None:
        paths = [tuple((int(a), int(b)) for a, b in p) for p in paths]
        depth = max(len(p) for p in paths)
    results = []

    def leaf(steps, pi, dwell, alphas, betas, tags, probs, rel2, conn=None,
             degenerate=False):
        if paths is not None and tuple(steps) not in paths:
            return
        results.append(
            AdmissibleSequence(
                root=root_name,
                steps=list(steps),
                pi=pi,
                dwell=list(dwell),
                alphas=list(alphas),
                betas=list(betas),
                tags=list(tags),
                probs=list(probs),
                terminal_exit=None if conn is None else conn.exit_point,
                terminal_leaf=None if conn is None else (conn.leaf_name or conn.key),
                pi_stderr=pi * math.sqrt(rel2),
                degenerate=degenerate,
                net=spec,
            )
        )

    def on_path(steps):
        return paths is None or any(_is_prefix(tuple(steps), p) for p in paths)

    def expand(saddle_id, entrance, steps, pi, dwell, alphas, betas, tags,
               probs, rel2):
        if len(results) > max_sequences:
            raise RuntimeError(
                f"sequence tree exceeded {max_sequences} leaves; reduce depth"
            )
        if len(steps) >= depth or (paths is not None and tuple(steps) in paths):
            leaf(steps, pi, dwell, alphas, betas, tags, probs, rel2)
            return
        alpha = alphas[-1]
        s = spec.saddle(saddle_id)
        if entrance is not None:
            try:
                ex_minus, ex_plus = psi(spec, saddle_id, entrance,
                                        rng=_branch_rng(seed, steps),
                                        n_kappa=n_kappa)
            except InvalidEntranceError:
                leaf(steps, pi, dwell, alphas, betas, tags, probs, rel2,
                     degenerate=True)
                return
            pair = {-1: ex_minus, +1: ex_plus}
        else:
            beta, case = beta_exponent(s, alpha)
            pair = {
                sg: ExitData(t=alpha / s.lambda1, p=None, x=None, beta=beta,
                             F=None, sign=sg, case=case)
                for sg in (-1, +1)
            }
        for sg in (+1, -1):
            ex = pair[sg]
            conn = spec.connection(saddle_id, sg)
            p = ex.p
            child_pi = pi * p if (p is not None and pi > 0) else 0.0
            if prune and child_pi == 0.0:
                continue
            child_steps = steps + [(saddle_id, sg)]
            if not on_path(child_steps):
                continue
            child_dwell = dwell + [ex.t]
            child_alphas = alphas + [ex.beta]
            child_betas = betas + [ex.beta]
            child_tags = tags + [ex.F.symmetry if ex.F is not None else None]
            child_probs = probs + [p]
            child_rel2 = rel2 + (
                (ex.p_stderr / p) ** 2 if (p is not None and p > 0) else 0.0
            )
            if conn.is_leaf:
                leaf(child_steps, child_pi, child_dwell, child_alphas,
                     child_betas, child_tags, child_probs, child_rel2, conn=conn)
                continue
            if ex.F is not None and child_pi > 0:
                child_ent = _next_entrance(spec, conn, ex)
            else:
                child_ent = None
            expand(conn.target, child_ent, child_steps, child_pi, child_dwell,
                   child_alphas, child_betas, child_tags, child_probs, child_rel2)

    expand(sid0, ent0, [], 1.0, [], [1.0], [], [], [], 0.0)
    return results


# ---------------------------------------------------------------------------
# sequence-set classification and exit measure


def _is_prefix(a, b):
    return len(a) <= len(b) and b[: len(a)] == a


def _comparable(a, b):
    return _is_prefix(a, b) or _is_prefix(b, a)


def _topology_paths(spec: NetworkSpec, root_saddle: int, depth: int):
    """All admissible step lists up to the given length; leaf-terminated
    paths stop early and are maximal."""
    out = []

    def walk(sid, steps):
        if len(steps) == depth:
            out.append((steps, False))
            return
        for sg in (+1, -1):
            conn = spec.connection(sid, sg)
            nxt = steps + [(sid, sg)]
            if conn.is_leaf:
                out.append((nxt, True))
            else:
                walk(conn.target, nxt)

    walk(root_saddle, [])
    return out


def classify_set(sequences) -> dict:
    """Free / complete / conservative flags plus the total pi mass.

    * free: an antichain under the prefix order;
    * complete: free, and every admissible sequence (up to the set's maximal
      length, leaf-terminated paths included) is comparable to a member;
    * conservative: free with total pi equal to 1 within three combined
      Monte Carlo standard errors.
    """
    if not sequences:
        return {"free": True, "complete": False, "conservative": False,
                "total_pi": 0.0}
    steps = [tuple(s.steps) for s in sequences]
    free = True
    for i, a in enumerate(steps):
        for b in steps[i + 1 :]:
            if _comparable(a, b):
                free = False
    total = float(sum(s.pi for s in sequences))
    se = math.sqrt(sum(s.pi_stderr**2 for s in sequences))
    conservative = free and abs(total - 1.0) <= 3.0 * se + 1e-9

    complete = False
    spec = sequences[0].net
    if free and spec is not None:
        depth = max(len(t) for t in steps)
        root_sid = steps[0][0][0] if steps[0] else 0
        complete = True
        for path, _ in _topology_paths(spec, root_sid, depth):
            if not any(_comparable(tuple(path), t) for t in steps):
                complete = False
                break
    return {"free": free, "complete": complete, "conservative": conservative,
            "total_pi": total}


@dataclass
class ExitMeasure:
    atoms: list  # [(point, leaf_name, weight, stderr)]
    total_pi: float
    conservative: bool


def exit_measure(spec: NetworkSpec, x0=None, seed: int = 0,
                 max_depth: int = 32, n_kappa: int = N_KAPPA) -> ExitMeasure:
    """Limiting exit distribution over the network's exit leaves: atoms
    pi(z) at q(z), merged when different sequences exit at the same point.
    If mass survives past ``max_depth`` without reaching a leaf the input was
    not conservative there; a warning is issued and the partial measure is
    returned."""
    if not any(c.is_leaf for c in spec.connections):
        warnings.warn("network has no exit leaves; exit measure is empty",
                      stacklevel=2)
        return ExitMeasure(atoms=[], total_pi=0.0, conservative=False)
    seqs = enumerate_sequences(spec, x0=x0, depth=max_depth, seed=seed,
                               prune=True, n_kappa=n_kappa)
    atoms = []
    total = 0.0
    dangling = 0.0
    for s in seqs:
        if s.terminal_exit is None:
            dangling += s.pi
            continue
        total += s.pi
        for a in atoms:
            if np.linalg.norm(a[0] - s.terminal_exit) < 1e-9:
                a[2] += s.pi
                a[3] = math.hypot(a[3], s.pi_stderr)
                break
        else:
            atoms.append([s.terminal_exit.copy(), s.terminal_leaf, s.pi,
                          s.pi_stderr])
    conservative = dangling <= 3.0 * math.sqrt(sum(a[3] ** 2 for a in atoms)) + 1e-9
    if not conservative:
        warnings.warn(
            f"exit sequence set is not conservative: pi({dangling:.3g}) has "
            f"not reached an exit leaf within depth {max_depth}",
            stacklevel=2,
        )
    return ExitMeasure(
        atoms=[(a[0], a[1], a[2], a[3]) for a in atoms],
        total_pi=total,
        conservative=conservative,
    )
