"""First-quantization extension: Bogoliubov frames, exact operator algebra
between normal-ordered mode monomials and symmetrized quadrature monomials,
the frame-mismatch signal oracle, and the outer bisection search that recovers
the physical frame together with the quadrature-basis coefficients.

The algebra is exact: coefficients live in the ring generated by rationals,
i, and sqrt(2) (sympy expressions), so the transformation matrix T carries no
numerical drift and its conditioning is purely a design property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .device import SimulatedDevice
from .protocol import LearnedCoefficients, RpeConfig, derive_config, learn_single_mode
from .recovery import single_mode_pipeline

U_FEASIBLE_MAX = 1.0 / (4.0 - 2.0 * math.sqrt(3.0))


class FeasibilityError(ValueError):
    """Raised when a frame's vacuum overlap is too small for phase estimation."""


@dataclass(frozen=True)
class BogoliubovFrame:
    """Linear canonical map B = u b + v b† between two mode bases.

    signed_r = (1/2) ln(m0w0 / mw) carries the branch: u = cosh(signed_r),
    v = sinh(signed_r), and phi = pi exactly when the ratio exceeds 1.
    """

    m0w0: float
    mw: float

    def __post_init__(self) -> None:
        if self.m0w0 <= 0 or self.mw <= 0:
            raise ValueError("mass-frequency products must be positive")

    @property
    def ratio(self) -> float:
        return self.m0w0 / self.mw

    @property
    def signed_r(self) -> float:
        return 0.5 * math.log(self.ratio)

    @property
    def r(self) -> float:
        return abs(self.signed_r)

    @property
    def phi(self) -> float:
        return math.pi if self.ratio > 1.0 else 0.0

    @property
    def u(self) -> float:
        return math.cosh(self.signed_r)

    @property
    def v(self) -> float:
        return math.sinh(self.signed_r)

    @property
    def squeeze_z(self) -> float:
        """Squeezing parameter realizing B = S(z)† b S(z)."""
        return -self.signed_r


def frame_from_ratio(m0w0: float, mw: float) -> BogoliubovFrame:
    return BogoliubovFrame(m0w0=m0w0, mw=mw)


def frame_from_signed_r(signed_r: float, m0w0: float = 1.0) -> BogoliubovFrame:
    return BogoliubovFrame(m0w0=m0w0, mw=m0w0 * math.exp(-2.0 * signed_r))


def overlap_feasible(u: float) -> bool:
    """True iff the vacuum overlap 1/u stays above the phase-estimation floor."""
    return u < U_FEASIBLE_MAX


def nb_expansion(frame: BogoliubovFrame) -> dict[tuple[int, int], float]:
    """Number operator of the B mode written in the bare basis:
    N_B = (u^2+v^2) N + u v (b^2 + b†^2) + v^2."""
    u, v = frame.u, frame.v
    return {(1, 1): u * u + v * v, (2, 0): u * v, (0, 2): u * v, (0, 0): v * v}


# ---------------------------------------------------------------------------
# Exact XP algebra.  Normal form keeps X powers left of P powers; keys are
# (j, k) for X^j P^k with [X, P] = i.

_SQRT2 = sp.sqrt(2)


def _xp_mul(a: dict, b: dict) -> dict:
    """Product of two XP normal-form polynomials, renormalized.

    Uses P^k X^m = sum_s C(k,s) C(m,s) s! (-i)^s X^{m-s} P^{k-s}.
    """
    out: dict = {}
    for (j1, k1), c1 in a.items():
        for (j2, k2), c2 in b.items():
            for s in range(min(k1, j2) + 1):
                coeff = (
                    c1
                    * c2
                    * sp.binomial(k1, s)
                    * sp.binomial(j2, s)
                    * sp.factorial(s)
                    * (-sp.I) ** s
                )
                key = (j1 + j2 - s, k1 + k2 - s)
                out[key] = out.get(key, sp.S.Zero) + coeff
    return {k: sp.expand(v) for k, v in out.items() if sp.expand(v) != 0}


def _xp_to_symmetrized(normal: dict) -> dict:
    """Rewrite an XP normal-form polynomial over symmetrized monomials
    {X^j P^k}_S = (X^j P^k + P^k X^j)/2, exactly."""
    work = {k: sp.expand(v) for k, v in normal.items()}
    sym: dict = {}
    while work:
        j, k = max(work, key=lambda t: (t[0] + t[1], t))
        c = work.pop((j, k))
        if c == 0:
            continue
        sym[(j, k)] = sym.get((j, k), sp.S.Zero) + c
        for s in range(1, min(j, k) + 1):
            a_s = (-sp.I) ** s * sp.factorial(s) * sp.binomial(k, s) * sp.binomial(j, s)
            key = (j - s, k - s)
            work[key] = sp.expand(work.get(key, sp.S.Zero) - c * a_s / 2)
    return {k: sp.expand(v) for k, v in sym.items() if sp.expand(v) != 0}


def normal_to_symmetrized(p: int, q: int) -> dict[tuple[int, int], sp.Expr]:
    """(B†)^p B^q as an exact symmetrized-XP polynomial (identity included),
    with B = (X + iP)/sqrt(2)."""
    bdag = {(1, 0): 1 / _SQRT2, (0, 1): -sp.I / _SQRT2}
    b = {(1, 0): 1 / _SQRT2, (0, 1): sp.I / _SQRT2}
    poly: dict = {(0, 0): sp.S.One}
    for _ in range(p):
        poly = _xp_mul(poly, bdag)
    for _ in range(q):
        poly = _xp_mul(poly, b)
    return _xp_to_symmetrized(poly)


# ---------------------------------------------------------------------------
# Exact normal-ordered bosonic algebra.  Keys are (p, q) for B†^p B^q.


def boson_mul(a: dict, b: dict) -> dict:
    """Product of two normal-ordered polynomials, renormal-ordered via
    (p1,q1)(p2,q2) = sum_s s! C(q1,s) C(p2,s) (p1+p2-s, q1+q2-s)."""
    out: dict = {}
    for (p1, q1), c1 in a.items():
        for (p2, q2), c2 in b.items():
            for s in range(min(q1, p2) + 1):
                coeff = c1 * c2 * math.comb(q1, s) * math.comb(p2, s) * math.factorial(s)
                key = (p1 + p2 - s, q1 + q2 - s)
                out[key] = out.get(key, 0) + coeff
    return {k: v for k, v in out.items() if v != 0}


def _boson_pow(lin: dict, n: int) -> dict:
    out = {(0, 0): 1}
    for _ in range(n):
        out = boson_mul(out, lin)
    return out


def symmetrized_to_normal(j: int, k: int) -> dict[tuple[int, int], sp.Expr]:
    """{X^j P^k}_S as an exact normal-ordered polynomial in B, B†."""
    x = {(1, 0): 1 / _SQRT2, (0, 1): 1 / _SQRT2}
    p = {(1, 0): sp.I / _SQRT2, (0, 1): -sp.I / _SQRT2}

    def mul(a, b):
        out: dict = {}
        for (p1, q1), c1 in a.items():
            for (p2, q2), c2 in b.items():
                for s in range(min(q1, p2) + 1):
                    coeff = c1 * c2 * sp.binomial(q1, s) * sp.binomial(p2, s) * sp.factorial(s)
                    key = (p1 + p2 - s, q1 + q2 - s)
                    out[key] = out.get(key, sp.S.Zero) + coeff
        return {key: sp.expand(v) for key, v in out.items() if sp.expand(v) != 0}

    word_xp: dict = {(0, 0): sp.S.One}
    for _ in range(j):
        word_xp = mul(word_xp, x)
    for _ in range(k):
        word_xp = mul(word_xp, p)
    word_px: dict = {(0, 0): sp.S.One}
    for _ in range(k):
        word_px = mul(word_px, p)
    for _ in range(j):
        word_px = mul(word_px, x)
    out = {}
    for key in set(word_xp) | set(word_px):
        v = sp.expand((word_xp.get(key, 0) + word_px.get(key, 0)) / 2)
        if v != 0:
            out[key] = v
    return out


def conjugate_spec_by_mismatch(
    terms: dict[tuple[int, int], complex], delta_r: float
) -> dict[tuple[int, int], complex]:
    """Rewrite a normal-ordered single-mode polynomial into the frame that is
    mismatched by delta_r, via B = B' cosh(delta_r) + B'† sinh(delta_r)."""
    c, s = math.cosh(delta_r), math.sinh(delta_r)
    bdag = {(1, 0): c, (0, 1): s}
    b = {(0, 1): c, (1, 0): s}
    out: dict[tuple[int, int], complex] = {}
    for (p, q), g in terms.items():
        poly = boson_mul(_boson_pow(bdag, p), _boson_pow(b, q))
        for key, coeff in poly.items():
            out[key] = out.get(key, 0.0) + g * coeff
    return {k: v for k, v in out.items() if abs(v) > 0}


# ---------------------------------------------------------------------------
# Transformation matrix between measured normal-ordered coefficients and
# physical symmetrized-quadrature coefficients.


def _normal_keys(d: int) -> list[tuple[int, int]]:
    return [(p, q) for l in range(d + 1) for p in range(l + 1) for q in [l - p]]


def _sym_keys(d: int) -> list[tuple[int, int]]:
    return [(j, k) for l in range(d + 1) for j in range(l + 1) for k in [l - j]]


@dataclass
class TransformT:
    """Exact map G_{j,k} = sum_{p,q} g'_{p,q} T_{(p,q),(j,k)} at a given
    mass-frequency product for the quadrature rescaling."""

    degree: int
    mass_omega: float
    keys_normal: list[tuple[int, int]]
    keys_sym: list[tuple[int, int]]
    matrix: np.ndarray
    pinv: np.ndarray
    sigma_min: float

    def transform(self, gprime: dict[tuple[int, int], complex]) -> dict[tuple[int, int], complex]:
        vec = np.array([gprime.get(k, 0.0) for k in self.keys_normal], dtype=complex)
        out = vec @ self.matrix
        return dict(zip(self.keys_sym, (complex(x) for x in out)))

    def transform_variance(self, var: dict[tuple[int, int], float]) -> dict[tuple[int, int], float]:
        vec = np.array([var.get(k, 0.0) for k in self.keys_normal])
        out = vec @ (np.abs(self.matrix) ** 2)
        return dict(zip(self.keys_sym, (float(x) for x in out)))


def build_T(d: int, mass_omega: float = 1.0) -> TransformT:
    """Stack normal_to_symmetrized rows for 0 <= p+q <= d and apply the
    quadrature rescaling {X^j P^k}_S = (m w)^{(j-k)/2} {x^j p^k}_S."""
    rows = _normal_keys(d)
    cols = _sym_keys(d)
    col_index = {k: i for i, k in enumerate(cols)}
    mat = np.zeros((len(rows), len(cols)), dtype=complex)
    mw = sp.Float(mass_omega, 30)
    for i, (p, q) in enumerate(rows):
        for (j, k), expr in normal_to_symmetrized(p, q).items():
            mat[i, col_index[(j, k)]] = complex(sp.N(expr * mw ** sp.Rational(j - k, 2), 25))
    sv = np.linalg.svd(mat, compute_uv=False)
    sigma_min = float(sv[-1])
    if sigma_min <= 1e-12:
        raise np.linalg.LinAlgError("transformation matrix is rank deficient")
    return TransformT(
        degree=d,
        mass_omega=mass_omega,
        keys_normal=rows,
        keys_sym=cols,
        matrix=mat,
        pinv=np.linalg.pinv(mat),
        sigma_min=sigma_min,
    )


# ---------------------------------------------------------------------------
# Signal function and the outer search.


def _frame_vector(modes: int, mode: int, r_prime: float, others: dict[int, float] | None):
    z = [0j] * modes
    z[mode] = complex(-r_prime)
    if others:
        for m, r in others.items():
            if m != mode:
                z[m] = complex(-r)
    return tuple(z)


def signal_measure(
    device: SimulatedDevice,
    r_prime: float,
    cfg: RpeConfig,
    d: int = 2,
    signal_key: tuple[int, int] = (2, 0),
    mode: int = 0,
    other_frames: dict[int, float] | None = None,
    token: str = "signal",
) -> tuple[float, float, LearnedCoefficients]:
    """Learn the single-mode coefficients in the frame r_prime and return the
    real part of the designated ideally-zero coefficient with its predicted
    standard error."""
    frame_z = _frame_vector(device.cutoff.modes, mode, r_prime, other_frames)
    learned = learn_single_mode(
        device,
        d,
        cfg,
        mode=mode,
        frame_z=frame_z,
        subtract_offset=True,
        token=token,
    )
    by_pq = {
        (k.p[0], k.q[0]): v
        for k, v in learned.estimates.items()
        if not k.is_coupling and k.modes[0] == mode
    }
    se = {
        (k.p[0], k.q[0]): v
        for k, v in learned.stderr.items()
        if not k.is_coupling and k.modes[0] == mode
    }
    return float(by_pq[signal_key].real), float(se[signal_key]), learned


@dataclass
class BisectionResult:
    r_hat: float
    iterations: int
    evaluations: int
    history: list[tuple[float, float, float]]
    fallback_used: bool
    k_hat: float
    eps_r: float = 0.0


def mismatch_derivative(
    terms: dict[tuple[int, int], complex],
) -> dict[tuple[int, int], complex]:
    """d/d(delta_r) of conjugate_spec_by_mismatch at delta_r = 0.

    Central difference of the exact algebra; used to propagate residual
    frame uncertainty into coefficient standard errors.
    """
    h = 1e-6
    plus = conjugate_spec_by_mismatch(terms, h)
    minus = conjugate_spec_by_mismatch(terms, -h)
    keys = set(plus) | set(minus)
    return {k: (plus.get(k, 0.0) - minus.get(k, 0.0)) / (2.0 * h) for k in keys}


def _signal_row_norm(d: int, signal_key: tuple[int, int]) -> float:
    pipe = single_mode_pipeline(d)
    row = pipe.kplus[pipe.coeff_keys.index(signal_key)]
    return float(np.sqrt(np.sum(np.abs(row) ** 2)))


def _cfg_for_precision(
    eps_coeff: float,
    row_norm: float,
    d: int,
    shots: int,
    g_max_prior: float,
    k_cap: int,
) -> RpeConfig:
    """Smallest RPE depth whose predicted coefficient error meets eps_coeff."""
    base = derive_config(d, g_max=g_max_prior, k_max=4, shots=shots, l_steps=None)
    eps_c_target = eps_coeff / row_norm
    k = math.ceil(math.log2(1.0 / (eps_c_target * base.t0 * math.sqrt(shots))))
    k = min(max(k, 4), k_cap)
    return derive_config(d, g_max=g_max_prior, k_max=k, shots=shots, l_steps=None)


def _golden_minimize(fn, lo: float, hi: float, tol: float) -> tuple[float, int]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d_pt = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d_pt)
    shrinks = 0
    while b - a > tol:
        if fc < fd:
            b, d_pt, fd = d_pt, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d_pt, fd
            d_pt = a + inv_phi * (b - a)
            fd = fn(d_pt)
        shrinks += 1
    return 0.5 * (a + b), shrinks


def bisection_search(
    device: SimulatedDevice,
    bracket: tuple[float, float],
    eps_r: float | None = None,
    eps_g: float | None = None,
    d: int = 2,
    signal_key: tuple[int, int] = (2, 0),
    mode: int = 0,
    other_frames: dict[int, float] | None = None,
    shots: int = 200,
    noiseless: bool = False,
    g_max_prior: float = 2.0,
    k_cap: int = 12,
    token: str = "bisect",
) -> BisectionResult:
    """Bisection over the signed frame parameter driven by the signal sign.

    The bracket endpoints must give opposite, significant signal signs; their
    secant slope bootstraps the linear-response scale used both to convert
    eps_g into eps_r and to schedule the inner-learner precision per
    iteration.  A sign-ambiguous evaluation is retried once at higher
    precision, then the search falls back to golden-section minimization of
    the signal magnitude.
    """
    lo, hi = bracket
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    for edge in (lo, hi):
        if not overlap_feasible(math.cosh(edge)):
            raise FeasibilityError(
                f"bracket edge {edge} gives u = {math.cosh(edge):.4f} >= {U_FEASIBLE_MAX:.4f}"
            )
    row_norm = _signal_row_norm(d, signal_key)
    history: list[tuple[float, float, float]] = []
    evaluations = 0

    def measure(r_prime: float, eps_target: float) -> tuple[float, float]:
        nonlocal evaluations
        if noiseless:
            cfg = derive_config(
                d, g_max=g_max_prior, k_max=10, shots=20, l_steps=None, noiseless=True
            )
        else:
            cfg = _cfg_for_precision(eps_target, row_norm, d, shots, g_max_prior, k_cap)
        evaluations += 1
        f, se, _ = signal_measure(
            device,
            r_prime,
            cfg,
            d=d,
            signal_key=signal_key,
            mode=mode,
            other_frames=other_frames,
            token=f"{token}:e{evaluations}",
        )
        history.append((r_prime, f, se))
        return f, se

    width = hi - lo
    coarse = max(width / 6.0, eps_r or 0.0, (eps_g or 0.0))
    f_lo, se_lo = measure(lo, coarse)
    f_hi, se_hi = measure(hi, coarse)
    if not noiseless and abs(f_lo) <= 3 * se_lo:
        f_lo, se_lo = measure(lo, max(abs(f_lo), se_lo) / 6.0)
    if not noiseless and abs(f_hi) <= 3 * se_hi:
        f_hi, se_hi = measure(hi, max(abs(f_hi), se_hi) / 6.0)
    if f_lo * f_hi >= 0:
        raise ValueError("bracket endpoints must give opposite signal signs")
    if not noiseless and (abs(f_lo) <= 3 * se_lo or abs(f_hi) <= 3 * se_hi):
        raise ValueError("endpoint signals are not significant at 3 standard errors")
    k_hat = (f_hi - f_lo) / (hi - lo)
    if eps_r is None:
        if eps_g is None:
            raise ValueError("provide eps_r or eps_g")
        eps_r = eps_g / max(abs(k_hat), 1e-6)
    sign_hi = math.copysign(1.0, f_hi)

    iterations = 0
    fallback = False
    while hi - lo > eps_r:
        mid = 0.5 * (lo + hi)
        eps_target = abs(k_hat) * (hi - lo) / 9.0
        f_mid, se_mid = measure(mid, eps_target)
        if not noiseless and abs(f_mid) <= 3 * se_mid:
            f_mid, se_mid = measure(mid, eps_target / 4.0)
        if not noiseless and abs(f_mid) <= 3 * se_mid:
            fallback = True
            break
        if math.copysign(1.0, f_mid) == sign_hi:
            hi = mid
        else:
            lo = mid
        iterations += 1

    if fallback:
        eps_target = abs(k_hat) * eps_r

        def objective(r_prime: float) -> float:
            f, _ = measure(r_prime, eps_target)
            return abs(f)

        r_hat, shrinks = _golden_minimize(objective, lo, hi, eps_r)
        iterations += shrinks
    else:
        r_hat = 0.5 * (lo + hi)
    return BisectionResult(
        r_hat=r_hat,
        iterations=iterations,
        evaluations=evaluations,
        history=history,
        fallback_used=fallback,
        k_hat=k_hat,
        eps_r=eps_r,
    )


@dataclass
class FirstQResult:
    r_hat: float
    mw_hat: float
    g_physical: dict[tuple[int, int], complex]
    stderr: dict[tuple[int, int], float]
    gprime: LearnedCoefficients
    bisection: BisectionResult
    time_cost: float


def learn_firstq(
    device: SimulatedDevice,
    d: int,
    eps_g: float,
    bracket: tuple[float, float],
    m0w0: float = 1.0,
    signal_key: tuple[int, int] = (2, 0),
    shots: int = 200,
    noiseless: bool = False,
    g_max_prior: float = 2.0,
    k_cap: int = 13,
    token: str = "firstq",
) -> FirstQResult:
    """Full first-quantization pipeline: feasibility gate, bisection over the
    frame parameter, final coefficient learn in the converged frame, and the
    exact transform to symmetrized-quadrature coefficients."""
    start = device.ledger().total_evolution_time
    bis = bisection_search(
        device,
        bracket,
        eps_g=eps_g,
        d=d,
        signal_key=signal_key,
        shots=shots,
        noiseless=noiseless,
        g_max_prior=g_max_prior,
        k_cap=k_cap,
        token=f"{token}:b",
    )
    mw_hat = m0w0 * math.exp(-2.0 * bis.r_hat)
    t = build_T(d, mass_omega=mw_hat)
    row_norm = _signal_row_norm(d, signal_key)
    eps_gprime = eps_g * t.sigma_min
    if noiseless:
        cfg = derive_config(d, g_max=g_max_prior, k_max=10, shots=20, l_steps=None, noiseless=True)
    else:
        cfg = _cfg_for_precision(eps_gprime, row_norm, d, shots, g_max_prior, k_cap)
    learned = learn_single_mode(
        device,
        d,
        cfg,
        frame_z=_frame_vector(device.cutoff.modes, 0, bis.r_hat, None),
        subtract_offset=True,
        token=f"{token}:f",
    )
    gprime = {(0, 0): complex(learned.identity_offset)}
    var = {(0, 0): cfg.predicted_eps_c**2}
    for key, val in learned.estimates.items():
        gprime[(key.p[0], key.q[0])] = val
    for key, se in learned.stderr.items():
        var[(key.p[0], key.q[0])] = se**2
    g_phys = t.transform(gprime)
    var_phys = t.transform_variance(var)
    # Residual frame error eps_r enters both through the quadrature rescaling
    # (mw_hat factor (mw)^{(j-k)/2}) and through coefficient mixing under a
    # small leftover mismatch; both sensitivities are computable exactly.
    mix = t.transform(mismatch_derivative(gprime))
    for jk in var_phys:
        j, k = jk
        sens = abs(j - k) * abs(g_phys.get(jk, 0.0)) + abs(mix.get(jk, 0.0))
        var_phys[jk] += (bis.eps_r * sens) ** 2
    return FirstQResult(
        r_hat=bis.r_hat,
        mw_hat=mw_hat,
        g_physical=g_phys,
        stderr={k: math.sqrt(v) for k, v in var_phys.items()},
        gprime=learned,
        bisection=bis,
        time_cost=device.ledger().total_evolution_time - start,
    )


# ---------------------------------------------------------------------------
# Two-mode parallel search.


@dataclass
class TwoModeResult:
    r_hats: tuple[float, float]
    g_physical: dict
    stderr: dict
    learned: LearnedCoefficients
    bisections: tuple[BisectionResult, BisectionResult]
    time_cost: float


def _tensor_transform(
    learned: LearnedCoefficients,
    transforms: tuple[TransformT, TransformT],
    identity_var: float,
    frame_eps: tuple[float, float] = (0.0, 0.0),
) -> tuple[dict, dict]:
    """Physical coefficients of a two-mode spec: per-mode exact expansions,
    tensored for couplings.  Keys are ((j1,k1),(j2,k2)); ((0,0),(0,0)) is the
    identity and one-sided identities fold into the other mode's singles.
    frame_eps gives the residual per-mode frame uncertainty, propagated into
    the standard errors through the exact mixing and rescaling derivatives."""
    expansions = []
    for t in transforms:
        idx = {key: i for i, key in enumerate(t.keys_normal)}
        exp_m = {}
        for p, q in t.keys_normal:
            row_vals = t.matrix[idx[(p, q)]]
            exp_m[(p, q)] = {
                key: complex(row_vals[i]) for i, key in enumerate(t.keys_sym) if row_vals[i] != 0
            }
        expansions.append(exp_m)

    def expand_term(m: int, p: int, q: int, derivative: bool) -> dict:
        if not derivative:
            return expansions[m][(p, q)]
        out_m: dict = {}
        for (p2, q2), c in mismatch_derivative({(p, q): 1.0}).items():
            for jk, c2 in expansions[m][(p2, q2)].items():
                out_m[jk] = out_m.get(jk, 0.0) + c * c2
        return out_m

    out: dict = {}
    var: dict = {}
    mix = [dict(), dict()]

    def add(key, value, variance):
        out[key] = out.get(key, 0.0) + value
        var[key] = var.get(key, 0.0) + variance

    def add_mix(m, key, value):
        mix[m][key] = mix[m].get(key, 0.0) + value

    ident = ((0, 0), (0, 0))
    add(ident, complex(learned.identity_offset), identity_var)
    for tkey, gval in learned.estimates.items():
        se = learned.stderr.get(tkey, 0.0)
        if not tkey.is_coupling:
            m = tkey.modes[0]
            for (j, k), c in expansions[m][(tkey.p[0], tkey.q[0])].items():
                jk = [(0, 0), (0, 0)]
                jk[m] = (j, k)
                add(tuple(jk), gval * c, (abs(c) * se) ** 2)
            for (j, k), c in expand_term(m, tkey.p[0], tkey.q[0], True).items():
                jk = [(0, 0), (0, 0)]
                jk[m] = (j, k)
                add_mix(m, tuple(jk), gval * c)
        else:
            e1 = expansions[0][(tkey.p[0], tkey.q[0])]
            e2 = expansions[1][(tkey.p[1], tkey.q[1])]
            for (j1, k1), c1 in e1.items():
                for (j2, k2), c2 in e2.items():
                    add(((j1, k1), (j2, k2)), gval * c1 * c2, (abs(c1 * c2) * se) ** 2)
            for m in (0, 1):
                d1 = expand_term(0, tkey.p[0], tkey.q[0], m == 0)
                d2 = expand_term(1, tkey.p[1], tkey.q[1], m == 1)
                for (j1, k1), c1 in d1.items():
                    for (j2, k2), c2 in d2.items():
                        add_mix(m, ((j1, k1), (j2, k2)), gval * c1 * c2)
    for key in var:
        for m in (0, 1):
            if frame_eps[m]:
                j, k = key[m]
                sens = abs(j - k) * abs(out.get(key, 0.0)) + abs(mix[m].get(key, 0.0))
                var[key] += (frame_eps[m] * sens) ** 2
    return out, {k: math.sqrt(v) for k, v in var.items()}


def parallel_two_mode_search(
    device: SimulatedDevice,
    brackets: tuple[tuple[float, float], tuple[float, float]],
    eps_r: float,
    d: int = 2,
    signal_keys: tuple[tuple[int, int], tuple[int, int]] = ((2, 0), (2, 0)),
    m0w0: tuple[float, float] = (1.0, 1.0),
    shots: int = 200,
    noiseless: bool = False,
    g_max_prior: float = 2.0,
    k_cap: int = 12,
    token: str = "par2",
) -> TwoModeResult:
    """Independent per-mode frame searches under mode isolation, followed by a
    hierarchical coefficient learn in the converged joint frame and the exact
    transform of every single and coupling coefficient."""
    from .protocol import learn_multimode_hierarchical

    start = device.ledger().total_evolution_time
    centers = [0.5 * (b[0] + b[1]) for b in brackets]
    results = []
    for m in (0, 1):
        others = {1 - m: results[0].r_hat if m == 1 else centers[1 - m]}
        results.append(
            bisection_search(
                device,
                brackets[m],
                eps_r=eps_r,
                d=d,
                signal_key=signal_keys[m],
                mode=m,
                other_frames=others,
                shots=shots,
                noiseless=noiseless,
                g_max_prior=g_max_prior,
                k_cap=k_cap,
                token=f"{token}:m{m}",
            )
        )
    r_hats = (results[0].r_hat, results[1].r_hat)
    if noiseless:
        cfg = derive_config(d, g_max=g_max_prior, k_max=10, shots=20, l_steps=None, noiseless=True)
    else:
        cfg = derive_config(d, g_max=g_max_prior, k_max=k_cap, shots=shots, l_steps=None)
    learned = learn_multimode_hierarchical(
        device,
        2,
        d,
        cfg,
        frame_z=(complex(-r_hats[0]), complex(-r_hats[1])),
        subtract_offset=True,
        token=f"{token}:h",
    )
    transforms = (
        build_T(d, mass_omega=m0w0[0] * math.exp(-2.0 * r_hats[0])),
        build_T(d, mass_omega=m0w0[1] * math.exp(-2.0 * r_hats[1])),
    )
    g_phys, stderr = _tensor_transform(
        learned,
        transforms,
        cfg.predicted_eps_c**2,
        frame_eps=(results[0].eps_r, results[1].eps_r),
    )
    return TwoModeResult(
        r_hats=r_hats,
        g_physical=g_phys,
        stderr=stderr,
        learned=learned,
        bisections=(results[0], results[1]),
        time_cost=device.ledger().total_evolution_time - start,
    )
