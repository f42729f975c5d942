"""Parameter sequences of the iteration and their feasibility arithmetic.

The schedule is

    lambda_q = 2*pi*ceil(a^(b^q)),   delta_q = lambda_q^(-2*beta),
    ell_q    = delta_{q+2}^((1+gamma)/2) / (delta_q^(1/2) lambda_q lambda_{q+1}^(3*alpha/2)),
    tau_q    = ell_q^(4*alpha) / (delta_q^(1/2) lambda_q),

with a > 1, b in (1, 3/2), beta in (0, 1/3).  a^(b^q) is evaluated with
mpmath at 60+ significant digits before the ceiling, so lambda_q is exact
even near integer boundaries.

The validator checks, per stage q:

  C1  1 < b < (1-beta)/(2*beta)
  C2  delta_{q+1}^(1/2) delta_q^(1/2) lambda_q <= delta_{q+2} lambda_{q+1}^(1-8*alpha)
  C3  lambda_{q+1}^(-1) <= ell_q <= lambda_q^(-1)
  C4  lambda_{q+1}^(1-Nbar) <= ell_q^(Nbar+1)
plus the exponent-level sufficient conditions obtained by taking logarithms
base lambda_q (these are a-independent), the gamma/gamma-hat sandwich
  alpha*b/beta < gamma_hat < 3*alpha/(2*beta),
  gamma < gamma_hat - alpha/(2*beta),
the adapted-subsolution exponent nu > (1-3*beta+alpha)/(2*beta), and, when a
target Hoelder exponent beta_hat is supplied, b^2(1+nu) < (1-beta_hat)/(2*beta_hat)
and 2*beta_hat*(b^2-1) < 1.

Unquantified constants: the paper absorbs constants into "a large enough";
the validator reports the exponent verdicts exactly and separately logs the
available slack lambda_q^(gap) that would absorb a constant.
"""

import json
from dataclasses import dataclass, field, asdict

import mpmath as mp


@dataclass(frozen=True)
class SchemeParams:
    a: float
    b: float
    beta: float
    alpha: float
    gamma: float
    gamma_hat: float = 0.0
    nu: float = 0.0
    nbar: int = 20
    horizon: float = 1.0
    mode: str = "rigorous"  # or "toy"
    beta_hat: float = 0.0   # optional target exponent for the solution scheme

    def __post_init__(self):
        if self.a <= 1:
            raise ValueError("a must exceed 1")
        if not (0 < self.beta < 1 / 3):
            raise ValueError("beta must lie in (0, 1/3)")
        if self.mode not in ("rigorous", "toy"):
            raise ValueError("mode must be 'rigorous' or 'toy'")
        if self.mode == "rigorous":
            hi = (1 - self.beta) / (2 * self.beta)
            if not (1 < self.b < min(1.5, hi)):
                raise ValueError(
                    f"rigorous mode requires 1 < b < min(3/2, (1-beta)/(2*beta)) = "
                    f"{min(1.5, hi):.4f}, got b = {self.b}"
                )
        else:
            if not (1 < self.b):
                raise ValueError("b must exceed 1")


@dataclass(frozen=True)
class StageValues:
    q: int
    lam: float        # lambda_q = 2*pi*ceil(a^(b^q))
    lam_int: int      # ceil(a^(b^q))
    delta: float
    ell: float
    tau: float


def _lambda_int(params: SchemeParams, q: int) -> int:
    with mp.workdps(60 + 10 * q):
        val = mp.power(mp.mpf(params.a), mp.power(mp.mpf(params.b), q))
        return int(mp.ceil(val))


def stage_values(params: SchemeParams, q: int) -> StageValues:
    """Exact schedule entries at stage q (q >= 0)."""
    if q < 0:
        raise ValueError("stage index must be non-negative")
    li = [_lambda_int(params, q + j) for j in range(3)]
    lam = [2 * mp.pi * n for n in li]
    beta, alpha, gamma = params.beta, params.alpha, params.gamma
    with mp.workdps(60):
        delta = [mp.power(l, -2 * beta) for l in lam]
        ell = (mp.power(delta[2], (1 + gamma) / 2)
               / (mp.sqrt(delta[0]) * lam[0] * mp.power(lam[1], 1.5 * alpha)))
        tau = mp.power(ell, 4 * alpha) / (mp.sqrt(delta[0]) * lam[0])
        return StageValues(q=q, lam=float(lam[0]), lam_int=li[0],
                           delta=float(delta[0]), ell=float(ell), tau=float(tau))


def local_scale(rho_value: float, params: SchemeParams, q: int) -> float:
    """Time-local mollification scale ell_{q,i} = rho^((1+gamma)/2) /
    (delta_q^(1/2) lambda_q^(1+3*alpha/2))."""
    if rho_value <= 0:
        raise ValueError("rho must be positive")
    sv = stage_values(params, q)
    return float(
        rho_value ** ((1 + params.gamma) / 2)
        / (sv.delta**0.5 * sv.lam ** (1 + 1.5 * params.alpha))
    )


@dataclass
class InequalityVerdict:
    name: str
    holds: bool
    margin: float          # log10(rhs) - log10(lhs), positive iff holds
    description: str = ""
    per_stage: list = field(default_factory=list)


@dataclass
class ValidationReport:
    params: dict
    verdicts: list
    minimal_a: int | None
    all_hold: bool
    notes: list

    def to_json(self, **kw):
        return json.dumps(
            {
                "params": self.params,
                "verdicts": [asdict(v) for v in self.verdicts],
                "minimal_a": self.minimal_a,
                "all_hold": self.all_hold,
                "notes": self.notes,
            },
            indent=2,
            **kw,
        )


def _log_margin(lhs, rhs):
    """log10(rhs/lhs); positive means lhs <= rhs with that many digits slack."""
    with mp.workdps(60):
        if lhs <= 0:
            return float("inf")
        return float(mp.log10(mp.mpf(rhs) / mp.mpf(lhs)))


def _stagewise(params, q_max, check):
    margins = []
    for q in range(q_max + 1):
        sv = [stage_values(params, q + j) for j in range(3)]
        margins.append(check(sv))
    worst = min(margins)
    return worst, margins


def validate(params: SchemeParams, q_max: int = 5) -> ValidationReport:
    """Evaluate every schedule inequality at stages q <= q_max and search the
    minimal integer a making the a-dependent ones hold."""
    b, beta, alpha = params.b, params.beta, params.alpha
    gamma, gamma_hat, nu = params.gamma, params.gamma_hat, params.nu
    nbar = params.nbar
    verdicts = []
    notes = []

    # --- a-independent exponent conditions -------------------------------
    hi = (1 - beta) / (2 * beta)
    verdicts.append(InequalityVerdict(
        "C1-b-range", 1 < b < min(1.5, hi), min(1.5, hi) - b,
        "1 < b < min(3/2, (1-beta)/(2 beta))"))
    expo2 = (b - 1) * (1 - beta * (1 + 2 * b)) - 8 * alpha * b
    verdicts.append(InequalityVerdict(
        "C2-exponent", expo2 > 0, expo2,
        "(b-1)(1-beta(1+2b)) > 8 alpha b, the log-lambda_q form of C2"))
    expo4_lhs = nbar * ((b - 1) * (1 - beta * (b + 1)) - gamma * beta * b**2
                        - 1.5 * alpha * b)
    expo4_rhs = 1 + b + (1 + gamma) * beta * b**2 + 1.5 * alpha * b - beta
    verdicts.append(InequalityVerdict(
        "C4-exponent", expo4_lhs > expo4_rhs, expo4_lhs - expo4_rhs,
        f"Nbar-condition for the sharpened ell bound at Nbar = {nbar}"))
    if gamma_hat > 0:
        lo, hi2 = alpha * b / beta, 1.5 * alpha / beta
        verdicts.append(InequalityVerdict(
            "gamma-hat-sandwich", lo < gamma_hat < hi2,
            min(gamma_hat - lo, hi2 - gamma_hat),
            "alpha b/beta < gamma_hat < 3 alpha/(2 beta)"))
        verdicts.append(InequalityVerdict(
            "gamma-below-hat", 0 < gamma < gamma_hat - alpha / (2 * beta),
            gamma_hat - alpha / (2 * beta) - gamma,
            "gamma < gamma_hat - alpha/(2 beta)"))
    if nu > 0:
        thresh = (1 - 3 * beta + alpha) / (2 * beta)
        verdicts.append(InequalityVerdict(
            "nu-condition", nu > thresh, nu - thresh,
            "nu > (1 - 3 beta + alpha)/(2 beta)"))
    if params.beta_hat > 0:
        bh = params.beta_hat
        c1 = b**2 * (1 + nu) < (1 - bh) / (2 * bh)
        c2v = 2 * bh * (b**2 - 1) < 1
        verdicts.append(InequalityVerdict(
            "solution-scheme-b", c1 and c2v,
            min((1 - bh) / (2 * bh) - b**2 * (1 + nu), 1 - 2 * bh * (b**2 - 1)),
            "b^2(1+nu) < (1-beta_hat)/(2 beta_hat) and 2 beta_hat (b^2-1) < 1"))

    # --- a-dependent stagewise inequalities -------------------------------
    def c2(sv):
        lhs = mp.sqrt(sv[1].delta) * mp.sqrt(sv[0].delta) * sv[0].lam
        rhs = sv[2].delta * mp.power(sv[1].lam, 1 - 8 * alpha)
        return _log_margin(lhs, rhs)

    def c3_low(sv):
        return _log_margin(1.0 / sv[1].lam, sv[0].ell)

    def c3_high(sv):
        return _log_margin(sv[0].ell, 1.0 / sv[0].lam)

    def c4(sv):
        lhs = mp.power(sv[1].lam, 1 - nbar)
        rhs = mp.power(sv[0].ell, nbar + 1)
        return _log_margin(lhs, rhs)

    stage_checks = [("C2-at-a", c2), ("C3-lower", c3_low),
                    ("C3-upper", c3_high), ("C4-at-a", c4)]
    for name, fn in stage_checks:
        worst, margins = _stagewise(params, q_max, fn)
        verdicts.append(InequalityVerdict(
            name, worst >= 0, worst,
            "stagewise, margin in decimal digits", margins))

    # --- minimal a by bisection over integers -----------------------------
    minimal_a = None
    exponents_ok = all(v.holds for v in verdicts
                       if v.name in ("C1-b-range", "C2-exponent", "C4-exponent"))
    if exponents_ok:
        def a_works(a_int):
            trial = SchemeParams(a=float(a_int), b=b, beta=beta, alpha=alpha,
                                 gamma=gamma, gamma_hat=gamma_hat, nu=nu,
                                 nbar=nbar, mode=params.mode,
                                 beta_hat=params.beta_hat)
            return all(
                _stagewise(trial, q_max, fn)[0] >= 0 for _, fn in stage_checks
            )

        lo_a, hi_a = 2, 2
        while not a_works(hi_a):
            hi_a *= 4
            if hi_a > 10**9:
                hi_a = None
                break
        if hi_a is not None:
            lo_a = max(2, hi_a // 4)
            while lo_a < hi_a:
                mid = (lo_a + hi_a) // 2
                if a_works(mid):
                    hi_a = mid
                else:
                    lo_a = mid + 1
            minimal_a = hi_a
    else:
        notes.append("exponent-level conditions fail; no a can make the "
                     "stagewise inequalities hold for all q")

    all_hold = all(v.holds for v in verdicts)
    if params.mode == "toy" and not all_hold:
        notes.append("toy mode: violated inequalities are reported, not fatal")
    notes.append("constant-level sufficiency is not assertable: the source "
                 "estimates carry unquantified constants; margins are the "
                 "available lambda_q slack in decimal digits")
    return ValidationReport(
        params=asdict(params), verdicts=verdicts, minimal_a=minimal_a,
        all_hold=all_hold, notes=notes)


TOY_PRESET = SchemeParams(a=2.0, b=1.2, beta=0.25, alpha=0.02, gamma=0.05,
                          gamma_hat=0.15, nu=1.2, nbar=10, mode="toy")
