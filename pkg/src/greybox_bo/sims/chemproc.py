"""Equilibrium-reactor / flash / recycle flowsheet with an operating-cost objective.

Species order is (A, B, C) throughout, for the gas-phase reaction
1/2 A + 3/2 B <=> C.  Flows are kmol/hr, temperatures K, pressures bar,
heat duties MJ/hr and compressor loads kW.

Design vector: ``x = [T_RX, P_RX, T_S, P_S, R]``.
Intermediates: ``y = [eta_A, eta_B, eta_C, Q4, Q5_cool]`` where ``Q5_cool``
is the separator cooling load as a positive number (the separator duty is
``-Q5_cool``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ..composite import CompositeProblem, IntermediateNode

logger = logging.getLogger(__name__)

SPECIES = ("A", "B", "C")
X_NAMES = ("T_RX", "P_RX", "T_S", "P_S", "R")
Y_NAMES = ("eta_A", "eta_B", "eta_C", "Q4", "Q5_cool")
LOWER = np.array([673.0, 250.0, 288.0, 140.0, 0.5])
UPPER = np.array([973.0, 450.0, 338.0, 170.0, 0.9])

# reactor feed conditions before the feed compressors
T_FEED = 298.0
P_FEED = 20.0

MMHG_TO_BAR = 1.01325 / 760.0


@dataclass(frozen=True)
class ThermoParams:
    R: float = 8.314
    T0: float = 298.0
    P0: float = 1.0
    dH_rxn: float = 39200.0
    dG_rxn: float = 32900.0
    nu: tuple = (-0.5, -1.5, 1.0)
    alpha: tuple = (3.280, 3.249, 5.578)
    beta: tuple = (0.593e-3, 0.422e-3, 3.020e-3)
    gamma: tuple = (0.0, 0.0, 0.0)
    zeta: tuple = (0.040e5, 0.083e5, -0.186e5)
    # ammonia-like condensable: Antoine log10 P[mmHg] = a - b / (T + c)
    antoine: tuple = (7.36050, 926.132, -32.98)
    latent_heat_C: float = 23.35  # MJ/kmol
    k_value_A: float = 50.0

    @property
    def coeff_table(self) -> np.ndarray:
        """Per-species heat-capacity coefficients, shape (3, 4)."""
        return np.array([self.alpha, self.beta, self.gamma, self.zeta]).T

    @property
    def nu_total(self) -> float:
        return float(sum(self.nu))

    def rxn_coeffs(self) -> np.ndarray:
        return np.asarray(self.nu) @ self.coeff_table


@dataclass(frozen=True)
class EconParams:
    F_A: float = 1000.0
    F_B: float = 3000.0
    F_bar: float = 1900.0
    w_A0: float = 6.00
    w_B0: float = 1.40
    w_prod: tuple = (0.0, 0.0, 8.50)
    w_heat: float = 1.92e-2
    w_cool: float = 5.00e-3
    w_e: float = 1.42e-1
    w_3: float = 1000.0


THERMO = ThermoParams()
ECON = EconParams()


def _icph(T, c, T0=THERMO.T0):
    return (c[..., 0] * (T - T0) + c[..., 1] / 2 * (T**2 - T0**2) + c[..., 2] / 3 * (T**3 - T0**3)
            - c[..., 3] * (1.0 / T - 1.0 / T0))


def icph(T, coeffs, T0=THERMO.T0):
    """Dimensionless enthalpy integral of cp/R from T0 to T."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    return _icph(T, np.asarray(coeffs, dtype=float), T0)


def icps(T, coeffs, T0=THERMO.T0):
    """Dimensionless entropy integral of cp/(R T) from T0 to T."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    c = np.asarray(coeffs, dtype=float)
    a, b, g, z = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    return (a * (np.log(T) - np.log(T0)) + b * (T - T0) + g / 2 * (T**2 - T0**2)
            - z * (T**-2.0 - T0**-2.0))


def mixture_coeffs(composition, thermo=THERMO):
    x = np.asarray(composition, dtype=float)
    return x @ thermo.coeff_table


def _fractions(flows):
    flows = np.asarray(flows, dtype=float)
    tot = flows.sum(axis=-1, keepdims=True)
    return flows / np.where(tot != 0, tot, 1.0)


def heater_duty(F, T_in, T_out, composition, thermo=THERMO):
    """Constant-pressure heating duty in MJ/hr (negative when cooling)."""
    c = mixture_coeffs(composition, thermo)
    return np.asarray(F) * thermo.R * (_icph(np.asarray(T_out, float), c) - _icph(np.asarray(T_in, float), c)) * 1e-3


def compressor(F, T_in, P_in, P_out, composition, thermo=THERMO):
    """Ideal-gas isentropic compressor; returns (T_out [K], W [kW]).

    Two passes: the first uses cp at the inlet, the second the mean cp over
    [T_in, T_out] from the enthalpy integral.
    """
    P_in = np.asarray(P_in, dtype=float)
    P_out = np.asarray(P_out, dtype=float)
    if np.any(P_out < P_in):
        raise ValueError("compressor outlet pressure below inlet pressure")
    T_in = np.asarray(T_in, dtype=float)
    c = mixture_coeffs(composition, thermo)
    log_ratio = np.log(P_out / P_in)
    h_in = _icph(T_in, c)
    cp_in = c[..., 0] + c[..., 1] * T_in + c[..., 2] * T_in**2 + c[..., 3] / T_in**2
    T_out = T_in * np.exp(log_ratio / cp_in)
    dT = T_out - T_in
    moved = np.abs(dT) > 1e-9 * T_in
    cp_mean = np.where(moved, (_icph(T_out, c) - h_in) / np.where(moved, dT, 1.0), cp_in)
    T_out = T_in * np.exp(log_ratio / cp_mean)
    W = np.asarray(F) * thermo.R * (_icph(T_out, c) - h_in) / 3600.0
    return T_out, W


def ln_equilibrium_constant(T_RX, thermo=THERMO):
    c = thermo.rxn_coeffs()
    T = np.asarray(T_RX, dtype=float)
    dG = (thermo.dH_rxn - T / thermo.T0 * (thermo.dH_rxn - thermo.dG_rxn)
          + thermo.R * (icph(T, c) - T * icps(T, c)))
    return -dG / (thermo.R * T)


def _extent_residual(eps, feed, nu, rhs):
    n = feed + nu * eps
    y = n / n.sum()
    return float(np.sum(nu * np.log(y)) - rhs)


def equilibrium_extent(T_RX, P_RX, feed, thermo=THERMO) -> float:
    """Reaction extent (kmol/hr of C formed) at chemical equilibrium."""
    feed = np.asarray(feed, dtype=float)
    if np.any(feed < 0):
        raise ValueError("feed flows must be nonnegative")
    nu = np.asarray(thermo.nu)
    rhs = -thermo.nu_total * np.log(P_RX / thermo.P0) + ln_equilibrium_constant(T_RX, thermo)
    lo = max(-feed[i] / nu[i] for i in range(3) if nu[i] > 0)
    hi = min(-feed[i] / nu[i] for i in range(3) if nu[i] < 0)
    pad = 1e-13 * max(feed.sum(), 1.0)
    a, b = lo + pad, hi - pad
    ra, rb = _extent_residual(a, feed, nu, rhs), _extent_residual(b, feed, nu, rhs)
    if not (ra < 0 < rb):
        raise ValueError(f"no sign change of the equilibrium residual on [{a}, {b}]")
    return brentq(_extent_residual, a, b, args=(feed, nu, rhs), xtol=1e-12 * max(hi - lo, 1.0),
                  rtol=4 * np.finfo(float).eps, maxiter=200)


def reactor_duty(r_C, T_RX, thermo=THERMO):
    """Isothermal reactor duty in MJ/hr."""
    return np.asarray(r_C) * (thermo.dH_rxn + thermo.R * icph(T_RX, thermo.rxn_coeffs())) * 1e-3


def saturation_pressure_C(T, thermo=THERMO):
    a, b, c = thermo.antoine
    return 10.0 ** (a - b / (np.asarray(T, dtype=float) + c)) * MMHG_TO_BAR


def flash(feed, T_in, T_S, P_S, thermo=THERMO):
    """Isothermal flash of a hot (T_in) feed at (T_S, P_S).

    B never condenses, A has a fixed K-value and C follows Raoult's law.
    Returns (liquid flows, vapor flows, duty in MJ/hr).
    """
    feed = np.asarray(feed, dtype=float)
    total = feed.sum()
    z = feed / total
    K = np.array([thermo.k_value_A, np.inf, saturation_pressure_C(T_S, thermo) / P_S])

    def rr(V):
        return z[0] * (K[0] - 1) / (1 + V * (K[0] - 1)) + z[1] / V + z[2] * (K[2] - 1) / (1 + V * (K[2] - 1))

    if rr(1.0) >= 0:
        if z[1] == 0 and rr(1.0) > 0:
            logger.debug("flash: no liquid at T=%s P=%s", T_S, P_S)
        V = 1.0
    elif z[1] == 0 and rr(1e-300) <= 0:
        logger.debug("flash: all liquid at T=%s P=%s", T_S, P_S)
        V = 0.0
    else:
        V = brentq(rr, 1e-300 if z[1] == 0 else z[1] * 1e-3, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if V == 0.0:
        liquid = feed.copy()
    else:
        x = np.array([z[0] / (1 + V * (K[0] - 1)), 0.0, z[2] / (1 + V * (K[2] - 1))])
        liquid = (1 - V) * total * x
    vapor = feed - liquid
    duty = heater_duty(total, T_in, T_S, z, thermo) - thermo.latent_heat_C * liquid[2]
    return liquid, vapor, duty


@dataclass
class ProcessState:
    """Stream table and unit loads of a converged flowsheet."""

    x: np.ndarray
    streams: dict = field(default_factory=dict)
    extent: float = 0.0
    duties: dict = field(default_factory=dict)
    work: dict = field(default_factory=dict)
    tear_passes: int = 0
    tear_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "x": dict(zip(X_NAMES, map(float, self.x))),
            "streams": {k: {"flows": dict(zip(SPECIES, map(float, v["flows"]))),
                            "T": float(v["T"]), "P": float(v["P"])}
                        for k, v in self.streams.items()},
            "extent": float(self.extent),
            "duties_MJ_per_hr": {k: float(v) for k, v in self.duties.items()},
            "work_kW": {k: float(v) for k, v in self.work.items()},
            "tear_passes": self.tear_passes,
            "tear_residual": float(self.tear_residual),
        }


class TearConvergenceError(RuntimeError):
    def __init__(self, residual, passes):
        super().__init__(f"recycle did not converge after {passes} passes (residual {residual:.3e})")
        self.residual = residual


def _utility_cost(Q, econ=ECON):
    Q = np.asarray(Q, dtype=float)
    return econ.w_heat * np.maximum(Q, 0.0) + econ.w_cool * np.maximum(-Q, 0.0)


def _feed_section(X, thermo=THERMO, econ=ECON):
    """Compressor loads and heater duties of the two fresh feeds for design rows X."""
    T_RX, P_RX = X[:, 0], X[:, 1]
    out = {}
    for k, (name, F) in enumerate((("A", econ.F_A), ("B", econ.F_B)), start=1):
        comp = np.eye(3)[SPECIES.index(name)]
        T_c, W = compressor(F, np.full_like(T_RX, T_FEED), np.full_like(P_RX, P_FEED), P_RX, comp, thermo)
        out[f"W{k}"] = W
        out[f"T{k}"] = T_c
        out[f"Q{k}"] = heater_duty(F, T_c, T_RX, comp, thermo)
    return out


def whitebox_g(X, thermo=THERMO, econ=ECON):
    """Cost terms fixed by the design alone: reagents and fresh-feed utilities."""
    X = np.atleast_2d(X)
    fs = _feed_section(X, thermo, econ)
    return (econ.w_A0 * econ.F_A + econ.w_B0 * econ.F_B
            + _utility_cost(fs["Q1"], econ) + _utility_cost(fs["Q2"], econ)
            + econ.w_e * (fs["W1"] + fs["W2"]))


def reconstruct_streams(eta, F_A=ECON.F_A, F_B=ECON.F_B, R_frac=None, thermo=THERMO):
    """Generation, purge, recycle and product flows implied by (eta_A, eta_B, eta_C).

    ``eta`` may be a single triple or an ``(n, 3)`` array.  Returns a dict of
    arrays with trailing species axis where applicable.
    """
    eta = np.asarray(eta, dtype=float)
    eA, eB, eC = eta[..., 0], eta[..., 1], eta[..., 2]
    nu = thermo.nu
    r_B = -(1.0 - eB) * F_B
    r_A = nu[0] / nu[1] * r_B
    r_C = nu[2] / nu[1] * r_B
    purge = np.stack([(F_A + r_A) / (1 + eA), eB * F_B, eC * r_C / (1 + eC)], axis=-1)
    product = np.stack([eA * (F_A + r_A) / (1 + eA), np.zeros_like(eB), r_C / (1 + eC)], axis=-1)
    out = {
        "generation": np.stack([r_A, r_B, r_C], axis=-1),
        "purge": purge,
        "product": product,
        "F_P": purge.sum(axis=-1),
        "F_S": product.sum(axis=-1),
    }
    if R_frac is not None:
        R_frac = np.asarray(R_frac, dtype=float)
        out["recycle"] = purge * (R_frac / (1 - R_frac))[..., None]
        out["F_R"] = out["F_P"] * R_frac / (1 - R_frac)
    return out


def whitebox_h(X, Y, thermo=THERMO, econ=ECON):
    """Cost terms that depend on the intermediates: sales, demand penalty, recycle loop and RX/SEP utilities."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    T_RX, P_RX, T_S, P_S, R = X.T
    st = reconstruct_streams(Y[:, :3], econ.F_A, econ.F_B, R, thermo)
    prod = st["product"]
    revenue = prod @ np.asarray(econ.w_prod)
    penalty = econ.w_3 * ((prod[:, 2] - econ.F_bar) / econ.F_bar) ** 2
    comp = _fractions(st["recycle"])
    T3, W3 = compressor(st["F_R"], T_S, P_S, P_RX, comp, thermo)
    Q3 = heater_duty(st["F_R"], T3, T_RX, comp, thermo)
    Q4 = Y[:, 3]
    Q5 = -Y[:, 4]
    return (-revenue + penalty + econ.w_e * W3 + _utility_cost(Q3, econ)
            + _utility_cost(Q4, econ) + _utility_cost(Q5, econ))


def _reactor_flash(x, recycle, thermo):
    T_RX, P_RX, T_S, P_S, _ = x
    feed = np.array([ECON.F_A, ECON.F_B, 0.0]) + recycle
    eps = equilibrium_extent(T_RX, P_RX, feed, thermo)
    out = feed + np.asarray(thermo.nu) * eps
    out = np.maximum(out, 0.0)
    liquid, vapor, q5 = flash(out, T_RX, T_S, P_S, thermo)
    return feed, eps, out, liquid, vapor, q5


def simulate(x, thermo=THERMO, econ=ECON, damping=0.5, rtol=1e-6, max_passes=200):
    """Converge the flowsheet at design ``x``; returns (y, f, state)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (5,):
        raise ValueError("design vector must have five entries")
    if np.any(x < LOWER - 1e-9 * (UPPER - LOWER)) or np.any(x > UPPER + 1e-9 * (UPPER - LOWER)):
        raise ValueError("design point outside the design box")
    R = x[4]
    recycle = np.zeros(3)
    residual = np.inf
    for passes in range(1, max_passes + 1):
        _, _, _, _, vapor, _ = _reactor_flash(x, recycle, thermo)
        target = R * vapor
        residual = np.max(np.abs(target - recycle)) / max(np.max(np.abs(target)), 1e-30)
        recycle = damping * recycle + (1 - damping) * target
        if residual <= rtol:
            break
    else:
        raise TearConvergenceError(residual, max_passes)

    feed, eps, out, liquid, vapor, q5 = _reactor_flash(x, recycle, thermo)
    # close the balance exactly: whatever vapor is not recycled leaves as purge
    purge = vapor - recycle
    liquid = liquid.copy()
    liquid[1] = 0.0
    q4 = float(reactor_duty(eps, x[0], thermo))
    y = np.array([
        liquid[0] / purge[0],
        purge[1] / econ.F_B,
        purge[2] / liquid[2],
        q4,
        -q5,
    ])
    fs = _feed_section(x[None, :], thermo, econ)
    st = reconstruct_streams(y[:3], econ.F_A, econ.F_B, R, thermo)
    comp = _fractions(st["recycle"])
    T3, W3 = compressor(st["F_R"], x[2], x[3], x[1], comp, thermo)
    Q3 = heater_duty(st["F_R"], T3, x[0], comp, thermo)
    f = float(whitebox_g(x[None, :], thermo, econ)[0] + whitebox_h(x[None, :], y[None, :], thermo, econ)[0])

    def stream(flows, T, P):
        return {"flows": np.asarray(flows, dtype=float), "T": float(T), "P": float(P)}

    state = ProcessState(
        x=x.copy(),
        streams={
            "feed_A": stream([econ.F_A, 0, 0], T_FEED, P_FEED),
            "feed_B": stream([0, econ.F_B, 0], T_FEED, P_FEED),
            "reactor_in": stream(feed, x[0], x[1]),
            "reactor_out": stream(out, x[0], x[1]),
            "liquid_product": stream(liquid, x[2], x[3]),
            "vapor": stream(vapor, x[2], x[3]),
            "purge": stream(purge, x[2], x[3]),
            "recycle": stream(st["recycle"], x[2], x[3]),
        },
        extent=float(eps),
        duties={"Q1": float(fs["Q1"][0]), "Q2": float(fs["Q2"][0]), "Q3": float(Q3),
                "Q4": q4, "Q5": float(q5)},
        work={"W1": float(fs["W1"][0]), "W2": float(fs["W2"][0]), "W3": float(W3)},
        tear_passes=passes,
        tear_residual=float(residual),
    )
    return y, f, state


def make_problem(thermo=THERMO, econ=ECON, f_star=None) -> CompositeProblem:
    nodes = (
        IntermediateNode("eta_A", x_inputs=(2, 3), y_inputs=("eta_B",), lower_bound=1e-6, upper_bound=1.0),
        IntermediateNode("eta_B", x_inputs=(0, 1, 4, 2), lower_bound=1e-6),
        IntermediateNode("eta_C", x_inputs=(2, 3), y_inputs=("eta_B",), lower_bound=1e-6),
        IntermediateNode("Q4", x_inputs=(0, 1), y_inputs=("eta_A", "eta_B"), lower_bound=1e-6),
        IntermediateNode("Q5_cool", x_inputs=(0, 4, 2, 3), y_inputs=("eta_B",), lower_bound=1e-6),
    )
    return CompositeProblem(
        name="chemproc",
        lower=LOWER,
        upper=UPPER,
        nodes=nodes,
        g=lambda X: whitebox_g(X, thermo, econ),
        h=lambda X, Y: whitebox_h(X, Y, thermo, econ),
        sampler=lambda x: simulate(x, thermo, econ)[0],
        f_star=f_star,
        x_names=X_NAMES,
    )
