"""Dynamic device models: classical synchronous machine, ZIP load, and
voltage-source-behind-filter converters (grid-following and grid-forming).

Conventions shared by every model:
  * all phasors live in the system-synchronous reference frame,
  * devices inject current into the network (loads inject negative current),
  * reported complex frequencies are stationary-frame per-unit values, i.e.
    the frame-relative log-derivative divided by omega_base plus j*1.

Each device exposes the same small surface the integrator relies on:
`derivatives`, `injected_current`, the analytic current sensitivities used to
recover exact voltage rates, and `analytic_cf`.
"""

from __future__ import annotations

import cmath

import numpy as np

from .errors import InfeasibleInit, MagnitudeUnderflow, NotAnalytical
from .primitives import MAGNITUDE_GUARD

ZIP_FRACTION_TOL = 1e-12


def _require_magnitude(value: float, what: str) -> None:
    if value <= MAGNITUDE_GUARD:
        raise MagnitudeUnderflow(f"|{what}| = {value:.3e} at or below guard")


# ---------------------------------------------------------------------------
# Closed-form current CFs
# ---------------------------------------------------------------------------

def sm_current_cf(s, i_mag, xd_prime, omega_r, eta_v):
    """CF of the current injected by a classical machine.

    `s` is the terminal complex power v̄·ı̄*, `i_mag` the current magnitude,
    `omega_r` the rotor speed in pu and `eta_v` the stationary-frame CF of
    the terminal voltage.  Broadcasts over numpy arrays.
    """
    return s / (1j * xd_prime * i_mag**2) * (1j * omega_r - eta_v) + 1j * omega_r


def ibr_current_cf(s, i_mag, z_f, y_f, eta_e, eta_v):
    """CF of the current injected by a voltage source ē behind a series
    impedance z̄_f and shunt admittance ȳ_f.

    Degenerates to `sm_current_cf` for z̄_f = j·x'_d, ȳ_f = 0 and
    η̄_e = j·ω_r.
    """
    return s / (z_f * i_mag**2) * (1.0 + z_f * y_f) * (eta_e - eta_v) + eta_e


def z_load_cf(eta_v):
    """Constant-impedance load: the current CF equals the voltage CF."""
    return eta_v


def s_load_cf(eta_v):
    """Constant-power load: the current CF is the negated conjugate of the
    voltage CF (rho flips sign, omega is preserved)."""
    return -np.conj(eta_v)


def sm_coherency_residual(
    m1: float, m2: float, xd1: float, xd2: float, i1_0: float, i2_0: float
) -> float:
    """How far two parallel classical machines are from the parameter/state
    ratio chain x'_d1/x'_d2 = M2/M1 = ı2(t0)/ı1(t0); zero iff it holds."""
    if min(m1, m2, xd1, xd2, i1_0, i2_0) <= 0.0:
        raise ValueError("parameters and initial current magnitudes must be positive")
    r_x = xd1 / xd2
    r_m = m2 / m1
    r_i = i2_0 / i1_0
    return max(abs(r_x - r_m), abs(r_m - r_i))


# ---------------------------------------------------------------------------
# Device models
# ---------------------------------------------------------------------------

class Device:
    """Base class; subclasses fill in the state layout and physics."""

    n_states: int = 0
    state_names: tuple[str, ...] = ()
    kind: str = "device"
    has_analytic_cf: bool = True
    is_load: bool = False
    settable_params: tuple[str, ...] = ()

    def __init__(self, name: str, bus: int):
        self.name = name
        self.bus = bus

    def initial_state(self, v: complex, s: complex) -> np.ndarray:
        """Back-solve internal states and setpoints from the power-flow
        terminal voltage and this device's complex-power share."""
        raise NotImplementedError

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        return np.empty(0)

    def injected_current(self, x: np.ndarray, v: complex) -> complex:
        raise NotImplementedError

    def voltage_sensitivity(self, x: np.ndarray, v: complex) -> tuple[complex, complex]:
        """(a, b) such that dı̄ = a·dv̄ + b·dv̄* at fixed states."""
        raise NotImplementedError

    def current_state_rate(self, x: np.ndarray, xdot: np.ndarray, v: complex) -> complex:
        """State-driven part of dı̄/dt (the voltage-driven part comes from
        `voltage_sensitivity`)."""
        return 0.0 + 0.0j

    def analytic_cf(
        self, x: np.ndarray, xdot: np.ndarray, v: complex, eta_v: complex
    ) -> complex:
        raise NotImplementedError

    def set_param(self, name: str, value: float) -> None:
        if name not in self.settable_params:
            raise ValueError(f"{self.kind} {self.name!r} has no settable parameter {name!r}")
        setattr(self, name, float(value))

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, bus={self.bus})"


class SynchronousMachine(Device):
    """Lossless classical model: constant EMF magnitude behind x'_d, swing
    dynamics in (rotor angle, speed)."""

    n_states = 2
    state_names = ("delta", "omega")
    kind = "sm"
    settable_params = ("p_m", "damping")

    def __init__(
        self,
        name: str,
        bus: int,
        inertia: float,
        xd_prime: float,
        omega_base: float,
        damping: float = 0.0,
        p: float = 0.0,
        q_weight: float | None = None,
        v_set: float | None = None,
    ):
        super().__init__(name, bus)
        if inertia <= 0.0 or xd_prime <= 0.0:
            raise ValueError("inertia and xd_prime must be positive")
        self.inertia = inertia
        self.xd_prime = xd_prime
        self.damping = damping
        self.omega_base = omega_base
        self.p = p  # dispatch weight / setpoint, pu
        self.q_weight = q_weight  # reactive share among same-bus sources; defaults to p
        self.v_set = v_set
        self.p_m = 0.0
        self.e_field = 1.0  # constant EMF magnitude e'_q, fixed at init
        self._inv_jx = 1.0 / (1j * xd_prime)

    def initial_state(self, v: complex, s: complex) -> np.ndarray:
        i = (s / v).conjugate()
        e_vec = v + 1j * self.xd_prime * i
        if abs(e_vec) <= MAGNITUDE_GUARD:
            raise InfeasibleInit(f"machine {self.name!r} needs a zero internal EMF")
        self.e_field = abs(e_vec)
        delta = cmath.phase(e_vec)
        p_e = (e_vec * i.conjugate()).real
        self.p_m = p_e
        return np.array([delta, 1.0])

    def emf(self, x: np.ndarray) -> complex:
        return self.e_field * cmath.exp(1j * x[0])

    def injected_current(self, x: np.ndarray, v: complex) -> complex:
        return (self.emf(x) - v) * self._inv_jx

    def electrical_power(self, x: np.ndarray, v: complex) -> float:
        e_vec = self.emf(x)
        i = (e_vec - v) * self._inv_jx
        return (e_vec * i.conjugate()).real

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        p_e = self.electrical_power(x, v)
        d_delta = self.omega_base * (x[1] - 1.0)
        d_omega = (self.p_m - p_e - self.damping * (x[1] - 1.0)) / self.inertia
        return np.array([d_delta, d_omega])

    def voltage_sensitivity(self, x, v):
        return -self._inv_jx, 0.0 + 0.0j

    def current_state_rate(self, x, xdot, v):
        # dĒ/dt = j·δ̇·Ē
        return 1j * xdot[0] * self.emf(x) * self._inv_jx

    def analytic_cf(self, x, xdot, v, eta_v):
        i = self.injected_current(x, v)
        i_mag = abs(i)
        _require_magnitude(i_mag, f"i({self.name})")
        s = v * i.conjugate()
        return sm_current_cf(s, i_mag, self.xd_prime, x[1], eta_v)


class ZipLoad(Device):
    """Static ZIP load: constant-impedance / constant-current / constant-power
    fractions of the base powers, as polynomials in the voltage magnitude."""

    n_states = 0
    kind = "zip"
    is_load = True
    settable_params = ("p0", "q0")

    def __init__(
        self,
        name: str,
        bus: int,
        p0: float,
        q0: float,
        kz_p: float = 1.0,
        ki_p: float = 0.0,
        kp_p: float = 0.0,
        kz_q: float = 1.0,
        ki_q: float = 0.0,
        kp_q: float = 0.0,
    ):
        super().__init__(name, bus)
        if abs(kz_p + ki_p + kp_p - 1.0) > ZIP_FRACTION_TOL:
            raise ValueError(f"load {name!r}: active-power fractions must sum to 1")
        if abs(kz_q + ki_q + kp_q - 1.0) > ZIP_FRACTION_TOL:
            raise ValueError(f"load {name!r}: reactive-power fractions must sum to 1")
        self.p0 = p0
        self.q0 = q0
        # scheduled draw at the power-flow point, pu; survives rebasing
        self.nominal_p = p0
        self.nominal_q = q0
        self.kz_p, self.ki_p, self.kp_p = kz_p, ki_p, kp_p
        self.kz_q, self.ki_q, self.kp_q = kz_q, ki_q, kp_q

    @property
    def is_pure_impedance(self) -> bool:
        return (self.p0 == 0.0 or self.kz_p == 1.0) and (self.q0 == 0.0 or self.kz_q == 1.0)

    @property
    def is_pure_power(self) -> bool:
        return (self.p0 == 0.0 or self.kp_p == 1.0) and (self.q0 == 0.0 or self.kp_q == 1.0)

    @property
    def has_analytic_cf(self) -> bool:  # type: ignore[override]
        return self.is_pure_impedance or self.is_pure_power

    def drawn_power(self, v_mag: float) -> tuple[float, float]:
        p = self.p0 * (self.kp_p + self.ki_p * v_mag + self.kz_p * v_mag**2)
        q = self.q0 * (self.kp_q + self.ki_q * v_mag + self.kz_q * v_mag**2)
        return p, q

    def rebase(self, v_mag: float) -> None:
        """Rescale the base powers so the drawn power at `v_mag` equals the
        scheduled constant-power draw used by the power flow."""
        poly_p = self.kp_p + self.ki_p * v_mag + self.kz_p * v_mag**2
        poly_q = self.kp_q + self.ki_q * v_mag + self.kz_q * v_mag**2
        self.p0 = self.nominal_p / poly_p if poly_p else 0.0
        self.q0 = self.nominal_q / poly_q if poly_q else 0.0

    def scale(self, factor: float) -> None:
        self.p0 *= factor
        self.q0 *= factor
        self.nominal_p *= factor
        self.nominal_q *= factor

    def initial_state(self, v: complex, s: complex) -> np.ndarray:
        self.rebase(abs(v))
        return np.empty(0)

    def injected_current(self, x: np.ndarray, v: complex) -> complex:
        # Split per component: the Z term never divides by the voltage.
        sz = complex(self.p0 * self.kz_p, -self.q0 * self.kz_q)
        i = -sz * v
        si = complex(self.p0 * self.ki_p, -self.q0 * self.ki_q)
        sp = complex(self.p0 * self.kp_p, -self.q0 * self.kp_q)
        if si != 0.0 or sp != 0.0:
            v_mag = abs(v)
            _require_magnitude(v_mag, f"v({self.name})")
            i -= si * v / v_mag
            i -= sp / v.conjugate()
        return i

    def voltage_sensitivity(self, x, v):
        v_mag = abs(v)
        p, q = self.drawn_power(v_mag)
        _require_magnitude(v_mag, f"v({self.name})")
        dp = self.p0 * (self.ki_p + 2.0 * self.kz_p * v_mag)
        dq = self.q0 * (self.ki_q + 2.0 * self.kz_q * v_mag)
        g = complex(dp, -dq)
        vc = v.conjugate()
        a = -g / (2.0 * v_mag)
        b = -g * v / (2.0 * v_mag * vc) + complex(p, -q) / vc**2
        return a, b

    def analytic_cf(self, x, xdot, v, eta_v):
        if self.is_pure_impedance:
            return z_load_cf(eta_v)
        if self.is_pure_power:
            return s_load_cf(eta_v)
        raise NotAnalytical(
            f"load {self.name!r} mixes ZIP components; use the numerical estimator"
        )


class IbrFilter:
    """Output filter of a converter: series impedance, shunt admittance and
    the fixed DC-side voltage."""

    def __init__(self, z_f: complex, y_f: complex = 0j, v_dc: float = 1.0):
        if abs(z_f) == 0.0:
            raise ValueError("filter series impedance must be nonzero")
        self.z_f = complex(z_f)
        self.y_f = complex(y_f)
        self.v_dc = v_dc
        self.through = 1.0 + self.z_f * self.y_f


class _ConverterBase(Device):
    """Shared filter algebra for both converter types."""

    def __init__(self, name: str, bus: int, filter: IbrFilter, omega_base: float, p: float):
        super().__init__(name, bus)
        self.filter = filter
        self.omega_base = omega_base
        self.p = p

    def internal_voltage(self, x: np.ndarray) -> complex:
        raise NotImplementedError

    def injected_current(self, x: np.ndarray, v: complex) -> complex:
        f = self.filter
        return (self.internal_voltage(x) - f.through * v) / f.z_f

    def voltage_sensitivity(self, x, v):
        f = self.filter
        return -f.through / f.z_f, 0.0 + 0.0j

    def _cf_from_internal(self, x, xdot, v, eta_v, eta_e):
        i = self.injected_current(x, v)
        i_mag = abs(i)
        _require_magnitude(i_mag, f"i({self.name})")
        s = v * i.conjugate()
        return ibr_current_cf(s, i_mag, self.filter.z_f, self.filter.y_f, eta_e, eta_v)


class GridFollowingConverter(_ConverterBase):
    """PLL-synchronized current source: PI control of the measured dq current
    against fixed references, modulation applied to the fixed DC voltage."""

    n_states = 6
    state_names = ("pi_d", "pi_q", "im_d", "im_q", "x_pll", "theta")
    kind = "gfl"
    settable_params = ("iref_d", "iref_q")

    def __init__(
        self,
        name: str,
        bus: int,
        filter: IbrFilter,
        omega_base: float,
        kp_current: float = 0.2,
        ki_current: float = 5.0,
        t_measure: float = 0.01,
        kp_pll: float = 0.1,
        ki_pll: float = 1.0,
        omega_ref: float = 1.0,
        p: float = 0.0,
    ):
        super().__init__(name, bus, filter, omega_base, p)
        if t_measure <= 0.0:
            raise ValueError("measurement time constant must be positive")
        self.kp_current = kp_current
        self.ki_current = ki_current
        self.t_measure = t_measure
        self.kp_pll = kp_pll
        self.ki_pll = ki_pll
        self.omega_ref = omega_ref
        self.iref_d = 0.0
        self.iref_q = 0.0

    @property
    def i_ref(self) -> complex:
        return complex(self.iref_d, self.iref_q)

    def initial_state(self, v: complex, s: complex) -> np.ndarray:
        f = self.filter
        i = (s / v).conjugate()
        e_vec = f.through * v + f.z_f * i
        theta = cmath.phase(v)
        rot = cmath.exp(-1j * theta)
        m_dq = e_vec * rot / f.v_dc
        if abs(m_dq) <= MAGNITUDE_GUARD:
            raise InfeasibleInit(f"converter {self.name!r} needs zero modulation")
        i_dq = i * rot
        self.iref_d, self.iref_q = i_dq.real, i_dq.imag
        return np.array([m_dq.real, m_dq.imag, i_dq.real, i_dq.imag, 0.0, theta])

    def modulation(self, x: np.ndarray) -> complex:
        err = self.i_ref - complex(x[2], x[3])
        return complex(x[0], x[1]) + self.kp_current * err

    def internal_voltage(self, x: np.ndarray) -> complex:
        return self.modulation(x) * self.filter.v_dc * cmath.exp(1j * x[5])

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        theta = x[5]
        rot = cmath.exp(-1j * theta)
        i_net = self.injected_current(x, v)
        i_dq = i_net * rot
        v_q = (v * rot).imag
        i_m = complex(x[2], x[3])
        err = self.i_ref - i_m
        d_pi = self.ki_current * err
        d_im = (i_dq - i_m) / self.t_measure
        d_omega_pll = self.kp_pll * v_q + x[4]
        return np.array(
            [
                d_pi.real,
                d_pi.imag,
                d_im.real,
                d_im.imag,
                self.ki_pll * v_q,
                self.omega_base * d_omega_pll,
            ]
        )

    def current_state_rate(self, x, xdot, v):
        e_vec = self.internal_voltage(x)
        m_dq = self.modulation(x)
        m_dot = complex(xdot[0], xdot[1]) - self.kp_current * complex(xdot[2], xdot[3])
        e_dot = (m_dot / m_dq + 1j * xdot[5]) * e_vec
        return e_dot / self.filter.z_f

    def internal_cf(self, x: np.ndarray, xdot: np.ndarray, v: complex) -> complex:
        """Stationary-frame CF of the modulated internal voltage: radial part
        from the modulation magnitude, rotational part from the dq angle rate
        plus the PLL frequency estimate."""
        m_dq = self.modulation(x)
        _require_magnitude(abs(m_dq), f"m({self.name})")
        m_dot = complex(xdot[0], xdot[1]) - self.kp_current * complex(xdot[2], xdot[3])
        log_rate = m_dot / m_dq  # ṁ/m + j·α̇, 1/s
        rot = cmath.exp(-1j * x[5])
        v_q = (v * rot).imag
        omega_est = self.kp_pll * v_q + x[4] + self.omega_ref
        return complex(
            log_rate.real / self.omega_base,
            log_rate.imag / self.omega_base + omega_est,
        )

    def analytic_cf(self, x, xdot, v, eta_v):
        return self._cf_from_internal(x, xdot, v, eta_v, self.internal_cf(x, xdot, v))


class GridFormingConverter(_ConverterBase):
    """Droop-synchronized voltage source: PI loop on the measured voltage
    magnitude, power-frequency droop on the filtered output power."""

    n_states = 4
    state_names = ("e", "delta", "v_m", "p_m")
    kind = "gfm"
    settable_params = ("p_ref", "v_ref")

    def __init__(
        self,
        name: str,
        bus: int,
        filter: IbrFilter,
        omega_base: float,
        kp_voltage: float = 0.05,
        ki_voltage: float = 5.0,
        t_voltage: float = 0.02,
        t_power: float = 0.1,
        droop: float = 0.02,
        p: float = 0.0,
    ):
        super().__init__(name, bus, filter, omega_base, p)
        if t_voltage <= 0.0 or t_power <= 0.0:
            raise ValueError("measurement time constants must be positive")
        if droop < 0.0:
            raise ValueError("droop gain must be nonnegative")
        self.kp_voltage = kp_voltage
        self.ki_voltage = ki_voltage
        self.t_voltage = t_voltage
        self.t_power = t_power
        self.droop = droop
        self.p_ref = 0.0
        self.v_ref = 1.0

    def initial_state(self, v: complex, s: complex) -> np.ndarray:
        f = self.filter
        i = (s / v).conjugate()
        e_vec = f.through * v + f.z_f * i
        e_mag = abs(e_vec)
        if e_mag <= MAGNITUDE_GUARD:
            raise InfeasibleInit(f"converter {self.name!r} needs zero internal voltage")
        p_out = (v * i.conjugate()).real
        self.p_ref = p_out
        self.v_ref = abs(v)
        return np.array([e_mag, cmath.phase(e_vec), abs(v), p_out])

    def internal_voltage(self, x: np.ndarray) -> complex:
        return x[0] * cmath.exp(1j * x[1])

    def droop_frequency(self, x: np.ndarray) -> float:
        return self.droop * (self.p_ref - x[3]) + 1.0

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        v_mag = abs(v)
        i = self.injected_current(x, v)
        p_out = (v * i.conjugate()).real
        omega = self.droop_frequency(x)
        d_e = self.ki_voltage * (self.v_ref - x[2]) - self.kp_voltage / self.t_voltage * (
            x[2] - v_mag
        )
        return np.array(
            [
                d_e,
                self.omega_base * (omega - 1.0),
                (v_mag - x[2]) / self.t_voltage,
                (p_out - x[3]) / self.t_power,
            ]
        )

    def current_state_rate(self, x, xdot, v):
        e_vec = self.internal_voltage(x)
        e_dot = (xdot[0] / x[0] + 1j * xdot[1]) * e_vec
        return e_dot / self.filter.z_f

    def internal_cf(self, x: np.ndarray, xdot: np.ndarray) -> complex:
        _require_magnitude(x[0], f"e({self.name})")
        return complex(xdot[0] / (x[0] * self.omega_base), self.droop_frequency(x))

    def analytic_cf(self, x, xdot, v, eta_v):
        return self._cf_from_internal(x, xdot, v, eta_v, self.internal_cf(x, xdot))
