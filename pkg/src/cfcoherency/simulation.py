"""Steady-state initialization and time-domain DAE integration.

The network is algebraic, devices carry the dynamics.  Integration is
simultaneous implicit trapezoidal: one Newton iteration solves the
discretized device ODEs together with the bus current balance.  Discrete
events snap to step boundaries; the algebraic variables are re-solved right
after each event before integration resumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .devices import Device, ZipLoad
from .errors import InfeasibleInit, NewtonDivergence, NonConvergence
from .network import Network

EVENT_ACTIONS = ("load_scale", "load_disconnect_mw", "set_parameter")


@dataclass
class Event:
    """Discrete change applied at a step boundary."""

    time: float
    action: str
    bus: int | None = None
    factor: float | None = None
    amount: float | None = None
    device: str | None = None
    param: str | None = None
    value: float | None = None

    def __post_init__(self):
        if self.action not in EVENT_ACTIONS:
            raise ValueError(f"unknown event action {self.action!r}")


@dataclass
class AnalysisOptions:
    window: tuple[float, float] | None = None
    k_clusters: int = 4
    observation_points: list = field(default_factory=list)
    cluster_devices: list[str] | None = None


@dataclass
class Scenario:
    network: Network
    devices: list[Device]
    events: list[Event] = field(default_factory=list)
    t_end: float = 10.0
    dt: float = 1e-3
    tolerance: float = 1e-8
    omega_base: float = 2.0 * np.pi * 60.0
    s_base: float = 100.0
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ValueError("dt and t_end must be positive")
        for ev in self.events:
            if not 0.0 <= ev.time <= self.t_end:
                raise ValueError(f"event at t={ev.time} outside [0, {self.t_end}]")
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise ValueError("device names must be unique")

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def loads_at(self, bus: int) -> list[ZipLoad]:
        return [d for d in self.devices if isinstance(d, ZipLoad) and d.bus == bus]


# ---------------------------------------------------------------------------
# Power flow
# ---------------------------------------------------------------------------

@dataclass
class PowerFlowResult:
    voltages: np.ndarray  # complex per bus
    bus_injection: np.ndarray  # complex net S at every bus
    iterations: int
    mismatch: float


def power_flow(
    scenario: Scenario, tol: float = 1e-10, max_iter: int = 50
) -> PowerFlowResult:
    """Newton-Raphson power flow in polar coordinates.

    Loads enter as constant-power draws (ZIP bases are rebased afterwards at
    the solved voltage), generator buses hold their voltage setpoints.
    """
    net = scenario.network
    n = net.n_bus
    y = net.admittance()

    kinds = [b.kind for b in net.buses]
    slack = [i for i, k in enumerate(kinds) if k == "slack"]
    if len(slack) != 1:
        raise NonConvergence(f"need exactly one slack bus, found {len(slack)}")
    pv = [i for i, k in enumerate(kinds) if k == "generation"]
    pq = [i for i, k in enumerate(kinds) if k == "load"]

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for d in scenario.devices:
        if isinstance(d, ZipLoad):
            p_spec[d.bus] -= d.nominal_p
            q_spec[d.bus] -= d.nominal_q
        else:
            p_spec[d.bus] += d.p

    v_mag = np.ones(n)
    for b in net.buses:
        if b.kind != "load":
            v_mag[b.index] = b.v_set
    v_ang = np.zeros(n)

    pvpq = pv + pq
    it = 0
    mismatch = np.inf
    while True:
        v = v_mag * np.exp(1j * v_ang)
        s_calc = v * np.conj(y @ v)
        dp = s_calc.real - p_spec
        dq = s_calc.imag - q_spec
        f = np.concatenate([dp[pvpq], dq[pq]])
        mismatch = np.max(np.abs(f)) if f.size else 0.0
        if mismatch < tol:
            break
        if it >= max_iter:
            raise NonConvergence(
                f"power flow: mismatch {mismatch:.3e} after {max_iter} iterations"
            )
        # Standard complex-matrix power-injection derivatives.
        ibus = y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_e = np.diag(v / v_mag)
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
        ds_dvm = diag_v @ np.conj(y @ diag_e) + np.conj(diag_i) @ diag_e

        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"power flow: singular Jacobian ({exc})") from exc
        n_a = len(pvpq)
        v_ang[pvpq] += dx[:n_a]
        v_mag[pq] += dx[n_a:]
        it += 1

    v = v_mag * np.exp(1j * v_ang)
    return PowerFlowResult(v, v * np.conj(y @ v), it, float(mismatch))


# ---------------------------------------------------------------------------
# Device/network coupling
# ---------------------------------------------------------------------------

class DaeSystem:
    """Flattened view of all device states coupled through the bus equations."""

    def __init__(self, network: Network, devices: list[Device], omega_base: float):
        self.network = network
        self.devices = devices
        self.omega_base = omega_base
        self.y = network.admittance()
        self.n_bus = network.n_bus
        self.slices: list[slice] = []
        off = 0
        for d in devices:
            self.slices.append(slice(off, off + d.n_states))
            off += d.n_states
        self.n_states = off
        self.n_vars = off + 2 * self.n_bus
        self.yblk = self._real_block(self.y)

    @staticmethod
    def _real_block(y: np.ndarray) -> np.ndarray:
        n = y.shape[0]
        blk = np.zeros((2 * n, 2 * n))
        blk[0::2, 0::2] = y.real
        blk[0::2, 1::2] = -y.imag
        blk[1::2, 0::2] = y.imag
        blk[1::2, 1::2] = y.real
        return blk

    def derivatives(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_states)
        for d, sl in zip(self.devices, self.slices):
            if d.n_states:
                out[sl] = d.derivatives(x[sl], complex(v[d.bus]))
        return out

    def injections(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        inj = np.zeros(self.n_bus, dtype=complex)
        for d, sl in zip(self.devices, self.slices):
            inj[d.bus] += d.injected_current(x[sl], complex(v[d.bus]))
        return inj

    def network_residual(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.injections(x, v) - self.y @ v

    def voltage_rates(self, x: np.ndarray, v: np.ndarray, xdot: np.ndarray) -> np.ndarray:
        """Exact bus-voltage time derivatives by implicit differentiation of
        the current balance: (Ȳ - dı/dv̄)·v̇ - (dı/dv̄*)·v̇* = Σ state-driven rates."""
        a_diag = np.zeros(self.n_bus, dtype=complex)
        b_diag = np.zeros(self.n_bus, dtype=complex)
        c = np.zeros(self.n_bus, dtype=complex)
        for d, sl in zip(self.devices, self.slices):
            vb = complex(v[d.bus])
            a, b = d.voltage_sensitivity(x[sl], vb)
            a_diag[d.bus] += a
            b_diag[d.bus] += b
            c[d.bus] += d.current_state_rate(x[sl], xdot[sl], vb)
        a_sys = self.y - np.diag(a_diag)
        if np.all(b_diag == 0.0):
            return np.linalg.solve(a_sys, c)
        b_sys = -np.diag(b_diag)
        m = np.block(
            [
                [a_sys.real + b_sys.real, -(a_sys.imag - b_sys.imag)],
                [a_sys.imag + b_sys.imag, a_sys.real - b_sys.real],
            ]
        )
        rhs = np.concatenate([c.real, c.imag])
        sol = np.linalg.solve(m, rhs)
        return sol[: self.n_bus] + 1j * sol[self.n_bus :]

    def voltage_cf(self, v: np.ndarray, vdot: np.ndarray) -> np.ndarray:
        """Stationary-frame CF of every bus voltage, per unit."""
        return vdot / v / self.omega_base + 1j


FD_STEP = 1e-7


def _device_fd_blocks(dev: Device, x_d: np.ndarray, vb: complex):
    """Forward-difference sensitivities of (state derivatives, injected
    current) with respect to (own states, terminal voltage components)."""
    n = dev.n_states
    f0 = dev.derivatives(x_d, vb) if n else np.empty(0)
    i0 = dev.injected_current(x_d, vb)
    df_dx = np.zeros((n, n))
    di_dx = np.zeros(n, dtype=complex)
    for k in range(n):
        h = FD_STEP * (1.0 + abs(x_d[k]))
        xp = x_d.copy()
        xp[k] += h
        df_dx[:, k] = (dev.derivatives(xp, vb) - f0) / h
        di_dx[k] = (dev.injected_current(xp, vb) - i0) / h
    h = FD_STEP * (1.0 + abs(vb))
    df_dv = np.zeros((n, 2))
    di_dv = np.zeros(2, dtype=complex)
    for k, dv in enumerate((h, 1j * h)):
        f1 = dev.derivatives(x_d, vb + dv) if n else f0
        if n:
            df_dv[:, k] = (f1 - f0) / h
        di_dv[k] = (dev.injected_current(x_d, vb + dv) - i0) / h
    return f0, i0, df_dx, df_dv, di_dx, di_dv


class TrapezoidalIntegrator:
    """Fixed-step implicit trapezoidal scheme with a lazily refreshed Newton
    matrix and step-halving recovery."""

    def __init__(
        self,
        system: DaeSystem,
        tol: float = 1e-8,
        max_iter: int = 25,
        refresh_iter: int = 8,
        max_halvings: int = 4,
    ):
        self.system = system
        self.tol = tol
        self.max_iter = max_iter
        self.refresh_iter = refresh_iter
        self.max_halvings = max_halvings
        self._jinv: np.ndarray | None = None
        self._j_dt: float | None = None
        self.total_newton_iters = 0

    def invalidate_jacobian(self) -> None:
        self._jinv = None

    # -- residual/jacobian helpers ------------------------------------------

    def _pack(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        z = np.empty(self.system.n_vars)
        z[: self.system.n_states] = x
        z[self.system.n_states :: 2][: self.system.n_bus] = v.real
        z[self.system.n_states + 1 :: 2][: self.system.n_bus] = v.imag
        return z

    def _unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nx = self.system.n_states
        return z[:nx], z[nx::2] + 1j * z[nx + 1 :: 2]

    def _residual(
        self, z: np.ndarray, x_prev: np.ndarray, f_prev: np.ndarray, dt: float
    ) -> np.ndarray:
        sys = self.system
        x, v = self._unpack(z)
        f = sys.derivatives(x, v)
        r = np.empty(sys.n_vars)
        r[: sys.n_states] = x - x_prev - 0.5 * dt * (f_prev + f)
        rn = sys.network_residual(x, v)
        r[sys.n_states :: 2][: sys.n_bus] = rn.real
        r[sys.n_states + 1 :: 2][: sys.n_bus] = rn.imag
        return r

    def _jacobian(self, z: np.ndarray, dt: float) -> np.ndarray:
        sys = self.system
        nx = sys.n_states
        x, v = self._unpack(z)
        a = np.zeros((sys.n_vars, sys.n_vars))
        a[:nx, :nx] = np.eye(nx)
        for dev, sl in zip(sys.devices, sys.slices):
            _, _, df_dx, df_dv, di_dx, di_dv = _device_fd_blocks(dev, x[sl], complex(v[dev.bus]))
            ucol = nx + 2 * dev.bus
            urow = nx + 2 * dev.bus
            if dev.n_states:
                a[sl, sl] -= 0.5 * dt * df_dx
                a[sl, ucol : ucol + 2] -= 0.5 * dt * df_dv
                a[urow, sl] += di_dx.real
                a[urow + 1, sl] += di_dx.imag
            a[urow, ucol : ucol + 2] += di_dv.real
            a[urow + 1, ucol : ucol + 2] += di_dv.imag
        a[nx:, nx:] -= sys.yblk
        return a

    def _refresh(self, z: np.ndarray, dt: float) -> None:
        self._jinv = np.linalg.inv(self._jacobian(z, dt))
        self._j_dt = dt

    # -- stepping -------------------------------------------------------------

    def step(
        self, x: np.ndarray, v: np.ndarray, dt: float, _depth: int = 0
    ) -> tuple[np.ndarray, np.ndarray, int]:
        try:
            return self._newton_step(x, v, dt)
        except NewtonDivergence:
            if _depth >= self.max_halvings:
                raise
            self.invalidate_jacobian()
            x1, v1, n1 = self.step(x, v, 0.5 * dt, _depth + 1)
            x2, v2, n2 = self.step(x1, v1, 0.5 * dt, _depth + 1)
            self.invalidate_jacobian()
            return x2, v2, n1 + n2

    def _newton_step(
        self, x: np.ndarray, v: np.ndarray, dt: float
    ) -> tuple[np.ndarray, np.ndarray, int]:
        sys = self.system
        f_prev = sys.derivatives(x, v)
        z = self._pack(x, v)
        r0 = None
        for it in range(self.max_iter):
            r = self._residual(z, x, f_prev, dt)
            if not np.all(np.isfinite(r)):
                raise NewtonDivergence(f"non-finite residual at dt={dt:.3e}")
            norm = np.max(np.abs(r))
            if norm < self.tol:
                self.total_newton_iters += it
                x1, v1 = self._unpack(z)
                return x1, v1, it
            if r0 is None:
                r0 = norm
            elif norm > 1e3 * max(r0, 1.0):
                raise NewtonDivergence(f"residual blew up to {norm:.3e} at dt={dt:.3e}")
            if self._jinv is None or self._j_dt != dt or it == self.refresh_iter:
                self._refresh(z, dt)
            z = z - self._jinv @ r
        raise NewtonDivergence(
            f"no convergence in {self.max_iter} iterations at dt={dt:.3e}"
        )

    def solve_algebraic(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Re-solve the bus equations at frozen device states (used right
        after a discrete event)."""
        sys = self.system
        v = v.copy()
        for it in range(50):
            rn = sys.network_residual(x, v)
            if np.max(np.abs(rn)) < self.tol:
                return v
            a = -sys.yblk.copy()
            for dev, sl in zip(sys.devices, sys.slices):
                vb = complex(v[dev.bus])
                i0 = dev.injected_current(x[sl], vb)
                h = FD_STEP * (1.0 + abs(vb))
                col = 2 * dev.bus
                for k, dv in enumerate((h, 1j * h)):
                    di = (dev.injected_current(x[sl], vb + dv) - i0) / h
                    a[col, col + k] += di.real
                    a[col + 1, col + k] += di.imag
            rhs = np.empty(2 * sys.n_bus)
            rhs[0::2] = rn.real
            rhs[1::2] = rn.imag
            du = np.linalg.solve(a, -rhs)
            v = v + du[0::2] + 1j * du[1::2]
        raise NewtonDivergence("algebraic re-solve after event did not converge")


# ---------------------------------------------------------------------------
# Initialization and the main run loop
# ---------------------------------------------------------------------------

def _share(weight: float, weights: list[float], n: int) -> float:
    total = sum(weights)
    return weight / total if total else 1.0 / n


def initialize(
    scenario: Scenario, pf: PowerFlowResult | None = None
) -> tuple[np.ndarray, np.ndarray, DaeSystem]:
    """Back-solve every device to an exact equilibrium at the power-flow point."""
    if pf is None:
        pf = power_flow(scenario)
    v = pf.voltages.copy()
    system = DaeSystem(scenario.network, scenario.devices, scenario.omega_base)

    gen_by_bus: dict[int, list[Device]] = {}
    for d in scenario.devices:
        if not d.is_load:
            gen_by_bus.setdefault(d.bus, []).append(d)
    for b in scenario.network.buses:
        if b.kind in ("slack", "generation") and b.index not in gen_by_bus:
            raise InfeasibleInit(f"bus {b.label} is a source bus without a source device")

    x0 = np.zeros(system.n_states)
    for d, sl in zip(scenario.devices, system.slices):
        vb = complex(v[d.bus])
        if d.is_load:
            s = -complex(d.nominal_p, d.nominal_q)  # type: ignore[union-attr]
            x0[sl] = d.initial_state(vb, s)
            continue
        peers = gen_by_bus[d.bus]
        load_draw = sum(complex(ld.nominal_p, ld.nominal_q) for ld in scenario.loads_at(d.bus))
        s_bus = complex(pf.bus_injection[d.bus]) + load_draw
        p_weights = [g.p for g in peers]
        q_weights = [
            g.q_weight if getattr(g, "q_weight", None) is not None else g.p for g in peers
        ]
        w_p = _share(d.p, p_weights, len(peers))
        d_q = d.q_weight if getattr(d, "q_weight", None) is not None else d.p
        w_q = _share(d_q, q_weights, len(peers))
        x0[sl] = d.initial_state(vb, complex(w_p * s_bus.real, w_q * s_bus.imag))

    f0 = system.derivatives(x0, v)
    worst = np.max(np.abs(f0)) if f0.size else 0.0
    if worst >= 1e-9:
        raise InfeasibleInit(f"initial state derivative {worst:.3e} exceeds 1e-9")
    rn = np.max(np.abs(system.network_residual(x0, v)))
    if rn >= 1e-8:
        raise InfeasibleInit(f"initial network residual {rn:.3e} exceeds 1e-8")
    return x0, v, system


@dataclass
class Trajectory:
    """Uniformly sampled run: states, phasors and stationary-frame CFs."""

    times: np.ndarray
    voltages: np.ndarray  # (samples, n_bus) complex
    currents: np.ndarray  # (samples, n_device) complex
    states: dict[str, np.ndarray]
    analytic_cf: dict[str, np.ndarray]
    voltage_cf: np.ndarray  # (samples, n_bus) complex
    device_names: list[str]
    device_buses: list[int]
    device_kinds: list[str]
    bus_labels: list[int]
    event_times: list[float]
    dt: float
    omega_base: float
    newton_iters: int = 0
    events_applied: int = 0

    def device_index(self, name: str) -> int:
        return self.device_names.index(name)

    def device_current(self, name: str) -> np.ndarray:
        return self.currents[:, self.device_index(name)]

    def sample_index(self, t: float) -> int:
        return int(round(t / self.dt))

    def estimator_valid(self, pad: int = 2) -> np.ndarray:
        """True where finite-difference CF estimates are trustworthy: away
        from event instants by more than `pad` samples."""
        valid = np.ones(self.times.size, dtype=bool)
        for te in self.event_times:
            k = self.sample_index(te)
            lo = max(0, k - pad)
            hi = min(self.times.size, k + pad + 1)
            valid[lo:hi] = False
        return valid


def run(scenario: Scenario, record_cf: bool = True) -> Trajectory:
    """Simulate the scenario and sample every step.

    Analytical CFs are evaluated from post-solve values, so samples that
    coincide with an event carry the post-event state.
    """
    pf = power_flow(scenario)
    x, v, system = initialize(scenario, pf)
    dt = scenario.dt
    n_steps = int(round(scenario.t_end / dt))
    if abs(n_steps * dt - scenario.t_end) > 1e-9:
        n_steps = int(np.ceil(scenario.t_end / dt - 1e-12))
    times = np.arange(n_steps + 1) * dt

    events_by_step: dict[int, list[Event]] = {}
    for ev in scenario.events:
        k = min(max(int(round(ev.time / dt)), 0), n_steps)
        events_by_step.setdefault(k, []).append(ev)

    integ = TrapezoidalIntegrator(system, tol=scenario.tolerance)

    n_dev = len(scenario.devices)
    voltages = np.empty((n_steps + 1, system.n_bus), dtype=complex)
    currents = np.empty((n_steps + 1, n_dev), dtype=complex)
    states = {
        d.name: np.empty((n_steps + 1, d.n_states)) for d in scenario.devices if d.n_states
    }
    cf_capable = [d for d in scenario.devices if d.has_analytic_cf] if record_cf else []
    analytic_cf = {d.name: np.empty(n_steps + 1, dtype=complex) for d in cf_capable}
    voltage_cf = np.empty((n_steps + 1 if record_cf else 0, system.n_bus), dtype=complex)
    event_times: list[float] = []
    events_applied = 0

    def apply_events(k: int) -> bool:
        nonlocal events_applied
        evs = events_by_step.get(k)
        if not evs:
            return False
        for ev in evs:
            _apply_event(scenario, ev)
            events_applied += 1
            event_times.append(times[k])
        return True

    def record(k: int) -> None:
        voltages[k] = v
        xdot = system.derivatives(x, v)
        for idx, (d, sl) in enumerate(zip(scenario.devices, system.slices)):
            currents[k, idx] = d.injected_current(x[sl], complex(v[d.bus]))
            if d.n_states:
                states[d.name][k] = x[sl]
        if record_cf:
            vdot = system.voltage_rates(x, v, xdot)
            eta_v = system.voltage_cf(v, vdot)
            voltage_cf[k] = eta_v
            for d, sl in zip(scenario.devices, system.slices):
                if d.has_analytic_cf:
                    analytic_cf[d.name][k] = d.analytic_cf(
                        x[sl], xdot[sl], complex(v[d.bus]), complex(eta_v[d.bus])
                    )

    if apply_events(0):
        v = integ.solve_algebraic(x, v)
        integ.invalidate_jacobian()
    record(0)

    for k in range(1, n_steps + 1):
        x, v, _ = integ.step(x, v, dt)
        if apply_events(k):
            v = integ.solve_algebraic(x, v)
            integ.invalidate_jacobian()
        record(k)

    for label, arr in (("voltages", voltages), ("currents", currents)):
        if not np.all(np.isfinite(arr.view(float))):
            raise NewtonDivergence(f"non-finite {label} in the sampled trajectory")

    return Trajectory(
        times=times,
        voltages=voltages,
        currents=currents,
        states=states,
        analytic_cf=analytic_cf,
        voltage_cf=voltage_cf,
        device_names=[d.name for d in scenario.devices],
        device_buses=[d.bus for d in scenario.devices],
        device_kinds=[d.kind for d in scenario.devices],
        bus_labels=[b.label for b in scenario.network.buses],
        event_times=event_times,
        dt=dt,
        omega_base=scenario.omega_base,
        newton_iters=integ.total_newton_iters,
        events_applied=events_applied,
    )


def _apply_event(scenario: Scenario, ev: Event) -> None:
    if ev.action == "load_scale":
        loads = scenario.loads_at(ev.bus)
        if not loads:
            raise ValueError(f"event references bus {ev.bus} with no load")
        for ld in loads:
            ld.scale(ev.factor)
    elif ev.action == "load_disconnect_mw":
        loads = scenario.loads_at(ev.bus)
        total = sum(ld.nominal_p for ld in loads)
        if total <= 0.0:
            raise ValueError(f"no disconnectable load at bus {ev.bus}")
        factor = 1.0 - (ev.amount / scenario.s_base) / total
        if factor < 0.0:
            raise ValueError(
                f"cannot disconnect {ev.amount} MW from "
                f"{total * scenario.s_base:.1f} MW at bus {ev.bus}"
            )
        for ld in loads:
            ld.scale(factor)
    elif ev.action == "set_parameter":
        scenario.device(ev.device).set_param(ev.param, ev.value)
