"""CF estimation from sampled trajectories, the coherency function, the
integral distance metric, average-linkage grouping, observer-independence
verification, and the two-machine parameter sweep."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .devices import SynchronousMachine, ZipLoad
from .errors import EmptyWindow, MagnitudeUnderflow, TimeBaseMismatch
from .network import Bus, Network, power_contribution
from .primitives import MAGNITUDE_GUARD, unwrap_phase
from .simulation import AnalysisOptions, Event, Scenario, Trajectory, run

# Samples around an event instant excluded from finite-difference estimates.
EVENT_MASK_PAD = 2

# The distance window opens this many samples after the last event.
WINDOW_START_SAMPLES = 5


@dataclass
class CfSeries:
    """Sampled complex-frequency trajectory with a validity mask."""

    times: np.ndarray
    values: np.ndarray  # complex, rho + j*omega in pu
    valid: np.ndarray  # bool, False where estimates are untrustworthy

    def __post_init__(self):
        if not (self.times.shape == self.values.shape == self.valid.shape):
            raise ValueError("times, values and valid must share one shape")

    def masked_fraction(self) -> float:
        return 1.0 - float(np.count_nonzero(self.valid)) / self.times.size

    def __neg__(self) -> "CfSeries":
        return CfSeries(self.times, -self.values, self.valid.copy())


def numerical_cf(samples, dt: float, omega_base: float) -> CfSeries:
    """Finite-difference CF estimate of a sampled Clarke vector.

    Second-order stencils throughout: 3-point central differences inside,
    3-point one-sided at both ends.  The radial part differentiates
    log-magnitude, the rotational part the unwrapped phase; both are
    normalized by `omega_base`.
    """
    x = np.asarray(samples, dtype=complex)
    if x.ndim != 1 or x.size < 3:
        raise ValueError("need a 1-D series with at least 3 samples")
    mags = np.abs(x)
    if np.min(mags) <= MAGNITUDE_GUARD:
        raise MagnitudeUnderflow(
            f"series magnitude dips to {np.min(mags):.3e}, below the guard"
        )
    log_mag = np.log(mags)
    phase = unwrap_phase(np.angle(x))

    def diff(y: np.ndarray) -> np.ndarray:
        d = np.empty_like(y)
        d[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
        d[0] = (-1.5 * y[0] + 2.0 * y[1] - 0.5 * y[2]) / dt
        d[-1] = (1.5 * y[-1] - 2.0 * y[-2] + 0.5 * y[-3]) / dt
        return d

    values = (diff(log_mag) + 1j * diff(phase)) / omega_base
    times = np.arange(x.size) * dt
    return CfSeries(times, values, np.ones(x.size, dtype=bool))


def device_cf_numerical(traj: Trajectory, name: str, pad: int = EVENT_MASK_PAD) -> CfSeries:
    """Estimator CF of a device's injected current, shifted to the stationary
    frame and masked around events."""
    series = numerical_cf(traj.device_current(name), traj.dt, traj.omega_base)
    return CfSeries(
        traj.times.copy(), series.values + 1j, series.valid & traj.estimator_valid(pad)
    )


def device_cf_analytic(traj: Trajectory, name: str) -> CfSeries:
    values = traj.analytic_cf[name]
    return CfSeries(traj.times.copy(), values.copy(), np.ones(values.size, dtype=bool))


def coherency_function(eta1: CfSeries, eta2: CfSeries) -> CfSeries:
    """Instantaneous coherency function: sample-wise CF difference."""
    if eta1.times.shape != eta2.times.shape or not np.allclose(
        eta1.times, eta2.times, rtol=0.0, atol=1e-12
    ):
        raise TimeBaseMismatch("CF series are sampled on different time bases")
    return CfSeries(eta1.times.copy(), eta1.values - eta2.values, eta1.valid & eta2.valid)


def coherency_distance(eps: CfSeries, t_start: float, t_end: float) -> float:
    """Time integral of |ε| over the valid samples inside [t_start, t_end]."""
    sel = (eps.times >= t_start - 1e-12) & (eps.times <= t_end + 1e-12) & eps.valid
    n = int(np.count_nonzero(sel))
    if n < 2:
        raise EmptyWindow(
            f"window [{t_start}, {t_end}] holds {n} usable sample(s); need at least 2"
        )
    return float(np.trapezoid(np.abs(eps.values[sel]), eps.times[sel]))


@dataclass
class CoherencyDistanceMatrix:
    values: np.ndarray  # (n, n) symmetric, zero diagonal
    labels: list[str]

    def __post_init__(self):
        v = self.values
        if v.shape != (len(self.labels), len(self.labels)):
            raise ValueError("matrix shape does not match labels")

    def pair(self, a: str, b: str) -> float:
        return float(self.values[self.labels.index(a), self.labels.index(b)])


def distance_matrix(
    cfs: dict[str, CfSeries], window: tuple[float, float], component: str = "full"
) -> CoherencyDistanceMatrix:
    """Pairwise ∫|ε|dt over the window.

    `component` selects what is integrated: the full complex ε ("full") or a
    single part ("rho" / "omega").
    """
    labels = list(cfs.keys())
    if len(labels) < 2:
        raise ValueError("need at least two devices")
    if component not in ("full", "rho", "omega"):
        raise ValueError(f"unknown component {component!r}")
    n = len(labels)
    d = np.zeros((n, n))
    for ia in range(n):
        for ib in range(ia + 1, n):
            eps = coherency_function(cfs[labels[ia]], cfs[labels[ib]])
            if component == "rho":
                eps = CfSeries(eps.times, eps.values.real + 0j, eps.valid)
            elif component == "omega":
                eps = CfSeries(eps.times, 1j * eps.values.imag, eps.valid)
            d[ia, ib] = d[ib, ia] = coherency_distance(eps, *window)
    return CoherencyDistanceMatrix(d, labels)


# ---------------------------------------------------------------------------
# Average-linkage clustering
# ---------------------------------------------------------------------------

@dataclass
class ClusterTree:
    """Agglomeration record.  Leaves are 0..n-1; merge step k creates cluster
    id n+k from `left` and `right` at the stored height."""

    n_leaves: int
    merges: list[tuple[int, int, float]]
    labels: list[str] = field(default_factory=list)

    def heights(self) -> list[float]:
        return [m[2] for m in self.merges]

    def cut(self, k: int) -> list[set[int]]:
        """Partition into k groups of leaf indices by undoing the last merges."""
        if not 1 <= k <= self.n_leaves:
            raise ValueError(f"k must be in [1, {self.n_leaves}]")
        members: dict[int, set[int]] = {i: {i} for i in range(self.n_leaves)}
        for step, (left, right, _) in enumerate(self.merges[: self.n_leaves - k]):
            members[self.n_leaves + step] = members.pop(left) | members.pop(right)
        return sorted(members.values(), key=min)


def upgma_tree(matrix: CoherencyDistanceMatrix) -> ClusterTree:
    """Unweighted average linkage: repeatedly merge the cluster pair with the
    smallest mean pairwise distance.

    Ties break on the lexicographically smallest pair of cluster ids, so the
    result is identical across platforms and device orderings with equal
    labels.
    """
    d0 = matrix.values
    n = d0.shape[0]
    clusters: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(clusters) > 1:
        best = None
        ids = sorted(clusters)
        for ii, ca in enumerate(ids):
            for cb in ids[ii + 1 :]:
                pairs = d0[np.ix_(clusters[ca], clusters[cb])]
                dist = float(pairs.mean())
                if best is None or dist < best[0]:
                    best = (dist, ca, cb)
        dist, ca, cb = best
        clusters[next_id] = clusters.pop(ca) + clusters.pop(cb)
        merges.append((ca, cb, dist))
        next_id += 1
    return ClusterTree(n, merges, list(matrix.labels))


def average_linkage(matrix: CoherencyDistanceMatrix, k: int) -> list[set[str]]:
    """k-cluster cut of the UPGMA tree, as sets of device labels."""
    tree = upgma_tree(matrix)
    return [
        {matrix.labels[i] for i in group} for group in tree.cut(k)
    ]


class CoherencyClustering:
    """Estimator-style wrapper around the UPGMA cut: fit a precomputed
    coherency distance matrix, read group assignments off `labels_`."""

    def __init__(self, n_clusters: int = 4):
        self.n_clusters = n_clusters

    def get_params(self, deep: bool = True) -> dict:
        return {"n_clusters": self.n_clusters}

    def set_params(self, **params) -> "CoherencyClustering":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, distances: CoherencyDistanceMatrix | np.ndarray, labels=None):
        if isinstance(distances, CoherencyDistanceMatrix):
            matrix = distances
        else:
            arr = np.asarray(distances, dtype=float)
            labels = list(labels) if labels is not None else [str(i) for i in range(arr.shape[0])]
            matrix = CoherencyDistanceMatrix(arr, labels)
        self.tree_ = upgma_tree(matrix)
        groups = self.tree_.cut(self.n_clusters)
        self.labels_ = np.empty(matrix.values.shape[0], dtype=int)
        for gid, members in enumerate(groups):
            for i in members:
                self.labels_[i] = gid
        self.groups_ = [{matrix.labels[i] for i in g} for g in groups]
        self.feature_labels_ = list(matrix.labels)
        return self

    def fit_predict(self, distances, labels=None) -> np.ndarray:
        return self.fit(distances, labels).labels_


# ---------------------------------------------------------------------------
# Observer independence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationPoint:
    """Direction to observe power in: from `bus` either towards a neighbour
    bus (branch) or into a shunt device's draw."""

    bus: int
    towards_bus: int | None = None
    device: str | None = None

    def __post_init__(self):
        if (self.towards_bus is None) == (self.device is None):
            raise ValueError("specify exactly one of towards_bus / device")


def default_window(traj: Trajectory, t_end: float | None = None) -> tuple[float, float]:
    """Analysis window: a few samples past the last event, through the end."""
    t_last = max(traj.event_times) if traj.event_times else 0.0
    start = t_last + WINDOW_START_SAMPLES * traj.dt
    return start, t_end if t_end is not None else float(traj.times[-1])


def observer_independence_check(
    traj: Trajectory,
    network: Network,
    d1: str,
    d2: str,
    points: list[ObservationPoint],
    window: tuple[float, float] | None = None,
) -> float:
    """Verify the coherency function is observer-independent.

    For every observation point, the per-device power contributions are
    differentiated numerically and their CF difference is compared against
    the recorded device-current CF difference; returns the worst absolute
    deviation over valid samples in the window.
    """
    if not points:
        raise ValueError("need at least one observation point")
    z = network.impedance()
    if window is None:
        window = default_window(traj)
    eta1 = device_cf_analytic(traj, d1)
    eta2 = device_cf_analytic(traj, d2)
    eps_direct = coherency_function(eta1, eta2)
    b1 = traj.device_buses[traj.device_index(d1)]
    b2 = traj.device_buses[traj.device_index(d2)]

    worst = 0.0
    for pt in points:
        if pt.towards_bus is not None:
            dir_current = network.branch_current(pt.bus, pt.towards_bus, traj.voltages)
        else:
            dir_current = -traj.device_current(pt.device)
        s1 = power_contribution(dir_current, z[pt.bus, b1], traj.device_current(d1))
        s2 = power_contribution(dir_current, z[pt.bus, b2], traj.device_current(d2))
        cf_s1 = numerical_cf(s1, traj.dt, traj.omega_base)
        cf_s2 = numerical_cf(s2, traj.dt, traj.omega_base)
        eps_obs = CfSeries(
            traj.times.copy(),
            cf_s1.values - cf_s2.values,
            cf_s1.valid & cf_s2.valid & traj.estimator_valid(),
        )
        dev = coherency_function(eps_obs, eps_direct)
        sel = (dev.times >= window[0]) & (dev.times <= window[1]) & dev.valid
        if not np.any(sel):
            raise EmptyWindow("no valid samples in the observation window")
        worst = max(worst, float(np.max(np.abs(dev.values[sel]))))
    return worst


# ---------------------------------------------------------------------------
# Two-machine sweep
# ---------------------------------------------------------------------------

TWO_MACHINE_TOTAL_INERTIA = 10.0  # s
TWO_MACHINE_TOTAL_REACTANCE = 0.1  # pu
TWO_MACHINE_TOTAL_CURRENT = 1.0  # pu


def build_two_machine_scenario(
    alpha: float,
    beta: float,
    t_end: float = 3.0,
    dt: float = 1e-3,
    omega_base: float = 2.0 * np.pi * 60.0,
    pulse_time: float = 1.0,
    pulse_duration: float = 0.01,
    pulse_factor: float = 1.1,
    load_power_factor: float = 0.9,
) -> Scenario:
    """Single node with two classical machines and an impedance load.

    alpha splits the total inertia, beta the total reactance; dispatch is
    proportional to inertia, so the initial current magnitudes also split as
    alpha (the load draws 1 pu apparent power at 1 pu voltage).  The load
    pulse perturbs the node and is removed to restore the pre-event
    condition.
    """
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ValueError("alpha and beta must lie strictly inside (0, 1)")
    net = Network([Bus(0, kind="slack", v_set=1.0, label=1)], [])
    m1 = TWO_MACHINE_TOTAL_INERTIA * alpha
    m2 = TWO_MACHINE_TOTAL_INERTIA * (1.0 - alpha)
    x1 = TWO_MACHINE_TOTAL_REACTANCE * beta
    x2 = TWO_MACHINE_TOTAL_REACTANCE * (1.0 - beta)
    p_load = TWO_MACHINE_TOTAL_CURRENT * load_power_factor
    q_load = TWO_MACHINE_TOTAL_CURRENT * float(np.sqrt(1.0 - load_power_factor**2))
    devices = [
        SynchronousMachine("SM1", 0, inertia=m1, xd_prime=x1, omega_base=omega_base, p=alpha),
        SynchronousMachine(
            "SM2", 0, inertia=m2, xd_prime=x2, omega_base=omega_base, p=1.0 - alpha
        ),
        ZipLoad("LOAD", 0, p0=p_load, q0=q_load),
    ]
    events = [
        Event(pulse_time, "load_scale", bus=0, factor=pulse_factor),
        Event(pulse_time + pulse_duration, "load_scale", bus=0, factor=1.0 / pulse_factor),
    ]
    return Scenario(
        network=net,
        devices=devices,
        events=events,
        t_end=t_end,
        dt=dt,
        omega_base=omega_base,
        analysis=AnalysisOptions(k_clusters=2, cluster_devices=["SM1", "SM2"]),
    )


def two_machine_distance(
    alpha: float, beta: float, t_end: float = 3.0, dt: float = 1e-3
) -> float:
    """∫|ε|dt between the two machines for one (alpha, beta) cell."""
    scenario = build_two_machine_scenario(alpha, beta, t_end=t_end, dt=dt)
    traj = run(scenario)
    eps = coherency_function(
        device_cf_analytic(traj, "SM1"), device_cf_analytic(traj, "SM2")
    )
    return coherency_distance(eps, *default_window(traj))


def _sweep_cell(cell: tuple[int, int, float, float, float, float]):
    ia, ib, alpha, beta, t_end, dt = cell
    try:
        return ia, ib, two_machine_distance(alpha, beta, t_end=t_end, dt=dt), ""
    except Exception as exc:  # cell failures are recorded, not fatal
        return ia, ib, float("nan"), f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray  # (n_alpha, n_beta), NaN where a cell failed
    failures: list[tuple[float, float, str]] = field(default_factory=list)


def alpha_beta_sweep(
    alphas,
    betas,
    t_end: float = 3.0,
    dt: float = 1e-3,
    workers: int = 1,
) -> SweepResult:
    """Coherency distance over an (alpha, beta) grid.

    Cells are independent and may run in parallel; results are merged by
    index so the output does not depend on scheduling.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if np.any(alphas <= 0.0) or np.any(alphas >= 1.0) or np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("grid values must lie strictly inside (0, 1)")
    cells = [
        (ia, ib, float(a), float(b), t_end, dt)
        for ia, a in enumerate(alphas)
        for ib, b in enumerate(betas)
    ]
    values = np.full((alphas.size, betas.size), np.nan)
    failures: list[tuple[float, float, str]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    for ia, ib, value, err in results:
        values[ia, ib] = value
        if err:
            failures.append((float(alphas[ia]), float(betas[ib]), err))
    return SweepResult(alphas, betas, values, failures)


def cluster_trajectory(
    traj: Trajectory,
    k: int,
    device_names: list[str] | None = None,
    window: tuple[float, float] | None = None,
) -> tuple[CoherencyDistanceMatrix, ClusterTree, list[set[str]]]:
    """Distance matrix + UPGMA partition of a simulated run.

    By default the sources (machines and converters) are clustered; loads are
    left out just like in a generator-coherency study.
    """
    if device_names is None:
        device_names = [
            name
            for name, kind in zip(traj.device_names, traj.device_kinds)
            if kind != "zip" and name in traj.analytic_cf
        ]
    if window is None:
        window = default_window(traj)
    cfs = {name: device_cf_analytic(traj, name) for name in device_names}
    matrix = distance_matrix(cfs, window)
    tree = upgma_tree(matrix)
    groups = [{matrix.labels[i] for i in g} for g in tree.cut(k)]
    return matrix, tree, groups
