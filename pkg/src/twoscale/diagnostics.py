"""Convergence diagnostics: two-scale pairings, resolution ladders, correctors.

The central experiment is the ladder: the same ensemble of driven paths is
advanced at several oscillation scales eps and once with the effective
constant-coefficient operator, all consuming identical noise increments
per path (synchronous coupling) from identical initial data. Streaming
accumulators then measure, per path,

  * the squared L2(0,T; H) distance to the effective path,
  * plain and corrector-reconstructed gradient residuals,
  * the two-scale pairing against an oscillating test function,
  * the energy functionals that must stay bounded uniformly in eps.

Everything is reduced to means with replica-level standard errors. No
trajectory is ever stored; a ladder over 4 levels x 256 paths x 2500 steps
runs in a few tens of seconds on a laptop-class machine.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cell import CellGrid, CellSolution, corrector_slopes, solve_cell_problem
from .coefficients import CoefficientField
from .ensemble import wasserstein2_1d
from .errors import ValidationError
from .grid import GridSpec, ScalarField
from .integrator import BatchedStepper, StepperConfig
from .models import ModelSpec
from .noise import NoiseStream, QWienerSpec, default_mode_count

__all__ = [
    "StudyConfig",
    "ConvergenceReport",
    "LadderResult",
    "two_scale_pairing",
    "corrector_residual",
    "run_ladder",
    "reduce_raw",
]


# ---------------------------------------------------------------------------
# pointwise diagnostics on stored trajectories


def two_scale_pairing(trajectory, grid: GridSpec, dt: float, eps: float,
                      weight=None, oscillation=None) -> float:
    """Quadrature of the pairing  integral u(x,t) w(x,t) phi(x/eps, t/eps).

    Space uses the midpoint rule on the interior nodes (weight h^N), time
    the left-point rule over the steps (weight dt), so a trajectory with
    T+1 stored states contributes its first T states.

    Args:
        trajectory: array (steps+1, dof...) or list of fields.
        weight: callable w(*x, t) -> array; defaults to 1.
        oscillation: callable phi(*y, tau) -> array of the fast variables;
            defaults to sin(2 pi y_1).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    states = _as_state_array(trajectory, grid)
    mesh = grid.meshgrid()
    if oscillation is None:
        oscillation = lambda *args: np.sin(2.0 * np.pi * args[0])  # noqa: E731
    hN = grid.h ** grid.dimension
    total = 0.0
    steps = states.shape[0] - 1
    for n in range(steps):
        t = n * dt
        w = 1.0 if weight is None else weight(*mesh, t)
        fast = oscillation(*[c / eps for c in mesh], t / eps)
        total += dt * hN * float(np.sum(states[n] * w * fast))
    return total


def _as_state_array(trajectory, grid: GridSpec) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return trajectory.reshape(trajectory.shape[0], *grid.shape)
    return np.stack([s.values if isinstance(s, ScalarField) else np.asarray(s)
                     for s in trajectory])


def _node_gradients(states: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    """Central-difference gradient components at nodes, zero ghosts."""
    out = []
    for axis in range(grid.dimension):
        pad = [(0, 0)] * states.ndim
        pad[axis + 1] = (1, 1)
        padded = np.pad(states, pad)
        sl_hi = [slice(None)] * states.ndim
        sl_lo = [slice(None)] * states.ndim
        sl_hi[axis + 1] = slice(2, None)
        sl_lo[axis + 1] = slice(0, -2)
        out.append((padded[tuple(sl_hi)] - padded[tuple(sl_lo)])
                   / (2.0 * grid.h))
    return out


def corrector_residual(trajectory_eps, trajectory_hom, solution: CellSolution,
                       grid: GridSpec, dt: float, eps: float,
                       ) -> tuple[float, float]:
    """Space-time L2 gradient residuals of an oscillating path.

    plain     = || grad u_eps - grad u_hom ||_{L2(0,T;H)}
    corrected = || grad u_eps - R(grad u_hom) ||_{L2(0,T;H)}

    where R adds the corrector slope contribution evaluated at the fast
    variables. Gradients are central differences co-located at the nodes;
    the time rule is right-point over the steps. For averaging over a
    Monte Carlo batch, pass stacked trajectories of equal length and
    average the squared residuals outside.
    """
    ue = _as_state_array(trajectory_eps, grid)
    uh = _as_state_array(trajectory_hom, grid)
    if ue.shape != uh.shape:
        raise ValueError("trajectories have different shapes")
    dim = grid.dimension
    ge = _node_gradients(ue, grid)
    gh = _node_gradients(uh, grid)
    mesh = grid.meshgrid()
    hN = grid.h ** dim
    plain2 = 0.0
    corr2 = 0.0
    steps = ue.shape[0] - 1
    for n in range(1, steps + 1):
        t = n * dt
        if dim == 1:
            y = mesh[0] / eps
        else:
            y = tuple(c / eps for c in mesh)
        slopes = corrector_slopes(solution, y, t / eps)
        for j in range(dim):
            diff = ge[j][n] - gh[j][n]
            plain2 += dt * hN * float(np.sum(diff ** 2))
            rec = gh[j][n].copy()
            for i in range(dim):
                rec += gh[i][n] * slopes[..., i, j]
            corr2 += dt * hN * float(np.sum((ge[j][n] - rec) ** 2))
    return float(np.sqrt(plain2)), float(np.sqrt(corr2))


# ---------------------------------------------------------------------------
# ladder study


@dataclass(frozen=True)
class StudyConfig:
    """Everything a coupled resolution-ladder study needs.

    The epsilon list must be strictly decreasing; each level shares the
    grid, the time step, the initial state, and (synchronously coupled)
    the noise increments with the effective reference level.
    """

    coefficient: CoefficientField
    grid: GridSpec
    epsilons: tuple[float, ...]
    stepper: StepperConfig
    members: int = 8
    replicas: int = 32
    mean_field: str = "stokes_drag"
    cubic: bool = True
    eta: float = 0.0
    ell: float = 0.0
    noise_law: str = "scalar_multiplicative"
    sigma0: float = 0.1
    modes: int | None = None
    gamma: float = 2.0
    lambda0: float = 1.0
    seed: int = 0
    initial_amplitude: float = 1.0
    initial_mode: int = 1
    cell_cells: int = 256
    cell_tau_slices: int = 1
    observable: str = "H_norm"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValidationError("epsilon list is empty", field="epsilon")
        if any(not e > 0 for e in eps):
            raise ValidationError("epsilon values must be positive",
                                  field="epsilon")
        if any(eps[i + 1] >= eps[i] for i in range(len(eps) - 1)):
            raise ValidationError(
                "epsilon ladder must be strictly decreasing", field="epsilon")
        n = self.grid.cells
        for e in eps:
            if n < 16.0 / e:
                raise ValidationError(
                    f"grid cells {n} under-resolve epsilon={e}: "
                    f"need n >= 16/epsilon = {16.0 / e:.0f}", field="epsilon")
            if self.stepper.dt > e / 8.0 + 1e-15:
                raise ValidationError(
                    f"dt={self.stepper.dt} exceeds epsilon/8 for "
                    f"epsilon={e}", field="dt")
        if self.members < 1 or self.replicas < 1:
            raise ValidationError("members and replicas must be >= 1",
                                  field="members")
        object.__setattr__(self, "epsilons", eps)

    def noise_spec(self) -> QWienerSpec:
        modes = self.modes if self.modes is not None \
            else default_mode_count(self.grid)
        return QWienerSpec(grid=self.grid, modes=modes, gamma=self.gamma,
                           lambda0=self.lambda0, seed=self.seed)

    def model_for(self, eps: float) -> ModelSpec:
        return ModelSpec(variant="allen_cahn", coefficient=self.coefficient,
                         epsilon=eps, mean_field=self.mean_field,
                         cubic=self.cubic, eta=self.eta, ell=self.ell,
                         noise_law=self.noise_law, sigma0=self.sigma0)

    def initial_values(self) -> np.ndarray:
        mesh = self.grid.meshgrid()
        vals = np.full(self.grid.shape, self.initial_amplitude)
        for c in mesh:
            vals = vals * np.sin(self.initial_mode * np.pi * c)
        return vals.reshape(-1)


@dataclass
class LadderResult:
    """Raw per-path accumulators plus the reduced summary of one ladder."""

    config: StudyConfig
    a_tilde: np.ndarray
    cell: CellSolution
    raw: dict[str, np.ndarray]
    report: "ConvergenceReport"


@dataclass
class ConvergenceReport:
    """Reduced ladder summary: errors against the effective path, per level.

    epsilons are strictly decreasing; every error carries a replica-level
    standard error. energy maps hold the uniform-bound functionals per
    level (the last entry of each list is the effective level where it
    applies).
    """

    epsilons: list[float]
    errors: list[float]
    error_stderr: list[float]
    plain_gradient: list[float]
    plain_stderr: list[float]
    corrected_gradient: list[float]
    corrected_stderr: list[float]
    pairings: list[float]
    pairing_stderr: list[float]
    energy_functional: list[float]
    energy_stderr: list[float]
    sup_moment_p2: list[float]
    sup_moment_p4: list[float]
    wasserstein_final: list[float]
    replicas: int
    members: int
    steps: int
    dt: float
    a_tilde: list[list[float]]
    levels: list[str] = field(default_factory=list)

    def __post_init__(self):
        eps = list(self.epsilons)
        if any(eps[i + 1] >= eps[i] for i in range(len(eps) - 1)):
            raise ValidationError("report epsilons must be strictly "
                                  "decreasing", field="epsilon")
        if len(self.errors) != len(eps) or len(self.error_stderr) != len(eps):
            raise ValidationError("error lists inconsistent with epsilons",
                                  field="errors")

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        data = json.loads(text)
        return cls(**data)

    def to_csv(self) -> str:
        lines = ["epsilon,error,error_stderr,plain_gradient,plain_stderr,"
                 "corrected_gradient,corrected_stderr,pairing,pairing_stderr,"
                 "energy_functional,energy_stderr"]
        for i, e in enumerate(self.epsilons):
            row = (e, self.errors[i], self.error_stderr[i],
                   self.plain_gradient[i], self.plain_stderr[i],
                   self.corrected_gradient[i], self.corrected_stderr[i],
                   self.pairings[i], self.pairing_stderr[i],
                   self.energy_functional[i], self.energy_stderr[i])
            lines.append(",".join(repr(v) for v in row))
        return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _replica_stats(per_path: np.ndarray, replicas: int,
                   members: int) -> tuple[float, float]:
    """Mean over all paths plus the standard error over replica means."""
    groups = per_path.reshape(replicas, members).mean(axis=1)
    mean = float(per_path.mean())
    se = float(groups.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
    return mean, se


def run_ladder(cfg: StudyConfig, progress=None) -> LadderResult:
    """Advance all ladder levels in lockstep and reduce the diagnostics.

    Levels: one per epsilon plus the effective level driven by the
    homogenized tensor of the cell solve. All levels see identical initial
    data and identical noise draws per path; the drag couples members
    within each replica only.
    """
    grid = cfg.grid
    dim = grid.dimension
    cell_grid = CellGrid(dimension=dim, cells=cfg.cell_cells,
                         tau_slices=cfg.cell_tau_slices)
    cell_sol = solve_cell_problem(cfg.coefficient, cell_grid)
    a_tilde = cell_sol.a_tilde

    spec = cfg.noise_spec()
    eps_list = list(cfg.epsilons)
    n_eps = len(eps_list)
    levels = [f"eps={e:g}" for e in eps_list] + ["effective"]
    P = cfg.replicas * cfg.members
    steps = cfg.stepper.steps
    dt = cfg.stepper.dt
    hN = grid.h ** dim

    steppers = []
    for e in eps_list:
        steppers.append(BatchedStepper(grid, cfg.model_for(e), spec,
                                       members=cfg.members, dt=dt,
                                       tol=cfg.stepper.tol))
    # the effective level reuses the smallest-eps model constants
    steppers.append(BatchedStepper(grid, cfg.model_for(eps_list[-1]), spec,
                                   members=cfg.members, dt=dt,
                                   tol=cfg.stepper.tol,
                                   homogenized_tensor=a_tilde))

    streams = [NoiseStream.derive(spec, m, r)
               for r in range(cfg.replicas) for m in range(cfg.members)]

    u0 = cfg.initial_values()
    states = [np.tile(u0, (P, 1)) for _ in range(n_eps + 1)]

    # streaming accumulators, all shaped (levels, paths)
    err2 = np.zeros((n_eps, P))
    plain2 = np.zeros((n_eps, P))
    corr2 = np.zeros((n_eps, P))
    pairing = np.zeros((n_eps, P))
    sup_h2 = np.full((n_eps + 1, P), -np.inf)
    int_v2 = np.zeros((n_eps + 1, P))
    int_l4 = np.zeros((n_eps + 1, P))

    mesh = grid.meshgrid()
    osc = [np.sin(2.0 * np.pi * mesh[0] / e).reshape(-1) for e in eps_list]
    face_slopes = [_face_corrector_slopes(cell_sol, grid, e, 0.0)
                   for e in eps_list]
    time_dep = cfg.coefficient.time_dependent

    # t = 0 contributions: pairing left-point, energy sup
    for li in range(n_eps):
        pairing[li] += dt * hN * (states[li] @ osc[li])
    for li in range(n_eps + 1):
        sup_h2[li] = np.maximum(sup_h2[li], hN * np.sum(states[li] ** 2,
                                                        axis=-1))

    for n in range(steps):
        t = n * dt
        xi = np.stack([s.draw() for s in streams])
        for li in range(n_eps + 1):
            states[li] = steppers[li].advance(states[li], xi, t, n)
        hom = states[n_eps]
        hom_grad = _forward_face_diffs(hom, grid)
        for li in range(n_eps):
            diff = states[li] - hom
            err2[li] += dt * hN * np.sum(diff * diff, axis=-1)
            eps_grad = _forward_face_diffs(states[li], grid)
            slopes = face_slopes[li] if not time_dep else \
                _face_corrector_slopes(cell_sol, grid, eps_list[li],
                                       (t + dt) / eps_list[li])
            p2, c2 = _gradient_residuals(eps_grad, hom_grad, slopes, grid)
            plain2[li] += dt * p2
            corr2[li] += dt * c2
        if n < steps - 1:  # left-point pairing: states at t_{n+1} count
            for li in range(n_eps):
                pairing[li] += dt * hN * (states[li] @ osc[li])
        for li in range(n_eps + 1):
            h2 = hN * np.sum(states[li] ** 2, axis=-1)
            sup_h2[li] = np.maximum(sup_h2[li], h2)
            v2 = _v2_batch(states[li], grid)
            int_v2[li] += dt * v2
            int_l4[li] += dt * hN * np.sum(states[li] ** 4, axis=-1)
        if progress is not None and (n + 1) % max(1, steps // 10) == 0:
            progress(n + 1, steps)

    raw = {
        "err2": err2, "plain2": plain2, "corr2": corr2, "pairing": pairing,
        "sup_h2": sup_h2, "int_v2": int_v2, "int_l4": int_l4,
        "final_states": np.stack(states),
        "epsilons": np.array(eps_list), "a_tilde": np.atleast_2d(a_tilde),
        "grid_scale": np.array([hN]),
        "shape": np.array([cfg.replicas, cfg.members, steps]),
        "dt": np.array([dt]),
    }
    report = reduce_raw(raw)
    return LadderResult(config=cfg, a_tilde=a_tilde, cell=cell_sol, raw=raw,
                        report=report)


def reduce_raw(raw: dict) -> ConvergenceReport:
    """Rebuild the reduced report from the stored per-path accumulators.

    This is the only path from raw arrays to human-facing numbers, so a
    stored archive can be re-rendered at any time without recomputation.
    """
    eps_list = [float(e) for e in np.asarray(raw["epsilons"]).reshape(-1)]
    n_eps = len(eps_list)
    R, M, steps = (int(v) for v in np.asarray(raw["shape"]).reshape(-1))
    dt = float(np.asarray(raw["dt"]).reshape(-1)[0])
    hN = float(np.asarray(raw["grid_scale"]).reshape(-1)[0])
    a_tilde = np.atleast_2d(np.asarray(raw["a_tilde"], dtype=float))
    err2, plain2, corr2 = raw["err2"], raw["plain2"], raw["corr2"]
    pairing, sup_h2 = raw["pairing"], raw["sup_h2"]
    int_v2, int_l4 = raw["int_v2"], raw["int_l4"]
    final_states = raw["final_states"]

    errors, error_se = [], []
    plain, plain_se = [], []
    corrected, corrected_se = [], []
    pair_mean, pair_se = [], []
    for li in range(n_eps):
        for acc, out_m, out_se in ((err2, errors, error_se),
                                   (plain2, plain, plain_se),
                                   (corr2, corrected, corrected_se)):
            m, se = _replica_stats(acc[li], R, M)
            out_m.append(float(np.sqrt(m)))
            # delta method: se of sqrt(mean) from se of the mean
            out_se.append(float(se / (2.0 * np.sqrt(m))) if m > 0 else 0.0)
        m, se = _replica_stats(pairing[li], R, M)
        pair_mean.append(float(m))
        pair_se.append(float(se))

    energy, energy_se = [], []
    sup_p2, sup_p4 = [], []
    for li in range(n_eps + 1):
        functional = sup_h2[li] + int_v2[li] + int_l4[li]
        m, se = _replica_stats(functional, R, M)
        energy.append(float(m))
        energy_se.append(float(se))
        sup_p2.append(float(np.mean(sup_h2[li])))
        sup_p4.append(float(np.mean(sup_h2[li] ** 2)))

    w2 = []
    hom_obs = np.sqrt(hN * np.sum(final_states[n_eps] ** 2, axis=-1))
    for li in range(n_eps):
        obs = np.sqrt(hN * np.sum(final_states[li] ** 2, axis=-1))
        w2.append(wasserstein2_1d(obs, hom_obs))

    return ConvergenceReport(
        epsilons=eps_list,
        errors=errors, error_stderr=error_se,
        plain_gradient=plain, plain_stderr=plain_se,
        corrected_gradient=corrected, corrected_stderr=corrected_se,
        pairings=pair_mean, pairing_stderr=pair_se,
        energy_functional=energy, energy_stderr=energy_se,
        sup_moment_p2=sup_p2, sup_moment_p4=sup_p4,
        wasserstein_final=w2, replicas=R, members=M, steps=steps, dt=dt,
        a_tilde=[[float(v) for v in row] for row in a_tilde],
        levels=[f"eps={e:g}" for e in eps_list] + ["effective"])


def _forward_face_diffs(U: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    """Forward differences (not divided by h) on all faces, per axis."""
    fields = U.reshape((-1,) + grid.shape)
    out = []
    for axis in range(grid.dimension):
        pad = [(0, 0)] * (grid.dimension + 1)
        pad[axis + 1] = (1, 1)
        out.append(np.diff(np.pad(fields, pad), axis=axis + 1))
    return out


def _face_corrector_slopes(sol: CellSolution, grid: GridSpec, eps: float,
                           tau: float) -> list[np.ndarray]:
    """Corrector slope matrices at the face midpoints of each axis."""
    n = grid.cells
    mids = grid.h * (np.arange(n) + 0.5)
    nodes = grid.axis_nodes()
    out = []
    for axis in range(grid.dimension):
        if grid.dimension == 1:
            coords = mids / eps
        else:
            ax = [None, None]
            ax[axis] = mids
            ax[1 - axis] = nodes
            mesh = np.meshgrid(ax[0], ax[1], indexing="ij")
            coords = tuple(c / eps for c in mesh)
        out.append(corrector_slopes(sol, coords, tau))
    return out


def _gradient_residuals(eps_grad: list[np.ndarray], hom_grad: list[np.ndarray],
                        face_slopes: list[np.ndarray], grid: GridSpec,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Per-path squared H norms of plain and corrected gradient residuals.

    Gradients arrive as raw face differences; the reconstruction adds the
    corrector slope contribution at the face midpoints of each axis. In
    2D the cross contribution uses the same-axis face differences of the
    transverse component, which share the face layout to O(h).
    """
    hN = grid.h ** grid.dimension
    P = eps_grad[0].shape[0]
    plain2 = np.zeros(P)
    corr2 = np.zeros(P)
    inv_h2 = 1.0 / grid.h ** 2
    for j in range(grid.dimension):
        de = eps_grad[j]
        dh = hom_grad[j]
        diff = de - dh
        plain2 += hN * inv_h2 * np.sum(diff.reshape(P, -1) ** 2, axis=-1)
        rec = dh.copy()
        for i in range(grid.dimension):
            slope_ij = face_slopes[j][..., i, j]
            if i == j:
                rec = rec + hom_grad[i] * slope_ij[None]
            else:
                # transverse component interpolated onto axis-j faces
                rec = rec + _to_faces(hom_grad[i], i, j, grid) * slope_ij[None]
        corr2 += hN * inv_h2 * np.sum((de - rec).reshape(P, -1) ** 2, axis=-1)
    return plain2, corr2


def _to_faces(diffs: np.ndarray, from_axis: int, to_axis: int,
              grid: GridSpec) -> np.ndarray:
    """Re-locate axis-i face differences onto axis-j faces by averaging."""
    # average pairs along from_axis (faces -> nodes), then along to_axis
    # (nodes -> faces) with zero ghosts
    a = from_axis + 1
    b = to_axis + 1
    nodes = 0.5 * (np.take(diffs, range(0, diffs.shape[a] - 1), axis=a)
                   + np.take(diffs, range(1, diffs.shape[a]), axis=a))
    pad = [(0, 0)] * diffs.ndim
    pad[b] = (1, 1)
    padded = np.pad(nodes, pad)
    return 0.5 * (np.take(padded, range(0, padded.shape[b] - 1), axis=b)
                  + np.take(padded, range(1, padded.shape[b]), axis=b))


def _v2_batch(U: np.ndarray, grid: GridSpec) -> np.ndarray:
    fields = U.reshape((-1,) + grid.shape)
    hN = grid.h ** grid.dimension
    acc = np.zeros(U.shape[0])
    for axis in range(grid.dimension):
        pad = [(0, 0)] * (grid.dimension + 1)
        pad[axis + 1] = (1, 1)
        d = np.diff(np.pad(fields, pad), axis=axis + 1)
        acc += np.sum(d.reshape(U.shape[0], -1) ** 2, axis=-1)
    return acc * hN / grid.h ** 2
