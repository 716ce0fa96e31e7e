"""
Injected particle swarm optimisation over a random-key encoding.

A particle is a vector of G_N goal keys followed by R_N - 1 breakpoint keys,
all in [0, 1]. Sorting the goal keys yields the visit permutation and the
breakpoint keys, scaled by G_N, cut it into per-robot tours. The swarm runs
canonical inertia-weight PSO on these vectors, with MLA plans seeded at start,
injected over the worst particles every f_inj iterations, and random
reinitialisation with probability p_pert.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from drone_mission_planner.cost_matrices import CostMatrices, FilteredProblem
from drone_mission_planner.errors import EmptyProblemError
from drone_mission_planner.mla import MlaConfig, MlaSeeder
from drone_mission_planner.plan import Plan, makespan
from drone_mission_planner.run_log import null_log
from drone_mission_planner.scenario import DynamicsLimits, Scenario, ipso_override

_OVERRIDE_FIELDS = {
    "swarm_size": ("swarm_size", int),
    "max_iterations": ("max_iterations", int),
    "inertia": ("inertia", float),
    "c1": ("c1", float),
    "c2": ("c2", float),
    "v_max_keys": ("v_max_keys", float),
    "seed_ratio": ("seed_ratio", float),
    "injection_period": ("injection_period", int),
    "perturbation_probability": ("perturbation_probability", float),
    "tolerance": ("tolerance", float),
    "patience": ("patience", int),
}


@dataclass(frozen=True)
class IpsoParams:
    """Swarm hyper-parameters; defaults follow constriction-factor PSO practice."""

    swarm_size: int = 60
    max_iterations: int = 300
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    v_max_keys: float = 0.25
    seed_ratio: float = 0.2
    injection_period: int = 25
    perturbation_probability: float = 0.02
    tolerance: float = 1e-4
    patience: int = 50
    inject: bool = True
    mla_seed: bool = True

    def __post_init__(self) -> None:
        problems = []
        if self.swarm_size < 2:
            problems.append("swarm_size must be >= 2")
        if self.max_iterations < 1:
            problems.append("max_iterations must be >= 1")
        if not 0.0 <= self.inertia <= 1.0:
            problems.append("inertia must lie in [0, 1]")
        if self.c1 < 0.0 or self.c2 < 0.0:
            problems.append("c1 and c2 must be >= 0")
        if self.injection_period < 1:
            problems.append("injection_period must be >= 1")
        if not 0.0 <= self.seed_ratio <= 1.0:
            problems.append("seed_ratio must lie in [0, 1]")
        if not 0.0 <= self.perturbation_probability <= 1.0:
            problems.append("perturbation_probability must lie in [0, 1]")
        if self.v_max_keys < 0.0:
            problems.append("v_max_keys must be >= 0")
        if problems:
            raise ValueError("invalid IPSO parameters: " + "; ".join(problems))

    @property
    def injected_count(self) -> int:
        return min(self.swarm_size, int(math.ceil(self.seed_ratio * self.swarm_size)))

    @classmethod
    def from_scenario(cls, s: Scenario, **overrides) -> "IpsoParams":
        """Defaults, then scenario `ipso` values, then explicit keyword overrides."""
        values = {}
        for key, (attr, kind) in _OVERRIDE_FIELDS.items():
            value = ipso_override(s, key)
            if value is not None:
                values[attr] = kind(value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(eq=False)
class KeyVector:
    """Continuous particle position and velocity."""

    keys: np.ndarray
    velocity: np.ndarray


@dataclass(eq=False)
class SwarmState:
    """Particles, personal bests, global best and convergence history."""

    positions: np.ndarray
    velocities: np.ndarray
    fitness: np.ndarray
    plans: List[Plan]
    pbest_keys: np.ndarray
    pbest_fitness: np.ndarray
    pbest_plans: List[Plan]
    gbest_keys: np.ndarray
    gbest_plan: Plan
    gbest_fitness: float
    gbest_owner: int
    particle_rngs: List[np.random.Generator]
    history: List[float] = field(default_factory=list)

    def copy(self) -> "SwarmState":
        return replace(
            self,
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            fitness=self.fitness.copy(),
            plans=list(self.plans),
            pbest_keys=self.pbest_keys.copy(),
            pbest_fitness=self.pbest_fitness.copy(),
            pbest_plans=list(self.pbest_plans),
            gbest_keys=self.gbest_keys.copy(),
            history=list(self.history),
        )

    def particle(self, index: int) -> KeyVector:
        return KeyVector(self.positions[index].copy(), self.velocities[index].copy())


@dataclass(eq=False)
class OptimizeResult:
    """Best plan found and the run's convergence record."""

    plan: Plan
    fitness: float
    history: List[float]
    iterations: int
    seed_fitness: float = math.inf


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def decode(kv: KeyVector, fp: FilteredProblem) -> Plan:
    """
    Turn a key vector into a plan.

    Goals are ordered by ascending key (ties by goal index); each breakpoint
    key maps to round(key * G_N) and the cuts are sorted.
    """
    n_g = fp.n_goals
    keys = np.asarray(kv.keys, dtype=float)
    goal_keys = keys[:n_g]
    permutation = tuple(int(j) for j in np.lexsort((np.arange(n_g), goal_keys)))
    cuts = sorted(_round_half_up(float(k) * n_g) for k in keys[n_g:])
    return Plan(permutation, tuple(cuts))


def encode(plan: Plan, n_goals: int, n_robots: int) -> KeyVector:
    """Key vector whose decode reproduces `plan`; velocity is zero."""
    keys = np.zeros(n_goals + n_robots - 1)
    for position, goal in enumerate(plan.permutation):
        keys[goal] = (position + 0.5) / n_goals
    for idx, cut in enumerate(plan.breakpoints):
        keys[n_goals + idx] = cut / n_goals
    return KeyVector(keys, np.zeros_like(keys))


def repair(p: Plan, fp: FilteredProblem) -> Plan:
    """
    Normalise a plan so every goal appears once and breakpoints are valid.

    Repeated or out-of-range entries are replaced by the missing goals in
    ascending order; breakpoints are clamped to [0, G_N], sorted and padded or
    truncated to R_N - 1 entries.
    """
    n_g, n_r = fp.n_goals, fp.n_robots
    seen = set()
    slots: List[Optional[int]] = []
    for goal in p.permutation:
        if 0 <= goal < n_g and goal not in seen:
            seen.add(goal)
            slots.append(int(goal))
        else:
            slots.append(None)
    missing = [g for g in range(n_g) if g not in seen]
    fill = iter(missing)
    permutation = [goal if goal is not None else next(fill, None) for goal in slots]
    permutation = [g for g in permutation if g is not None]
    permutation.extend(fill)

    cuts = sorted(min(max(int(c), 0), n_g) for c in p.breakpoints)
    cuts = cuts[: n_r - 1] + [n_g] * max(0, n_r - 1 - len(cuts))
    repaired = Plan(tuple(permutation), tuple(sorted(cuts)))
    return p if repaired == p else repaired


def _evaluate_row(row: np.ndarray, fp: FilteredProblem, m: CostMatrices, limits: DynamicsLimits) -> Tuple[Plan, float]:
    plan = repair(decode(KeyVector(row, np.zeros_like(row)), fp), fp)
    return plan, makespan(plan, m, limits)


def _evaluate_rows(
    rows: np.ndarray,
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
    executor: Optional[ThreadPoolExecutor] = None,
) -> List[Tuple[Plan, float]]:
    if executor is not None:
        return list(executor.map(lambda r: _evaluate_row(r, fp, m, limits), rows))
    return [_evaluate_row(r, fp, m, limits) for r in rows]


def _refresh_gbest(state: SwarmState) -> None:
    best = int(np.argmin(state.pbest_fitness))
    if state.pbest_fitness[best] < state.gbest_fitness:
        state.gbest_fitness = float(state.pbest_fitness[best])
        state.gbest_keys = state.pbest_keys[best].copy()
        state.gbest_plan = state.pbest_plans[best]
        state.gbest_owner = best


def _absorb(state: SwarmState, index: int, plan: Plan, fitness: float) -> None:
    state.plans[index] = plan
    state.fitness[index] = fitness
    if fitness < state.pbest_fitness[index]:
        state.pbest_fitness[index] = fitness
        state.pbest_keys[index] = state.positions[index].copy()
        state.pbest_plans[index] = plan


def init_swarm(
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
    params: IpsoParams,
    seeder: Optional[MlaSeeder],
    particle_rngs: List[np.random.Generator],
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[SwarmState, float]:
    """Seed ⌈ρ·N_s⌉ particles from MLA plans, the rest uniformly; returns state and best seed fitness."""
    n_g, n_r = fp.n_goals, fp.n_robots
    dim = n_g + n_r - 1
    n = params.swarm_size
    positions = np.zeros((n, dim))
    velocities = np.zeros((n, dim))

    seeds: List[Plan] = []
    if params.mla_seed and seeder is not None:
        seeds = seeder.initial_plans(params.injected_count)
    for idx in range(n):
        if idx < len(seeds):
            positions[idx] = encode(seeds[idx], n_g, n_r).keys
        else:
            rng = particle_rngs[idx]
            positions[idx] = rng.uniform(0.0, 1.0, dim)
            velocities[idx] = rng.uniform(-params.v_max_keys, params.v_max_keys, dim)

    evaluated = _evaluate_rows(positions, fp, m, limits, executor)
    plans = [plan for plan, _ in evaluated]
    fitness = np.array([fit for _, fit in evaluated])
    seed_fitness = float(fitness[: len(seeds)].min()) if seeds else math.inf

    best = int(np.argmin(fitness))
    state = SwarmState(
        positions=positions,
        velocities=velocities,
        fitness=fitness,
        plans=plans,
        pbest_keys=positions.copy(),
        pbest_fitness=fitness.copy(),
        pbest_plans=list(plans),
        gbest_keys=positions[best].copy(),
        gbest_plan=plans[best],
        gbest_fitness=float(fitness[best]),
        gbest_owner=best,
        particle_rngs=particle_rngs,
        history=[float(fitness[best])],
    )
    return state, seed_fitness


def pso_step(
    state: SwarmState,
    params: IpsoParams,
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
    executor: Optional[ThreadPoolExecutor] = None,
) -> SwarmState:
    """
    One velocity/position update, then decode, repair, evaluate and best-update.

    Random coefficients come from each particle's own stream. pbest and gbest
    only change on strict improvement.
    """
    new = state.copy()
    n, dim = new.positions.shape
    r1 = np.empty((n, dim))
    r2 = np.empty((n, dim))
    for idx in range(n):
        r1[idx] = new.particle_rngs[idx].uniform(0.0, 1.0, dim)
        r2[idx] = new.particle_rngs[idx].uniform(0.0, 1.0, dim)

    velocity = (
        params.inertia * new.velocities
        + params.c1 * r1 * (new.pbest_keys - new.positions)
        + params.c2 * r2 * (new.gbest_keys[None, :] - new.positions)
    )
    new.velocities = np.clip(velocity, -params.v_max_keys, params.v_max_keys)
    new.positions = np.clip(new.positions + new.velocities, 0.0, 1.0)

    for idx, (plan, fit) in enumerate(_evaluate_rows(new.positions, fp, m, limits, executor)):
        _absorb(new, idx, plan, fit)
    _refresh_gbest(new)
    return new


def inject_mla(
    state: SwarmState,
    params: IpsoParams,
    seeder: MlaSeeder,
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
) -> SwarmState:
    """
    Replace the ⌈ρ·N_s⌉ worst particles with fresh MLA plans.

    Injected particles get zero velocity and their pbest reset to the injected
    plan. The particle that owns gbest is never replaced.
    """
    count = params.injected_count
    if count == 0:
        return state
    new = state.copy()
    order = sorted(
        (idx for idx in range(len(new.fitness)) if idx != new.gbest_owner),
        key=lambda idx: (-new.fitness[idx], idx),
    )
    victims = order[:count]
    plans = seeder.injection_plans(len(victims))
    for idx, plan in zip(victims, plans):
        kv = encode(plan, fp.n_goals, fp.n_robots)
        fitness = makespan(plan, m, limits)
        new.positions[idx] = kv.keys
        new.velocities[idx] = kv.velocity
        new.plans[idx] = plan
        new.fitness[idx] = fitness
        new.pbest_keys[idx] = kv.keys.copy()
        new.pbest_plans[idx] = plan
        new.pbest_fitness[idx] = fitness
    _refresh_gbest(new)
    return new


def perturb(
    state: SwarmState,
    params: IpsoParams,
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
) -> SwarmState:
    """Reinitialise whole particles with probability p_pert (pbest is kept)."""
    if params.perturbation_probability <= 0.0:
        return state
    new = state.copy()
    dim = new.positions.shape[1]
    for idx, rng in enumerate(new.particle_rngs):
        if idx == new.gbest_owner:
            continue
        if rng.uniform() < params.perturbation_probability:
            new.positions[idx] = rng.uniform(0.0, 1.0, dim)
            new.velocities[idx] = 0.0
            plan, fit = _evaluate_row(new.positions[idx], fp, m, limits)
            _absorb(new, idx, plan, fit)
    _refresh_gbest(new)
    return new


def optimize(
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
    params: IpsoParams,
    seed: int = 0,
    mla_cfg: Optional[MlaConfig] = None,
    max_workers: int = 1,
    log: Callable[[str], None] = null_log,
) -> OptimizeResult:
    """
    Run the injected swarm until I_max or until gbest stops improving.

    The run stops early once the relative gbest improvement stays below
    `tolerance` for `patience` consecutive iterations.

    Args:
        fp: Filtered problem
        m: Cost matrices of `fp` (may be a scaled copy)
        limits: Drone dynamics; fitness is seconds at v_max_drone
        params: Swarm parameters
        seed: Master seed; fixes every random stream
        mla_cfg: Seeder configuration
        max_workers: Threads used for fitness evaluation
        log: Log sink

    Returns:
        OptimizeResult with the gbest plan, its makespan and the history

    Raises:
        EmptyProblemError: If the problem has no goals or robots
    """
    if fp.n_goals == 0 or fp.n_robots == 0:
        raise EmptyProblemError("cannot optimise an empty problem")

    streams = np.random.SeedSequence(seed).spawn(params.swarm_size + 1)
    particle_rngs = [np.random.default_rng(s) for s in streams[: params.swarm_size]]
    seeder = MlaSeeder(fp, mla_cfg or MlaConfig(), np.random.default_rng(streams[-1]))

    executor = ThreadPoolExecutor(max_workers=max_workers) if max_workers > 1 else None
    try:
        state, seed_fitness = init_swarm(fp, m, limits, params, seeder, particle_rngs, executor)
        stall = 0
        iteration = 0
        for iteration in range(1, params.max_iterations + 1):
            previous = state.gbest_fitness
            state = pso_step(state, params, fp, m, limits, executor)
            if params.inject and iteration % params.injection_period == 0:
                state = inject_mla(state, params, seeder, fp, m, limits)
            state = perturb(state, params, fp, m, limits)
            state.history.append(state.gbest_fitness)

            if math.isfinite(previous) and previous > 0.0:
                improvement = (previous - state.gbest_fitness) / previous
            else:
                improvement = math.inf if state.gbest_fitness < previous else 0.0
            stall = stall + 1 if improvement < params.tolerance else 0
            if stall >= params.patience:
                log(f"IPSO stopped at iteration {iteration}: no improvement for {stall} iterations")
                break
    finally:
        if executor is not None:
            executor.shutdown()

    log(f"IPSO finished after {iteration} iterations, makespan {state.gbest_fitness:.3f} s")
    return OptimizeResult(
        plan=state.gbest_plan,
        fitness=state.gbest_fitness,
        history=list(state.history),
        iterations=iteration,
        seed_fitness=seed_fitness,
    )


def iterations_to_reach(history: Sequence[float], rel: float = 0.01) -> int:
    """First iteration whose gbest lies within `rel` of the final value."""
    final = history[-1]
    for idx, value in enumerate(history):
        if value <= final * (1.0 + rel):
            return idx
    return len(history) - 1
