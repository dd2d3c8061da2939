"""Microcanonical (Creutz demon) annealing, a Metropolis SA baseline, and
closed-form benchmark objectives.

The demon holds a non-negative kinetic budget ``E_k``. A candidate with
energy change ``dE`` is accepted iff ``dE <= E_k``, and then ``E_k -= dE``,
so potential plus kinetic energy is conserved by every accepted move.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cnn import Network, ShapeError, loss, network_forward, unflatten_params


class NonFiniteEnergyError(FloatingPointError):
    pass


# ---------------------------------------------------------------- objectives


class Objective:
    """Energy function over real vectors of a fixed dimension.

    ``next_phase`` is called between equilibrium loops; stochastic
    objectives use it to move to their next evaluation batch and must stay
    deterministic in between.
    """

    def __init__(self, fn: Callable[[np.ndarray], float], dim: int, name: str = "objective"):
        self.fn = fn
        self.dim = dim
        self.name = name

    def __call__(self, x: np.ndarray) -> float:
        return float(self.fn(x))

    def next_phase(self) -> None:
        pass


def sphere(x):
    return float(x @ x)


def rastrigin(x):
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


BENCHMARKS = {
    "sphere": (sphere, 0.0),
    "rastrigin": (rastrigin, 0.0),
    "rosenbrock": (rosenbrock, 1.0),
}


def benchmark_objective(name: str, dim: int) -> Objective:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    fn, opt = BENCHMARKS[name]
    obj = Objective(fn, dim, name)
    obj.optimum = np.full(dim, opt)
    return obj


class CNNObjective(Objective):
    """Batch loss of ``net`` with its parameter vector replaced by ``x``.

    The evaluation batch stays fixed until :meth:`next_phase`, which moves
    to the next batch of ``batches`` (cycling).
    """

    def __init__(self, net: Network, batches: Sequence):
        if not batches:
            raise ValueError("CNN objective needs at least one batch")
        super().__init__(self._evaluate, net.n_params, f"cnn:{net.tag}")
        self.net = net
        self.batches = batches
        self.phase = 0

    @property
    def batch(self):
        return self.batches[self.phase % len(self.batches)]

    def _evaluate(self, x):
        if x.shape != (self.dim,):
            raise ShapeError(f"vector of shape {x.shape} does not match {self.dim} parameters")
        candidate = unflatten_params(self.net, x)
        return loss(network_forward(candidate, self.batch), self.batch.targets)

    def next_phase(self):
        self.phase += 1


def cnn_objective(net: Network, batches: Sequence) -> CNNObjective:
    return CNNObjective(net, batches)


# ---------------------------------------------------------------- state


@dataclass(frozen=True)
class AnnealConfig:
    neighborhood_size: int = 10
    max_iterations: int = 10
    initial_kinetic: float = 100.0
    cooling_factor: float = 0.95
    delta_scale: float = 0.001
    strict_microcanonical: bool = False
    signed_delta: bool = True
    initial_temperature: float = 1.0
    epsilon: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.neighborhood_size < 1:
            raise ValueError("neighborhood_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.initial_kinetic < 0:
            raise ValueError("initial_kinetic must be >= 0")
        if not 0.0 < self.cooling_factor <= 1.0:
            raise ValueError("cooling_factor must be in (0, 1]")
        if self.delta_scale < 0:
            raise ValueError("delta_scale must be >= 0")
        if self.initial_temperature <= 0:
            raise ValueError("initial_temperature must be > 0")


@dataclass(frozen=True, eq=False)
class DemonState:
    x: np.ndarray
    energy: float
    kinetic: float
    temperature: float
    best_x: np.ndarray
    best_energy: float

    @property
    def total(self) -> float:
        return self.energy + self.kinetic


def demon_accept(delta_e: float, kinetic: float) -> tuple[bool, float]:
    """Creutz rule: accept iff ``delta_e <= kinetic``; return the new budget."""
    if delta_e <= kinetic:
        return True, kinetic - delta_e
    return False, kinetic


def demon_step(state: DemonState, candidate_energy: float, candidate_x=None) -> tuple[bool, DemonState]:
    """Apply the demon rule to one candidate.

    A rejected candidate returns ``state`` itself, untouched.
    """
    accepted, kinetic = demon_accept(candidate_energy - state.energy, state.kinetic)
    if not accepted:
        return False, state
    x = state.x if candidate_x is None else candidate_x
    best_x, best_energy = state.best_x, state.best_energy
    if candidate_energy < best_energy:
        best_x, best_energy = x, candidate_energy
    return True, replace(state, x=x, energy=candidate_energy, kinetic=kinetic,
                         best_x=best_x, best_energy=best_energy)


def metropolis_accept(delta_e: float, temperature: float, u: float) -> bool:
    """Accept downhill always, uphill with probability exp(-dE/T); ``u`` ~ U[0, 1)."""
    if delta_e <= 0.0:
        return True
    if temperature <= 0.0:
        return False
    return u < math.exp(-delta_e / temperature)


def perturb(x: np.ndarray, delta_scale: float, rng: np.random.Generator, signed: bool = True) -> np.ndarray:
    """``x + delta_scale * u`` with ``u`` uniform on [-1, 1] (or [0, 1) if not signed)."""
    return x + delta_scale * _unit_noise(rng, x.shape, signed)


def _unit_noise(rng, shape, signed):
    u = rng.random(shape)
    return 2.0 * u - 1.0 if signed else u


# ---------------------------------------------------------------- runs


@dataclass
class AnnealTrace:
    energy: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    temperature: list = field(default_factory=list)
    accepts: list = field(default_factory=list)
    rejects: list = field(default_factory=list)
    best_energy: list = field(default_factory=list)

    COLUMNS = ("iteration", "energy", "kinetic", "temperature", "accepts", "rejects")

    def __len__(self):
        return len(self.energy)

    def record(self, energy, kinetic, temperature, accepts, rejects, best_energy):
        self.energy.append(energy)
        self.kinetic.append(kinetic)
        self.temperature.append(temperature)
        self.accepts.append(accepts)
        self.rejects.append(rejects)
        self.best_energy.append(best_energy)

    @property
    def evaluations(self) -> int:
        return int(sum(self.accepts) + sum(self.rejects))

    def rows(self):
        for i in range(len(self)):
            yield (i, self.energy[i], self.kinetic[i], self.temperature[i], self.accepts[i], self.rejects[i])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4], row[5]])
        return path

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in
                ("energy", "kinetic", "temperature", "accepts", "rejects", "best_energy")}


@dataclass(eq=False)
class AnnealResult:
    best_x: np.ndarray
    best_energy: float
    state: DemonState
    trace: AnnealTrace
    iterations: int
    terminated_by: str  # "max_iterations" | "epsilon"

    @property
    def evaluations(self) -> int:
        return self.trace.evaluations


def _streams(seed: int):
    """Perturbation and acceptance generators; the perturbation stream is
    shared by MA and SA so paired runs see the same candidates."""
    perturb_ss, accept_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(perturb_ss), np.random.default_rng(accept_ss)


def _checked(objective, x):
    e = objective(x)
    if not math.isfinite(e):
        raise NonFiniteEnergyError(f"objective returned {e}")
    return e


def _run(objective: Objective, x0, config: AnnealConfig, rule: str, on_iteration=None) -> AnnealResult:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (objective.dim,):
        raise ShapeError(f"x0 has shape {x0.shape}, objective expects ({objective.dim},)")
    perturb_rng, accept_rng = _streams(config.seed)
    x = x0.copy()
    energy = _checked(objective, x)
    kinetic = float(config.initial_kinetic)
    temperature = float(config.initial_temperature)
    best_x, best_energy = x.copy(), energy
    trace = AnnealTrace()
    c = config.cooling_factor
    n = config.neighborhood_size
    is_ma = rule == "ma"
    evaluate = objective.fn if type(objective) is Objective else objective
    isfinite = math.isfinite
    it = 0
    while it < config.max_iterations and best_energy >= config.epsilon:
        if it > 0:
            objective.next_phase()
            energy = _checked(objective, x)
        steps = config.delta_scale * _unit_noise(perturb_rng, (n, x.size), config.signed_delta)
        uniforms = None if is_ma else accept_rng.random(n)
        accepts = 0
        for j in range(n):
            candidate = x + steps[j]
            e = evaluate(candidate)
            if not isfinite(e):
                raise NonFiniteEnergyError(f"objective returned {e}")
            delta = e - energy
            if is_ma:
                # inlined demon_accept
                ok = delta <= kinetic
                if ok:
                    kinetic -= delta
            else:
                ok = metropolis_accept(delta, temperature, uniforms[j])
            if ok:
                accepts += 1
                x, energy = candidate, e
                if e < best_energy:
                    best_x, best_energy = candidate, e
        temperature *= c
        if is_ma and not config.strict_microcanonical:
            kinetic *= c
        trace.record(energy, kinetic, temperature, accepts, n - accepts, best_energy)
        it += 1
        if on_iteration is not None:
            on_iteration(it, best_x)
    terminated_by = "epsilon" if it < config.max_iterations else "max_iterations"
    state = DemonState(x, energy, kinetic, temperature, best_x, best_energy)
    return AnnealResult(best_x.copy(), best_energy, state, trace, it, terminated_by)


def anneal_run(objective: Objective, x0, config: AnnealConfig, on_iteration=None) -> AnnealResult:
    """Microcanonical annealing.

    Each outer iteration is one equilibrium loop of ``neighborhood_size``
    candidates judged by the demon rule. Afterwards the temperature is
    multiplied by ``cooling_factor``; outside strict mode the kinetic budget
    is scaled by the same factor. Stops after ``max_iterations`` loops or
    once the best energy falls below ``epsilon``.

    ``on_iteration(i, best_x)`` runs after every loop, e.g. to write the
    incumbent back into a live network.
    """
    return _run(objective, x0, config, "ma", on_iteration)


def sa_run(objective: Objective, x0, config: AnnealConfig, on_iteration=None) -> AnnealResult:
    """Metropolis simulated annealing with the same neighborhood, budget,
    cooling and termination as :func:`anneal_run`. The ``kinetic`` field of
    the trace stays at ``initial_kinetic`` and carries no meaning."""
    return _run(objective, x0, config, "sa", on_iteration)
