"""Full-scale Monte Carlo of BB84 over one repeater.

Every phase is drawn explicitly: lockstep link-generation rounds on both
sides of the repeater, swap attempts, teleportation delays, basis coins,
the check sample and the reconciliation step.  A 2x2 density-matrix oracle
checks the closed-form teleportation success probability.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bb84_analysis import p_lambda
from .config import HardwareConfig, ShiftedExp
from .errors import DomainError, ParameterError
from .rus_core import geometric

# stream tags keep sample families disjoint under one seed
TAG_FULL = 1
TAG_SYNTH = 2
TAG_TELEPORT = 3
TAG_PILOT = 4


def sample_rng(seed: int, index: int, tag: int = TAG_FULL) -> np.random.Generator:
    """Counter-based stream for sample ``index``, independent of scheduling."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def werner_after(w_start: float, elapsed, t_c: float):
    if np.any(np.asarray(elapsed) < 0):
        raise ParameterError("elapsed time must be >= 0")
    out = w_start * np.exp(-np.asarray(elapsed, dtype=float) / t_c)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- density matrices

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _proj(v):
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


BB84_STATES = (
    np.array([1, 0], dtype=complex),
    np.array([0, 1], dtype=complex),
    np.array([1, 1], dtype=complex) / math.sqrt(2),
    np.array([1, -1], dtype=complex) / math.sqrt(2),
)


@dataclass(frozen=True)
class NoiseChannel:
    """Dephasing plus amplitude damping acting on one memory qubit."""

    t_de: float
    t_da: float

    def p(self, t: float) -> float:
        return (1 - math.exp(-t / self.t_de)) / 2

    def gamma(self, t: float) -> float:
        return 1 - math.exp(-t / self.t_da)

    def kraus(self, t: float):
        g = self.gamma(t)
        m0 = np.array([[1, 0], [0, math.sqrt(1 - g)]], dtype=complex)
        m1 = np.array([[0, math.sqrt(g)], [0, 0]], dtype=complex)
        return m0, m1

    def apply(self, rho: np.ndarray, t: float) -> np.ndarray:
        if t < 0:
            raise DomainError("noise duration must be >= 0")
        m0, m1 = self.kraus(t)
        damped = m0 @ rho @ m0.conj().T + m1 @ rho @ m1.conj().T
        p = self.p(t)
        out = (1 - p) * damped + p * (_Z @ damped @ _Z)
        if abs(np.trace(out) - np.trace(rho)) > 1e-12:
            raise ArithmeticError("noise channel failed to preserve the trace")
        return out


def bob_states(phi: np.ndarray, w: float):
    """Bob's qubit after each of Alice's outcomes with a Werner resource.

    Returns ``(probability, rho, correction)`` for outcomes 00, 01, 10, 11.
    The Bell weights are ``p1 = (1+3w)/4`` and ``p2 = p3 = p4 = (1-w)/4``.
    """
    p1 = (1 + 3 * w) / 4
    p2 = p3 = p4 = (1 - w) / 4
    ph = _proj(phi)
    pz = _proj(_Z @ phi)
    px = _proj(_X @ phi)
    py = _proj(_X @ _Z @ phi)
    return (
        (0.25, p1 * ph + p2 * pz + p3 * px + p4 * py, _I2),
        (0.25, p1 * px + p2 * py + p3 * ph + p4 * pz, _X),
        (0.25, p1 * pz + p2 * ph + p3 * py + p4 * px, _Z),
        # undo phi_y = XZ phi with (XZ)^dagger = ZX
        (0.25, p1 * py + p2 * px + p3 * pz + p4 * ph, _Z @ _X),
    )


def p_lambda_oracle(w: float, tc2: float, cfg: HardwareConfig) -> float:
    """Recovery probability averaged over the four BB84 data states."""
    if not (0 <= w <= 1) or tc2 < 0:
        raise ParameterError("need w in [0, 1] and tc2 >= 0")
    ch = NoiseChannel(cfg.t_de, cfg.t_da)
    tot = 0.0
    for phi in BB84_STATES:
        for prob, rho, u in bob_states(phi, w):
            out = u @ ch.apply(rho, tc2) @ u.conj().T
            tot += prob * float(np.real(phi.conj() @ out @ phi))
    return tot / len(BB84_STATES)


# ---------------------------------------------------------------- scalar path

@dataclass(frozen=True)
class TeleportOutcome:
    duration: float
    success: bool
    werner_at_teleport: float
    t_gamma: float
    v_a: float
    v_b: float


def _se(rng, se: ShiftedExp, size=None):
    return se.shift + rng.standard_exponential(size) / se.rate


def simulate_heralded_link(cfg: HardwareConfig, rng) -> tuple[float, float]:
    """``(T_H, T_C)``: time to the heralded link and the final heralding message."""
    n = geometric(rng, cfg.p_gen)
    t_h = sum(_se(rng, cfg.gen) for _ in range(n)) + sum(_se(rng, cfg.com) for _ in range(n - 1))
    return t_h, _se(rng, cfg.com)


def simulate_teleport(cfg: HardwareConfig, rng) -> TeleportOutcome:
    t_gamma = 0.0
    while True:
        ha, ca = simulate_heralded_link(cfg, rng)
        hb, cb = simulate_heralded_link(cfg, rng)
        va, vb = ha + ca, hb + cb
        tc1 = _se(rng, cfg.swap)
        if rng.random() < cfg.p_swap:
            break
        # a failed swap is heralded after its S-COMM phase
        t_gamma += max(va, vb) + tc1
    w = werner_after(cfg.w0 ** 2, abs(va - vb) + ca + cb + tc1, cfg.t_c)
    tc2 = _se(rng, cfg.ab)
    y = rng.random() < p_lambda(w, tc2, cfg)
    return TeleportOutcome(t_gamma + max(va, vb) + tc1 + tc2, bool(y), w, t_gamma, va, vb)


def _attempt_succeeds(y: np.ndarray, agree: np.ndarray, cfg: HardwareConfig, rng) -> bool:
    idx = np.flatnonzero(agree)
    b = idx.size
    aq, bq = cfg.alpha_q, cfg.beta_q
    b1 = -((-aq.numerator * b) // aq.denominator)
    if b1 < 1:
        return False
    # partial Fisher-Yates over the agreeing indices
    idx = idx.copy()
    for i in range(b1):
        j = i + int(rng.integers(b - i))
        idx[i], idx[j] = idx[j], idx[i]
    matches = int(np.count_nonzero(y[idx[:b1]]))
    return matches * bq.denominator >= bq.numerator * b1


def simulate_bb84(cfg: HardwareConfig, rng) -> float:
    """One completion time, phase by phase."""
    total = 0.0
    while True:
        outs = [simulate_teleport(cfg, rng) for _ in range(cfg.n)]
        total += sum(o.duration for o in outs)
        agree = rng.random(cfg.n) < 0.5
        ok = _attempt_succeeds(np.array([o.success for o in outs]), agree, cfg, rng)
        total += _se(rng, cfg.ab)
        if ok:
            return total


# ---------------------------------------------------------------- vectorized path

@dataclass
class DrawCounter:
    """Primitive duration draws.

    One link-generation round counts 2 (one per link, A and B run in
    lockstep), each T_C', T_C'' and K_C counts 1.  Decision variables
    (geometric counts, coins, Bernoulli outcomes) are not counted.
    """

    draws: int = 0

    def add(self, k: int):
        self.draws += int(k)


@dataclass
class TeleportBlock:
    """Arrays over m teleported qubits."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    t_gamma: np.ndarray
    v_a: np.ndarray
    v_b: np.ndarray
    swaps: np.ndarray = field(repr=False, default=None)


def teleport_block(cfg: HardwareConfig, rng, m: int, counter: DrawCounter | None = None) -> TeleportBlock:
    """Teleport m qubits sequentially; all swap attempts are drawn in one pass."""
    k = geometric(rng, cfg.p_swap, m) if cfg.p_swap < 1 else np.ones(m, dtype=np.int64)
    s = int(k.sum())
    na = geometric(rng, cfg.p_gen, s)
    nb = geometric(rng, cfg.p_gen, s)
    r = np.maximum(na, nb)
    rtot = int(r.sum())
    starts = np.concatenate([[0], np.cumsum(r)[:-1]])
    ridx = np.arange(rtot) - np.repeat(starts, r)
    gen = rng.standard_exponential((rtot, 2)) / cfg.gen.rate
    com = rng.standard_exponential((rtot, 2)) / cfg.com.rate
    nab = np.stack([na, nb], axis=1)
    mask = ridx[:, None] < np.repeat(nab, r, axis=0)
    base = cfg.gen.shift + cfg.com.shift
    v = np.add.reduceat(np.where(mask, gen + com, 0.0), starts, axis=0) + nab * base
    tca = com[starts + na - 1, 0] + cfg.com.shift
    tcb = com[starts + nb - 1, 1] + cfg.com.shift
    tc1 = _se(rng, cfg.swap, s)
    dur = v.max(axis=1) + tc1
    # last swap attempt of each qubit succeeds
    last = np.cumsum(k) - 1
    first = last - k + 1
    csum = np.concatenate([[0.0], np.cumsum(dur)])
    t_gamma = csum[last] - csum[first]
    va, vb = v[last, 0], v[last, 1]
    w = cfg.w0 ** 2 * np.exp(-(np.abs(va - vb) + tca[last] + tcb[last] + tc1[last]) / cfg.t_c)
    tc2 = _se(rng, cfg.ab, m)
    y = rng.random(m) < p_lambda(w, tc2, cfg)
    x = t_gamma + np.maximum(va, vb) + tc1[last] + tc2
    if counter is not None:
        counter.add(2 * rtot + s + m)
    return TeleportBlock(x, y, np.asarray(w), t_gamma, va, vb, k)


@dataclass
class SampleRecord:
    total_time: float
    n_attempts: int
    draws_used: int


def sample_bb84_fast(cfg: HardwareConfig, rng) -> SampleRecord:
    """Same process as ``simulate_bb84`` with each attempt drawn as one block."""
    ctr = DrawCounter()
    total = 0.0
    attempts = 0
    while True:
        attempts += 1
        blk = teleport_block(cfg, rng, cfg.n, ctr)
        total += float(blk.x.sum())
        agree = rng.random(cfg.n) < 0.5
        ok = _attempt_succeeds(blk.y, agree, cfg, rng)
        total += float(_se(rng, cfg.ab))
        ctr.add(1)
        if ok:
            return SampleRecord(total, attempts, ctr.draws)


@dataclass
class SampleBatch:
    """Completion-time samples tagged by their generator."""

    generator: str
    seed: int
    times: np.ndarray
    attempts: np.ndarray
    draws: np.ndarray
    config_hash: str = ""

    @property
    def size(self) -> int:
        return int(self.times.size)

    @property
    def mean_draws(self) -> float:
        return float(self.draws.mean())


def _full_chunk(args):
    cfg, seed, lo, hi = args
    out = [sample_bb84_fast(cfg, sample_rng(seed, i, TAG_FULL)) for i in range(lo, hi)]
    return (np.array([o.total_time for o in out]), np.array([o.n_attempts for o in out]),
            np.array([o.draws_used for o in out]))


def run_chunks(fn, cfg, seed: int, samples: int, workers: int = 1, chunk: int = 2000):
    """Evaluate ``fn`` over index chunks; results are concatenated by index."""
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    jobs = [(cfg, seed, lo, min(lo + chunk, samples)) for lo in range(0, samples, chunk)]
    if workers <= 1:
        parts = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1, len(jobs))) as ex:
            parts = list(ex.map(fn, jobs))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))


def simulate_batch(cfg: HardwareConfig, seed: int, samples: int, workers: int = 1) -> SampleBatch:
    t, a, d = run_chunks(_full_chunk, cfg, seed, samples, workers)
    return SampleBatch("full", seed, t, a, d, cfg.config_hash())


def simulate_teleports(cfg: HardwareConfig, seed: int, m: int, chunk: int = 20000) -> TeleportBlock:
    """m independent teleports (no BB84 wrapping), in reproducible chunks."""
    parts = [teleport_block(cfg, sample_rng(seed, c, TAG_TELEPORT), min(chunk, m - lo))
             for c, lo in enumerate(range(0, m, chunk))]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return TeleportBlock(cat("x"), cat("y"), cat("w"), cat("t_gamma"), cat("v_a"), cat("v_b"), cat("swaps"))


def full_draws_formula(cfg: HardwareConfig, p1: float) -> float:
    """Expected primitive draws per completion-time sample, full-scale."""
    q = 1 - cfg.p_gen
    per_swap = (2 + 4 * q) / (1 - q * q) + 1
    return (cfg.n * (per_swap / cfg.p_swap + 1) + 1) / p1
