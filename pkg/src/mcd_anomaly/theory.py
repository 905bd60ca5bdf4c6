"""Monte-Carlo laboratory for the minimum-distance score's AUC behavior.

Ground truths and completions are drawn from known Gaussians, so the
discrimination performance of the minimum-of-M-distances score can be
estimated empirically and cross-checked against a semi-analytic form that
rewrites the AUC as 1 - E[(1 - P(eps))^M], with P the probability mass of
the normal completion distribution inside an eps-ball around a normal
ground truth. The two estimators agreeing within Monte-Carlo error is the
lab's core check; both should rise toward 1 as M grows when the normal and
anomalous distributions are separated.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError, UnsupportedDimensionError
from .rng import RandomStream

DEFAULT_M_SWEEP = (1, 2, 5, 10, 25, 50, 100, 250)

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class OracleSpec:
    """Isotropic Gaussian stand-ins for the normal and anomalous
    completion distributions. A zero sigma denotes a point mass (useful in
    degenerate tests); the closed-form ball mass requires sigma_n > 0.
    """

    dim: int
    mu_n: np.ndarray
    sigma_n: float
    mu_a: np.ndarray
    sigma_a: float

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.sigma_n < 0 or self.sigma_a < 0:
            raise ConfigError("sigmas must be nonnegative")
        for name in ("mu_n", "mu_a"):
            mu = np.asarray(getattr(self, name), dtype=np.float64)
            if mu.ndim == 0:
                mu = np.full(self.dim, float(mu))
            if mu.shape != (self.dim,):
                raise ConfigError(f"{name} must be scalar or length-{self.dim}, got {mu.shape}")
            object.__setattr__(self, name, mu)


def separation_spec(mu_sep: float = 3.0, sigma: float = 1.0, dim: int = 1) -> OracleSpec:
    """Convenience spec: normal at the origin, anomalous mu_sep away."""
    return OracleSpec(dim=dim, mu_n=np.zeros(dim),
                      sigma_n=sigma, mu_a=np.full(dim, mu_sep), sigma_a=sigma)


@dataclass(frozen=True)
class TheoryTrial:
    eps_n: float
    eps_a: float
    gt_normal: np.ndarray
    gt_anomalous: np.ndarray


@dataclass(frozen=True)
class SweepResult:
    m_values: tuple[int, ...]
    auc: tuple[float, ...]
    stderr: tuple[float, ...]
    semi_auc: tuple[float, ...] | None = None
    semi_stderr: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (len(self.m_values) == len(self.auc) == len(self.stderr)):
            raise ConfigError("sweep columns must have equal lengths")
        if any(not 0.0 <= a <= 1.0 for a in self.auc):
            raise ConfigError("AUC estimates must lie in [0, 1]")


def run_trial(spec: OracleSpec, m: int, stream: RandomStream) -> TheoryTrial:
    """One trial: draw both ground truths, then the minimum distance from
    each to M fresh draws of the *normal* completion distribution.
    """
    if m < 1:
        raise ConfigError(f"M must be >= 1, got {m}")
    gen = stream.generator() if isinstance(stream, RandomStream) else stream
    h_n = spec.mu_n + spec.sigma_n * gen.standard_normal(spec.dim)
    h_a = spec.mu_a + spec.sigma_a * gen.standard_normal(spec.dim)
    draws_n = spec.mu_n + spec.sigma_n * gen.standard_normal((m, spec.dim))
    draws_a = spec.mu_n + spec.sigma_n * gen.standard_normal((m, spec.dim))
    eps_n = float(np.linalg.norm(draws_n - h_n, axis=1).min())
    eps_a = float(np.linalg.norm(draws_a - h_a, axis=1).min())
    return TheoryTrial(eps_n=eps_n, eps_a=eps_a, gt_normal=h_n, gt_anomalous=h_a)


def simulate_minima(spec: OracleSpec, m: int, trials: int,
                    stream: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized trials: returns (eps_n, eps_a) arrays of length `trials`."""
    if m < 1:
        raise ConfigError(f"M must be >= 1, got {m}")
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    gen = stream.generator()
    eps_n = np.empty(trials)
    eps_a = np.empty(trials)
    # Chunk so the (chunk, m, dim) draw blocks stay a few tens of MB.
    chunk = max(1, min(trials, 4_000_000 // max(1, m * spec.dim)))
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        h_n = spec.mu_n + spec.sigma_n * gen.standard_normal((k, spec.dim))
        h_a = spec.mu_a + spec.sigma_a * gen.standard_normal((k, spec.dim))
        draws_n = spec.mu_n + spec.sigma_n * gen.standard_normal((k, m, spec.dim))
        draws_a = spec.mu_n + spec.sigma_n * gen.standard_normal((k, m, spec.dim))
        eps_n[done : done + k] = np.linalg.norm(draws_n - h_n[:, None, :], axis=2).min(axis=1)
        eps_a[done : done + k] = np.linalg.norm(draws_a - h_a[:, None, :], axis=2).min(axis=1)
        done += k
    return eps_n, eps_a


def paired_auc(eps_n: np.ndarray, eps_a: np.ndarray) -> tuple[float, float]:
    """Fraction of trials with eps_a > eps_n, ties counting one half."""
    eps_n = np.asarray(eps_n, dtype=np.float64)
    eps_a = np.asarray(eps_a, dtype=np.float64)
    if eps_n.shape != eps_a.shape or eps_n.ndim != 1 or eps_n.size == 0:
        raise ConfigError("need two equal-length nonempty score arrays")
    n = eps_n.size
    wins = np.count_nonzero(eps_a > eps_n) + 0.5 * np.count_nonzero(eps_a == eps_n)
    p = wins / n
    return float(p), float(math.sqrt(max(p * (1.0 - p), 0.0) / n))


def empirical_auc(spec: OracleSpec, m: int, trials: int,
                  stream: RandomStream) -> tuple[float, float]:
    """Monte-Carlo AUC of the min-distance score for the given spec and M."""
    eps_n, eps_a = simulate_minima(spec, m, trials, stream)
    return paired_auc(eps_n, eps_a)


def normal_cdf(x):
    """Standard normal CDF via the erf special function."""
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=np.float64) / _SQRT2))


def ball_mass(h0, eps, spec: OracleSpec):
    """Probability that a normal completion lands within eps of h0.

    Closed form exists in dimension 1 only (an interval probability);
    higher dimensions use ball_mass_mc.
    """
    if spec.dim != 1:
        raise UnsupportedDimensionError(
            f"closed-form ball mass requires dim=1, got dim={spec.dim}; use ball_mass_mc"
        )
    if spec.sigma_n <= 0:
        raise ConfigError("closed-form ball mass requires sigma_n > 0")
    h0 = np.asarray(h0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0):
        raise ConfigError("eps must be nonnegative")
    scalar_out = h0.size == 1 and eps.size == 1
    h0 = h0.reshape(-1)
    mu, sigma = spec.mu_n[0], spec.sigma_n
    out = normal_cdf((h0 + eps - mu) / sigma) - normal_cdf((h0 - eps - mu) / sigma)
    return float(out[0]) if scalar_out else out


def ball_mass_mc(h0, eps: float, spec: OracleSpec, n_samples: int,
                 stream: RandomStream) -> float:
    """Monte-Carlo estimate of the eps-ball mass, any dimension."""
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    gen = stream.generator()
    h0 = np.asarray(h0, dtype=np.float64).reshape(spec.dim)
    draws = spec.mu_n + spec.sigma_n * gen.standard_normal((n_samples, spec.dim))
    return float(np.mean(np.linalg.norm(draws - h0, axis=1) <= eps))


def semi_analytic_auc(spec: OracleSpec, m: int, trials: int,
                      stream: RandomStream) -> tuple[float, float]:
    """Estimate AUC = 1 - E[(1 - P(eps_a))^M] by Monte-Carlo.

    The expectation runs over paired draws of the normal ground truth and
    the anomalous minimum distance (simulated exactly as in run_trial);
    taking both marginals makes this estimator match the empirical AUC.
    Dimension 1 only, via the closed-form ball mass.
    """
    if spec.dim != 1:
        raise UnsupportedDimensionError("semi-analytic AUC requires dim=1")
    if m < 1 or trials < 1:
        raise ConfigError("M and trials must be >= 1")
    gen = stream.generator()
    q = np.empty(trials)
    chunk = max(1, min(trials, 4_000_000 // m))
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        h_n = spec.mu_n[0] + spec.sigma_n * gen.standard_normal(k)
        h_a = spec.mu_a[0] + spec.sigma_a * gen.standard_normal(k)
        draws_a = spec.mu_n[0] + spec.sigma_n * gen.standard_normal((k, m))
        eps_a = np.abs(draws_a - h_a[:, None]).min(axis=1)
        mass = ball_mass(h_n, eps_a, spec)
        q[done : done + k] = 1.0 - (1.0 - mass) ** m
        done += k
    auc = float(q.mean())
    stderr = float(q.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return auc, stderr


def sweep_m(spec: OracleSpec, m_list=DEFAULT_M_SWEEP, trials: int = 100_000,
            stream: RandomStream | None = None, with_semi_analytic: bool = False) -> SweepResult:
    """Empirical AUC per M over independent trial sets; optionally the
    semi-analytic estimate alongside (dim-1 specs only).
    """
    if not m_list:
        raise ConfigError("m_list must be non-empty")
    stream = stream if stream is not None else RandomStream(1337)
    aucs, errs, s_aucs, s_errs = [], [], [], []
    for k, m in enumerate(m_list):
        a, e = empirical_auc(spec, int(m), trials, stream.child(2 * k))
        aucs.append(a)
        errs.append(e)
        if with_semi_analytic:
            sa, se = semi_analytic_auc(spec, int(m), trials, stream.child(2 * k + 1))
            s_aucs.append(sa)
            s_errs.append(se)
    return SweepResult(
        m_values=tuple(int(m) for m in m_list),
        auc=tuple(aucs), stderr=tuple(errs),
        semi_auc=tuple(s_aucs) if with_semi_analytic else None,
        semi_stderr=tuple(s_errs) if with_semi_analytic else None,
    )


def write_sweep_csv(result: SweepResult, path, agreement_tol: float = 0.01) -> None:
    """CSV rows of M,auc,stderr; when the semi-analytic columns exist they
    are appended together with an agreement flag at the given tolerance.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if result.semi_auc is None:
            writer.writerow(["M", "auc", "stderr"])
            for m, a, e in zip(result.m_values, result.auc, result.stderr):
                writer.writerow([m, f"{a:.6f}", f"{e:.6f}"])
        else:
            writer.writerow(["M", "auc", "stderr", "semi_auc", "semi_stderr", "agree"])
            for m, a, e, sa, se in zip(result.m_values, result.auc, result.stderr,
                                       result.semi_auc, result.semi_stderr):
                agree = int(abs(a - sa) <= agreement_tol)
                writer.writerow([m, f"{a:.6f}", f"{e:.6f}", f"{sa:.6f}", f"{se:.6f}", agree])


def write_sweep_json(result: SweepResult, path, spec: OracleSpec, trials: int) -> None:
    payload = {
        "spec": {
            "dim": spec.dim,
            "mu_n": list(map(float, spec.mu_n)),
            "sigma_n": spec.sigma_n,
            "mu_a": list(map(float, spec.mu_a)),
            "sigma_a": spec.sigma_a,
        },
        "trials": trials,
        "m_values": list(result.m_values),
        "auc": list(result.auc),
        "stderr": list(result.stderr),
    }
    if result.semi_auc is not None:
        payload["semi_auc"] = list(result.semi_auc)
        payload["semi_stderr"] = list(result.semi_stderr)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
