"""Linear-Gaussian motion and measurement models plus the filtering toolbox.

State is [px, py, vx, vy] with nearly-constant-velocity motion; measurements
are position plus isotropic noise.  The Kalman operations here are used by
every tracker, so they favour numerical robustness (Joseph-form updates,
symmetrised covariances) over raw speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianBelief, ParticleBelief


class SingularInnovation(ValueError):
    """Innovation covariance too ill-conditioned to invert."""


class LengthMismatch(ValueError):
    """Filtered and predicted sequences disagree in length."""


class EmptyBelief(ValueError):
    """Operation needs at least one particle."""


@dataclass(frozen=True)
class MotionModel:
    A: np.ndarray
    Q: np.ndarray
    p_s: float
    T: float


@dataclass(frozen=True)
class MeasurementModel:
    H: np.ndarray
    R: np.ndarray
    p_d: float
    mu_c: float
    roi: tuple
    area: float
    sigma_v: float

    @property
    def clutter_density(self) -> float:
        """Spatial clutter intensity mu_c * f_c over the surveillance region."""
        return self.mu_c / self.area


def make_motion_model(T: float, sigma_u2: float, p_s: float) -> MotionModel:
    A = np.array(
        [
            [1.0, 0.0, T, 0.0],
            [0.0, 1.0, 0.0, T],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    t3, t2 = T**3 / 3.0, T**2 / 2.0
    Q = sigma_u2 * np.array(
        [
            [t3, 0.0, t2, 0.0],
            [0.0, t3, 0.0, t2],
            [t2, 0.0, T, 0.0],
            [0.0, t2, 0.0, T],
        ]
    )
    return MotionModel(A=A, Q=Q, p_s=float(p_s), T=float(T))


def make_measurement_model(sigma_v: float, roi, p_d: float, mu_c: float) -> MeasurementModel:
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = sigma_v**2 * np.eye(2)
    (x0, x1), (y0, y1) = roi
    area = (x1 - x0) * (y1 - y0)
    return MeasurementModel(
        H=H, R=R, p_d=float(p_d), mu_c=float(mu_c), roi=tuple(map(tuple, roi)),
        area=float(area), sigma_v=float(sigma_v),
    )


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def predict(belief: GaussianBelief, motion: MotionModel) -> GaussianBelief:
    A, Q = motion.A, motion.Q
    return GaussianBelief(A @ belief.mean, _sym(A @ belief.cov @ A.T + Q))


def _psd_sqrt(Q: np.ndarray) -> np.ndarray:
    if not Q.any():
        return np.zeros_like(Q)
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        return V * np.sqrt(np.clip(w, 0.0, None))


def predict_particles(belief: ParticleBelief, motion: MotionModel, rng) -> ParticleBelief:
    if belief.points.shape[0] == 0:
        raise EmptyBelief("cannot propagate an empty particle set")
    S = _psd_sqrt(motion.Q)
    noise = rng.standard_normal(belief.points.shape) @ S.T
    return ParticleBelief(belief.points @ motion.A.T + noise, belief.weights)


def innovation_cov(belief: GaussianBelief, meas: MeasurementModel) -> np.ndarray:
    return _sym(meas.H @ belief.cov @ meas.H.T + meas.R)


def kalman_update(belief: GaussianBelief, z, meas: MeasurementModel):
    """Measurement update.  Returns the posterior and the predictive density
    of z; raises SingularInnovation when the innovation covariance has
    condition number above 1e12."""
    H, R = meas.H, meas.R
    mean, cov = belief.mean, belief.cov
    S = _sym(H @ cov @ H.T + R)
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovation(f"innovation covariance condition {np.linalg.cond(S):.3g}")
    innov = np.asarray(z, float) - H @ mean
    K = np.linalg.solve(S, H @ cov).T
    post_mean = mean + K @ innov
    IKH = np.eye(cov.shape[0]) - K @ H
    post_cov = _sym(IKH @ cov @ IKH.T + K @ R @ K.T)
    d2 = innov @ np.linalg.solve(S, innov)
    like = float(np.exp(-0.5 * d2) / (2.0 * np.pi * np.sqrt(np.linalg.det(S))))
    return GaussianBelief(post_mean, post_cov), like


def gaussian_meas_likelihoods(belief: GaussianBelief, zs: np.ndarray,
                              meas: MeasurementModel) -> np.ndarray:
    """Predictive density of each measurement row under the belief."""
    if zs.shape[0] == 0:
        return np.zeros(0)
    S = innovation_cov(belief, meas)
    innov = zs - (meas.H @ belief.mean)[None, :]
    Si = np.linalg.inv(S)
    d2 = np.einsum("mi,ij,mj->m", innov, Si, innov)
    return np.exp(-0.5 * d2) / (2.0 * np.pi * np.sqrt(np.linalg.det(S)))


def particle_meas_likelihoods(belief: ParticleBelief, zs: np.ndarray,
                              meas: MeasurementModel) -> np.ndarray:
    """Mixture predictive density sum_i w_i N(z; H x_i, R) per measurement."""
    if zs.shape[0] == 0:
        return np.zeros(0)
    dens = particle_likelihood_matrix(belief.points, zs, meas)
    return dens.T @ belief.weights


def particle_likelihood_matrix(points: np.ndarray, zs: np.ndarray,
                               meas: MeasurementModel) -> np.ndarray:
    """(n_particles, M) array of N(z_m; H x_i, R) values.  Assumes R = sigma^2 I."""
    s2 = meas.sigma_v**2
    dx = points[:, 0][:, None] - zs[:, 0][None, :]
    dy = points[:, 1][:, None] - zs[:, 1][None, :]
    return np.exp(-0.5 * (dx * dx + dy * dy) / s2) / (2.0 * np.pi * s2)


def particle_moments(belief: ParticleBelief):
    mean = belief.weights @ belief.points
    centered = belief.points - mean
    cov = _sym((centered * belief.weights[:, None]).T @ centered)
    return mean, cov


def mixture_kalman(pred: GaussianBelief, z, weights, meas: MeasurementModel) -> GaussianBelief:
    """Moment-matched mixture of the predicted belief (weights[0]) and the
    conditional Kalman posteriors for each measurement row (weights[1:]).
    Zero-weight components are skipped; weights are renormalised."""
    live = np.flatnonzero(np.asarray(weights[1:]) > 0)
    if live.size == 0:
        w0 = float(weights[0])
        return GaussianBelief(pred.mean.copy(), pred.cov.copy()) if w0 != 0 else (
            GaussianBelief(pred.mean * np.nan, pred.cov * np.nan))
    # every component shares the predicted belief, so one innovation
    # factorisation covers all of them
    H, R = meas.H, meas.R
    mean, cov = pred.mean, pred.cov
    S = _sym(H @ cov @ H.T + R)
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovation(f"innovation covariance condition {np.linalg.cond(S):.3g}")
    K = np.linalg.solve(S, H @ cov).T
    IKH = np.eye(cov.shape[0]) - K @ H
    post_cov = _sym(IKH @ cov @ IKH.T + K @ R @ K.T)
    innov = np.asarray(z, float)[live] - H @ mean
    post_means = mean + innov @ K.T

    w = np.concatenate(([weights[0]], np.asarray(weights, float)[1 + live]))
    w = w / w.sum()
    mix_mean = w[0] * mean + w[1:] @ post_means
    d0 = mean - mix_mean
    dm = post_means - mix_mean
    mix_cov = (
        w[0] * (cov + np.outer(d0, d0))
        + w[1:].sum() * post_cov
        + (dm * w[1:, None]).T @ dm
    )
    return GaussianBelief(mix_mean, _sym(mix_cov))


def rts_smooth(filtered, predicted, motion: MotionModel):
    """Backward smoothing pass.

    predicted[i] must be the one-step prediction of time i made from
    filtered[i-1]; predicted[0] is the prior used before the first update.
    """
    if len(filtered) != len(predicted):
        raise LengthMismatch(f"{len(filtered)} filtered vs {len(predicted)} predicted")
    n = len(filtered)
    out = [None] * n
    out[-1] = filtered[-1]
    A = motion.A
    for t in range(n - 2, -1, -1):
        f, p_next, s_next = filtered[t], predicted[t + 1], out[t + 1]
        G = np.linalg.solve(p_next.cov, A @ f.cov).T
        mean = f.mean + G @ (s_next.mean - p_next.mean)
        cov = _sym(f.cov + G @ (s_next.cov - p_next.cov) @ G.T)
        out[t] = GaussianBelief(mean, cov)
    return out


def resample(belief: ParticleBelief, n: int, rng) -> ParticleBelief:
    """Systematic resampling to n equally weighted particles."""
    if belief.points.shape[0] == 0:
        raise EmptyBelief("cannot resample an empty particle set")
    positions = (np.arange(n) + rng.uniform()) / n
    cumw = np.cumsum(belief.weights)
    cumw[-1] = 1.0
    idx = np.searchsorted(cumw, positions)
    return ParticleBelief(belief.points[idx], np.full(n, 1.0 / n))
