"""
Split-conformal calibration and prediction sets over learned rank maps

PB:   S = ||Q^-1(y, x)||, radius = k-th smallest score, k = ceil((n+1)(1-alpha))
RPB:  S = ||R(Q^-1(y, x))|| with R fitted on the first part of the calibration set
HPD:  s = f_U(Q^-1(y, x)) det(grad_y Q^-1(y, x)), tau = j-th smallest, j = floor((n+1) alpha)
Quantile: radius = sqrt(chi2_{d_y}(1 - alpha)); no calibration data
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy.stats import chi2

from ..engine.model import RankModel
from ..engine.reference import reference_log_density
from ..metrics.prometheus import calibration_failed_points_total, calibrations_total
from ..types.conformal import CalibrationArtifact, ConformalMethod, Membership
from ..types.errors import ShapeMismatchError
from ..types.models import ReferenceLaw
from .rerank import RerankMap, apply_rerank, fit_rerank

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-8


def upper_order_index(n: int, alpha: float) -> int:
    """ceil((n + 1)(1 - alpha)), exact for decimal alphas"""
    return math.ceil((n + 1) * (1 - Fraction(str(alpha))))


def lower_order_index(n: int, alpha: float) -> int:
    """floor((n + 1) alpha), exact for decimal alphas"""
    return math.floor((n + 1) * Fraction(str(alpha)))


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _calibration_rows(model: RankModel, Y, X) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
    if Y.shape[1] != model.d_y:
        raise ShapeMismatchError(f"calibration Y has dimension {Y.shape[1]}, model expects {model.d_y}")
    if X is not None:
        X = np.asarray(X, dtype=np.float64).reshape(Y.shape[0], -1)
    return Y, X


def _record(method: ConformalMethod, failed: int) -> None:
    calibrations_total.labels(method=method.value).inc()
    if failed:
        calibration_failed_points_total.labels(method=method.value).inc(failed)
        logger.warning(f"{method.value}: {failed} calibration point(s) failed and were scored conservatively")


def _radius_artifact(method: ConformalMethod, scores: np.ndarray, alpha: float, d_y: int,
                     reference: ReferenceLaw, failed: int, **extra) -> CalibrationArtifact:
    n = scores.shape[0]
    ordered = np.sort(scores, kind="stable")
    k = upper_order_index(n, alpha)
    trivial = k > n
    if trivial:
        logger.warning(f"{method.value}: n={n} is too small for alpha={alpha}; the set is all of R^{d_y}")
        radius = math.inf
    else:
        radius = float(ordered[k - 1])
    logger.info(f"{method.value}: calibrated radius {radius:.6g} at alpha={alpha} from n={n} (k={k})")
    return CalibrationArtifact(
        method=method, alpha=alpha, n=n, d_y=d_y, reference=reference, radius=radius,
        order_index=k, scores=ordered.tolist(), failed_points=failed, trivial=trivial, **extra,
    )


def rank_scores(model: RankModel, Y: np.ndarray, X: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Ranks and a per-row success flag"""
    result = model.rank(Y, X)
    return result.values, np.asarray(result.converged, dtype=bool)


def calibrate_pb(model: RankModel, Y, X=None, alpha: float = 0.1) -> CalibrationArtifact:
    _check_alpha(alpha)
    Y, X = _calibration_rows(model, Y, X)
    ranks, ok = rank_scores(model, Y, X)
    scores = np.where(ok, np.linalg.norm(ranks, axis=1), math.inf)
    failed = int(np.sum(~ok))
    _record(ConformalMethod.PB, failed)
    return _radius_artifact(ConformalMethod.PB, scores, alpha, model.d_y, model.reference, failed)


def calibrate_rpb(model: RankModel, Y, X=None, alpha: float = 0.1, split_fraction: float = 0.5,
                  seed: int = 0, rerank: Optional[RerankMap] = None) -> CalibrationArtifact:
    """Fit the re-ranking on the first split (data order), conformalize on the second"""
    _check_alpha(alpha)
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    Y, X = _calibration_rows(model, Y, X)
    n_fit = int(math.floor(split_fraction * Y.shape[0]))
    if rerank is None:
        if n_fit < 1:
            raise ValueError("RPB needs at least one calibration point to fit the re-ranking")
        fit_ranks, fit_ok = rank_scores(model, Y[:n_fit], None if X is None else X[:n_fit])
        if not np.any(fit_ok):
            raise ValueError("RPB: every rank solve on the fitting split failed")
        rerank = fit_rerank(fit_ranks[fit_ok], seed=seed)
    Y2, X2 = Y[n_fit:], None if X is None else X[n_fit:]
    ranks, ok = rank_scores(model, Y2, X2)
    scores = np.where(ok, np.linalg.norm(apply_rerank(rerank, ranks), axis=1), math.inf)
    failed = int(np.sum(~ok))
    _record(ConformalMethod.RPB, failed)
    return _radius_artifact(ConformalMethod.RPB, scores, alpha, model.d_y, model.reference, failed,
                            n_fit=n_fit, rerank=rerank.to_record())


def log_density_scores(model: RankModel, Y: np.ndarray, X: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """log p(y | x) = log f_U(rank) + log det(sym Jacobian); -inf where not PSD or where a solve failed.

    Returns the log densities and a per-row success flag.
    """
    ranks, ok = rank_scores(model, Y, X)
    jac, jac_ok = model.rank_jacobian_batch(Y, X)
    ok = ok & jac_ok
    eig = np.linalg.eigvalsh(jac)
    scale = np.maximum(1.0, np.max(np.abs(eig), axis=1))
    not_psd = np.min(eig, axis=1) < -PSD_TOLERANCE * scale
    if np.any(not_psd & ok):
        logger.warning(f"HPD: {int(np.sum(not_psd & ok))} point(s) with a non-PSD rank Jacobian scored 0")
    with np.errstate(divide="ignore"):
        log_det = np.sum(np.log(np.maximum(eig, 0.0)), axis=1)
    log_p = reference_log_density(model.reference, ranks) + log_det
    log_p = np.where(ok & ~not_psd, log_p, -math.inf)
    return log_p, ok


def calibrate_hpd(model: RankModel, Y, X=None, alpha: float = 0.1) -> CalibrationArtifact:
    _check_alpha(alpha)
    Y, X = _calibration_rows(model, Y, X)
    log_p, ok = log_density_scores(model, Y, X)
    scores = np.sort(np.exp(log_p), kind="stable")
    n = scores.shape[0]
    failed = int(np.sum(~ok))
    _record(ConformalMethod.HPD, failed)
    j = lower_order_index(n, alpha)
    trivial = j < 1
    if trivial:
        logger.warning(f"HPD: n={n} is too small for alpha={alpha}; the set is all of R^{model.d_y}")
    threshold = 0.0 if trivial else float(scores[j - 1])
    logger.info(f"HPD: calibrated density threshold {threshold:.6g} at alpha={alpha} from n={n} (j={j})")
    return CalibrationArtifact(
        method=ConformalMethod.HPD, alpha=alpha, n=n, d_y=model.d_y, reference=model.reference,
        threshold=threshold, order_index=j, scores=scores.tolist(), failed_points=failed, trivial=trivial,
    )


def quantile_radius(d_y: int, alpha: float) -> float:
    return math.sqrt(float(chi2.ppf(1.0 - alpha, d_y)))


def quantile_baseline(model: RankModel, alpha: float = 0.1) -> CalibrationArtifact:
    """Chi-square radius assuming the learned ranks are exactly standard Gaussian"""
    _check_alpha(alpha)
    if model.reference != ReferenceLaw.GAUSSIAN:
        raise ValueError("the quantile baseline requires a standard Gaussian reference")
    radius = quantile_radius(model.d_y, alpha)
    calibrations_total.labels(method=ConformalMethod.QUANTILE.value).inc()
    return CalibrationArtifact(method=ConformalMethod.QUANTILE, alpha=alpha, n=0, d_y=model.d_y,
                               reference=model.reference, radius=radius)


def calibrate(method: ConformalMethod, model: RankModel, Y, X=None, alpha: float = 0.1,
              split_fraction: float = 0.5, seed: int = 0) -> CalibrationArtifact:
    method = ConformalMethod(method)
    if method == ConformalMethod.PB:
        return calibrate_pb(model, Y, X, alpha)
    if method == ConformalMethod.RPB:
        return calibrate_rpb(model, Y, X, alpha, split_fraction, seed)
    if method == ConformalMethod.HPD:
        return calibrate_hpd(model, Y, X, alpha)
    return quantile_baseline(model, alpha)


def membership(model: RankModel, artifact: CalibrationArtifact, Y, X=None,
               rerank: Optional[RerankMap] = None) -> np.ndarray:
    """Row-wise tri-state membership of y_i in the set at x_i: 1 in, 0 out, -1 unknown"""
    Y, X = _calibration_rows(model, Y, X)
    n = Y.shape[0]
    if artifact.trivial or (artifact.radius is not None and math.isinf(artifact.radius)):
        return np.full(n, Membership.IN.value, dtype=np.int8)
    if artifact.method == ConformalMethod.HPD:
        log_p, ok = log_density_scores(model, Y, X)
        inside = np.exp(log_p) >= artifact.threshold
    else:
        ranks, ok = rank_scores(model, Y, X)
        if artifact.method == ConformalMethod.RPB:
            rerank = rerank or RerankMap.from_record(artifact.rerank)
            ranks = apply_rerank(rerank, ranks)
        inside = np.linalg.norm(ranks, axis=1) <= artifact.radius
    out = np.where(inside, Membership.IN.value, Membership.OUT.value).astype(np.int8)
    out[~ok] = Membership.UNKNOWN.value
    return out


@dataclass
class PredictionSet:
    """Membership oracle of the calibrated set at one conditioning point"""
    model: RankModel
    artifact: CalibrationArtifact
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        self._rerank = RerankMap.from_record(self.artifact.rerank) if self.artifact.rerank else None

    @property
    def method(self) -> ConformalMethod:
        return self.artifact.method

    def contains(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        Y = Y.reshape(-1, self.model.d_y)
        X = None
        if self.x is not None:
            X = np.broadcast_to(np.asarray(self.x, dtype=np.float64).reshape(-1), (Y.shape[0], self.model.d_x))
        return membership(self.model, self.artifact, Y, X, self._rerank)

    def __contains__(self, y) -> bool:
        return bool(self.contains(y)[0] == Membership.IN.value)


def predict_set(model: RankModel, artifact: CalibrationArtifact, x=None) -> PredictionSet:
    return PredictionSet(model, artifact, None if x is None else np.asarray(x, dtype=np.float64))


def predict_pb(model: RankModel, artifact: CalibrationArtifact, x=None) -> PredictionSet:
    if artifact.method != ConformalMethod.PB:
        raise ValueError(f"predict_pb needs a PB artifact, got {artifact.method.value}")
    return predict_set(model, artifact, x)
