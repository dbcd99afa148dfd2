"""Subspace identification of innovation-form models from input/output data.

Pipeline: stack past inputs/outputs and future inputs/outputs into block
Hankel matrices, regress the future outputs jointly on the past and the
future inputs, keep the past-coefficient block H_fp, factor H_fp Z_p by a
singular value decomposition, truncate to the model order, and read the
system matrices off the extended observability factor and the recovered
state sequence:

  * C is the top block of the observability factor.
  * D comes from regressing y_k on (x_k, u_k).
  * One joint regression of x_{k+1} on (x_k, u_k, y_k) yields the predictor
    matrices (A - K C, B - K D, K); adding back the K terms gives A and B.

The separate shift-invariance estimate on the observability factor serves
as a consistency diagnostic: its least-squares residual must vanish on
noise-free data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .signals import Dataset
from .ssmodel import (
    StateSpaceModel,
    estimate_initial_state,
    fit_percent,
    predictor_form,
    predictor_radius,
    simulate,
)

# Singular values below max * RANK_TOL count as zero when measuring ranks.
RANK_TOL = 1e-12


@dataclass
class N4sidConfig:
    """Horizons and order policy for one estimation run.

    Exactly one of `order` (fixed) and `order_range` (AIC selection over
    n_min..n_max inclusive) must be given.
    """

    f: int
    p: int
    order: Optional[int] = None
    order_range: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.f < 1 or self.p < 1:
            raise ConfigError(f"horizons must be >= 1, got f={self.f} p={self.p}")
        if (self.order is None) == (self.order_range is None):
            raise ConfigError("give exactly one of order and order_range")
        if self.order is not None and self.order < 1:
            raise ConfigError(f"order must be >= 1, got {self.order}")
        if self.order_range is not None:
            lo, hi = self.order_range
            if not 1 <= lo <= hi:
                raise ConfigError(f"bad order_range {self.order_range}")
            self.order_range = (int(lo), int(hi))

    @property
    def n_max(self) -> int:
        return self.order if self.order is not None else self.order_range[1]

    def candidates(self) -> list[int]:
        if self.order is not None:
            return [self.order]
        lo, hi = self.order_range
        return list(range(lo, hi + 1))


@dataclass
class IdentificationReport:
    model: StateSpaceModel
    singular_values: np.ndarray
    chosen_order: int
    aic_scores: Optional[np.ndarray] = None
    fit_train: Optional[np.ndarray] = None
    fit_valid: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def block_hankel(data, start_row: int, block_rows: int, cols: int) -> np.ndarray:
    """Stack shifted windows of a multichannel record.

    data is N x c.  The result has block_rows blocks of c rows each; block
    (i, j) holds data row start_row + i + j, so each column j is the
    contiguous slice starting at row start_row + j.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    N, c = data.shape
    if start_row < 0 or block_rows < 1 or cols < 1:
        raise ConfigError(
            f"bad Hankel shape: start_row={start_row} block_rows={block_rows} cols={cols}"
        )
    need = start_row + block_rows + cols - 1
    if need > N:
        raise ConfigError(
            f"insufficient samples for Hankel block: need {need} rows, have {N}"
        )
    H = np.empty((block_rows * c, cols))
    for i in range(block_rows):
        H[i * c : (i + 1) * c, :] = data[start_row + i : start_row + i + cols].T
    return H


def _numerical_rank(s: np.ndarray) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > s[0] * RANK_TOL))


def project_hfp(Y_f, Z_p, U_f):
    """Past-block coefficient of the joint regression of Y_f on [Z_p; U_f].

    Equivalent to projecting out the future inputs and regressing on the
    past, but computed in one least-squares solve for conditioning.  The
    past rows and the future-input rows must span independent directions;
    otherwise the future-input contribution cannot be separated and the
    excitation must be improved.
    """
    Y_f = np.asarray(Y_f, dtype=float)
    Z_p = np.asarray(Z_p, dtype=float)
    U_f = np.asarray(U_f, dtype=float)
    if not (Y_f.shape[1] == Z_p.shape[1] == U_f.shape[1]):
        raise ConfigError(
            f"column counts differ: Y_f {Y_f.shape[1]}, Z_p {Z_p.shape[1]}, "
            f"U_f {U_f.shape[1]}"
        )
    R = np.vstack([Z_p, U_f])
    s_r = np.linalg.svd(R, compute_uv=False)
    s_z = np.linalg.svd(Z_p, compute_uv=False)
    s_u = np.linalg.svd(U_f, compute_uv=False)
    if _numerical_rank(s_r) < _numerical_rank(s_z) + _numerical_rank(s_u):
        raise NumericalError(
            "past and future-input row spaces overlap; the regression cannot "
            "separate them. Use richer excitation (longer record, or distinct "
            "phase offsets between input channels)."
        )
    coef, *_ = np.linalg.lstsq(R.T, Y_f.T, rcond=None)
    return coef.T[:, : Z_p.shape[0]]


def aic_scores(residual_covariances, n_params, N: int):
    """AIC(n) = N log det(Sigma_e(n)) + 2 k(n) for each candidate order.

    Inputs are mappings keyed by order.  Orders whose residual covariance
    is singular (nonpositive determinant) are skipped; the skip list is
    returned alongside the scores.
    """
    scores: dict[int, float] = {}
    skipped: list[int] = []
    for order, cov in residual_covariances.items():
        cov = np.asarray(cov, dtype=float)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0 or not np.isfinite(logdet):
            skipped.append(order)
            continue
        scores[order] = N * logdet + 2.0 * n_params[order]
    return scores, skipped


def aic_order_select(residual_covariances, n_params, N: int) -> int:
    """Order with the smallest AIC; ties break toward the smaller order."""
    scores, skipped = aic_scores(residual_covariances, n_params, N)
    if not scores:
        raise NumericalError(
            f"all candidate orders had singular residual covariance: {skipped}"
        )
    best = min(sorted(scores), key=lambda n: (scores[n], n))
    return best


def _recover_order(n, U_, S, Vt, u, y, p_past, n_cols):
    """System matrices for one truncation order from the SVD factors."""
    m = u.shape[1]
    py = y.shape[1]
    sq = np.sqrt(S[:n])
    Gam = U_[:, :n] * sq                # extended observability estimate
    X = (Vt[:n, :].T * sq).T            # state sequence, n x n_cols
    C_hat = Gam[:py].copy()

    U_cur = u[p_past : p_past + n_cols].T
    Y_cur = y[p_past : p_past + n_cols].T

    reg_out = np.vstack([X, U_cur])
    CD, *_ = np.linalg.lstsq(reg_out.T, Y_cur.T, rcond=None)
    D_hat = CD.T[:, n:]

    reg_st = np.vstack([X[:, :-1], U_cur[:, :-1], Y_cur[:, :-1]])
    TH, *_ = np.linalg.lstsq(reg_st.T, X[:, 1:].T, rcond=None)
    TH = TH.T
    A_K = TH[:, :n]
    B_1 = TH[:, n : n + m]
    K_hat = TH[:, n + m :]

    A_hat = A_K + K_hat @ C_hat
    B_hat = B_1 + K_hat @ D_hat

    # diagnostic: the observability factor must be shift-invariant
    shift, *_ = np.linalg.lstsq(Gam[:-py], Gam[py:], rcond=None)
    denom = np.linalg.norm(Gam)
    shift_res = np.linalg.norm(Gam[:-py] @ shift - Gam[py:]) / denom if denom else 0.0
    return A_hat, B_hat, C_hat, D_hat, K_hat, float(shift_res)


def _residual_covariance(model: StateSpaceModel, d: Dataset, burn_in: int):
    """One-step prediction residual covariance of the model over a record."""
    A_K, B_K = predictor_form(model)
    x = np.zeros(model.n)
    E = np.empty((d.N, model.p))
    for k in range(d.N):
        e = d.y[k] - model.C @ x - model.D @ d.u[k]
        E[k] = e
        x = A_K @ x + B_K @ np.concatenate([d.u[k], d.y[k]])
    E = E[burn_in:]
    return (E.T @ E) / max(1, E.shape[0])


def estimate_n4sid(
    d: Dataset, cfg: N4sidConfig, valid: Optional[Dataset] = None
) -> IdentificationReport:
    """Estimate a state-space model from a dataset.

    The record must already be expressed as deviations around the operating
    point (zero-mean in the ideal case); no centering is applied here.
    When `valid` is given, the report carries the deterministic-simulation
    fit on that record as well.
    """
    f, p_past = cfg.f, cfg.p
    n_max = cfg.n_max
    if f < n_max + 1 or p_past < n_max + 1:
        raise ConfigError(
            f"horizons too short for order {n_max}: need f, p >= {n_max + 1}, "
            f"got f={f} p={p_past}"
        )
    m, py = d.m, d.p
    n_cols = d.N - f - p_past + 1
    min_cols = 10 * (m + py) * p_past
    if n_cols < min_cols:
        raise ConfigError(
            f"dataset too short: {n_cols} Hankel columns available, "
            f"need at least {min_cols} for f={f}, p={p_past}"
        )

    z = np.hstack([d.u, d.y])
    # past block: rows ordered z_{k-1}, z_{k-2}, ..., z_{k-p}
    Z_p = np.vstack(
        [block_hankel(z, p_past - 1 - j, 1, n_cols) for j in range(p_past)]
    )
    U_f = block_hankel(d.u, p_past, f, n_cols)
    Y_f = block_hankel(d.y, p_past, f, n_cols)

    H_fp = project_hfp(Y_f, Z_p, U_f)
    G = H_fp @ Z_p
    U_, S, Vt = np.linalg.svd(G, full_matrices=False)
    rank = _numerical_rank(S)

    candidates = [n for n in cfg.candidates() if n <= rank]
    if not candidates:
        raise NumericalError(
            f"requested order(s) {cfg.candidates()} exceed the numerical rank "
            f"{rank} of the projected data"
        )

    covs: dict[int, np.ndarray] = {}
    kparams: dict[int, int] = {}
    models: dict[int, tuple] = {}
    for n in candidates:
        rec = _recover_order(n, U_, S, Vt, d.u, d.y, p_past, n_cols)
        models[n] = rec
        if len(candidates) > 1:
            trial = _build_model(rec, d.ts, quiet=True)
            covs[n] = _residual_covariance(trial, d, burn_in=p_past)
            kparams[n] = n * (m + py) + n * py + py * m

    skipped: list[int] = []
    scores_vec = None
    if len(candidates) > 1:
        scores, skipped = aic_scores(covs, kparams, d.N)
        if not scores:
            raise NumericalError(
                f"AIC selection failed: all candidate orders {candidates} had "
                "singular residual covariance"
            )
        chosen = min(sorted(scores), key=lambda nn: (scores[nn], nn))
        scores_vec = np.array([scores.get(nn, np.nan) for nn in candidates])
    else:
        chosen = candidates[0]

    model = _build_model(models[chosen], d.ts)
    shift_res = models[chosen][5]

    # open-loop check: regression residuals vs future inputs
    coef, *_ = np.linalg.lstsq(np.vstack([Z_p, U_f]).T, Y_f.T, rcond=None)
    E_f = Y_f - coef.T @ np.vstack([Z_p, U_f])
    cross = E_f @ U_f.T / n_cols
    scale = (np.linalg.norm(E_f) * np.linalg.norm(U_f) / n_cols) or 1.0

    fit_train = _simulation_fit(model, d)
    fit_valid = _simulation_fit(model, valid) if valid is not None else None

    return IdentificationReport(
        model=model,
        singular_values=S.copy(),
        chosen_order=int(chosen),
        aic_scores=scores_vec,
        fit_train=fit_train,
        fit_valid=fit_valid,
        diagnostics={
            "shift_residual": shift_res,
            "predictor_radius": predictor_radius(model),
            "numerical_rank": rank,
            "aic_candidates": candidates if len(candidates) > 1 else None,
            "aic_skipped": skipped or None,
            "future_input_crosscorr": float(np.linalg.norm(cross)),
            "future_input_crosscorr_normalized": float(np.linalg.norm(cross) / scale),
        },
    )


def _build_model(rec, ts, quiet: bool = False) -> StateSpaceModel:
    A, B, C, D, K, _ = rec
    if not quiet:
        return StateSpaceModel(A, B, C, D, K, ts)
    import warnings

    # rejected AIC candidates should not spam predictor-stability warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return StateSpaceModel(A, B, C, D, K, ts)


def _simulation_fit(model: StateSpaceModel, d: Dataset) -> np.ndarray:
    x0 = estimate_initial_state(model, d)
    y_hat = simulate(model, d.u, x0)
    return fit_percent(d.y, y_hat)
