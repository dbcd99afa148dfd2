"""Bank of MPC controllers with per-instant objective-based selection.

Every controller in the bank filters the same measurements and solves its
own QP each instant.  The controller whose optimal horizon cost is lowest
supplies the applied move; all controllers then adopt that move as their
last applied input so next instant's costs stay comparable.  Losing
estimators either keep their own Kalman states (kalman-only mode) or are
overwritten with the winner's state (state-copy mode, equal orders only).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError
from .mpc import MpcController

SYNC_MODES = ("kalman-only", "state-copy")


class ModelBank:
    """Ordered collection of (model_id, MpcController) sharing one loop."""

    def __init__(self, entries, sync_mode: str = "kalman-only",
                 switch_threshold: float = 0.0):
        entries = list(entries)
        if not entries:
            raise ConfigError("model bank needs at least one entry")
        if sync_mode not in SYNC_MODES:
            raise ConfigError(f"sync_mode must be one of {SYNC_MODES}, got {sync_mode!r}")
        if not 0.0 <= switch_threshold < 1.0:
            raise ConfigError(
                f"switch_threshold must lie in [0, 1), got {switch_threshold}"
            )
        ids = [e[0] for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate model ids in bank: {ids}")
        for mid, ctrl in entries:
            if not isinstance(ctrl, MpcController):
                raise ConfigError(f"bank entry {mid} is not an MpcController")
        ref = entries[0][1]
        for mid, ctrl in entries[1:]:
            md, mr = ctrl.model, ref.model
            if (md.m, md.p) != (mr.m, mr.p) or abs(md.ts - mr.ts) > 1e-12 * mr.ts:
                raise ConfigError(
                    f"bank entry {mid} disagrees on channel counts or ts"
                )
            if not _same_loop_config(ctrl.cfg, ref.cfg):
                raise ConfigError(
                    f"bank entry {mid} has different horizons, weights, or "
                    "constraints than the first entry"
                )
        if sync_mode == "state-copy":
            orders = {ctrl.model.n for _, ctrl in entries}
            if len(orders) > 1:
                raise ConfigError(
                    f"state-copy synchronization needs equal model orders, got {orders}"
                )
        self.entries = entries
        self.sync_mode = sync_mode
        self.switch_threshold = float(switch_threshold)
        self.selection_log: list = []
        self.last_diagnostics: list = []
        self._incumbent: "int | None" = None

    def __len__(self):
        return len(self.entries)


def _same_loop_config(a, b) -> bool:
    if (a.P, a.M) != (b.P, b.M) or a.ts != b.ts:
        return False
    pairs = [
        (a.Q_weights, b.Q_weights), (a.R_weights, b.R_weights),
        (a.y_min, b.y_min), (a.y_max, b.y_max),
        (a.u_min, b.u_min), (a.u_max, b.u_max), (a.du_max, b.du_max),
    ]
    for va, vb in pairs:
        if (va is None) != (vb is None):
            return False
        if va is not None and not np.array_equal(va, vb):
            return False
    return True


def mm_control_step(bank: ModelBank, y_k, ref_trajectory):
    """One supervisory instant: all controllers propose, the cheapest wins.

    Returns (u_k, selected model_id, J_values in bank order).  Controllers
    whose solve fails outright are excluded from the comparison for this
    instant; if every one fails the previous input is held.
    """
    proposals = []
    J = np.full(len(bank.entries), np.inf)
    diags = []
    for i, (mid, ctrl) in enumerate(bank.entries):
        try:
            u_i, diag_i = ctrl._step_core(y_k, ref_trajectory)
        except NumericalError as exc:
            proposals.append(None)
            diags.append({"error": str(exc), "J": np.inf})
            continue
        proposals.append(u_i)
        diags.append(diag_i)
        J[i] = diag_i["J"]

    if not np.any(np.isfinite(J)):
        u_k = bank.entries[0][1].u_prev.copy()
        bank.selection_log.append(None)
        bank.last_diagnostics = diags
        return u_k, None, J

    sel = int(np.argmin(J))  # exact ties resolve to the lowest bank index
    inc = bank._incumbent
    if (bank.switch_threshold > 0.0 and inc is not None and sel != inc
            and np.isfinite(J[inc])
            and not J[sel] < J[inc] * (1.0 - bank.switch_threshold)):
        # optional hysteresis: the incumbent keeps the loop unless the
        # challenger is better by the configured relative margin
        sel = inc
    u_k = proposals[sel]
    for _, ctrl in bank.entries:
        ctrl.u_prev = u_k.copy()
    synchronize(bank, bank.entries[sel][0])
    bank._incumbent = sel
    bank.selection_log.append(bank.entries[sel][0])
    bank.last_diagnostics = diags
    return u_k, bank.entries[sel][0], J


def synchronize(bank: ModelBank, selected) -> None:
    """Post-selection state alignment of the losing controllers."""
    if bank.sync_mode == "kalman-only":
        # each filter already absorbed (u_prev, y_k); nothing to copy
        return
    sel_ctrl = None
    for mid, ctrl in bank.entries:
        if mid == selected:
            sel_ctrl = ctrl
            break
    if sel_ctrl is None:
        raise ConfigError(f"no bank entry with model_id {selected!r}")
    x_sel = sel_ctrl.estimator.xhat
    for mid, ctrl in bank.entries:
        if ctrl is not sel_ctrl:
            ctrl.estimator.xhat = x_sel.copy()
