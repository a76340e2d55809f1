"""Gaussian network TVP-VAR: filtering, forecasting, and the joint
node-edge model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .design import DesignRecipe, build_design, spillover_matrix
from .graph import WeightMatrix
from .lgss import (
    Belief,
    FilterRun,
    ObsBlock,
    StateNoiseSpec,
    predict,
    threshold_Q,
    two_block_update,
    update,
)


@dataclass(frozen=True)
class ObsNoise:
    """Observation noise: scalar sigma^2 I, diagonal, or full covariance."""

    kind: str = "scalar"
    value: object = 1.0

    def matrix(self, n: int) -> np.ndarray:
        if self.kind == "scalar":
            sigma2 = float(self.value)
            if sigma2 <= 0:
                raise ValueError("sigma2 must be positive")
            return sigma2 * np.eye(n)
        if self.kind == "diagonal":
            d = np.asarray(self.value, dtype=float)
            if d.shape != (n,) or np.any(d <= 0):
                raise ValueError("diagonal obs noise must be length-N positive")
            return np.diag(d)
        if self.kind == "full":
            r = np.asarray(self.value, dtype=float)
            if r.shape != (n, n):
                raise ValueError("full obs noise must be N x N")
            np.linalg.cholesky(r)
            return r
        raise ValueError(f"unknown obs noise kind {self.kind!r}")


@dataclass(frozen=True)
class EdgeSubmodel:
    """Gaussian edge observation block a_t = L psi_t + noise(U)."""

    loading: np.ndarray
    u: np.ndarray
    state_noise: StateNoiseSpec


@dataclass(frozen=True)
class GaussianSpec:
    recipe: DesignRecipe
    state_noise: StateNoiseSpec
    obs_noise: ObsNoise = field(default_factory=ObsNoise)
    m0: Optional[np.ndarray] = None
    p0_scale: float = 10.0
    edge_submodel: Optional[EdgeSubmodel] = None

    def initial_belief(self) -> Belief:
        k = self.recipe.n_cols
        m0 = np.zeros(k) if self.m0 is None else np.asarray(self.m0, dtype=float)
        return Belief(mean=m0, cov=self.p0_scale * np.eye(k), time_index=0)


@dataclass(frozen=True)
class GaussianForecast:
    mean: np.ndarray
    cov: np.ndarray
    horizon: int
    network_policy: str = "carry_forward"


def _w_at(w_seq, t):
    if isinstance(w_seq, WeightMatrix):
        return w_seq
    return w_seq[t] if len(w_seq) > 1 else w_seq[0]


def _z_at(z, t):
    if z is None:
        return None
    z = np.asarray(z)
    if z.ndim == 2:
        return z
    return z[t]


def _state_q(spec: StateNoiseSpec, filtered_means: List[np.ndarray], k: int):
    """State-noise matrix for the upcoming transition, with plug-in
    threshold indicators from the last two filtered means."""
    if spec.mode == "constant":
        return np.asarray(spec.q, dtype=float), None
    if len(filtered_means) < 2:
        return np.diag(spec.q0), np.zeros(k, dtype=int)
    return threshold_Q(filtered_means[-1], filtered_means[-2], spec)


def fit_gaussian(panel: np.ndarray, w_seq, z, spec: GaussianSpec) -> FilterRun:
    """Kalman-filter the network TVP-VAR over a T x N panel.

    Observation times run from t = p (0-based) to T - 1; the design at t
    uses lags panel[t-1], ..., panel[t-p] and the network at time t.
    """
    panel = np.asarray(panel, dtype=float)
    if not np.all(np.isfinite(panel)):
        raise ValueError("panel contains non-finite values")
    t_len, n = panel.shape
    p = spec.recipe.lag_order
    if t_len < p + 1:
        raise ValueError(f"panel needs at least p + 1 = {p + 1} rows")
    k = spec.recipe.n_cols

    belief = spec.initial_belief()
    filtered, predicted = [], []
    per_step = []
    s_states = [] if spec.state_noise.mode == "threshold" else None
    means_hist: List[np.ndarray] = []

    for t in range(p, t_len):
        w_t = _w_at(w_seq, t)
        lags = [panel[t - l] for l in range(1, p + 1)]
        x_t = build_design(w_t, lags, _z_at(z, t), spec.recipe)
        r_t = spec.obs_noise.matrix(n)
        q_t, s_t = _state_q(spec.state_noise, means_hist, k)
        if s_states is not None:
            s_states.append(s_t)
        belief = predict(belief, q_t, f=spec.state_noise.transition, time_index=t)
        predicted.append(belief)
        belief, ll = update(belief, ObsBlock(h=x_t.entries, r=r_t, y=panel[t]))
        filtered.append(belief)
        per_step.append(ll)
        means_hist.append(belief.mean)

    context = {
        "panel": panel,
        "w_seq": w_seq,
        "z": z,
        "spec": spec,
        "obs_times": list(range(p, t_len)),
    }
    return FilterRun(
        beliefs_filtered=filtered,
        beliefs_predicted=predicted,
        loglik=float(np.sum(per_step)),
        per_step_loglik=np.asarray(per_step),
        threshold_states=None if s_states is None else np.asarray(s_states),
        context=context,
    )


def select_hyperparams(panel, w_seq, z, base_spec: GaussianSpec, grid):
    """Grid search over (state-noise, obs-noise) candidates by innovations
    log-likelihood; ties broken by smallest total state-noise trace."""
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    table = []
    best = None
    for i, cand in enumerate(grid):
        state_noise = cand.get("state_noise", base_spec.state_noise)
        obs_noise = cand.get("obs_noise", base_spec.obs_noise)
        spec = replace(base_spec, state_noise=state_noise, obs_noise=obs_noise)
        row = {"index": i, "state_noise": state_noise, "obs_noise": obs_noise}
        try:
            run = fit_gaussian(panel, w_seq, z, spec)
            row["loglik"] = run.loglik
            row["valid"] = True
            if state_noise.mode == "constant":
                row["q_trace"] = float(np.trace(state_noise.q))
            else:
                row["q_trace"] = float(np.sum(state_noise.q0))
        except (ValueError, np.linalg.LinAlgError) as exc:
            row["loglik"] = -math.inf
            row["valid"] = False
            row["error"] = str(exc)
        table.append(row)
        if row["valid"]:
            key = (row["loglik"], -row["q_trace"])
            if best is None or key > best[0]:
                best = (key, spec)
    if best is None:
        raise RuntimeError(
            "all hyperparameter candidates failed: "
            + "; ".join(r.get("error", "?") for r in table)
        )
    return best[1], table


def _beta_indices(recipe: DesignRecipe):
    """Column indices of the network-lag-1 and own-lag-1 coefficients."""
    labels = recipe.column_labels()
    i_net = labels.index("WY_lag_1") if "WY_lag_1" in labels else None
    i_own = labels.index("Y_lag_1") if "Y_lag_1" in labels else None
    return i_net, i_own


def _closed_form_supported(recipe: DesignRecipe) -> bool:
    return recipe.lag_order == 1 and (
        not recipe.include_network_lags or tuple(recipe.network_powers) == (1,)
    )


def forecast_gaussian(run: FilterRun, spec: GaussianSpec, horizon: int,
                      network_policy: str = "carry_forward",
                      future_w=None, future_z=None) -> List[GaussianForecast]:
    """Iterated h-step forecasts from the final filtered belief.

    The predictive mean chains the recursion through the spillover matrix
    built from the filtered coefficient means; the covariance propagates
    observation noise, coefficient uncertainty, and the chained
    linearization of past forecast uncertainty. Exact at h = 1.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not _closed_form_supported(spec.recipe):
        raise ValueError(
            "closed-form multi-horizon forecasting supports lag order 1 with "
            "network power 1; use the Monte-Carlo mode for other recipes"
        )
    ctx = run.context
    panel, w_seq, z = ctx["panel"], ctx["w_seq"], ctx["z"]
    t_last = ctx["obs_times"][-1]
    n = panel.shape[1]

    belief = run.beliefs_filtered[-1]
    m, p_cov = belief.mean, belief.cov
    q_mat, _ = _state_q(spec.state_noise,
                        [b.mean for b in run.beliefs_filtered[-2:]], belief.dim)
    r_mat = spec.obs_noise.matrix(n)
    i_net, i_own = _beta_indices(spec.recipe)

    last_w = _w_at(w_seq, t_last)
    y_prev = panel[t_last]
    sigma_prev = np.zeros((n, n))
    forecasts = []
    p_state = p_cov
    for k in range(1, horizon + 1):
        if network_policy == "carry_forward":
            w_k = last_w
        elif network_policy in ("oracle", "user_supplied"):
            if future_w is None or len(future_w) < k:
                raise ValueError(
                    f"network_policy={network_policy!r} requires future_w for "
                    f"all {horizon} horizons"
                )
            w_k = future_w[k - 1]
        else:
            raise ValueError(f"unknown network policy {network_policy!r}")
        if spec.recipe.covariate_count > 0:
            if future_z is None or len(future_z) < k:
                raise ValueError("recipe includes covariates; future_z required")
            z_k = np.asarray(future_z[k - 1], dtype=float)
        else:
            z_k = None
        x_k = build_design(w_k, [y_prev], z_k, spec.recipe).entries
        mean_k = x_k @ m
        beta1 = m[i_net] if i_net is not None else 0.0
        beta2 = m[i_own] if i_own is not None else 0.0
        b_hat = spillover_matrix(float(beta1), float(beta2), w_k)
        cov_k = x_k @ p_state @ x_k.T + r_mat + b_hat @ sigma_prev @ b_hat.T
        cov_k = 0.5 * (cov_k + cov_k.T)
        forecasts.append(GaussianForecast(mean=mean_k, cov=cov_k, horizon=k,
                                          network_policy=network_policy))
        y_prev = mean_k
        sigma_prev = cov_k
        p_state = p_state + q_mat
    return forecasts


def mc_forecast_gaussian(run: FilterRun, spec: GaussianSpec, horizon: int,
                         n_draws: int, rng_seed: int,
                         network_policy: str = "carry_forward",
                         future_w=None, future_z=None) -> List[dict]:
    """Monte-Carlo reference forecasts: sample coefficient paths and
    innovations through the recursion; returns per-horizon draw matrices."""
    if horizon < 1 or n_draws < 1:
        raise ValueError("horizon and n_draws must be >= 1")
    ctx = run.context
    panel, w_seq = ctx["panel"], ctx["w_seq"]
    t_last = ctx["obs_times"][-1]
    n = panel.shape[1]
    belief = run.beliefs_filtered[-1]
    q_mat, _ = _state_q(spec.state_noise,
                        [b.mean for b in run.beliefs_filtered[-2:]], belief.dim)
    r_mat = spec.obs_noise.matrix(n)
    r_chol = np.linalg.cholesky(r_mat)
    p_chol = np.linalg.cholesky(belief.cov + 1e-12 * np.eye(belief.dim))
    q_chol = np.linalg.cholesky(q_mat + 1e-14 * np.eye(belief.dim))
    last_w = _w_at(w_seq, t_last)

    draws = [np.empty((n_draws, n)) for _ in range(horizon)]
    for s in range(n_draws):
        rng = np.random.default_rng([rng_seed, s])
        theta = belief.mean + p_chol @ rng.standard_normal(belief.dim)
        y_prev = panel[t_last].copy()
        for k in range(1, horizon + 1):
            theta = theta + q_chol @ rng.standard_normal(belief.dim)
            if network_policy == "carry_forward":
                w_k = last_w
            else:
                w_k = future_w[k - 1]
            z_k = None if future_z is None else np.asarray(future_z[k - 1], dtype=float)
            x_k = build_design(w_k, [y_prev], z_k, spec.recipe).entries
            y_k = x_k @ theta + r_chol @ rng.standard_normal(n)
            draws[k - 1][s] = y_k
            y_prev = y_k
    return [{"horizon": k + 1, "draws": draws[k]} for k in range(horizon)]


def plug_in_forecast(run: FilterRun, spec: GaussianSpec,
                     w_hat: WeightMatrix) -> GaussianForecast:
    """One-step mean with the approximate network substituted in the
    network-lag column only; coefficient predictions unchanged."""
    ctx = run.context
    panel, w_seq = ctx["panel"], ctx["w_seq"]
    t_last = ctx["obs_times"][-1]
    n = panel.shape[1]
    belief = run.beliefs_filtered[-1]
    z_last = _z_at(ctx["z"], t_last)
    x_hat = build_design(w_hat, [panel[t_last]], z_last, spec.recipe).entries
    mean = x_hat @ belief.mean
    cov = x_hat @ belief.cov @ x_hat.T + spec.obs_noise.matrix(n)
    return GaussianForecast(mean=mean, cov=0.5 * (cov + cov.T), horizon=1,
                            network_policy="user_supplied")


def fit_joint_node_edge(panel: np.ndarray, edge_obs: np.ndarray, w_seq,
                        spec: GaussianSpec,
                        design_fn: Optional[Callable] = None) -> FilterRun:
    """Joint filter over the stacked node-edge state.

    Per step: predict with blockdiag(Q_node, Q_edge), then update with the
    edge block [0 | L] followed by the node block [X_t | 0]. By default
    the node design is built from ``w_seq`` and the lagged panel;
    ``design_fn(t, lags, a_t)`` overrides it when the design depends on
    the realized edges.
    """
    if spec.edge_submodel is None:
        raise ValueError("fit_joint_node_edge requires an edge submodel")
    edge = spec.edge_submodel
    panel = np.asarray(panel, dtype=float)
    edge_obs = np.asarray(edge_obs, dtype=float)
    t_len, n = panel.shape
    p = spec.recipe.lag_order
    k_n = spec.recipe.n_cols
    loading = np.asarray(edge.loading, dtype=float)
    m_e, k_e = loading.shape
    if edge_obs.shape != (t_len, m_e):
        raise ValueError(f"edge_obs must be T x {m_e}")

    dim = k_n + k_e
    node_init = spec.initial_belief()
    mean0 = np.concatenate([node_init.mean, np.zeros(k_e)])
    cov0 = spec.p0_scale * np.eye(dim)
    belief = Belief(mean=mean0, cov=cov0, time_index=0)

    if edge.state_noise.mode != "constant" or spec.state_noise.mode != "constant":
        raise ValueError("joint node-edge filter supports constant state noise")
    q_joint = np.zeros((dim, dim))
    q_joint[:k_n, :k_n] = spec.state_noise.q
    q_joint[k_n:, k_n:] = edge.state_noise.q

    h_edge = np.hstack([np.zeros((m_e, k_n)), loading])
    filtered, predicted, per_step = [], [], []
    for t in range(p, t_len):
        belief = predict(belief, q_joint, time_index=t)
        predicted.append(belief)
        a_t = edge_obs[t]
        edge_block = ObsBlock(h=h_edge, r=edge.u, y=a_t, label="edge")
        lags = [panel[t - l] for l in range(1, p + 1)]
        if design_fn is not None:
            x_t = np.asarray(design_fn(t, lags, a_t), dtype=float)
        else:
            x_t = build_design(_w_at(w_seq, t), lags, None, spec.recipe).entries
        h_node = np.hstack([x_t, np.zeros((n, k_e))])
        node_block = ObsBlock(h=h_node, r=spec.obs_noise.matrix(n), y=panel[t],
                              label="node")
        belief, ll_e, ll_n = two_block_update(belief, edge_block, node_block)
        filtered.append(belief)
        per_step.append(ll_e + ll_n)

    return FilterRun(
        beliefs_filtered=filtered,
        beliefs_predicted=predicted,
        loglik=float(np.sum(per_step)),
        per_step_loglik=np.asarray(per_step),
        context={"panel": panel, "w_seq": w_seq, "z": None, "spec": spec,
                 "obs_times": list(range(p, t_len))},
    )
