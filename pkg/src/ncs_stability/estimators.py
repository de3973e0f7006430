"""scikit-learn style wrappers around the functional API.

Only the operations with a natural fit/predict reading are wrapped; the
functions in :mod:`ncs_stability.analyzer` and :mod:`ncs_stability.robot`
remain the primary interface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .analyzer import SystemBounds, max_delay_bound, synthesize_lyapunov
from .robot import RobotParams, StateDomain, estimate_Mk
from .sdp import SolverConfig


class _SolverParams:
    def _solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.max_iterations,
            margin_tolerance=self.margin_tolerance,
            variable_bound=self.variable_bound,
            seed=self.seed,
        )


class LyapunovSynthesizer(_SolverParams, BaseEstimator):
    """Fit ``V1 = x^T P x`` to a Hurwitz matrix ``A``.

    After :meth:`fit`: ``P_``, ``Q_``, ``alpha_``, ``certificate_``.
    :meth:`transform` maps states (rows) to ``V1`` values.
    """

    def __init__(self, epsilon=1e-6, max_iterations=20000, margin_tolerance=1e-7, variable_bound=1e6, seed=42):
        self.epsilon = epsilon
        self.max_iterations = max_iterations
        self.margin_tolerance = margin_tolerance
        self.variable_bound = variable_bound
        self.seed = seed

    def fit(self, A, y=None):
        A = check_array(A, ensure_min_samples=1)
        cert = synthesize_lyapunov(A, self._solver_config(), self.epsilon)
        self.certificate_ = cert
        self.P_, self.Q_, self.alpha_ = cert.P, cert.Q, cert.alpha
        self.n_features_in_ = A.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "P_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state components, got {X.shape[1]}")
        return np.einsum("si,ij,sj->s", X, self.P_, X)[:, None]


class MkEstimator(BaseEstimator):
    """Sampled channel bounds ``M_1..M_4`` of the robot loop over a state box.

    ``fit`` ignores its arguments; the data are drawn from the domain.
    """

    def __init__(self, params=None, position_halfwidth=0.5, velocity_halfwidth=0.5, sample_count=20000, seed=0, margin=1.05):
        self.params = params
        self.position_halfwidth = position_halfwidth
        self.velocity_halfwidth = velocity_halfwidth
        self.sample_count = sample_count
        self.seed = seed
        self.margin = margin

    def fit(self, X=None, y=None):
        params = self.params or RobotParams()
        self.domain_ = StateDomain.default(params, self.position_halfwidth, self.velocity_halfwidth)
        self.M_ = estimate_Mk(params, self.domain_, self.sample_count, self.seed, self.margin)
        return self

    def to_bounds(self, F, W, S, r) -> SystemBounds:
        check_is_fitted(self, "M_")
        return SystemBounds(F, W, S, tuple(self.M_), tuple(r))


class ControlCycleBound(_SolverParams, BaseEstimator):
    """Largest certified control cycle for a family ``T -> SystemBounds``.

    ``fit(bounds_of_T)`` bisects on ``[t_lo, t_hi]``; ``predict(T)`` says
    whether each cycle length is covered by the certificate.
    """

    def __init__(self, t_lo=1e-4, t_hi=5e-3, tol=1e-5, w_transpose=True,
                 max_iterations=20000, margin_tolerance=1e-7, variable_bound=1e6, seed=42):
        self.t_lo = t_lo
        self.t_hi = t_hi
        self.tol = tol
        self.w_transpose = w_transpose
        self.max_iterations = max_iterations
        self.margin_tolerance = margin_tolerance
        self.variable_bound = variable_bound
        self.seed = seed

    def fit(self, bounds_of_T, y=None):
        if not callable(bounds_of_T):
            raise TypeError("fit expects a callable T -> SystemBounds")
        res = max_delay_bound(bounds_of_T, self.t_lo, self.t_hi, self.tol, self._solver_config(), self.w_transpose)
        self.result_ = res
        self.t_star_ = res.t_star
        return self

    def decision_function(self, T):
        check_is_fitted(self, "t_star_")
        return self.t_star_ - np.asarray(T, dtype=float)

    def predict(self, T):
        return self.decision_function(T) >= 0
