"""A model plus parameter binding and control map, evaluated through the kernels.

:class:`ParametricSystem` is what the integrators, sensitivity engines,
estimators and controllers share.  It caches the packed model per parameter
vector so repeated evaluations at fixed ``theta`` do not rebuild it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels
from .dynamics import ode_rhs
from .model import Model, ParameterBinding, apply_parameters


class ParametricSystem:
    """``xdot = f(t, x, theta, u)`` for ``x = [q, qd]``.

    Parameters
    ----------
    model
        Base model; bound fields are overwritten by ``theta``.
    binding
        Parameter binding (may be empty).
    u_map
        Generalized-force slot for each control input.
    """

    def __init__(self, model: Model, binding: ParameterBinding | None = None,
                 u_map: Sequence[int] = ()):
        self.model = model
        self.binding = binding if binding is not None else ParameterBinding()
        if self.binding.entries:
            self.binding.validate(model)
        self.u_map = tuple(u_map)
        self.nq = model.dof
        self.nx = 2 * model.dof
        self.nu = len(self.u_map)
        self.ntheta = self.binding.arity
        self._key = None
        self._packed = None
        self._tangents = None

    def default_theta(self) -> np.ndarray:
        return self.binding.read(self.model)

    def _prepare(self, theta, tangents=False):
        key = tuple(float(t) for t in theta)
        if key != self._key:
            m = apply_parameters(self.model, self.binding, key) if self.binding.entries else self.model
            self._packed = kernels.pack(m)
            self._tangents = None
            self._key = key
        if tangents and self._tangents is None:
            if self.ntheta:
                self._tangents = kernels.model_tangents(self.model, self.binding, key)
            else:
                n = len(self.model.bodies)
                self._tangents = (np.zeros((0, n, 3)), np.zeros((0, n, 6, 6)))
        return self._packed

    def tau(self, u) -> np.ndarray:
        tau = np.zeros(self.nq)
        for slot, ui in zip(self.u_map, np.atleast_1d(np.asarray(u, dtype=float)) if self.nu else ()):
            tau[slot] += ui
        return tau

    def qdd(self, theta, q, qd, u=()) -> np.ndarray:
        P = self._prepare(theta)
        return kernels.aba(P, q, qd, self.tau(u))

    def rhs(self, theta, x, u=()) -> np.ndarray:
        P = self._prepare(theta)
        n = self.nq
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[n:], kernels.aba(P, x[:n], x[n:], self.tau(u))])

    def rhs_generic(self, theta, x, u=()):
        """Same as :meth:`rhs` through the scalar-generic code (dual or tape scalars)."""
        return ode_rhs(self.model, self.binding, theta, self.u_map, 0.0, x, u)

    def rhs_tangent(self, theta, x, u, dx, du=None, theta_dirs=False, k0=0):
        """``f`` and its directional derivatives.

        ``dx`` is ``(K, nx)`` and ``du`` ``(K, nu)``.  With ``theta_dirs`` the
        directions ``k0 .. k0+ntheta-1`` additionally carry a unit seed on the
        corresponding parameter.  Returns ``(f, df)`` with ``df`` ``(K, nx)``.
        """
        P = self._prepare(theta, tangents=theta_dirs)
        n = self.nq
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        K = dx.shape[0]
        dtau = np.zeros((K, n))
        if du is not None and self.nu:
            du = np.asarray(du, dtype=float)
            for c, slot in enumerate(self.u_map):
                dtau[:, slot] += du[:, c]
        if theta_dirs:
            dpt, dI6 = self._tangents
        else:
            dpt = dI6 = None
        qdd, dqdd = kernels.aba_tangent(P, x[:n], x[n:], self.tau(u),
                                        dx[:, :n], dx[:, n:], dtau, dpt, dI6, k0)
        f = np.concatenate([x[n:], qdd])
        df = np.concatenate([dx[:, n:], dqdd], axis=1)
        return f, df

    def jacobians(self, theta, x, u=()):
        """``(df/dx, df/dtheta, df/du)`` from one multi-direction tangent sweep."""
        return self.value_and_jacobians(theta, x, u)[1:]

    def value_and_jacobians(self, theta, x, u=()):
        """``(f, df/dx, df/dtheta, df/du)``."""
        nx, nt, nu = self.nx, self.ntheta, self.nu
        K = nx + nt + nu
        dx = np.zeros((K, nx))
        dx[:nx] = np.eye(nx)
        du = np.zeros((K, nu))
        du[nx + nt:] = np.eye(nu)
        f, df = self.rhs_tangent(theta, x, u, dx, du, theta_dirs=nt > 0, k0=nx)
        J = df.T
        return f, J[:, :nx], J[:, nx:nx + nt], J[:, nx + nt:]


def controls_at(u: Callable | Sequence | None, t):
    if u is None:
        return ()
    return u(t) if callable(u) else u

