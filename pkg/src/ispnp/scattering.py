"""2-D scalar (TMz) forward scattering on a pixel grid.

Discretization follows the method-of-moments with pulse basis functions and
point matching, replacing each square cell by the equal-area circle of radius
a_c = cell_size/sqrt(pi). The total field satisfies

    (I - G_D diag(chi)) e_t = e_inc

per transmitter, and scattered data are d = G_S (chi * e_t). G_D is applied
either as a dense factored matrix (small grids) or as a padded-FFT block
convolution (the kernel depends only on the cell-center offset).

All operators use the exp(+j*omega*t) time convention: outgoing waves are
Hankel functions of the second kind and lossy media have Im(k_b) <= 0.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.special as sps
from scipy.fft import next_fast_len
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, bicgstab

from .scene import EPSILON_0, PropertyMaps, Scene, SceneError


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclasses.dataclass(frozen=True)
class SolverOptions:
    """Controls for the total-field linear solves.

    mode:
        "auto" picks dense factorization when max(nx, ny) <= dense_limit,
        otherwise the FFT-accelerated iterative solver. "dense" and
        "iterative" force one path.
    tol:
        relative residual target, also asserted after iterative solves.
    """

    mode: str = "auto"
    tol: float = 1e-6
    max_iter: int = 2000
    dense_limit: int = 24

    def __post_init__(self) -> None:
        if self.mode not in ("auto", "dense", "iterative"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def build_contrast(maps: PropertyMaps, scene: Scene, frequency: float) -> np.ndarray:
    """Complex contrast chi at one frequency, shaped (ny, nx).

    chi = (eps_r - j*sigma_e/(omega*eps_0)) / eps_rb - 1, zero where the
    medium matches the background.
    """
    omega = 2.0 * np.pi * frequency
    eps_c = maps.eps_r - 1j * maps.sigma_e / (omega * EPSILON_0)
    return eps_c / complex(scene.background.eps_rb) - 1.0


def contrast_to_properties(chi: np.ndarray, scene: Scene, frequency: float) -> PropertyMaps:
    """Invert :func:`build_contrast` at one frequency."""
    omega = 2.0 * np.pi * frequency
    w = (np.asarray(chi) + 1.0) * complex(scene.background.eps_rb)
    return PropertyMaps(w.real, -omega * EPSILON_0 * w.imag)


def contrast_at_frequency(
    chi_ref: np.ndarray, scene: Scene, frequency: float
) -> np.ndarray:
    """Map a contrast defined at the scene's reference frequency to another.

    The underlying medium (eps_r, sigma_e) is frequency independent; only the
    conductivity term of the contrast rescales, by f_ref/f.
    """
    f_ref = scene.reference_frequency
    if frequency == f_ref:
        return np.asarray(chi_ref, dtype=complex)
    e = complex(scene.background.eps_rb)
    w = (np.asarray(chi_ref) + 1.0) * e
    w_f = w.real + 1j * (f_ref / frequency) * w.imag
    return w_f / e - 1.0


def _hankel2_0(z: np.ndarray) -> np.ndarray:
    return sps.hankel2(0, z)


class GreensOperators:
    """Discrete background Green's operators for one scene frequency.

    Holds the domain operator G_D (as an FFT convolution kernel, with the
    dense matrix materialized on demand), the data operator G_S mapping cell
    sources to receiver samples, and the incident fields of all transmitters.
    """

    def __init__(self, scene: Scene, frequency: float):
        self.scene = scene
        self.frequency = float(frequency)
        grid = scene.grid
        self.grid = grid
        self.k_b = scene.background.wavenumber(frequency)
        # square cell replaced by the equal-area circle
        self.cell_radius = grid.cell_size / np.sqrt(np.pi)

        kb, ac = self.k_b, self.cell_radius
        self._coupling = -0.5j * np.pi * kb * ac * sps.jv(1, kb * ac)
        self._self_term = -0.5j * np.pi * kb * ac * sps.hankel2(1, kb * ac) - 1.0

        xc, yc = grid.cell_centers()
        self._xc, self._yc = xc, yc

        # circulant embedding of the offset-dependent kernel
        py = next_fast_len(2 * grid.ny - 1)
        px = next_fast_len(2 * grid.nx - 1)
        off_y = np.arange(py)
        off_y = np.where(off_y <= py // 2, off_y, off_y - py)
        off_x = np.arange(px)
        off_x = np.where(off_x <= px // 2, off_x, off_x - px)
        r = grid.cell_size * np.hypot(off_y[:, None], off_x[None, :])
        kern = np.empty((py, px), dtype=complex)
        nz = r > 0
        kern[nz] = self._coupling * _hankel2_0(kb * r[nz])
        kern[~nz] = self._self_term
        self._pad_shape = (py, px)
        self._kernel_hat = np.fft.fft2(kern)
        self._gd_dense: np.ndarray | None = None

        # only exact coincidence is singular; sensors may sit arbitrarily
        # close to the domain edge
        rx = scene.rx_positions
        r_rx = np.hypot(rx[:, 0, None] - xc.ravel()[None, :],
                        rx[:, 1, None] - yc.ravel()[None, :])
        if np.min(r_rx) <= 1e-12:
            raise SceneError("a receiver lies on top of a cell center")
        self.g_s = self._coupling * _hankel2_0(kb * r_rx)

        tx = scene.tx_positions
        r_tx = np.hypot(tx[:, 0, None, None] - xc[None, :, :],
                        tx[:, 1, None, None] - yc[None, :, :])
        if np.min(r_tx) <= 0:
            raise SceneError("a transmitter lies on top of a cell center")
        self.incident = _hankel2_0(kb * r_tx)

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def apply_gd(self, fields: np.ndarray) -> np.ndarray:
        """G_D applied to (..., ny, nx) cell fields via padded FFT."""
        v = np.asarray(fields, dtype=complex)
        ny, nx = self.grid.ny, self.grid.nx
        py, px = self._pad_shape
        pad = np.zeros(v.shape[:-2] + (py, px), dtype=complex)
        pad[..., :ny, :nx] = v
        out = np.fft.ifft2(np.fft.fft2(pad) * self._kernel_hat)
        return out[..., :ny, :nx]

    def gd_dense(self) -> np.ndarray:
        """Materialize G_D as an (N, N) matrix (cached)."""
        if self._gd_dense is None:
            x = self._xc.ravel()
            y = self._yc.ravel()
            r = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
            g = np.empty(r.shape, dtype=complex)
            nz = r > 0
            g[nz] = self._coupling * _hankel2_0(self.k_b * r[nz])
            np.fill_diagonal(g, self._self_term)
            self._gd_dense = g
        return self._gd_dense

    def apply_gs(self, sources: np.ndarray) -> np.ndarray:
        """G_S applied to (..., ny, nx) induced sources -> (..., n_rx)."""
        w = np.asarray(sources, dtype=complex)
        flat = w.reshape(w.shape[:-2] + (self.n_cells,))
        return flat @ self.g_s.T

    def apply_gs_transpose(self, coeffs: np.ndarray) -> np.ndarray:
        """G_S^T applied to (..., n_rx) coefficients -> (..., ny, nx)."""
        c = np.asarray(coeffs, dtype=complex)
        out = c @ self.g_s
        return out.reshape(c.shape[:-1] + (self.grid.ny, self.grid.nx))


def assemble_greens(scene: Scene, frequency: float) -> GreensOperators:
    """Build the Green's operators of one scene frequency."""
    return GreensOperators(scene, frequency)


def incident_fields(scene: Scene, frequency: float) -> np.ndarray:
    """Unit line-source fields H0^(2)(k_b*r), shaped (n_tx, ny, nx)."""
    return assemble_greens(scene, frequency).incident


class FieldSolver:
    """Solves (I - G_D diag(chi)) x = b and the transposed system.

    The dense path factors the matrix once (LU) and reuses it for any number
    of right-hand sides in either orientation; the iterative path runs
    BiCGStab against the FFT-form operator per right-hand side.
    """

    def __init__(self, ops: GreensOperators, chi: np.ndarray,
                 options: SolverOptions | None = None):
        self.ops = ops
        self.options = options or SolverOptions()
        self.chi = np.asarray(chi, dtype=complex)
        if self.chi.shape != (ops.grid.ny, ops.grid.nx):
            raise ValueError(
                f"chi shape {self.chi.shape} does not match grid "
                f"({ops.grid.ny}, {ops.grid.nx})"
            )
        if not np.all(np.isfinite(self.chi)):
            raise ValueError("chi must be finite")
        mode = self.options.mode
        if mode == "auto":
            mode = ("dense" if max(ops.grid.nx, ops.grid.ny) <= self.options.dense_limit
                    else "iterative")
        self.mode = mode
        self._lu = None
        if mode == "dense":
            a = -ops.gd_dense() * self.chi.ravel()[None, :]
            a[np.diag_indices_from(a)] += 1.0
            self._lu = lu_factor(a)

    # matvecs in (ny, nx) field form
    def _forward_matvec(self, v: np.ndarray) -> np.ndarray:
        return v - self.ops.apply_gd(self.chi * v)

    def _transpose_matvec(self, v: np.ndarray) -> np.ndarray:
        return v - self.chi * self.ops.apply_gd(v)

    def _solve_iterative(self, rhs: np.ndarray, transpose: bool) -> np.ndarray:
        ny, nx = self.ops.grid.ny, self.ops.grid.nx
        n = ny * nx
        matvec_field = self._transpose_matvec if transpose else self._forward_matvec

        def mv(x: np.ndarray) -> np.ndarray:
            return matvec_field(x.reshape(ny, nx)).ravel()

        op = LinearOperator((n, n), matvec=mv, dtype=complex)
        out = np.empty_like(rhs)
        flat_rhs = rhs.reshape(-1, ny, nx)
        flat_out = out.reshape(-1, ny, nx)
        tol = self.options.tol
        for i in range(flat_rhs.shape[0]):
            b = flat_rhs[i].ravel()
            nb = np.linalg.norm(b)
            if nb == 0:
                flat_out[i] = 0.0
                continue
            x, info = bicgstab(op, b, rtol=tol, atol=0.0,
                               maxiter=self.options.max_iter)
            res = np.linalg.norm(mv(x) - b) / nb
            if info != 0 or not np.isfinite(res) or res > 10.0 * tol:
                raise SolverError(
                    f"field solve did not converge (info={info}, "
                    f"relative residual {res:.3e}, target {tol:.1e})",
                    residual=float(res),
                )
            flat_out[i] = x.reshape(ny, nx)
        return out

    def _solve_dense(self, rhs: np.ndarray, transpose: bool) -> np.ndarray:
        n = self.ops.n_cells
        b = rhs.reshape(-1, n).T  # (n, n_rhs)
        x = lu_solve(self._lu, b, trans=1 if transpose else 0)
        return np.ascontiguousarray(x.T).reshape(rhs.shape)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the forward system for (..., ny, nx) right-hand sides."""
        rhs = np.ascontiguousarray(rhs, dtype=complex)
        if self.mode == "dense":
            return self._solve_dense(rhs, transpose=False)
        return self._solve_iterative(rhs, transpose=False)

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (I - G_D diag(chi))^T x = b; G_D is symmetric, not Hermitian."""
        rhs = np.ascontiguousarray(rhs, dtype=complex)
        if self.mode == "dense":
            return self._solve_dense(rhs, transpose=True)
        return self._solve_iterative(rhs, transpose=True)


def solve_total_field(
    ops: GreensOperators,
    chi: np.ndarray,
    incident: np.ndarray | None = None,
    options: SolverOptions | None = None,
) -> np.ndarray:
    """Total fields inside the domain, shaped like the incident stack."""
    if incident is None:
        incident = ops.incident
    return FieldSolver(ops, chi, options).solve(np.asarray(incident, dtype=complex))


def scattered_field(ops: GreensOperators, chi: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Receiver samples G_S (chi * e_t) for (..., ny, nx) total fields."""
    return ops.apply_gs(np.asarray(chi) * np.asarray(total, dtype=complex))


@dataclasses.dataclass
class MeasurementSet:
    """Scattered-field data cube, shaped (n_freq, n_tx, n_rx)."""

    data: np.ndarray
    noise_level: float = 0.0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise ValueError(f"measurement data must be 3-D, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclasses.dataclass
class FieldSet:
    """Per-frequency total fields, each entry shaped (n_tx, ny, nx)."""

    frequencies: np.ndarray
    fields: list[np.ndarray]


def forward_simulate(
    scene: Scene,
    maps: PropertyMaps,
    options: SolverOptions | None = None,
    workers: int = 1,
    return_fields: bool = False,
    operators: list[GreensOperators] | None = None,
) -> MeasurementSet | tuple[MeasurementSet, FieldSet]:
    """Simulate scattered data for every (frequency, transmitter) pair.

    ``workers`` > 1 spreads frequencies over a thread pool; results land in
    preallocated slots so the output does not depend on scheduling.
    """
    if maps.shape != (scene.grid.ny, scene.grid.nx):
        raise SceneError(
            f"maps shape {maps.shape} does not match grid "
            f"({scene.grid.ny}, {scene.grid.nx})"
        )
    if operators is not None and len(operators) != scene.n_freq:
        raise ValueError("one GreensOperators instance per frequency is required")

    data = np.empty((scene.n_freq, scene.n_tx, scene.n_rx), dtype=complex)
    fields: list[np.ndarray | None] = [None] * scene.n_freq

    def run_one(g: int) -> None:
        f = float(scene.frequencies[g])
        ops = operators[g] if operators is not None else assemble_greens(scene, f)
        chi = build_contrast(maps, scene, f)
        e_t = solve_total_field(ops, chi, options=options)
        data[g] = scattered_field(ops, chi, e_t)
        fields[g] = e_t

    if workers > 1 and scene.n_freq > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(scene.n_freq)))
    else:
        for g in range(scene.n_freq):
            run_one(g)

    measured = MeasurementSet(data)
    if return_fields:
        return measured, FieldSet(scene.frequencies.copy(), fields)  # type: ignore[arg-type]
    return measured


def add_noise(
    measurements: MeasurementSet, noise_level: float, rng: np.random.Generator
) -> MeasurementSet:
    """Add white Gaussian noise scaled by the real/imaginary data spread.

    Each part receives noise_level * std(part over all samples) * N(0, 1);
    the real-part noise block is drawn before the imaginary one, so a seeded
    generator reproduces the data exactly.
    """
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    d = measurements.data
    if noise_level == 0:
        return MeasurementSet(d.copy(), noise_level=0.0)
    std_re = float(np.std(d.real))
    std_im = float(np.std(d.imag))
    n1 = rng.standard_normal(d.shape)
    n2 = rng.standard_normal(d.shape)
    noisy = d + noise_level * std_re * n1 + 1j * noise_level * std_im * n2
    return MeasurementSet(noisy, noise_level=float(noise_level))
