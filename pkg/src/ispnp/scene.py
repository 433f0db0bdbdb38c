"""Scene geometry, material maps, and their JSON form.

Conventions used across the package:

- time dependence exp(+j*omega*t); outgoing cylindrical waves are Hankel
  functions of the second kind, and lossy media have Im(eps_rb) <= 0
- grid arrays are shaped (ny, nx), row iy <-> y, column ix <-> x, and
  flatten in C order (cell n = iy*nx + ix)
- positions and cell sizes are in meters, frequencies in Hz
"""
from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

EPSILON_0 = 8.8541878128e-12  # vacuum permittivity [F/m]
C_LIGHT = 299792458.0  # speed of light in vacuum [m/s]


class SceneError(ValueError):
    """Invalid scene geometry or material specification."""


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular imaging grid.

    ``origin`` is the lower-left corner of the domain; ``None`` centers the
    domain on (0, 0), which is also what the scene JSON format implies (it
    carries no origin).
    """

    nx: int
    ny: int
    cell_size: float
    origin: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise SceneError(f"grid must have at least one cell, got {self.nx}x{self.ny}")
        if not (self.cell_size > 0):
            raise SceneError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def corner(self) -> tuple[float, float]:
        if self.origin is not None:
            return self.origin
        return (-0.5 * self.nx * self.cell_size, -0.5 * self.ny * self.cell_size)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.cell_size, self.ny * self.cell_size)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) center coordinates, each shaped (ny, nx)."""
        x0, y0 = self.corner
        xs = x0 + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = y0 + (np.arange(self.ny) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)


@dataclasses.dataclass(frozen=True)
class BackgroundSpec:
    """Homogeneous background medium.

    ``eps_rb`` is the complex relative permittivity. Under the exp(+j*omega*t)
    convention a lossy background has a negative imaginary part.
    """

    eps_rb: complex

    def __post_init__(self) -> None:
        e = complex(self.eps_rb)
        if not (e.real > 0):
            raise SceneError(f"Re(eps_rb) must be positive, got {e}")
        if e.imag > 0:
            raise SceneError(
                f"Im(eps_rb) must be <= 0 under the exp(+j*omega*t) convention, got {e}"
            )

    def wavenumber(self, frequency: float) -> complex:
        """Background wavenumber k_b = (omega/c)*sqrt(eps_rb), Im(k_b) <= 0."""
        k = 2.0 * np.pi * frequency / C_LIGHT * np.sqrt(complex(self.eps_rb))
        # principal sqrt of eps_rb with Im <= 0 already lands in the
        # decaying branch (Re > 0, Im <= 0); guard anyway
        if k.real < 0:
            k = -k
        return complex(k)

    def background_properties(self, frequency: float) -> tuple[float, float]:
        """(eps_r, sigma_e) that are zero-contrast at this frequency.

        With a frequency-independent complex eps_rb, the matching conductivity
        scales with frequency, so the pair is frequency specific.
        """
        e = complex(self.eps_rb)
        return (e.real, -2.0 * np.pi * frequency * EPSILON_0 * e.imag)


@dataclasses.dataclass(frozen=True)
class Scene:
    """Measurement configuration: grid, background, sensors, frequencies."""

    grid: GridSpec
    background: BackgroundSpec
    tx_positions: np.ndarray  # (n_tx, 2) [m]
    rx_positions: np.ndarray  # (n_rx, 2) [m]
    frequencies: np.ndarray  # (n_freq,) [Hz]

    def __post_init__(self) -> None:
        tx = np.atleast_2d(np.asarray(self.tx_positions, dtype=float))
        rx = np.atleast_2d(np.asarray(self.rx_positions, dtype=float))
        fr = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if tx.ndim != 2 or tx.shape[1] != 2 or tx.shape[0] < 1:
            raise SceneError(f"tx_positions must be (n_tx, 2), got {tx.shape}")
        if rx.ndim != 2 or rx.shape[1] != 2 or rx.shape[0] < 1:
            raise SceneError(f"rx_positions must be (n_rx, 2), got {rx.shape}")
        if fr.size < 1 or np.any(fr <= 0):
            raise SceneError("frequencies must be positive and non-empty")
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx)) and np.all(np.isfinite(fr))):
            raise SceneError("sensor positions and frequencies must be finite")
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "frequencies", fr)

    @property
    def n_tx(self) -> int:
        return self.tx_positions.shape[0]

    @property
    def n_rx(self) -> int:
        return self.rx_positions.shape[0]

    @property
    def n_freq(self) -> int:
        return self.frequencies.size

    @property
    def reference_frequency(self) -> float:
        """First listed frequency; pixel-space contrast is parameterized at it."""
        return float(self.frequencies[0])

    def to_dict(self) -> dict:
        e = complex(self.background.eps_rb)
        return {
            "grid": {
                "nx": self.grid.nx,
                "ny": self.grid.ny,
                "cell_size_m": self.grid.cell_size,
            },
            "background": {"eps_rb_re": e.real, "eps_rb_im": e.imag},
            "tx": [[float(x), float(y)] for x, y in self.tx_positions],
            "rx": [[float(x), float(y)] for x, y in self.rx_positions],
            "frequencies_hz": [float(f) for f in self.frequencies],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            grid = GridSpec(
                nx=int(d["grid"]["nx"]),
                ny=int(d["grid"]["ny"]),
                cell_size=float(d["grid"]["cell_size_m"]),
            )
            bg = BackgroundSpec(
                eps_rb=complex(float(d["background"]["eps_rb_re"]),
                               float(d["background"]["eps_rb_im"]))
            )
            return cls(
                grid=grid,
                background=bg,
                tx_positions=np.asarray(d["tx"], dtype=float),
                rx_positions=np.asarray(d["rx"], dtype=float),
                frequencies=np.asarray(d["frequencies_hz"], dtype=float),
            )
        except (KeyError, TypeError) as exc:
            raise SceneError(f"malformed scene dictionary: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """Content hash of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclasses.dataclass
class PropertyMaps:
    """Relative permittivity and conductivity maps, shaped (ny, nx).

    Construction checks shapes and finiteness only; physical bounds
    (eps_r > 0, sigma_e >= 0) are enforced by :meth:`validate_physical`,
    which runs at trust boundaries (file load, phantom generation, CLI).
    Optimizer and sampler intermediates may transiently violate them.
    """

    eps_r: np.ndarray
    sigma_e: np.ndarray

    def __post_init__(self) -> None:
        self.eps_r = np.asarray(self.eps_r, dtype=float)
        self.sigma_e = np.asarray(self.sigma_e, dtype=float)
        if self.eps_r.ndim != 2 or self.eps_r.shape != self.sigma_e.shape:
            raise SceneError(
                f"property maps must be matching 2-D arrays, got "
                f"{self.eps_r.shape} and {self.sigma_e.shape}"
            )
        if not (np.all(np.isfinite(self.eps_r)) and np.all(np.isfinite(self.sigma_e))):
            raise SceneError("property maps must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.eps_r.shape

    def validate_physical(self) -> "PropertyMaps":
        if np.any(self.eps_r <= 0):
            raise SceneError("eps_r must be positive everywhere")
        if np.any(self.sigma_e < 0):
            raise SceneError("sigma_e must be non-negative everywhere")
        return self

    def copy(self) -> "PropertyMaps":
        return PropertyMaps(self.eps_r.copy(), self.sigma_e.copy())

    @classmethod
    def homogeneous(cls, grid: GridSpec, eps_r: float, sigma_e: float = 0.0) -> "PropertyMaps":
        shape = (grid.ny, grid.nx)
        return cls(np.full(shape, eps_r, dtype=float), np.full(shape, sigma_e, dtype=float))


def circle_positions(radius: float, count: int, phase: float = 0.0) -> np.ndarray:
    """Evenly spaced (x, y) points on a circle, a common sensor layout."""
    ang = phase + 2.0 * np.pi * np.arange(count) / count
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
