"""Far-field geometric channel synthesis for fluid-antenna arrays.

A user's channel is ``H_k = F_k^H Sigma_k G_k``, where ``G_k`` (L_tx x M) and
``F_k`` (L_rx x N) are field-response matrices whose entries are unit-modulus
exponentials of the projected path distances at each antenna position.
"""
import logging
import math
from typing import List, Sequence

import attr
import numpy as np

from fluid_antenna_wsr.errors import InvalidArgument

log = logging.getLogger("faw")

TX, RX = "tx", "rx"
SIDES = frozenset([TX, RX])

SPEED_OF_LIGHT = 299_792_458.0


def _positive_int(instance, attribute, value):
    if not isinstance(value, (int, np.integer)) or value < 1:
        raise InvalidArgument(f"{attribute.name} must be a positive integer: {value!r}")


@attr.s(slots=True, frozen=True)
class SystemDims:
    """Array and stream counts; the transmit array splits into C equal clusters."""

    M = attr.ib(validator=_positive_int)
    N = attr.ib(validator=_positive_int)
    K = attr.ib(validator=_positive_int)
    d = attr.ib(validator=_positive_int)
    C = attr.ib(default=1, validator=_positive_int)

    def __attrs_post_init__(self):
        if self.d > min(self.M, self.N):
            raise InvalidArgument(
                f"d={self.d} exceeds min(M, N)=min({self.M}, {self.N})"
            )
        if self.M % self.C:
            raise InvalidArgument(f"M={self.M} is not divisible into C={self.C} clusters")

    @property
    def M_c(self) -> int:
        return self.M // self.C


def _as_angle_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def _as_prm(value) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=complex))
    arr.setflags(write=False)
    return arr


@attr.s(slots=True, frozen=True, eq=False)
class PathGeometry:
    """Per-user propagation paths.

    ``aod`` holds one (elevation, azimuth) row per transmit path and ``aoa``
    one per receive path; ``prm`` couples them as an L_rx x L_tx matrix.
    """

    aod = attr.ib(converter=_as_angle_array)
    aoa = attr.ib(converter=_as_angle_array)
    prm = attr.ib(converter=_as_prm)
    wavelength = attr.ib(converter=float)

    def __attrs_post_init__(self):
        if not self.wavelength > 0 or not math.isfinite(self.wavelength):
            raise InvalidArgument(f"wavelength must be positive: {self.wavelength!r}")
        if self.prm.shape != (self.L_rx, self.L_tx):
            raise InvalidArgument(
                f"prm shape {self.prm.shape} does not match "
                f"(L_rx, L_tx)=({self.L_rx}, {self.L_tx})"
            )
        # estimated (perturbed) angles may leave [0, pi); only finiteness matters
        for name in ("aod", "aoa"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidArgument(f"{name} contains non-finite angles")
        if not np.all(np.isfinite(self.prm)):
            raise InvalidArgument("prm contains non-finite entries")

    @property
    def L_tx(self) -> int:
        return self.aod.shape[0]

    @property
    def L_rx(self) -> int:
        return self.aoa.shape[0]

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    def angles(self, side: str) -> np.ndarray:
        if side == TX:
            return self.aod
        if side == RX:
            return self.aoa
        raise InvalidArgument(f"unknown side {side!r}")

    def directions(self, side: str) -> np.ndarray:
        """Unit direction vectors of every path on ``side``, one per row."""
        return direction_matrix(self.angles(side))

    def evolve(self, **changes) -> "PathGeometry":
        return attr.evolve(self, **changes)


def direction_vector(elevation: float, azimuth: float) -> np.ndarray:
    if not (math.isfinite(elevation) and math.isfinite(azimuth)):
        raise InvalidArgument(f"non-finite angle ({elevation!r}, {azimuth!r})")
    return np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ]
    )


def direction_matrix(angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(angles)):
        raise InvalidArgument("non-finite angle in direction matrix")
    theta, phi = angles[:, 0], angles[:, 1]
    return np.stack(
        [np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)],
        axis=1,
    )


def projected_distance(direction, position) -> float:
    return float(np.dot(np.asarray(direction, float), np.asarray(position, float)))


def field_response_vector(geometry: PathGeometry, side: str, position) -> np.ndarray:
    phase = geometry.wavenumber * (geometry.directions(side) @ np.asarray(position, float))
    return np.exp(1j * phase)


def field_response_matrix(
    geometry: PathGeometry, side: str, positions: np.ndarray
) -> np.ndarray:
    """L x (number of positions) matrix; column m is the response at position m."""
    phase = geometry.wavenumber * (geometry.directions(side) @ np.asarray(positions).T)
    return np.exp(1j * phase)


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _grid_centers(count: int, pitch: float) -> np.ndarray:
    side = math.ceil(math.sqrt(count))
    offset = (side - 1) / 2.0
    idx = np.arange(count)
    return np.stack(
        [(idx % side - offset) * pitch, (idx // side - offset) * pitch, np.zeros(count)],
        axis=1,
    )


def _grid_boxes(centers: np.ndarray, half_xy: float, half_z: float) -> np.ndarray:
    half = np.array([half_xy, half_xy, half_z])
    return np.stack([centers - half, centers + half], axis=1)


@attr.s(slots=True, frozen=True, eq=False)
class AntennaLayout:
    """Antenna positions and their movable regions.

    ``T`` is M x 3, ``R`` is K x N x 3. Boxes are stored as ``[..., 0, :]`` lower
    and ``[..., 1, :]`` upper corners, so ``boxes_tx`` is M x 2 x 3 and
    ``boxes_rx`` is K x N x 2 x 3.
    """

    T = attr.ib(converter=_frozen)
    R = attr.ib(converter=_frozen)
    boxes_tx = attr.ib(converter=_frozen)
    boxes_rx = attr.ib(converter=_frozen)
    min_sep = attr.ib(converter=float)

    def __attrs_post_init__(self):
        if self.T.ndim != 2 or self.T.shape[1] != 3:
            raise InvalidArgument(f"T must be M x 3, got {self.T.shape}")
        if self.R.ndim != 3 or self.R.shape[2] != 3:
            raise InvalidArgument(f"R must be K x N x 3, got {self.R.shape}")
        if self.boxes_tx.shape != (self.T.shape[0], 2, 3):
            raise InvalidArgument(f"boxes_tx shape {self.boxes_tx.shape} mismatches T")
        if self.boxes_rx.shape != self.R.shape[:2] + (2, 3):
            raise InvalidArgument(f"boxes_rx shape {self.boxes_rx.shape} mismatches R")

    @classmethod
    def box_mode(
        cls, dims: SystemDims, wavelength: float, rho: float, min_sep: float
    ) -> "AntennaLayout":
        """Grid of per-antenna cuboids with pitch rho*wavelength, antennas at centers.

        Each box spans (pitch - min_sep) in x and y, so boxes on one array are
        separated by at least ``min_sep`` in the x-y plane, and [-pitch, pitch] in z.
        """
        pitch = rho * wavelength
        if pitch < min_sep:
            raise InvalidArgument(
                f"box pitch {pitch!r} m is smaller than the minimum separation {min_sep!r} m"
            )
        half_xy = (pitch - min_sep) / 2.0
        tx_centers = _grid_centers(dims.M, pitch)
        rx_centers = _grid_centers(dims.N, pitch)
        return cls(
            T=tx_centers,
            R=np.broadcast_to(rx_centers, (dims.K, dims.N, 3)),
            boxes_tx=_grid_boxes(tx_centers, half_xy, pitch),
            boxes_rx=np.broadcast_to(
                _grid_boxes(rx_centers, half_xy, pitch), (dims.K, dims.N, 2, 3)
            ),
            min_sep=min_sep,
        )

    @classmethod
    def fixed_upa(
        cls,
        dims: SystemDims,
        wavelength: float,
        rho: float,
        min_sep: float,
        fix_tx: bool = True,
        fix_rx: bool = True,
    ) -> "AntennaLayout":
        """Half-wavelength planar arrays with point boxes on the fixed sides.

        Sides that are not fixed keep the box-mode regions for ``rho``.
        """
        movable = cls.box_mode(dims, wavelength, rho, min_sep)
        spacing = wavelength / 2.0
        T, boxes_tx = movable.T, movable.boxes_tx
        R, boxes_rx = movable.R, movable.boxes_rx
        if fix_tx:
            T = _grid_centers(dims.M, spacing)
            boxes_tx = _grid_boxes(T, 0.0, 0.0)
        if fix_rx:
            rx = _grid_centers(dims.N, spacing)
            R = np.broadcast_to(rx, (dims.K, dims.N, 3))
            boxes_rx = np.broadcast_to(_grid_boxes(rx, 0.0, 0.0), (dims.K, dims.N, 2, 3))
        return cls(T=T, R=R, boxes_tx=boxes_tx, boxes_rx=boxes_rx, min_sep=min_sep)

    @property
    def tx_centers(self) -> np.ndarray:
        return self.boxes_tx.mean(axis=1)

    @property
    def rx_centers(self) -> np.ndarray:
        return self.boxes_rx.mean(axis=2)

    def project_tx(self, T: np.ndarray) -> np.ndarray:
        return np.clip(T, self.boxes_tx[:, 0], self.boxes_tx[:, 1])

    def project_rx(self, R_k: np.ndarray, k: int) -> np.ndarray:
        return np.clip(R_k, self.boxes_rx[k, :, 0], self.boxes_rx[k, :, 1])

    def with_tx(self, T: np.ndarray) -> "AntennaLayout":
        return attr.evolve(self, T=T)

    def with_rx(self, R_k: np.ndarray, k: int) -> "AntennaLayout":
        R = np.array(self.R)
        R[k] = R_k
        return attr.evolve(self, R=R)

    def contains(self, atol: float = 1e-12) -> bool:
        """True if every antenna sits inside its own box."""
        tx_ok = np.all(self.T >= self.boxes_tx[:, 0] - atol) and np.all(
            self.T <= self.boxes_tx[:, 1] + atol
        )
        rx_ok = np.all(self.R >= self.boxes_rx[..., 0, :] - atol) and np.all(
            self.R <= self.boxes_rx[..., 1, :] + atol
        )
        return bool(tx_ok and rx_ok)

    def min_pairwise_distance(self) -> float:
        """Smallest 3-D distance between two antennas of the same array."""
        arrays = [self.T] + [self.R[k] for k in range(self.R.shape[0])]
        best = math.inf
        for pos in arrays:
            if pos.shape[0] < 2:
                continue
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.linalg.norm(diff, axis=2)
            dist[np.diag_indices_from(dist)] = math.inf
            best = min(best, float(dist.min()))
        return best


@attr.s(slots=True, frozen=True, eq=False)
class ChannelSet:
    H: List[np.ndarray] = attr.ib()
    G: List[np.ndarray] = attr.ib()
    F: List[np.ndarray] = attr.ib()

    @property
    def K(self) -> int:
        return len(self.H)


def transmit_frms(geometries: Sequence[PathGeometry], T: np.ndarray) -> List[np.ndarray]:
    return [field_response_matrix(geo, TX, T) for geo in geometries]


def receive_frm(geometry: PathGeometry, R_k: np.ndarray) -> np.ndarray:
    return field_response_matrix(geometry, RX, R_k)


def compose_channel(F_k: np.ndarray, prm: np.ndarray, G_k: np.ndarray) -> np.ndarray:
    return F_k.conj().T @ prm @ G_k


def assemble_channels(
    geometries: Sequence[PathGeometry], layout: AntennaLayout
) -> ChannelSet:
    if len(geometries) != layout.R.shape[0]:
        raise InvalidArgument(
            f"{len(geometries)} user geometries for a layout with {layout.R.shape[0]} users"
        )
    G = transmit_frms(geometries, layout.T)
    F = [receive_frm(geo, layout.R[k]) for k, geo in enumerate(geometries)]
    H = [compose_channel(F[k], geo.prm, G[k]) for k, geo in enumerate(geometries)]
    for k, H_k in enumerate(H):
        if not np.all(np.isfinite(H_k)):
            raise InvalidArgument(f"non-finite channel entries for user {k}")
    return ChannelSet(H=H, G=G, F=F)


def with_transmit_frms(
    channels: ChannelSet, geometries: Sequence[PathGeometry], G: List[np.ndarray]
) -> ChannelSet:
    H = [compose_channel(channels.F[k], geo.prm, G[k]) for k, geo in enumerate(geometries)]
    return ChannelSet(H=H, G=G, F=channels.F)


def with_receive_frm(
    channels: ChannelSet, geometry: PathGeometry, k: int, F_k: np.ndarray
) -> ChannelSet:
    F = list(channels.F)
    H = list(channels.H)
    F[k] = F_k
    H[k] = compose_channel(F_k, geometry.prm, channels.G[k])
    return ChannelSet(H=H, G=channels.G, F=F)


def pathloss(
    distance: float, exponent: float, reference_loss: float, reference_distance: float = 1.0
) -> float:
    if not reference_distance > 0:
        raise InvalidArgument(f"reference distance must be positive: {reference_distance!r}")
    if distance < reference_distance:
        raise InvalidArgument(
            f"distance {distance!r} m is below the reference distance {reference_distance!r} m"
        )
    return reference_loss * (distance / reference_distance) ** (-exponent)


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def wavelength_for(carrier_hz: float) -> float:
    return SPEED_OF_LIGHT / carrier_hz
