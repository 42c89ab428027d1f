"""Dense 4-D tensor algebra and the truncated multilinear-SVD feature extractor.

A reanalysis cube is an (8, 9, 25, 25) tensor: 8 history steps of 9
atmospheric channels (z, u, v at 225/500/700 hPa) on a 25x25 one-degree grid.
Its embedding is the flattened (3, 5, 3, 3) core of the truncated
decomposition, 135 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericalError

CUBE_DIMS = (8, 9, 25, 25)
CUBE_CHANNELS = tuple(
    f"{field}{level}" for field in ("z", "u", "v") for level in (225, 500, 700))
VISION_RANKS = (3, 5, 3, 3)
VISION_DIM = int(np.prod(VISION_RANKS))  # 135

# eigendecomposition of the mode-n Gram matrix is cheaper than a full SVD of
# the unfolding for small mode sizes; both paths must agree
GRAM_MAX_DIM = 64

HCUB_MAGIC = b"HCUB"
HCUB_VERSION = 1


def _as_tensor4(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 4:
        raise DimensionError(f"expected a 4-D tensor, got {t.ndim}-D shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise NumericalError("tensor contains non-finite entries")
    return t


def _check_mode(mode: int, ndim: int = 4) -> int:
    if not 1 <= mode <= ndim:
        raise DimensionError(f"mode must be in 1..{ndim}, got {mode}")
    return mode


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n unfolding: shape (I_n, prod of the other dims), C-order."""
    t = _as_tensor4(t)
    mode = _check_mode(mode)
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1)


def fold(m: np.ndarray, mode: int, dims: tuple[int, int, int, int]) -> np.ndarray:
    """Exact inverse of unfold for the given target dims."""
    m = np.asarray(m, dtype=float)
    mode = _check_mode(mode, len(dims))
    moved = [dims[mode - 1]] + [d for i, d in enumerate(dims) if i != mode - 1]
    if m.shape != (moved[0], int(np.prod(moved[1:]))):
        raise DimensionError(
            f"matrix shape {m.shape} inconsistent with dims {dims} at mode {mode}")
    return np.moveaxis(m.reshape(moved), 0, mode - 1)


def mode_n_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Multiply tensor t along mode n by matrix m of shape (J_n, I_n)."""
    t = _as_tensor4(t)
    m = np.asarray(m, dtype=float)
    mode = _check_mode(mode)
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise DimensionError(
            f"matrix shape {m.shape} cannot act on mode {mode} of tensor {t.shape}")
    dims = list(t.shape)
    dims[mode - 1] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, tuple(dims))


@dataclass
class TuckerFactorization:
    core: np.ndarray                 # (k1, k2, k3, k4)
    factors: list[np.ndarray]        # U(n) of shape (I_n, k_n), orthonormal columns
    singular_values: list[np.ndarray]  # all mode-n singular values (length I_n)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape


def _fix_signs(u: np.ndarray) -> np.ndarray:
    """Force each column's largest-magnitude entry positive, for reproducibility."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0.0] = 1.0
    return u * signs


def mode_singular_vectors(unfolding: np.ndarray, mode: int,
                          method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Left singular vectors and singular values of one unfolding.

    method: "gram" (eigendecomposition of U U^T), "svd", or "auto" which picks
    gram for mode sizes up to GRAM_MAX_DIM.
    """
    n = unfolding.shape[0]
    if method == "auto":
        method = "gram" if n <= GRAM_MAX_DIM else "svd"
    try:
        if method == "gram":
            gram = unfolding @ unfolding.T
            eigvals, eigvecs = np.linalg.eigh(gram)
            order = np.argsort(eigvals)[::-1]
            values = np.sqrt(np.clip(eigvals[order], 0.0, None))
            vectors = eigvecs[:, order]
        elif method == "svd":
            vectors, values, _ = np.linalg.svd(unfolding, full_matrices=False)
            if vectors.shape[1] < n:  # wide-matrix case: pad to a full basis
                full, _, _ = np.linalg.svd(unfolding, full_matrices=True)
                vectors = full
                values = np.concatenate([values, np.zeros(n - values.shape[0])])
        else:
            raise ValueError(f"unknown method {method!r}")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"decomposition failed to converge at mode {mode}: {exc}")
    return _fix_signs(vectors), values


def tucker(t: np.ndarray, ranks: tuple[int, int, int, int],
           method: str = "auto") -> TuckerFactorization:
    """Truncated multilinear SVD.

    Each factor holds the leading k_n left singular vectors of the mode-n
    unfolding (sign-fixed); the core is the tensor contracted with every
    factor transposed. Ranks above the mode dimension are rejected.
    """
    t = _as_tensor4(t)
    if len(ranks) != 4:
        raise DimensionError(f"need 4 ranks, got {ranks}")
    for n, (k, dim) in enumerate(zip(ranks, t.shape), start=1):
        if not 1 <= k <= dim:
            raise DimensionError(f"rank {k} invalid for mode {n} of size {dim}")
    factors = []
    values = []
    core = t
    for n in range(1, 5):
        vectors, sigma = mode_singular_vectors(unfold(t, n), n, method=method)
        u = vectors[:, :ranks[n - 1]]
        factors.append(u)
        values.append(sigma)
        core = mode_n_product(core, u.T, n)
    return TuckerFactorization(core=core, factors=factors, singular_values=values)


def reconstruct(f: TuckerFactorization) -> np.ndarray:
    """Multiply the core back along every mode: the rank-truncated tensor."""
    t = f.core
    for n, u in enumerate(f.factors, start=1):
        t = mode_n_product(t, u, n)
    return t


def truncation_error_bound(f: TuckerFactorization) -> float:
    """sqrt of the summed squares of all discarded singular values."""
    total = 0.0
    for k, sigma in zip(f.ranks, f.singular_values):
        total += float(np.sum(sigma[k:] ** 2))
    return float(np.sqrt(total))


def extract_vision_features(cube: np.ndarray,
                            ranks: tuple[int, int, int, int] = VISION_RANKS) -> np.ndarray:
    """Flattened truncated core of a reanalysis cube; length 135 at the
    standard ranks (3, 5, 3, 3)."""
    cube = _as_tensor4(cube)
    if cube.shape != CUBE_DIMS:
        raise DimensionError(f"expected cube dims {CUBE_DIMS}, got {cube.shape}")
    return tucker(cube, ranks).core.reshape(-1)


# --------------------------------------------------------------------------
# HCUB binary cube format
# --------------------------------------------------------------------------

def write_hcub(path, data: np.ndarray) -> None:
    """Write a 4-D tensor as an HCUB file (float32 little-endian, C-order)."""
    data = np.asarray(data)
    if data.ndim != 4:
        raise DimensionError(f"HCUB stores 4-D tensors, got shape {data.shape}")
    with open(path, "wb") as fh:
        fh.write(HCUB_MAGIC)
        fh.write(struct.pack("<H", HCUB_VERSION))
        fh.write(struct.pack("<4I", *data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_hcub_header(path) -> tuple[int, int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(4 + 2 + 16)
    if len(head) < 22 or head[:4] != HCUB_MAGIC:
        raise DimensionError(f"{path}: not an HCUB file")
    (version,) = struct.unpack("<H", head[4:6])
    if version != HCUB_VERSION:
        raise DimensionError(f"{path}: unsupported HCUB version {version}")
    return struct.unpack("<4I", head[6:22])


def read_hcub(path) -> np.ndarray:
    """Read an HCUB file back into a float64 tensor."""
    dims = read_hcub_header(path)
    count = int(np.prod(dims))
    with open(path, "rb") as fh:
        fh.seek(22)
        payload = fh.read(count * 4)
    if len(payload) != count * 4:
        raise DimensionError(f"{path}: truncated payload, expected {count} float32")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)


def cube_filename(storm_id: str, t0: datetime) -> str:
    return f"{storm_id}_{t0.strftime('%Y%m%dT%H%M%SZ')}.hcub"


def _parse_cube_filename(name: str) -> tuple[str, datetime]:
    stem = name[:-len(".hcub")]
    sid, _, stamp = stem.rpartition("_")
    t0 = datetime.strptime(stamp, "%Y%m%dT%H%M%SZ").replace(tzinfo=timezone.utc)
    return sid, t0


class DirectoryCubeStore:
    """Cube lookup over a directory of HCUB files.

    Each file holds the (T, 9, 25, 25) map stack of one storm starting at the
    timestamp encoded in its filename, at 3-hour cadence; case windows are
    sliced out of it. Tensors are cached per storm after first read.
    """

    def __init__(self, directory, step_hours: int = 3):
        self.directory = Path(directory)
        self.step_hours = step_hours
        self._index: dict[str, tuple[datetime, Path, tuple[int, ...]]] = {}
        self._cache: dict[str, np.ndarray] = {}
        for path in sorted(self.directory.glob("*.hcub")):
            sid, t0 = _parse_cube_filename(path.name)
            self._index[sid] = (t0, path, tuple(read_hcub_header(path)))

    def _window_indices(self, storm_id: str, t_end: datetime,
                        steps: int) -> tuple[int, int] | None:
        entry = self._index.get(storm_id)
        if entry is None:
            return None
        t0, _, dims = entry
        offset_h = (t_end - t0).total_seconds() / 3600.0
        if offset_h < 0 or offset_h % self.step_hours != 0:
            return None
        end = int(offset_h // self.step_hours) + 1
        start = end - steps
        if start < 0 or end > dims[0]:
            return None
        return start, end

    def has_window(self, storm_id: str, t_end: datetime, steps: int) -> bool:
        return self._window_indices(storm_id, t_end, steps) is not None

    def window(self, storm_id: str, t_end: datetime, steps: int) -> np.ndarray:
        """The (steps, C, H, W) slice ending at t_end, or KeyError."""
        span = self._window_indices(storm_id, t_end, steps)
        if span is None:
            raise KeyError(
                f"no cube window for storm {storm_id} ending {t_end.isoformat()}")
        if storm_id not in self._cache:
            self._cache[storm_id] = read_hcub(self._index[storm_id][1])
        return self._cache[storm_id][span[0]:span[1]]

    def storm_ids(self) -> list[str]:
        return sorted(self._index)
