"""Sparse coding and dictionary learning.

OMP for greedy coding, K-SVD for training, and a proximal-gradient solver
for the l1-penalized least-squares problem

    min_a ||y - D a||_2^2 + lam ||a||_1
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9


@dataclass
class Dictionary:
    """Column-normalized atoms, ``atoms.shape == (rows, K)``.

    ``offset`` and ``scale`` (optional, length ``rows``) describe the affine
    map from raw signals to the space the atoms live in:
    ``(signal - offset) / scale``.
    """

    atoms: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2 or min(self.atoms.shape) < 1:
            raise ShapeError(f"dictionary must be a non-empty matrix, got {self.atoms.shape}")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError("dictionary atoms must have unit l2 norm")
        for name in ("offset", "scale"):
            vec = getattr(self, name)
            if vec is not None:
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (self.rows,):
                    raise ShapeError(f"{name} must have length {self.rows}")
                setattr(self, name, vec)

    @classmethod
    def from_matrix(cls, matrix, **kwargs) -> "Dictionary":
        """Normalize columns of ``matrix`` and wrap them."""
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m / np.linalg.norm(m, axis=0), **kwargs)

    @property
    def rows(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    def transform(self, signals: np.ndarray) -> np.ndarray:
        """Raw signals (rows along axis 0) into atom space."""
        s = np.asarray(signals, dtype=np.float64)
        if self.offset is not None:
            s = (s.T - self.offset).T
        if self.scale is not None:
            s = (s.T / self.scale).T
        return s

    def inverse_transform(self, signals: np.ndarray) -> np.ndarray:
        s = np.asarray(signals, dtype=np.float64)
        if self.scale is not None:
            s = (s.T * self.scale).T
        if self.offset is not None:
            s = (s.T + self.offset).T
        return s

    def save(self, path) -> None:
        """Row-major float64 atoms plus a plain-text ``.txt`` sidecar."""
        path = Path(path)
        self.atoms.astype("<f8").tofile(path)
        lines = [f"rows = {self.rows}", f"atoms = {self.n_atoms}", f"label = {self.label}"]
        for key, value in sorted(self.meta.items()):
            lines.append(f"{key} = {value}")
        for name in ("offset", "scale"):
            vec = getattr(self, name)
            if vec is not None:
                lines.append(f"{name} = " + " ".join(repr(float(v)) for v in vec))
        path.with_suffix(path.suffix + ".txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Dictionary":
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".txt")
        if not path.is_file():
            raise FileNotFoundError(f"no such dictionary: {path}")
        if not sidecar.is_file():
            raise FileNotFoundError(f"missing dictionary sidecar: {sidecar}")
        fields = {}
        for line in sidecar.read_text().splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                fields[key.strip()] = value.strip()
        rows, n_atoms = int(fields.pop("rows")), int(fields.pop("atoms"))
        label = fields.pop("label", "")
        vectors = {}
        for name in ("offset", "scale"):
            if name in fields:
                vectors[name] = np.array([float(v) for v in fields.pop(name).split()])
        atoms = np.fromfile(path, dtype="<f8")
        if atoms.size != rows * n_atoms:
            raise ShapeError(f"{path}: expected {rows * n_atoms} values, found {atoms.size}")
        return cls(atoms.reshape(rows, n_atoms), label=label, meta=fields, **vectors)


@dataclass
class SparseCode:
    length: int
    support: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.support.size and (np.any(np.diff(self.support) <= 0) or self.support[0] < 0
                                  or self.support[-1] >= self.length):
            raise ValueError("support must be strictly increasing indices in [0, length)")

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseCode":
        a = np.asarray(a, dtype=np.float64)
        support = np.flatnonzero(a)
        return cls(a.size, support, a[support])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        out[self.support] = self.coefficients
        return out

    @property
    def nnz(self) -> int:
        return int(self.support.size)


def _atoms(d) -> np.ndarray:
    return d.atoms if isinstance(d, Dictionary) else np.asarray(d, dtype=np.float64)


def omp(d, y, t0: int, tol: float = 0.0) -> SparseCode:
    """Orthogonal matching pursuit.

    Picks the atom with the largest ``|<residual, atom>|`` (lowest index on
    ties), refits all selected coefficients by least squares, and stops after
    ``t0`` atoms or once ``||residual|| <= tol``.
    """
    D = _atoms(d)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (D.shape[0],):
        raise ShapeError(f"signal length {y.shape} does not match dictionary rows {D.shape[0]}")
    if t0 < 1:
        raise ParameterError("t0 must be >= 1")
    k = D.shape[1]
    support: list[int] = []
    coef = np.zeros(0)
    residual = y.copy()
    # correlations below this are numerical noise on an exhausted residual
    floor = 1e-12 * max(1.0, float(np.linalg.norm(y)))
    for _ in range(min(t0, k)):
        if np.linalg.norm(residual) <= tol:
            break
        corr = np.abs(D.T @ residual)
        corr[support] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= floor:
            break
        support.append(j)
        sub = D[:, support]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ coef
    order = np.argsort(support)
    return SparseCode(k, np.asarray(support, dtype=np.int64)[order], np.asarray(coef)[order])


def omp_batch(d, Y, t0: int, tol: float = 0.0) -> np.ndarray:
    """Code every column of ``Y``; returns the dense ``K x N`` code matrix."""
    D = _atoms(d)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != D.shape[0]:
        raise ShapeError(f"signals {Y.shape} incompatible with dictionary {D.shape}")
    A = np.zeros((D.shape[1], Y.shape[1]))
    for i in range(Y.shape[1]):
        code = omp(D, Y[:, i], t0, tol)
        A[code.support, i] = code.coefficients
    return A


def reconstruct(d, a) -> np.ndarray:
    """``D @ a`` for a :class:`SparseCode`, dense vector or dense code matrix."""
    D = _atoms(d)
    if isinstance(a, SparseCode):
        if a.length != D.shape[1]:
            raise ShapeError("code length does not match the number of atoms")
        return D[:, a.support] @ a.coefficients
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != D.shape[1]:
        raise ShapeError("code length does not match the number of atoms")
    return D @ a


# --------------------------------------------------------------------------
# l1


def lipschitz_bound(D: np.ndarray, n_iter: int = 100) -> float:
    """Upper bound on the largest eigenvalue of ``D.T @ D`` by power iteration."""
    v = np.ones(D.shape[1]) / np.sqrt(D.shape[1])
    est = 0.0
    for _ in range(n_iter):
        w = D.T @ (D @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 1.0
        v = w / norm
        est = norm
    # power iteration converges from below
    return 1.01 * est


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def l1_objective(D, Y, A, lam) -> float:
    R = np.asarray(Y) - D @ A
    return float(np.sum(R * R) + lam * np.sum(np.abs(A)))


@dataclass
class L1Result:
    codes: np.ndarray
    objective: list
    iterations: int


def solve_l1_batch(d, Y, lam: float, max_iter: int = 500, tol: float = 1e-10,
                   weights=None, lipschitz: float | None = None) -> L1Result:
    """Proximal gradient (ISTA) on every column of ``Y`` at once.

    Each column minimizes ``w ||y - D a||^2 + lam ||a||_1`` with ``w`` from
    ``weights`` (1 by default). Stops once the largest coefficient change is
    below ``tol``. ISTA is monotone, so ``objective`` never increases.
    """
    if lam < 0:
        raise ParameterError("lambda must be non-negative")
    D = _atoms(d)
    Y = np.asarray(Y, dtype=np.float64)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if Y.shape[0] != D.shape[0]:
        raise ShapeError(f"signals {Y.shape} incompatible with dictionary {D.shape}")
    w = np.ones(Y.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ParameterError("column weights must be positive")
    L = lipschitz_bound(D) if lipschitz is None else lipschitz
    # the per-column penalty lam / w, expressed for the 1/2-scaled gradient step
    thresh = (lam / w) / (2.0 * L)

    A = np.zeros((D.shape[1], Y.shape[1]))
    DtY = D.T @ Y
    G = D.T @ D
    trace = [float(np.sum(w * np.sum(Y * Y, axis=0)))]
    it = 0
    for it in range(1, max_iter + 1):
        A_new = soft_threshold(A - (G @ A - DtY) / L, thresh)
        change = float(np.max(np.abs(A_new - A))) if A.size else 0.0
        A = A_new
        R = Y - D @ A
        trace.append(float(np.sum(w * np.sum(R * R, axis=0)) + lam * np.sum(np.abs(A))))
        if change < tol:
            break
    return L1Result(A[:, 0] if squeeze else A, trace, it)


def solve_l1(d, y, lam: float, max_iter: int = 500, tol: float = 1e-10) -> SparseCode:
    res = solve_l1_batch(d, np.asarray(y, dtype=np.float64), lam, max_iter, tol)
    return SparseCode.from_dense(res.codes)


# --------------------------------------------------------------------------
# K-SVD


@dataclass
class KsvdResult:
    dictionary: Dictionary
    codes: np.ndarray
    objective: list = field(default_factory=list)
    objective_before_update: list = field(default_factory=list)

    def code(self, i: int) -> SparseCode:
        return SparseCode.from_dense(self.codes[:, i])


def _svd(E):
    try:
        return np.linalg.svd(E, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        return scipy.linalg.svd(E, full_matrices=False, lapack_driver="gesvd")


def _frob(Y, D, A) -> float:
    R = Y - D @ A
    return float(np.sum(R * R))


def _init_atoms(Y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # distinct columns by value, so duplicated training data changes nothing
    norms = np.linalg.norm(Y, axis=0)
    candidates = Y[:, norms > 0]
    unique = np.unique(candidates.T, axis=0).T if candidates.size else candidates
    n_unique = unique.shape[1]
    pick = rng.choice(n_unique, size=min(k, n_unique), replace=False) if n_unique else []
    atoms = unique[:, np.sort(pick)] if n_unique else np.zeros((Y.shape[0], 0))
    if atoms.shape[1] < k:
        extra = rng.standard_normal((Y.shape[0], k - atoms.shape[1]))
        atoms = np.hstack([atoms, extra])
    return atoms / np.linalg.norm(atoms, axis=0)


def _replacement(Y, D, A, taken: set, rng) -> np.ndarray:
    """Worst-represented training column not used yet, normalized."""
    err = np.sum((Y - D @ A) ** 2, axis=0)
    err[list(taken)] = -1.0
    i = int(np.argmax(err))
    taken.add(i)
    col = Y[:, i]
    norm = np.linalg.norm(col)
    if norm == 0:
        col = rng.standard_normal(Y.shape[0])
        norm = np.linalg.norm(col)
    return col / norm


def ksvd(Y, k: int, t0: int, iters: int, seed: int = 0, coherence: float = 0.99,
         label: str = "") -> KsvdResult:
    """Learn ``k`` atoms for the columns of ``Y`` with K-SVD.

    Every iteration codes all columns with OMP (a column keeps its previous
    code when that fits better), then sweeps the atoms in order,
    replacing each by the leading left singular vector of the residual
    restricted to the signals that use it. Unused atoms take the worst
    represented column. Atoms more than ``coherence`` correlated with an
    earlier atom are replaced the same way before the next coding pass, unless
    the replacement would leave a worse fit than keeping them.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ShapeError("training data must be a matrix")
    n, N = Y.shape
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    if k < 1 or N < k:
        raise ParameterError(f"need at least k={k} training columns, got {N}")
    if t0 < 1:
        raise ParameterError("t0 must be >= 1")
    rng = np.random.default_rng(seed)
    D = _init_atoms(Y, k, rng)
    A = np.zeros((k, N))
    result = KsvdResult(None, A)  # type: ignore[arg-type]

    for it in range(iters):
        if it > 0:
            D, A = _hygiene(Y, D, A, t0, coherence, rng)
        else:
            A = omp_batch(D, Y, t0)
        before = _frob(Y, D, A)
        taken: set = set()
        for j in range(k):
            users = np.flatnonzero(A[j])
            if users.size == 0:
                D[:, j] = _replacement(Y, D, A, taken, rng)
                continue
            A[j, users] = 0.0
            E = Y[:, users] - D @ A[:, users]
            u, s, vt = _svd(E)
            atom = u[:, 0]
            sign = 1.0 if atom @ D[:, j] >= 0 else -1.0
            D[:, j] = sign * atom
            A[j, users] = sign * s[0] * vt[0]
        after = _frob(Y, D, A)
        result.objective_before_update.append(before)
        result.objective.append(after)
        logger.debug("ksvd %s iter %d: %.6g -> %.6g", label, it, before, after)

    D /= np.linalg.norm(D, axis=0)
    result.dictionary = Dictionary(D, label=label, meta={"seed": seed, "t0": t0, "iters": iters})
    result.codes = A
    return result


def _hygiene(Y, D, A, t0, coherence, rng):
    """Recode, trying replacement of near-duplicate atoms; keeps whichever fits better."""
    plain = _recode(Y, D, A, t0, keep_previous=True)
    if not _coherent_pairs(D, coherence):
        return D, plain
    D_try, A_try = D.copy(), A.copy()
    _replace_coherent(Y, D_try, A_try, coherence, rng)
    A_try = _recode(Y, D_try, A_try, t0, keep_previous=True)
    if _frob(Y, D_try, A_try) < _frob(Y, D, plain):
        return D_try, A_try
    return D, plain


def _coherent_pairs(D, coherence) -> bool:
    G = np.abs(D.T @ D)
    np.fill_diagonal(G, 0.0)
    return bool(np.any(G > coherence))


def _recode(Y, D, A_prev, t0, keep_previous):
    """OMP codes, keeping a column's refitted previous support where it fits better."""
    A = omp_batch(D, Y, t0)
    if keep_previous:
        A_prev = _refit(Y, D, A_prev)
        new_err = np.sum((Y - D @ A) ** 2, axis=0)
        old_err = np.sum((Y - D @ A_prev) ** 2, axis=0)
        better = old_err < new_err
        A[:, better] = A_prev[:, better]
    return A


def _refit(Y, D, A):
    """Least-squares coefficients on each column's existing support."""
    out = np.zeros_like(A)
    for i in range(Y.shape[1]):
        support = np.flatnonzero(A[:, i])
        if support.size:
            out[support, i], *_ = np.linalg.lstsq(D[:, support], Y[:, i], rcond=None)
    return out


def _replace_coherent(Y, D, A, coherence, rng):
    G = np.abs(D.T @ D)
    np.fill_diagonal(G, 0.0)
    taken: set = set()
    floor = 1e-10 * max(float(np.sum(Y * Y)), 1e-300)
    for j in range(D.shape[1]):
        if np.any(G[j, :j] > coherence):
            # a duplicate atom is harmless when every column is already represented
            if float(np.max(np.sum((Y - D @ A) ** 2, axis=0))) <= floor:
                break
            i = int(np.argmax(G[j, :j]))
            # the twin takes over the coefficients, so the fit barely moves
            A[i] += np.sign(D[:, i] @ D[:, j]) * A[j]
            A[j] = 0.0
            D[:, j] = _replacement(Y, D, A, taken, rng)
            G[j] = np.abs(D.T @ D[:, j])
            G[:, j] = G[j]
            G[j, j] = 0.0
