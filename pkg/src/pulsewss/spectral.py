"""Eigenbasis of the cotangent Laplacian and shape-token fitting.

The basis is computed once on a canonical mesh; any shape sharing the
canonical topology is a linear combination of the modes (one coefficient
triple per mode), so all shapes in a dataset share one graph structure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from pathlib import Path
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import NumericalError, ValidationError
from .mesh import TriMesh, cotangent_laplacian, obj_dumps, vertex_normals

__all__ = [
    "GhdBasis",
    "FitOptions",
    "FitResult",
    "compute_basis",
    "reconstruct",
    "fit_tokens",
    "save_basis",
    "load_basis",
]

# Dense solves are cheap and exact below this size; above it the sparse
# shift-invert path wins.
_DENSE_CUTOFF = 220


@dataclass(frozen=True)
class GhdBasis:
    """Orthonormal low-frequency eigenbasis of a canonical mesh.

    ``modes`` is N x n with unit-norm columns sorted by ascending
    eigenvalue; the first nonzero entry of each column is positive so the
    basis is reproducible across runs and solvers.
    """

    canonical: TriMesh
    modes: np.ndarray  # (N, n)
    eigenvalues: np.ndarray  # (n,) ascending, >= 0

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.modes.shape[0]


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    out = modes.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        thresh = 1e-8 * np.abs(col).max()
        nz = np.nonzero(np.abs(col) > thresh)[0]
        if len(nz) and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def compute_basis(canonical: TriMesh, n: int, backend: str = "auto") -> GhdBasis:
    """n smallest-eigenvalue eigenpairs of the cotangent Laplacian.

    backend: "dense" (LAPACK, exact), "iterative" (shift-invert Lanczos,
    residual tol 1e-8, iteration cap 10*n*sqrt(N)), or "auto".
    """
    N = canonical.n_vertices
    if not 1 <= n <= N:
        raise ValidationError(f"mode count {n} outside [1, {N}]")
    L = cotangent_laplacian(canonical)

    if backend == "auto":
        backend = "dense" if (N <= _DENSE_CUTOFF or n > N - 2) else "iterative"
    if backend == "dense":
        evals, evecs = np.linalg.eigh(L.toarray())
        evals, evecs = evals[:n], evecs[:, :n]
    elif backend == "iterative":
        if n > N - 2:
            raise ValidationError(
                f"iterative backend needs n <= N-2 (n={n}, N={N}); use dense"
            )
        sigma = -1e-3 * float(L.diagonal().mean())
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(N)
        maxiter = int(np.ceil(10 * n * np.sqrt(N)))
        try:
            evals, evecs = eigsh(
                L.tocsc(), k=n, sigma=sigma, which="LM", v0=v0, maxiter=maxiter, tol=1e-10
            )
        except ArpackNoConvergence as exc:
            got = len(exc.eigenvalues)
            raise NumericalError(
                f"eigensolver converged only {got}/{n} pairs in {maxiter} iterations"
            ) from exc
        except ArpackError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
    else:
        raise ValidationError(f"unknown backend {backend!r}")

    if evals.min() < -1e-8:
        raise NumericalError(f"Laplacian not PSD: min eigenvalue {evals.min():.3e}")
    evals = np.maximum(evals, 0.0)
    evecs = _fix_signs(evecs)

    resid = np.linalg.norm(L @ evecs - evecs * evals[None, :], axis=0)
    bad = resid > 1e-6 * np.maximum(np.linalg.norm(evecs, axis=0), 1e-30)
    if bad.any():
        raise NumericalError(
            f"eigenpair residual {resid[bad].max():.3e} exceeds 1e-6 "
            f"(modes {np.nonzero(bad)[0].tolist()})"
        )
    return GhdBasis(canonical, evecs, evals)


def reconstruct(basis: GhdBasis, tokens: np.ndarray) -> TriMesh:
    """Mesh with vertices sum_i modes[:, i] * tokens[i] on canonical faces."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape != (basis.n_modes, 3):
        raise ValidationError(
            f"tokens shape {tokens.shape} != (n_modes={basis.n_modes}, 3)"
        )
    return TriMesh.like(basis.canonical, basis.modes @ tokens)


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-6  # relative improvement threshold
    max_iters: int = 2000
    lr: float | None = None  # default: 1e-2 * target bbox diagonal
    normal_weight: float = 0.05
    divergence_window: int = 10


@dataclass(frozen=True)
class FitResult:
    tokens: np.ndarray  # (n, 3)
    residual: float  # RMS symmetric point distance (projection: RMS vertex error)
    iterations: int
    converged: bool


def fit_tokens(basis: GhdBasis, target: TriMesh, opts: FitOptions = FitOptions()) -> FitResult:
    """Tokens reproducing ``target`` as closely as the basis allows.

    Canonical-topology targets use the exact per-axis least-squares
    projection. Other targets run Adam descent on a symmetric Chamfer
    distance (sampled at vertices) plus a normal-consistency term.
    """
    if target.same_topology(basis.canonical):
        tokens = basis.modes.T @ target.vertices
        resid = basis.modes @ tokens - target.vertices
        rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
        return FitResult(tokens, rms, 0, True)
    return _fit_descent(basis, target, opts)


def _fit_descent(basis: GhdBasis, target: TriMesh, opts: FitOptions) -> FitResult:
    import torch
    from scipy.spatial import cKDTree

    U = torch.from_numpy(basis.modes)
    faces = torch.from_numpy(basis.canonical.faces)
    tv = target.vertices
    tn = vertex_normals(target)
    tgt = torch.from_numpy(tv)
    tgt_n = torch.from_numpy(tn)
    bbox_diag = float(np.linalg.norm(tv.max(axis=0) - tv.min(axis=0)))
    lr = opts.lr if opts.lr is not None else 1e-2 * bbox_diag

    # init: canonical shape rescaled/centered onto the target
    cv = basis.canonical.vertices
    c_diag = float(np.linalg.norm(cv.max(axis=0) - cv.min(axis=0)))
    v0 = (cv - cv.mean(axis=0)) * (bbox_diag / c_diag) + tv.mean(axis=0)
    tokens = torch.tensor(basis.modes.T @ v0, requires_grad=True)

    optim = torch.optim.Adam([tokens], lr=lr)
    tree_t = cKDTree(tv)
    prev_loss = None
    best = None
    rising = 0
    iters = 0
    converged = False

    for iters in range(1, opts.max_iters + 1):
        with torch.no_grad():
            v_now = (U @ tokens).numpy()
        # nearest-neighbor matches are frozen per iteration
        _, idx_vt = tree_t.query(v_now)
        _, idx_tv = cKDTree(v_now).query(tv)
        idx_vt_t = torch.from_numpy(idx_vt)
        idx_tv_t = torch.from_numpy(idx_tv)

        optim.zero_grad()
        v = U @ tokens
        d_vt = ((v - tgt[idx_vt_t]) ** 2).sum(dim=1)
        d_tv = ((tgt - v[idx_tv_t]) ** 2).sum(dim=1)
        chamfer = d_vt.mean() + d_tv.mean()
        normals = _torch_vertex_normals(v, faces)
        n_term = (1.0 - (normals * tgt_n[idx_vt_t]).sum(dim=1)).mean()
        loss = chamfer + opts.normal_weight * bbox_diag**2 * n_term
        loss.backward()
        optim.step()

        cur = float(loss.detach())
        if best is None or cur < best[0]:
            best = (cur, tokens.detach().clone(), float(chamfer.detach()))
        if prev_loss is not None:
            if cur > prev_loss:
                rising += 1
                if rising >= opts.divergence_window:
                    raise NumericalError(
                        f"token fit diverging: loss rose {rising} consecutive steps "
                        f"(iteration {iters}, loss {cur:.3e})"
                    )
            else:
                rising = 0
            if abs(prev_loss - cur) < opts.tol * max(abs(prev_loss), 1e-30):
                converged = True
                break
        prev_loss = cur

    _, best_tokens, best_chamfer = best
    rms = float(np.sqrt(0.5 * best_chamfer))
    return FitResult(best_tokens.numpy(), rms, iters, converged)


def _torch_vertex_normals(v, faces):
    import torch

    fv = v[faces]
    cross = torch.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0], dim=1)
    acc = torch.zeros_like(v)
    for c in range(3):
        acc = acc.index_add(0, faces[:, c], cross)
    return acc / acc.norm(dim=1, keepdim=True).clamp_min(1e-30)


# -- binary cache --------------------------------------------------------------
# header JSON line {N, n, canonical_sha256} + little-endian f64 eigenvalues
# + column-major f64 mode matrix


def canonical_checksum(mesh: TriMesh) -> str:
    return hashlib.sha256(obj_dumps(mesh).encode()).hexdigest()


def save_basis(path, basis: GhdBasis) -> None:
    header = {
        "N": basis.n_vertices,
        "n": basis.n_modes,
        "canonical_sha256": canonical_checksum(basis.canonical),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(np.asfortranarray(basis.modes.astype("<f8")).tobytes(order="F"))


def load_basis(path, canonical: TriMesh) -> GhdBasis:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValidationError(f"{path}: missing header line")
    header = json.loads(raw[:nl])
    N, n = int(header["N"]), int(header["n"])
    if header.get("canonical_sha256") != canonical_checksum(canonical):
        raise ValidationError(f"{path}: canonical mesh checksum mismatch")
    if N != canonical.n_vertices:
        raise ValidationError(f"{path}: header N={N} != canonical vertex count")
    body = raw[nl + 1 :]
    expected = 8 * n + 8 * N * n
    if len(body) != expected:
        raise ValidationError(f"{path}: body is {len(body)} bytes, expected {expected}")
    evals = np.frombuffer(body[: 8 * n], dtype="<f8").copy()
    modes = (
        np.frombuffer(body[8 * n :], dtype="<f8").reshape((N, n), order="F").copy()
    )
    return GhdBasis(canonical, modes, evals)
