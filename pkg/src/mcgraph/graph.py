"""Per-criterion bipartite views and their normalized adjacency matrices.

Each rating criterion induces its own user-item graph: an N x M incidence
holding the criterion's scores as edge weights, a symmetric (N+M) x (N+M)
block extension of it, and a degree-normalized form of that extension. All
matrices are kept sparse; (N+M)^2 dense storage is only for small oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import RatingDataset


@dataclass(frozen=True)
class CriterionView:
    """One criterion's graph: incidence, block extension, degrees, normalization."""

    criterion_index: int  # 1-based
    num_users: int
    num_items: int
    incidence: sp.csr_matrix           # N x M, entry = criterion rating, 0 if unrated
    extended: sp.csr_matrix            # (N+M) x (N+M) block form [[0, B], [B^T, 0]]
    degrees: np.ndarray                # weighted degree per node, length N+M
    adjacency: sp.csr_matrix           # normalized extension

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def neighbor_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Edges of the normalized adjacency as (center, neighbor) index arrays.

        Row-major with sorted columns, so the order is deterministic. Item
        nodes are offset by num_users.
        """
        coo = self.adjacency.tocoo()
        return coo.row.astype(np.intp), coo.col.astype(np.intp)


def extend_adjacency(incidence) -> sp.csr_matrix:
    """Embed an N x M incidence into the symmetric block matrix [[0, B], [B^T, 0]]."""
    b = sp.csr_matrix(incidence)
    n, m = b.shape
    out = sp.bmat([[None, b], [b.T, None]], format="csr")
    if out is None:  # scipy returns None-free bmat only for nonempty blocks
        out = sp.csr_matrix((n + m, n + m))
    out.sort_indices()
    return out


def normalize_adjacency(extended) -> sp.csr_matrix:
    """Symmetrically rescale by degrees: (D^-1 A + A D^-1) / 2.

    D_ii is the weighted row sum. Zero-degree rows use 1/0 := 0, which keeps
    isolated nodes' rows and columns all-zero instead of adding self-loops.
    """
    a = sp.csr_matrix(extended, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if a.nnz and a.data.min() < 0:
        raise ValueError("adjacency entries must be nonnegative")
    degrees = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, degrees, out=np.zeros_like(degrees), where=degrees > 0)
    d_inv = sp.diags(inv)
    out = ((d_inv @ a) + (a @ d_inv)) * 0.5
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


def degree_vector(extended) -> np.ndarray:
    return np.asarray(sp.csr_matrix(extended).sum(axis=1)).ravel()


def build_views(train: RatingDataset) -> list[CriterionView]:
    """One CriterionView per criterion; zero criterion scores leave no edge."""
    if len(train.records) == 0:
        raise ValueError("cannot build graph views from an empty dataset")
    n, m = train.num_users, train.num_items
    rows = np.array([train.user_index[r.user_id] for r in train.records], dtype=np.intp)
    cols = np.array([train.item_index[r.item_id] for r in train.records], dtype=np.intp)

    views = []
    for c in range(train.num_criteria):
        weights = np.array([r.criteria[c] for r in train.records], dtype=np.float64)
        present = weights != 0.0
        incidence = sp.csr_matrix(
            (weights[present], (rows[present], cols[present])), shape=(n, m))
        incidence.sort_indices()
        extended = extend_adjacency(incidence)
        views.append(CriterionView(
            criterion_index=c + 1,
            num_users=n,
            num_items=m,
            incidence=incidence,
            extended=extended,
            degrees=degree_vector(extended),
            adjacency=normalize_adjacency(extended),
        ))
    return views


def save_view_coordinates(view: CriterionView, path: str | Path) -> None:
    """Dump the normalized adjacency as `row col value` lines (debug aid)."""
    coo = view.adjacency.tocoo()
    with Path(path).open("w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
