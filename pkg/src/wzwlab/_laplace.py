"""Discrete ``sum_j d_{z_j} d_{zbar_j}`` on a DomainGrid with Dirichlet data."""
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu


def neighbor_table(grid, index):
    """Flat indices of the +/- neighbors of ``index`` along every axis.

    Returns a list of ``(plus, minus)`` arrays, one pair per grid axis.
    Periodic axes wrap; on a one-node periodic axis both neighbors are the
    node itself.
    """
    shape = grid.shape
    multi = np.array(np.unravel_index(index, shape))
    out = []
    for ax, n in enumerate(shape):
        pair = []
        for step in (1, -1):
            mm = multi.copy()
            if grid.periodic[ax]:
                mm[ax] = (mm[ax] + step) % n
            else:
                mm[ax] = mm[ax] + step
            pair.append(np.ravel_multi_index(tuple(mm), shape))
        out.append(tuple(pair))
    return out


def axis_coefficients(grid, index):
    """``|jac_j|^2 / (4 h_a^2)`` for each grid axis at nodes ``index``."""
    jac2 = np.abs(grid.jac.reshape(grid.size, grid.m)[index]) ** 2
    coef = []
    for ax, h in enumerate(grid.spacing):
        coef.append(jac2[:, ax // 2] / (4.0 * h * h))
    return coef


class DomainLaplacian:
    """Sparse operator ``L u = sum_j u_{z_j zbar_j}`` on interior nodes.

    Values on boundary nodes are Dirichlet data. Factorized once; solves
    take any number of real right-hand sides.
    """

    def __init__(self, grid):
        self.grid = grid
        idx = grid.interior_index
        self.index = idx
        n = idx.size
        pos = np.full(grid.size, -1)
        pos[idx] = np.arange(n)
        self._pos = pos
        nb = neighbor_table(grid, idx)
        coef = axis_coefficients(grid, idx)
        rows, cols, vals = [], [], []
        brow, bcol, bval = [], [], []
        diag = np.zeros(n)
        for (plus, minus), c in zip(nb, coef):
            diag -= 2 * c
            for nbr in (plus, minus):
                inside = pos[nbr] >= 0
                rows.append(np.arange(n)[inside])
                cols.append(pos[nbr[inside]])
                vals.append(c[inside])
                brow.append(np.arange(n)[~inside])
                bcol.append(nbr[~inside])
                bval.append(c[~inside])
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        self.matrix = sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        # couples interior rows to (flat) non-interior nodes
        self.coupling = sparse.csr_matrix(
            (np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))),
            shape=(n, grid.size),
        )
        self._lu = splu(self.matrix)

    def solve(self, rhs):
        """Solve ``L u = rhs`` with zero boundary data.

        ``rhs`` has shape (n_interior, ...) and may be complex.
        """
        rhs = np.asarray(rhs)
        tail = rhs.shape[1:]
        flat = rhs.reshape(rhs.shape[0], -1)
        if np.iscomplexobj(flat):
            out = self._lu.solve(np.ascontiguousarray(flat.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(flat.imag))
        else:
            out = self._lu.solve(np.ascontiguousarray(flat))
        return out.reshape((rhs.shape[0],) + tail)

    def extend(self, full, source=None):
        """Solve ``L u = source`` in the interior, keeping ``full`` on the rest.

        ``full`` has shape (grid.size, ...); a modified copy is returned.
        """
        full = np.array(full)
        tail = full.shape[1:]
        flat = full.reshape(full.shape[0], -1)
        rhs = -(self.coupling @ flat)
        if source is not None:
            rhs = rhs + np.asarray(source).reshape(rhs.shape)
        flat[self.index] = self.solve(rhs)
        return flat.reshape((full.shape[0],) + tail)

    def apply(self, full):
        """``L u`` at interior nodes for a full nodal array."""
        flat = full.reshape(full.shape[0], -1)
        out = self.matrix @ flat[self.index] + self.coupling @ flat
        return out.reshape((self.index.size,) + full.shape[1:])
