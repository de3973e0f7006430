"""Block-structured LMI problems.

A problem is a vector of real scalars ``x`` (laid out by a
:class:`VariableLayout`) and a list of :class:`AffineBlock` constraints
``G(x) = C + sum_i x_i B_i`` each required to be positive semidefinite
(``sign="psd"``) or negative definite (``sign="nd"``).

:class:`AffineExpr` is a small dense helper used to write constraint blocks
in matrix notation (``Y1 @ F + F.T @ Y1`` and so on) before they are frozen
into :class:`AffineBlock` objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix_core import symmetrize

KINDS = ("diagonal_positive", "symmetric_free", "full_free")
SIGNS = ("psd", "nd")


@dataclass(frozen=True)
class VariableBlock:
    name: str
    kind: str
    dim: int

    @property
    def size(self) -> int:
        if self.kind == "diagonal_positive":
            return self.dim
        if self.kind == "symmetric_free":
            return self.dim * (self.dim + 1) // 2
        return self.dim * self.dim

    def unit_matrices(self):
        """Yield ``(local_index, E)`` where ``E`` is the matrix a unit scalar contributes."""
        n = self.dim
        if self.kind == "diagonal_positive":
            for i in range(n):
                E = np.zeros((n, n))
                E[i, i] = 1.0
                yield i, E
        elif self.kind == "symmetric_free":
            k = 0
            for i in range(n):
                for j in range(i, n):
                    E = np.zeros((n, n))
                    E[i, j] = E[j, i] = 1.0
                    yield k, E
                    k += 1
        else:
            for i in range(n):
                for j in range(n):
                    E = np.zeros((n, n))
                    E[i, j] = 1.0
                    yield i * n + j, E


class VariableLayout:
    """Ordered list of named matrix variables flattened into one scalar vector."""

    def __init__(self, blocks=()):
        self.blocks: list[VariableBlock] = []
        self._offsets: dict[str, int] = {}
        self.total_scalars = 0
        for b in blocks:
            if isinstance(b, VariableBlock):
                b = (b.name, b.kind, b.dim)
            self.add(*b)

    def add(self, name: str, kind: str, dim: int) -> VariableBlock:
        if kind not in KINDS:
            raise ValueError(f"unknown variable kind {kind!r}")
        if name in self._offsets:
            raise ValueError(f"duplicate variable name {name!r}")
        if dim < 1:
            raise ValueError("variable dim must be >= 1")
        block = VariableBlock(name, kind, int(dim))
        self.blocks.append(block)
        self._offsets[name] = self.total_scalars
        self.total_scalars += block.size
        return block

    def __getitem__(self, name: str) -> VariableBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def offset(self, name: str) -> int:
        return self._offsets[name]

    def positive_indices(self) -> np.ndarray:
        """Scalar indices that must be strictly positive (diagonal_positive entries)."""
        idx = [self._offsets[b.name] + i for b in self.blocks if b.kind == "diagonal_positive" for i in range(b.dim)]
        return np.array(idx, dtype=int)

    def expr(self, name: str) -> "AffineExpr":
        """The matrix variable ``name`` as an affine expression in the full scalar vector."""
        block = self[name]
        off = self._offsets[name]
        coeffs = np.zeros((self.total_scalars, block.dim, block.dim))
        for k, E in block.unit_matrices():
            coeffs[off + k] = E
        return AffineExpr(np.zeros((block.dim, block.dim)), coeffs)

    def value(self, name: str, point) -> np.ndarray:
        """Reconstruct the matrix variable ``name`` from a scalar point."""
        return self.expr(name).evaluate(point)

    def __repr__(self):
        inner = ", ".join(f"{b.name}:{b.kind}[{b.dim}]" for b in self.blocks)
        return f"VariableLayout({inner}; total_scalars={self.total_scalars})"


class AffineExpr:
    """Dense matrix-valued affine function ``const + sum_i x_i coeffs[i]``."""

    __array_priority__ = 100

    def __init__(self, const, coeffs):
        self.const = np.asarray(const, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)

    @classmethod
    def constant(cls, value, m: int) -> "AffineExpr":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(value, np.zeros((m,) + value.shape))

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def shape(self):
        return self.const.shape

    def _lift(self, other) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            return other
        return AffineExpr.constant(other, self.m)

    def __add__(self, other):
        other = self._lift(other)
        return AffineExpr(self.const + other.const, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr(-self.const, -self.coeffs)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, c):
        c = float(c)
        return AffineExpr(c * self.const, c * self.coeffs)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, AffineExpr):
            raise TypeError("product of two affine expressions is not affine")
        B = np.asarray(other, dtype=float)
        return AffineExpr(self.const @ B, self.coeffs @ B)

    def __rmatmul__(self, other):
        B = np.asarray(other, dtype=float)
        return AffineExpr(B @ self.const, np.einsum("ij,mjk->mik", B, self.coeffs))

    @property
    def T(self):
        return AffineExpr(self.const.T, np.transpose(self.coeffs, (0, 2, 1)))

    def sym(self) -> "AffineExpr":
        """Symmetric part ``(E + E^T) / 2``."""
        return 0.5 * (self + self.T)

    def entry(self, i: int, j: int) -> "AffineExpr":
        return AffineExpr(self.const[i : i + 1, j : j + 1], self.coeffs[:, i : i + 1, j : j + 1])

    def evaluate(self, point) -> np.ndarray:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"point has length {x.size}, expected {self.m}")
        return self.const + np.tensordot(x, self.coeffs, axes=1)

    @staticmethod
    def bmat(rows) -> "AffineExpr":
        """Assemble a block matrix from a nested list of expressions / arrays."""
        m = next(e.m for row in rows for e in row if isinstance(e, AffineExpr))
        lifted = [[e if isinstance(e, AffineExpr) else AffineExpr.constant(e, m) for e in row] for row in rows]
        const = np.block([[e.const for e in row] for row in lifted])
        coeffs = np.concatenate([np.concatenate([e.coeffs for e in row], axis=2) for row in lifted], axis=1)
        return AffineExpr(const, coeffs)


@dataclass(frozen=True)
class AffineBlock:
    """One LMI constraint ``constant + sum point[i] * basis_i`` (psd: >= 0, nd: < 0)."""

    constant: np.ndarray
    terms: tuple = ()
    sign: str = "psd"
    name: str = ""

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    @classmethod
    def from_expr(cls, expr: AffineExpr, sign: str = "psd", name: str = "", drop_tol: float = 0.0) -> "AffineBlock":
        if sign not in SIGNS:
            raise ValueError(f"sign must be one of {SIGNS}, got {sign!r}")
        expr = expr.sym()
        terms = tuple(
            (i, expr.coeffs[i].copy()) for i in range(expr.m) if np.max(np.abs(expr.coeffs[i]), initial=0.0) > drop_tol
        )
        return cls(expr.const.copy(), terms, sign, name)

    def coefficient_tensor(self, m: int) -> np.ndarray:
        """Dense ``(m, dim, dim)`` stack of bases (zeros for absent scalars)."""
        out = np.zeros((m, self.dim, self.dim))
        for i, B in self.terms:
            out[i] += B
        return out


def evaluate_block(block: AffineBlock, point) -> np.ndarray:
    """``constant + sum point[i] * basis_i``, symmetrized."""
    x = np.asarray(point, dtype=float)
    if x.ndim != 1:
        raise ValueError("point must be a 1-D vector")
    out = np.array(block.constant, dtype=float)
    for i, B in block.terms:
        if i >= x.size:
            raise ValueError(f"point has length {x.size} but block references scalar {i}")
        out = out + x[i] * B
    return symmetrize(out)


@dataclass
class LmiProblem:
    layout: VariableLayout
    constraints: list = field(default_factory=list)
    objective: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.layout.total_scalars

    def add(self, expr: AffineExpr, sign: str = "psd", name: str = "") -> AffineBlock:
        block = AffineBlock.from_expr(expr, sign, name)
        self.constraints.append(block)
        return block

    def evaluate(self, point) -> list[np.ndarray]:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"point has length {x.size}, expected {self.m}")
        return [evaluate_block(b, x) for b in self.constraints]

    def block_dims(self) -> list[int]:
        return [b.dim for b in self.constraints]


def validate(problem: LmiProblem) -> list[str]:
    """Human-readable list of structural problems; empty when the problem is well formed."""
    diags = []
    layout = problem.layout
    names = [b.name for b in layout.blocks]
    if len(set(names)) != len(names):
        diags.append("variable names are not unique")
    expected = sum(b.size for b in layout.blocks)
    if expected != layout.total_scalars:
        diags.append(f"total_scalars {layout.total_scalars} != sum of block sizes {expected}")
    m = layout.total_scalars
    for k, block in enumerate(problem.constraints):
        label = block.name or f"#{k}"
        if block.sign not in SIGNS:
            diags.append(f"constraint {label}: unknown sign {block.sign!r}")
        C = np.asarray(block.constant)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            diags.append(f"constraint {label}: constant is not square (shape {C.shape})")
            continue
        for i, B in block.terms:
            if not 0 <= i < m:
                diags.append(f"constraint {label}: term references scalar {i} outside layout (size {m})")
            if np.shape(B) != C.shape:
                diags.append(f"constraint {label}: basis for scalar {i} has shape {np.shape(B)}, block dim is {C.shape[0]}")
    if problem.objective is not None and np.shape(problem.objective) != (m,):
        diags.append(f"objective has shape {np.shape(problem.objective)}, expected ({m},)")
    return diags


def _fmt(v: float) -> str:
    return repr(float(v) + 0.0)  # + 0.0 folds -0.0 into 0.0


def export_sdpa(problem: LmiProblem, strictness_shift: float = 1e-6) -> str:
    """Render ``problem`` as SDPA sparse (.dat-s) text.

    SDPA poses ``min c.x  s.t.  sum_i x_i F_i - F_0 >= 0`` per block. psd
    blocks map directly (``F_0 = -C``); nd blocks are negated and shifted,
    ``-G(x) - shift*I >= 0``. Positive scalars become one diagonal (LP)
    block ``x_i - shift >= 0``, listed last with a negative size.
    """
    m = problem.m
    pos = problem.layout.positive_indices()
    blocks = list(problem.constraints)
    sizes = [b.dim for b in blocks]
    if pos.size:
        sizes.append(-int(pos.size))
    lines = [
        f'" generated by ncs_stability; nd blocks negated, strict inequalities shifted by {_fmt(strictness_shift)}',
        str(m),
        str(len(sizes)),
        " ".join(str(s) for s in sizes) if sizes else "",
    ]
    c = np.zeros(m) if problem.objective is None else -np.asarray(problem.objective, dtype=float)
    lines.append(" ".join(_fmt(v) for v in c))

    entries = []
    for blk_no, block in enumerate(blocks, start=1):
        flip = -1.0 if block.sign == "nd" else 1.0
        F0 = -flip * np.asarray(block.constant, dtype=float)
        if block.sign == "nd":
            F0 = F0 + strictness_shift * np.eye(block.dim)
        mats = [(0, F0)] + [(i + 1, flip * np.asarray(B, dtype=float)) for i, B in sorted(block.terms, key=lambda t: t[0])]
        for matno, Mx in mats:
            Mx = symmetrize(Mx)
            rows, cols = np.nonzero(np.triu(Mx))
            for i, j in zip(rows, cols):
                entries.append((matno, blk_no, i + 1, j + 1, Mx[i, j]))
    if pos.size:
        blk_no = len(blocks) + 1
        for r, idx in enumerate(pos, start=1):
            if strictness_shift:
                entries.append((0, blk_no, r, r, strictness_shift))
            entries.append((int(idx) + 1, blk_no, r, r, 1.0))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    lines.extend(f"{a} {b} {i} {j} {_fmt(v)}" for a, b, i, j, v in entries)
    return "\n".join(lines) + "\n"
