"""Lowering of a `MixedConstraintSystem` to a QUBO.

Continuous columns are bit-encoded (y = l + T_y z), every kept inequality row gets a bit-encoded slack
(C y + T_s s = d0 + D beta), and the stacked equality system M x = r is penalized:

    E(x) = c.y(x) + offset + (rho / 2) |M x - r|^2 = x^T Q x + q.x + const

with x = [z, s, beta_free]. Selectors fixed to 0 by interval pruning never reach the binary vector.
"""
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import TextIO

import numpy as np

from core.errors import EncodingError
from core.system import MixedConstraintSystem

logger = logging.getLogger(__name__)

# Extra penalty added on top of the resolution-based weight
RHO_MARGIN = 1.0
DEFAULT_RHO = 1.0


@dataclass(frozen=True)
class BitEncoding:
    """Bit layout of the continuous columns and of the slacks.

    `y_owner[k]` is the column bit k encodes with weight `y_weights[k]`; likewise for slacks, whose `s_owner`
    indexes `rows` (the inequality rows that kept a slack).
    """

    lower: np.ndarray
    upper: np.ndarray
    y_owner: np.ndarray
    y_weights: np.ndarray
    rows: np.ndarray
    slack_upper: np.ndarray
    s_owner: np.ndarray
    s_weights: np.ndarray
    beta_columns: np.ndarray
    n_beta: int
    dropped_rows: List[int] = field(default_factory=list)

    @property
    def n_y_bits(self) -> int:
        return len(self.y_weights)

    @property
    def n_s_bits(self) -> int:
        return len(self.s_weights)

    @property
    def p(self) -> int:
        return len(self.beta_columns)

    @property
    def dimension(self) -> int:
        return self.n_y_bits + self.n_s_bits + self.p

    @property
    def resolution(self) -> float:
        """Smallest bit weight over all encoded quantities (1 when nothing is encoded)."""
        weights = np.concatenate([self.y_weights, self.s_weights])
        return float(np.min(weights)) if len(weights) else 1.0

    def T_y(self) -> np.ndarray:
        T = np.zeros((len(self.lower), self.n_y_bits))
        T[self.y_owner, np.arange(self.n_y_bits)] = self.y_weights
        return T

    def T_s(self) -> np.ndarray:
        T = np.zeros((len(self.rows), self.n_s_bits))
        T[self.s_owner, np.arange(self.n_s_bits)] = self.s_weights
        return T

    def spins(self) -> Dict[str, int]:
        return {"y_bits": self.n_y_bits, "slack_bits": self.n_s_bits, "beta": self.p, "total": self.dimension}


def binary_weights(width: float, bits: int) -> np.ndarray:
    """t_k = 2^(k-1) * width / (2^bits - 1), so the bits span [0, width] exactly."""
    if bits <= 0 or width <= 0:
        return np.zeros(0)
    delta = width / (2 ** bits - 1)
    return delta * 2.0 ** np.arange(bits)


def slack_ranges(system: MixedConstraintSystem) -> np.ndarray:
    """(min, max) of d0 + D beta - C y per inequality row over the box and the one-hot selectors."""
    C, D, d0 = system.C, system.D, system.d0
    lo, hi = system.lo, system.hi
    cy_min = np.minimum(C * lo, C * hi).sum(axis=1)
    cy_max = np.maximum(C * lo, C * hi).sum(axis=1)
    fixed = system.fixed_beta
    d_min = np.zeros(len(d0))
    d_max = np.zeros(len(d0))
    for cols in system.one_hot_groups:
        open_cols = cols[~fixed[cols]]
        if not len(open_cols):
            continue
        block = D[:, open_cols]
        d_min += block.min(axis=1)
        d_max += block.max(axis=1)
    return np.stack([d0 + d_min - cy_max, d0 + d_max - cy_min], axis=1)


def make_encoding(system: MixedConstraintSystem, bits_per_var: int, bits_per_slack: int) -> BitEncoding:
    if bits_per_var < 1 or bits_per_slack < 1:
        raise EncodingError(f"bit counts must be >= 1, got {bits_per_var}, {bits_per_slack}")
    lo, hi = system.lo, system.hi
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise EncodingError("every column needs a finite box before bit encoding")

    y_owner: List[int] = []
    y_weights: List[float] = []
    for i, (l, u) in enumerate(zip(lo, hi)):
        w = binary_weights(u - l, bits_per_var)
        y_owner.extend([i] * len(w))
        y_weights.extend(w)

    ranges = slack_ranges(system)
    rows: List[int] = []
    slack_upper: List[float] = []
    s_owner: List[int] = []
    s_weights: List[float] = []
    dropped: List[int] = []
    for j, (r_min, r_max) in enumerate(ranges):
        if r_max < 0:
            raise EncodingError(
                f"inequality row {j} ({system.ineq_kinds[j] if system.ineq_kinds else '?'}) can never hold",
                payload={"row": j, "slack_max": float(r_max)},
            )
        if r_min > 0:
            dropped.append(j)
            continue
        w = binary_weights(r_max, bits_per_slack)
        s_owner.extend([len(rows)] * len(w))
        s_weights.extend(w)
        rows.append(j)
        slack_upper.append(float(r_max))
    if dropped:
        logger.debug(f"dropped {len(dropped)} vacuous inequality rows: {dropped}")

    return BitEncoding(
        lower=lo,
        upper=hi,
        y_owner=np.array(y_owner, dtype=int),
        y_weights=np.array(y_weights, dtype=float),
        rows=np.array(rows, dtype=int),
        slack_upper=np.array(slack_upper, dtype=float),
        s_owner=np.array(s_owner, dtype=int),
        s_weights=np.array(s_weights, dtype=float),
        beta_columns=np.flatnonzero(~system.fixed_beta),
        n_beta=system.n_beta,
        dropped_rows=dropped,
    )


class Decoded(NamedTuple):
    y: np.ndarray
    beta: np.ndarray
    slacks: np.ndarray
    residual: float


@dataclass
class QuboInstance:
    Q: np.ndarray
    q: np.ndarray
    const: float
    rho: float
    encoding: Optional[BitEncoding] = None
    M: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    @property
    def dimension(self) -> int:
        return len(self.q)

    def energy(self, bits: np.ndarray) -> float:
        x = np.asarray(bits, dtype=float)
        return float(x @ self.Q @ x + self.q @ x + self.const)

    def blocks(self) -> Dict[str, np.ndarray]:
        enc = self.encoding
        if enc is None:
            return {}
        a, b = enc.n_y_bits, enc.n_y_bits + enc.n_s_bits
        return {
            "yy": self.Q[:a, :a],
            "ys": self.Q[:a, a:b],
            "yb": self.Q[:a, b:],
            "ss": self.Q[a:b, a:b],
            "sb": self.Q[a:b, b:],
            "bb": self.Q[b:, b:],
        }


def penalty_system(system: MixedConstraintSystem, enc: BitEncoding):
    """(M_eq, r_eq) over x = [z, s, beta_free], built with the generic matrix products."""
    B = system.B[:, enc.beta_columns]
    C = system.C[enc.rows]
    D = system.D[np.ix_(enc.rows, enc.beta_columns)]
    T_y, T_s = enc.T_y(), enc.T_s()
    m_a, m_c = system.A.shape[0], len(enc.rows)
    M = np.block(
        [
            [system.A @ T_y, np.zeros((m_a, enc.n_s_bits)), -B],
            [C @ T_y, T_s, -D],
        ]
    )
    r = np.concatenate([system.b0 - system.A @ enc.lower, system.d0[enc.rows] - C @ enc.lower])
    return M.reshape(m_a + m_c, enc.dimension), r


def assemble(system: MixedConstraintSystem, enc: BitEncoding, rho: float) -> QuboInstance:
    """Closed-form blocks of (rho/2) M^T M and the linear term, built directly from bit owners and weights."""
    if not rho > 0:
        raise EncodingError(f"penalty weight must be > 0, got {rho}")
    A, b0 = system.A, system.b0
    B = system.B[:, enc.beta_columns]
    C = system.C[enc.rows]
    D = system.D[np.ix_(enc.rows, enc.beta_columns)]
    r_a = b0 - A @ enc.lower
    r_c = system.d0[enc.rows] - C @ enc.lower
    oy, wy = enc.y_owner, enc.y_weights
    os_, ws = enc.s_owner, enc.s_weights
    half = 0.5 * rho

    gram = A.T @ A + C.T @ C
    cross = A.T @ B + C.T @ D
    Q_yy = half * gram[np.ix_(oy, oy)] * np.outer(wy, wy)
    Q_ys = half * C[np.ix_(os_, oy)].T * np.outer(wy, ws)
    Q_yb = -half * cross[oy, :] * wy[:, None]
    Q_ss = half * (os_[:, None] == os_[None, :]) * np.outer(ws, ws)
    Q_sb = -half * D[os_, :] * ws[:, None]
    Q_bb = half * (B.T @ B + D.T @ D)
    Q = np.block([[Q_yy, Q_ys, Q_yb], [Q_ys.T, Q_ss, Q_sb], [Q_yb.T, Q_sb.T, Q_bb]])
    Q = Q.reshape(enc.dimension, enc.dimension)

    back = A.T @ r_a + C.T @ r_c
    q = np.concatenate(
        [
            wy * (system.c[oy] - rho * back[oy]),
            -rho * ws * r_c[os_],
            rho * (B.T @ r_a + D.T @ r_c),
        ]
    )
    const = float(system.c @ enc.lower + half * (r_a @ r_a + r_c @ r_c) + system.offset)
    M, r = penalty_system(system, enc)
    instance = QuboInstance(Q=Q, q=q, const=const, rho=rho, encoding=enc, M=M, r=r, c=system.c)
    logger.debug(f"assembled QUBO: {enc.spins()} rho={rho:.4g}")
    return instance


def decode(instance: QuboInstance, bits: np.ndarray) -> Decoded:
    enc = instance.encoding
    if enc is None:
        raise EncodingError("this QUBO carries no bit encoding, it cannot be decoded")
    x = np.asarray(bits, dtype=float)
    if x.shape != (enc.dimension,):
        raise EncodingError(f"expected {enc.dimension} bits, got {x.shape}")
    a, b = enc.n_y_bits, enc.n_y_bits + enc.n_s_bits
    y = enc.lower + enc.T_y() @ x[:a]
    slacks = enc.T_s() @ x[a:b]
    beta = np.zeros(enc.n_beta)
    beta[enc.beta_columns] = x[b:]
    residual = float(np.max(np.abs(instance.M @ x - instance.r), initial=0.0))
    return Decoded(y=y, beta=beta, slacks=slacks, residual=residual)


def choose_rho(system: MixedConstraintSystem, enc: BitEncoding) -> float:
    """rho = 2 |c|_1 * (max column range) / delta^2 + margin, delta being the finest bit resolution.

    One resolution step of violation on any row then costs more than the whole objective range can gain.
    """
    spread = float(np.max(enc.upper - enc.lower, initial=0.0))
    objective_range = float(np.sum(np.abs(system.c))) * spread
    if objective_range == 0.0:
        return DEFAULT_RHO
    delta = enc.resolution
    return 2.0 * objective_range / delta ** 2 + RHO_MARGIN


def spin_count(system: MixedConstraintSystem, bits_per_var: int, bits_per_slack: int) -> int:
    return make_encoding(system, bits_per_var, bits_per_slack).dimension


def dump_qubo(instance: QuboInstance, f: TextIO) -> None:
    """Upper-triangular coordinate list with the linear term folded onto the diagonal (x_i^2 = x_i)."""
    n = instance.dimension
    f.write(f"# dimension {n}\n")
    f.write(f"# offset {float(instance.const)!r}\n")
    f.write(f"# rho {float(instance.rho)!r}\n")
    upper = np.triu(instance.Q + instance.Q.T) - np.diag(np.diag(instance.Q))
    upper[np.diag_indices(n)] += instance.q
    for i, j in zip(*np.nonzero(upper)):
        f.write(f"{i} {j} {float(upper[i, j])!r}\n")


def load_qubo(f: TextIO) -> QuboInstance:
    header: Dict[str, float] = {}
    entries = []
    for lineno, raw in enumerate(f, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2:
                header[parts[0]] = float(parts[1])
            continue
        try:
            i, j, v = line.split()
            entries.append((int(i), int(j), float(v)))
        except ValueError:
            raise EncodingError(f"line {lineno}: expected 'i j value', got {line!r}", payload={"line": lineno})
    if "dimension" not in header:
        raise EncodingError("QUBO file has no '# dimension' header")
    n = int(header["dimension"])
    Q = np.zeros((n, n))
    for i, j, v in entries:
        if not (0 <= i <= j < n):
            raise EncodingError(f"entry ({i}, {j}) outside the upper triangle of a {n}x{n} matrix")
        if i == j:
            Q[i, i] += v
        else:
            Q[i, j] += 0.5 * v
            Q[j, i] += 0.5 * v
    return QuboInstance(Q=Q, q=np.zeros(n), const=header.get("offset", 0.0), rho=header.get("rho", DEFAULT_RHO))


def instance_to_dict(instance: QuboInstance) -> Dict[str, Any]:
    enc = instance.encoding
    return {
        "dimension": instance.dimension,
        "rho": instance.rho,
        "offset": instance.const,
        "spins": enc.spins() if enc is not None else {"total": instance.dimension},
    }
