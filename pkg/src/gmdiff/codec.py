"""Fixed Gaussian-mixture codec between category sequences and latent vectors.

Encoding draws each position s of a sequence from N(mu_{x_s}, sigma^2 I);
decoding inverts it with Bayes' rule under a uniform prior over categories.
Category sequences are plain int arrays of shape (S,) (or (N, S) for
datasets); latent sequences are float arrays of shape (S, d).
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import PackingResult

__all__ = [
    "Alphabet",
    "encode",
    "decode_probs",
    "decode_map",
    "load_alphabet",
    "save_alphabet",
    "load_dataset",
    "save_dataset",
]


class Alphabet:
    """Ordered category tokens; list position is the category index."""

    def __init__(self, symbols: Sequence[str]):
        symbols = [str(s) for s in symbols]
        if not symbols:
            raise ValueError("alphabet is empty")
        for s in symbols:
            if not s or any(c.isspace() for c in s):
                raise ValueError(f"invalid token {s!r}: empty or contains whitespace")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet contains duplicate tokens")
        self.symbols = symbols
        self.lookup = {s: i for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def index(self, token: str) -> int:
        try:
            return self.lookup[token]
        except KeyError:
            raise ValueError(f"token {token!r} not in alphabet") from None

    def token(self, index: int) -> str:
        return self.symbols[index]

    @property
    def width_one(self) -> bool:
        return all(len(s) == 1 for s in self.symbols)

    @classmethod
    def integers(cls, num_categories: int) -> "Alphabet":
        """Default synthetic alphabet: tokens "1".."K" in index order."""
        if num_categories < 1:
            raise ValueError("num_categories must be positive")
        return cls([str(i + 1) for i in range(num_categories)])


def _check_indices(x: np.ndarray, num_categories: int) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("category sequences must be integer arrays")
    if x.size == 0:
        raise ValueError("category sequence is empty")
    if x.min() < 0 or x.max() >= num_categories:
        raise ValueError(f"category index out of range [0, {num_categories})")
    return x


def encode(
    x: np.ndarray,
    pack: PackingResult,
    rng: np.random.Generator,
    sigma: float | None = None,
) -> np.ndarray:
    """Draw a latent sequence: row s ~ N(mu_{x_s}, sigma^2 I).

    ``sigma`` overrides the packing's derived value (0 gives the means
    exactly).
    """
    x = _check_indices(x, pack.num_categories)
    s = pack.sigma if sigma is None else float(sigma)
    if s < 0.0:
        raise ValueError("sigma must be non-negative")
    z = pack.means[x]
    if s > 0.0:
        z = z + s * rng.standard_normal(z.shape)
    return z


def decode_probs(
    z: np.ndarray,
    pack: PackingResult,
    sigma: float | None = None,
) -> np.ndarray:
    """Posterior category probabilities per position under a uniform prior.

    Row s, k is N(z_s; mu_k, sigma^2 I) / sum_j N(z_s; mu_j, sigma^2 I),
    evaluated through log-density differences so that rows stay finite even
    when every mean is tens of sigmas away.  Accepts (..., d) input and
    returns (..., K).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != pack.latent_dim:
        raise ValueError(
            f"latent dim mismatch: got {z.shape[-1]}, packing has {pack.latent_dim}"
        )
    if not np.isfinite(z).all():
        raise ValueError("latent values must be finite")
    s = pack.sigma if sigma is None else float(sigma)
    if s <= 0.0:
        raise ValueError("decoding needs sigma > 0")
    diff = z[..., None, :] - pack.means  # (..., K, d)
    logits = -np.einsum("...kd,...kd->...k", diff, diff) / (2.0 * s * s)
    logits -= logits.max(axis=-1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs


def decode_map(
    z: np.ndarray,
    pack: PackingResult,
    sigma: float | None = None,
) -> np.ndarray:
    """Per-position argmax of :func:`decode_probs`; ties go to the lowest index."""
    return np.argmax(decode_probs(z, pack, sigma=sigma), axis=-1)


# ---------------------------------------------------------------------------
# dataset / alphabet text files

def save_alphabet(path: str | Path, alphabet: Alphabet) -> None:
    Path(path).write_text("\n".join(alphabet.symbols) + "\n")


def load_alphabet(path: str | Path) -> Alphabet:
    lines = [line.strip() for line in Path(path).read_text().splitlines()]
    return Alphabet([line for line in lines if line])


def save_dataset(path: str | Path, sequences: np.ndarray, alphabet: Alphabet) -> None:
    """One sequence per line, tokens separated by single spaces."""
    seqs = _check_indices(np.atleast_2d(np.asarray(sequences)), len(alphabet))
    with open(path, "w") as fh:
        for row in seqs:
            fh.write(" ".join(alphabet.symbols[i] for i in row))
            fh.write("\n")


def _parse_line(line: str, alphabet: Alphabet) -> list[int]:
    if " " in line:
        tokens: Iterable[str] = line.split(" ")
    elif len(line) > 1 and alphabet.width_one:
        tokens = line  # width-1 alphabets may omit separators
    else:
        tokens = [line]
    return [alphabet.index(tok) for tok in tokens]


def load_dataset(path: str | Path, alphabet: Alphabet) -> np.ndarray:
    """Read a dataset file; returns an int array of shape (N, S)."""
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rows.append(_parse_line(line, alphabet))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"dataset {path} is empty")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"dataset {path} mixes sequence lengths {sorted(lengths)}")
    return np.asarray(rows, dtype=np.int64)
