"""Synthetic CoNLL-U corpora for scale and smoke testing."""

from __future__ import annotations

import numpy as np

from .grammars import UD_RELATIONS

_LABELS = [r for r in UD_RELATIONS if r != "punct"]


def write_synthetic_conllu(path, n_words: int, seed: int = 0, vocab_size: int = 5000,
                           sentences_per_doc: tuple[int, int] = (3, 12), sentence_len: tuple[int, int] = (4, 30)) -> int:
    """Write random dependency trees with Zipfian word forms until ``n_words`` tokens are emitted.

    Every sentence ends with a punct token attached to the root. Returns the token count.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    ranks = np.arange(1, vocab_size + 1)
    p = 1.0 / ranks
    p /= p.sum()
    written = 0
    doc = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        while written < n_words:
            f.write(f"# newdoc id = syn{doc:07d}\n")
            doc += 1
            for _ in range(int(rng.integers(*sentences_per_doc, endpoint=True))):
                n = int(rng.integers(*sentence_len, endpoint=True))
                words = rng.choice(vocab_size, size=n, p=p)
                labels = rng.integers(len(_LABELS), size=n)
                root = int(rng.integers(n)) + 1
                heads = {root: 0}
                # attach outward from the root to an already placed word within 4 positions;
                # the neighbour on the root side is always placed, so a candidate exists
                for i in sorted(range(1, n + 1), key=lambda j: (abs(j - root), j)):
                    if i == root:
                        continue
                    cands = [j for j in range(i - 4, i + 5) if j in heads]
                    heads[i] = cands[int(rng.integers(len(cands)))]
                lines = []
                for i in range(1, n + 1):
                    head = heads[i]
                    rel = "root" if head == 0 else _LABELS[labels[i - 1]]
                    lines.append(f"{i}\tw{words[i - 1]}\t_\tX\t_\t_\t{head}\t{rel}\t_\t_")
                lines.append(f"{n + 1}\t.\t_\tPUNCT\t_\t_\t{root}\tpunct\t_\t_")
                f.write("\n".join(lines) + "\n\n")
                written += n + 1
    return written
