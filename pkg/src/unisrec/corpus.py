"""Corpus data model: embedding tables, interaction sequences, preprocessing,
leave-one-out splitting, and a synthetic multi-domain corpus generator."""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorpusFormatError,
    InvalidSpecError,
    MissingEmbeddingError,
)
from .rng import RngStreams, STREAM_SYNTH

log = logging.getLogger("unisrec")

EMB_MAGIC = b"UEMB"
EMB_VERSION = 1


@dataclass(frozen=True)
class ItemRef:
    token: str
    domain: str
    row: int
    aug_row: int | None = None

    @property
    def key(self):
        return (self.domain, self.token)


@dataclass
class EmbeddingTable:
    dim: int
    rows: np.ndarray  # (n_rows, dim) float32
    index: dict  # (domain, token) -> ItemRef

    def lookup(self, domain, token) -> ItemRef:
        ref = self.index.get((domain, token))
        if ref is None:
            raise MissingEmbeddingError(f"no embedding for ({domain!r}, {token!r})")
        return ref

    def vector(self, ref: ItemRef) -> np.ndarray:
        return self.rows[ref.row]

    def aug_vector(self, ref: ItemRef) -> np.ndarray:
        if ref.aug_row is None:
            log.warning("item (%s, %s) has no augmented row; using original", ref.domain, ref.token)
            return self.rows[ref.row]
        return self.rows[ref.aug_row]

    def domains(self):
        return sorted({d for d, _ in self.index})

    def items_in_domain(self, domain):
        return sorted(
            (ref for ref in self.index.values() if ref.domain == domain),
            key=lambda r: r.token,
        )


@dataclass
class InteractionSequence:
    user: str
    domain: str
    items: list  # list[ItemRef]
    timestamps: list  # list[int], non-decreasing

    def __len__(self):
        return len(self.items)


@dataclass
class EvalInstance:
    user: str
    domain: str
    context: list  # list[ItemRef], strictly before the target
    target: ItemRef


@dataclass
class SplitCorpus:
    train: list  # list[InteractionSequence] (training prefixes)
    valid: list  # list[EvalInstance]
    test: list  # list[EvalInstance]


# -- file formats -------------------------------------------------------


def write_embedding_table(table: EmbeddingTable, index_path, matrix_path):
    n_rows, dim = table.rows.shape
    with open(matrix_path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<III", EMB_VERSION, n_rows, dim))
        f.write(np.ascontiguousarray(table.rows, dtype="<f4").tobytes())
    with open(index_path, "w", encoding="utf-8") as f:
        f.write("domain\ttoken\trow\taug_row\n")
        for (domain, token), ref in sorted(table.index.items()):
            aug = "" if ref.aug_row is None else str(ref.aug_row)
            f.write(f"{domain}\t{token}\t{ref.row}\t{aug}\n")


def load_embedding_table(index_path, matrix_path) -> EmbeddingTable:
    with open(matrix_path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != EMB_MAGIC:
            raise CorpusFormatError(f"{matrix_path}: bad magic/header")
        version, n_rows, dim = struct.unpack("<III", header[4:])
        if version != EMB_VERSION:
            raise CorpusFormatError(f"{matrix_path}: unsupported version {version}")
        if dim == 0:
            raise CorpusFormatError(f"{matrix_path}: zero embedding dim")
        payload = f.read()
    expected = n_rows * dim * 4
    if len(payload) != expected:
        raise CorpusFormatError(
            f"{matrix_path}: payload is {len(payload)} bytes, expected {expected}"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(n_rows, dim).copy()
    if np.isnan(rows).any():
        raise CorpusFormatError(f"{matrix_path}: NaN entries in embedding matrix")

    index = {}
    with open(index_path, encoding="utf-8") as f:
        header_line = f.readline().rstrip("\n")
        if header_line.split("\t") != ["domain", "token", "row", "aug_row"]:
            raise CorpusFormatError(f"{index_path}: bad header {header_line!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusFormatError(f"{index_path}:{lineno}: expected 4 fields")
            domain, token, row_s, aug_s = parts
            try:
                row = int(row_s)
                aug_row = int(aug_s) if aug_s else None
            except ValueError as e:
                raise CorpusFormatError(f"{index_path}:{lineno}: {e}") from None
            if row >= n_rows or row < 0 or (aug_row is not None and not 0 <= aug_row < n_rows):
                raise CorpusFormatError(
                    f"{index_path}:{lineno}: row index out of range (matrix has {n_rows} rows)"
                )
            key = (domain, token)
            if key in index:
                raise CorpusFormatError(f"{index_path}:{lineno}: duplicate key {key}")
            index[key] = ItemRef(token=token, domain=domain, row=row, aug_row=aug_row)
    return EmbeddingTable(dim=dim, rows=rows, index=index)


def write_interactions(sequences, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("user\tdomain\ttoken\ttimestamp\n")
        for seq in sequences:
            for ref, ts in zip(seq.items, seq.timestamps):
                f.write(f"{seq.user}\t{seq.domain}\t{ref.token}\t{ts}\n")


def load_interactions(path, table: EmbeddingTable):
    """One sequence per (user, domain); rows sorted by timestamp, stable."""
    rows = []
    with open(path, encoding="utf-8") as f:
        header_line = f.readline().rstrip("\n")
        if header_line.split("\t") != ["user", "domain", "token", "timestamp"]:
            raise CorpusFormatError(f"{path}: bad header {header_line!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 fields")
            user, domain, token, ts_s = parts
            try:
                ts = int(ts_s)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: bad timestamp {ts_s!r}") from None
            ref = table.index.get((domain, token))
            if ref is None:
                raise MissingEmbeddingError(
                    f"{path}:{lineno}: unknown item ({domain!r}, {token!r})"
                )
            rows.append((user, domain, ref, ts))

    grouped = {}
    for user, domain, ref, ts in rows:
        grouped.setdefault((user, domain), []).append((ts, ref))
    sequences = []
    for (user, domain), entries in grouped.items():
        entries.sort(key=lambda e: e[0])  # stable: file order breaks timestamp ties
        sequences.append(
            InteractionSequence(
                user=user,
                domain=domain,
                items=[r for _, r in entries],
                timestamps=[t for t, _ in entries],
            )
        )
    sequences.sort(key=lambda s: (s.domain, s.user))
    return sequences


# -- preprocessing ------------------------------------------------------


def five_core_filter(sequences, min_count=5):
    """Alternately drop users and items with < min_count interactions until fixpoint."""
    seqs = [
        InteractionSequence(s.user, s.domain, list(s.items), list(s.timestamps))
        for s in sequences
    ]
    while True:
        changed = False
        item_counts = {}
        for s in seqs:
            for ref in s.items:
                item_counts[ref.key] = item_counts.get(ref.key, 0) + 1
        bad_items = {k for k, c in item_counts.items() if c < min_count}
        if bad_items:
            for s in seqs:
                kept = [(r, t) for r, t in zip(s.items, s.timestamps) if r.key not in bad_items]
                if len(kept) != len(s.items):
                    changed = True
                    s.items = [r for r, _ in kept]
                    s.timestamps = [t for _, t in kept]
        before = len(seqs)
        seqs = [s for s in seqs if len(s.items) >= min_count]
        if len(seqs) != before:
            changed = True
        if not changed:
            break
    if not seqs:
        log.warning("five-core filter produced an empty corpus")
    return seqs


def leave_one_out_split(sequences, min_len=3) -> SplitCorpus:
    """Last item -> test target, second-to-last -> validation target."""
    train, valid, test = [], [], []
    for s in sequences:
        if len(s) < min_len:
            train.append(s)
            continue
        prefix = InteractionSequence(s.user, s.domain, s.items[:-2], s.timestamps[:-2])
        train.append(prefix)
        valid.append(EvalInstance(s.user, s.domain, s.items[:-2], s.items[-2]))
        test.append(EvalInstance(s.user, s.domain, s.items[:-1], s.items[-1]))
    return SplitCorpus(train=train, valid=valid, test=test)


# -- synthetic corpus ---------------------------------------------------


@dataclass
class SyntheticSpec:
    domains: int = 4
    items_per_domain: int = 1000
    users_per_domain: int = 2000
    topics: int = 8
    dim: int = 24
    self_loop: float = 0.6
    seq_len_min: int = 8
    seq_len_max: int = 16
    centroid_std: float = 1.0
    noise_std: float = 0.25
    seed: int = 0

    _INT_KEYS = ("domains", "items_per_domain", "users_per_domain", "topics",
                 "dim", "seq_len_min", "seq_len_max", "seed")
    _FLOAT_KEYS = ("self_loop", "centroid_std", "noise_std")

    @classmethod
    def parse(cls, path) -> "SyntheticSpec":
        spec = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InvalidSpecError(f"{path}:{lineno}: expected key=value")
                key, value = (p.strip() for p in line.split("=", 1))
                if key in cls._INT_KEYS:
                    setattr(spec, key, int(value))
                elif key in cls._FLOAT_KEYS:
                    setattr(spec, key, float(value))
                else:
                    raise InvalidSpecError(f"{path}:{lineno}: unknown key {key!r}")
        spec.validate()
        return spec

    def validate(self):
        if self.domains < 1 or self.items_per_domain < 1 or self.users_per_domain < 1:
            raise InvalidSpecError("domains, items_per_domain, users_per_domain must be >= 1")
        if self.topics < 1 or self.topics > self.items_per_domain:
            raise InvalidSpecError("topics must be in [1, items_per_domain]")
        if not 0.0 <= self.self_loop <= 1.0:
            raise InvalidSpecError("self_loop must be in [0, 1]")
        if self.seq_len_min < 1 or self.seq_len_max < self.seq_len_min:
            raise InvalidSpecError("bad sequence-length range")
        if self.dim < 1:
            raise InvalidSpecError("dim must be >= 1")

    def transition_matrix(self) -> np.ndarray:
        t = self.topics
        if t == 1:
            return np.ones((1, 1))
        off = (1.0 - self.self_loop) / (t - 1)
        m = np.full((t, t), off)
        np.fill_diagonal(m, self.self_loop)
        return m


def check_row_stochastic(m, tol=1e-9):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidSpecError("transition matrix must be square")
    if (m < -tol).any() or np.abs(m.sum(axis=1) - 1.0).max() > 1e-6:
        raise InvalidSpecError("transition matrix rows must be nonnegative and sum to 1")


def generate_synthetic_corpus(spec: SyntheticSpec, seed=None, transition=None):
    """Multi-domain corpus with a shared topic-level Markov chain.

    Topic centroids are shared across domains while item vocabularies are
    disjoint, so the sequential pattern transfers but individual items do
    not. Returns (EmbeddingTable, {domain: [InteractionSequence]}).
    """
    if seed is None:
        seed = spec.seed
    m = spec.transition_matrix() if transition is None else np.asarray(transition, dtype=np.float64)
    check_row_stochastic(m)
    if m.shape[0] != spec.topics:
        raise InvalidSpecError("transition matrix size must equal topic count")

    gen = RngStreams(seed).stream(STREAM_SYNTH)
    centroids = gen.normal(0.0, spec.centroid_std, size=(spec.topics, spec.dim))

    index = {}
    all_rows = []
    item_topic = {}  # (domain, token) -> topic
    topic_items = {}  # (domain, topic) -> [ItemRef]
    row_counter = 0
    domain_names = [f"dom{d}" for d in range(spec.domains)]
    for domain in domain_names:
        topics_of_items = gen.integers(0, spec.topics, size=spec.items_per_domain)
        # Guarantee every topic is populated so the chain never stalls.
        for t in range(spec.topics):
            if not (topics_of_items == t).any():
                topics_of_items[t % spec.items_per_domain] = t
        for i in range(spec.items_per_domain):
            t = int(topics_of_items[i])
            token = f"item{i:05d}"
            vec = centroids[t] + gen.normal(0.0, spec.noise_std, size=spec.dim)
            aug = centroids[t] + gen.normal(0.0, spec.noise_std, size=spec.dim)
            ref = ItemRef(token=token, domain=domain, row=row_counter, aug_row=row_counter + 1)
            all_rows.append(vec)
            all_rows.append(aug)
            row_counter += 2
            index[(domain, token)] = ref
            item_topic[(domain, token)] = t
            topic_items.setdefault((domain, t), []).append(ref)

    table = EmbeddingTable(
        dim=spec.dim,
        rows=np.asarray(all_rows, dtype=np.float32),
        index=index,
    )

    sequences = {}
    for domain in domain_names:
        seqs = []
        for u in range(spec.users_per_domain):
            length = int(gen.integers(spec.seq_len_min, spec.seq_len_max + 1))
            topic = int(gen.integers(0, spec.topics))
            items, timestamps = [], []
            for step in range(length):
                pool = topic_items[(domain, topic)]
                ref = pool[int(gen.integers(0, len(pool)))]
                items.append(ref)
                timestamps.append(step)
                topic = int(gen.choice(spec.topics, p=m[topic]))
            seqs.append(
                InteractionSequence(user=f"user{u:05d}", domain=domain, items=items, timestamps=timestamps)
            )
        sequences[domain] = seqs
    return table, sequences


def write_synthetic_corpus(spec: SyntheticSpec, out_dir, seed=None):
    """Write one subdirectory per domain with the three corpus files."""
    table, per_domain = generate_synthetic_corpus(spec, seed=seed)
    for domain, seqs in per_domain.items():
        ddir = os.path.join(out_dir, domain)
        os.makedirs(ddir, exist_ok=True)
        sub_index = {k: v for k, v in table.index.items() if k[0] == domain}
        # Re-pack rows per domain so each directory is self-contained.
        refs = sorted(sub_index.values(), key=lambda r: r.row)
        remap = {}
        rows = []
        for ref in refs:
            remap[ref.key] = ItemRef(ref.token, ref.domain, len(rows), len(rows) + 1)
            rows.append(table.rows[ref.row])
            rows.append(table.rows[ref.aug_row])
        sub_table = EmbeddingTable(
            dim=table.dim, rows=np.asarray(rows, dtype=np.float32), index=remap
        )
        write_embedding_table(
            sub_table,
            os.path.join(ddir, "item_index.tsv"),
            os.path.join(ddir, "embeddings.bin"),
        )
        remapped_seqs = [
            InteractionSequence(
                s.user, s.domain, [remap[r.key] for r in s.items], s.timestamps
            )
            for s in seqs
        ]
        write_interactions(remapped_seqs, os.path.join(ddir, "inters.tsv"))
    return sorted(per_domain)


def load_domain_dir(path):
    """Load the (table, sequences) pair from a directory written by cmd_synth."""
    table = load_embedding_table(
        os.path.join(path, "item_index.tsv"), os.path.join(path, "embeddings.bin")
    )
    sequences = load_interactions(os.path.join(path, "inters.tsv"), table)
    return table, sequences
