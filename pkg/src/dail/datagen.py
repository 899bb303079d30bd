"""Synthetic multi-dataset corpora with planted identity overlap and domain shift.

Each identity is a Gaussian prototype. Every dataset holds a number of
identities, some drawn from a pool shared by all datasets, and gives each of
them its own class label. So one person can carry different labels in
different datasets. Each dataset also applies its own blend of a random
orthogonal map and an offset to its samples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Prng
from .registry import ClassTable

logger = logging.getLogger(__name__)

CORPUS_CSV = "corpus.csv"
CORPUS_META = "corpus_meta.json"


@dataclass
class GenConfig:
    num_datasets: int = 3
    identities_per_dataset: int = 30
    overlap_fraction: float = 0.3
    samples_per_identity: int = 20
    input_dim: int = 16
    prototype_spread: float = 1.0
    sample_noise: float = 0.35
    domain_shift_strength: float = 0.5
    holdout_fraction: float = 0.25
    shared_pool_size: int | None = None  # None: exactly the identities each dataset shares
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_datasets", "identities_per_dataset", "samples_per_identity", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"gen.{name} must be >= 1")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("gen.overlap_fraction must lie in [0, 1]")
        for name in ("prototype_spread", "sample_noise", "domain_shift_strength"):
            if getattr(self, name) < 0:
                raise ValueError(f"gen.{name} must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("gen.holdout_fraction must lie in [0, 1)")

    @property
    def num_shared(self) -> int:
        return int(np.floor(self.overlap_fraction * self.identities_per_dataset + 0.5))


@dataclass
class SyntheticCorpus:
    features: np.ndarray
    global_identity: np.ndarray
    local_class: np.ndarray
    dataset_id: np.ndarray
    class_table: ClassTable
    identity_of_class: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    eval_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    config: GenConfig | None = None

    def __len__(self) -> int:
        return len(self.local_class)

    @property
    def num_datasets(self) -> int:
        return self.class_table.num_datasets

    @property
    def num_classes(self) -> int:
        return self.class_table.num_classes

    def subset(self, idx) -> "SyntheticCorpus":
        """Rows ``idx`` only; the class table is kept whole."""
        idx = np.asarray(idx, dtype=np.int64)
        return SyntheticCorpus(
            self.features[idx],
            self.global_identity[idx],
            self.local_class[idx],
            self.dataset_id[idx],
            self.class_table,
            self.identity_of_class,
            config=self.config,
        )

    def train_split(self) -> "SyntheticCorpus":
        return self.subset(self.train_idx)

    def eval_split(self) -> "SyntheticCorpus":
        return self.subset(self.eval_idx)


def _random_orthogonal(prng: Prng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(prng.normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate_corpus(cfg: GenConfig) -> SyntheticCorpus:
    cfg.validate()
    prng = Prng(cfg.seed)
    K, n_per, d = cfg.num_datasets, cfg.identities_per_dataset, cfg.input_dim
    n_shared = cfg.num_shared
    pool = n_shared if cfg.shared_pool_size is None else cfg.shared_pool_size
    if n_shared > pool:
        raise ValueError(f"{n_shared} shared identities per dataset but the shared pool holds {pool}")
    n_excl = n_per - n_shared
    n_identities = pool + K * n_excl
    prototypes = prng.normal((n_identities, d), scale=cfg.prototype_spread)

    # Identity ids: shared pool first, then each dataset's exclusive block.
    members = []
    for k in range(K):
        shared = np.sort(prng.choice(pool, n_shared, replace=False)) if n_shared else np.zeros(0, np.int64)
        excl = pool + k * n_excl + np.arange(n_excl)
        members.append(np.concatenate([shared, excl]).astype(np.int64))

    maps, offsets = [], []
    for _ in range(K):
        maps.append(_random_orthogonal(prng, d))
        offsets.append(prng.normal(d))
    a = cfg.domain_shift_strength
    eye = np.eye(d)

    feats, gids, classes, dsets, identity_of_class = [], [], [], [], []
    train_idx, eval_idx = [], []
    n_hold = int(np.floor(cfg.holdout_fraction * cfg.samples_per_identity + 0.5))
    m = cfg.samples_per_identity
    for k in range(K):
        blend = (1.0 - a) * eye + a * maps[k]
        for gid in members[k]:
            cls = len(identity_of_class)
            identity_of_class.append(gid)
            raw = prototypes[gid] + prng.normal((m, d), scale=cfg.sample_noise)
            start = len(gids)
            feats.append(raw @ blend.T + a * offsets[k])
            gids.extend([gid] * m)
            classes.extend([cls] * m)
            dsets.extend([k] * m)
            held = np.zeros(m, dtype=bool)
            held[prng.choice(m, n_hold, replace=False)] = True
            rows = start + np.arange(m)
            train_idx.extend(rows[~held])
            eval_idx.extend(rows[held])

    dataset_of = np.repeat(np.arange(K), [len(mk) for mk in members])
    corpus = SyntheticCorpus(
        features=np.vstack(feats),
        global_identity=np.asarray(gids, dtype=np.int64),
        local_class=np.asarray(classes, dtype=np.int64),
        dataset_id=np.asarray(dsets, dtype=np.int64),
        class_table=ClassTable(dataset_of, K),
        identity_of_class=np.asarray(identity_of_class, dtype=np.int64),
        train_idx=np.asarray(train_idx, dtype=np.int64),
        eval_idx=np.asarray(eval_idx, dtype=np.int64),
        config=cfg,
    )
    logger.debug("generated %d samples, %d classes, %d identities", len(corpus), corpus.num_classes, n_identities)
    return corpus


def candidate_pairs(corpus: SyntheticCorpus) -> tuple[np.ndarray, np.ndarray]:
    """All admissible positive and negative pairs, as (2, n) index arrays.

    Identities that occur in several datasets only contribute cross-dataset
    positives.
    """
    gid, ds = corpus.global_identity, corpus.dataset_id
    n = len(gid)
    ii, jj = np.triu_indices(n, k=1)
    same = gid[ii] == gid[jj]
    multi = np.zeros(gid.max() + 1 if n else 0, dtype=bool)
    for g in np.unique(gid):
        multi[g] = np.unique(ds[gid == g]).size > 1
    pos_ok = same & (~multi[gid[ii]] | (ds[ii] != ds[jj]))
    return np.stack([ii[pos_ok], jj[pos_ok]]), np.stack([ii[~same], jj[~same]])


def make_verification_pairs(corpus: SyntheticCorpus, n_pos: int, n_neg: int, prng: Prng):
    """Sample ``n_pos`` same-identity and ``n_neg`` different-identity pairs.

    Returns ``(i, j, same)`` tuples, drawn without repetition.
    """
    pos, neg = candidate_pairs(corpus)
    if n_pos > pos.shape[1]:
        raise ValueError(f"asked for {n_pos} positive pairs but only {pos.shape[1]} exist")
    if n_neg > neg.shape[1]:
        raise ValueError(f"asked for {n_neg} negative pairs but only {neg.shape[1]} exist")
    pairs = []
    for cand, count, flag in ((pos, n_pos, True), (neg, n_neg, False)):
        if count:
            pick = prng.choice(cand.shape[1], count, replace=False)
            pairs += [(int(cand[0, c]), int(cand[1, c]), flag) for c in pick]
    return pairs


def write_corpus(corpus: SyntheticCorpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = corpus.features.shape[1]
    header = ",".join([f"f{i}" for i in range(d)] + ["global_identity", "local_class", "dataset_id"])
    with open(out / CORPUS_CSV, "w") as fh:
        fh.write(header + "\n")
        for row, g, c, k in zip(corpus.features, corpus.global_identity, corpus.local_class, corpus.dataset_id):
            fh.write(",".join(format(v, ".17g") for v in row) + f",{g},{c},{k}\n")
    meta = {
        "gen": asdict(corpus.config) if corpus.config is not None else None,
        "seed": corpus.config.seed if corpus.config is not None else None,
        "num_datasets": corpus.num_datasets,
        "dataset_of_class": corpus.class_table.dataset_of.tolist(),
        "identity_of_class": corpus.identity_of_class.tolist(),
        "train_idx": corpus.train_idx.tolist(),
        "eval_idx": corpus.eval_idx.tolist(),
    }
    (out / CORPUS_META).write_text(json.dumps(meta, indent=1))
    return out


def read_corpus(data_dir) -> SyntheticCorpus:
    src = Path(data_dir)
    meta = json.loads((src / CORPUS_META).read_text())
    table = np.loadtxt(src / CORPUS_CSV, delimiter=",", skiprows=1, ndmin=2)
    feats = table[:, :-3]
    ints = table[:, -3:].astype(np.int64)
    cfg = GenConfig(**meta["gen"]) if meta.get("gen") else None
    return SyntheticCorpus(
        features=np.ascontiguousarray(feats),
        global_identity=ints[:, 0],
        local_class=ints[:, 1],
        dataset_id=ints[:, 2],
        class_table=ClassTable(np.asarray(meta["dataset_of_class"]), meta["num_datasets"]),
        identity_of_class=np.asarray(meta["identity_of_class"], dtype=np.int64),
        train_idx=np.asarray(meta["train_idx"], dtype=np.int64),
        eval_idx=np.asarray(meta["eval_idx"], dtype=np.int64),
        config=cfg,
    )
