"""Corpus and feature production: emergent-corpus generation, ablations,
the balanced-bracket Zipf generator, the synthetic grounded world, and file IO.

Formats:
  corpus   UTF-8 text; optional '# key=value' header lines; one message per
           line as space-separated decimal token ids.
  vocab    UTF-8 text, one surface token per line; line number = id.
  features binary: magic "EMF1", u32 N, u32 D (little-endian), then N*D f32
           little-endian row-major.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .game import GameConfig, init_speaker, load_game_params, speaker_forward
from .rng import Prng
from .tensor import no_grad

FEATURE_MAGIC = b"EMF1"


# -- domain types ----------------------------------------------------------------


@dataclass
class Corpus:
    messages: list
    vocab_size: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.provenance:
            raise DataError("corpus provenance must be non-empty")

    def token_count(self) -> int:
        return sum(len(m) for m in self.messages)

    def validate(self) -> None:
        for i, msg in enumerate(self.messages):
            for tok in msg:
                if not (0 <= tok < self.vocab_size):
                    raise DataError(f"message {i}: token {tok} outside vocab "
                                    f"[0, {self.vocab_size})")


@dataclass
class FeatureSet:
    rows: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise DataError(f"feature rows must be a non-empty 2-D array, "
                            f"got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise DataError("feature rows contain non-finite values")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray


def feature_stats(features: FeatureSet) -> FeatureStats:
    return FeatureStats(mean=features.rows.mean(axis=0).astype(np.float64),
                        std=features.rows.std(axis=0).astype(np.float64))


@dataclass
class CaptionSet:
    captions: list                 # aligned with feature rows by index
    vocab: list                    # surface strings; index = token id
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, cap in enumerate(self.captions):
            if len(cap) == 0:
                raise DataError(f"caption {i} is empty")

    def as_corpus(self) -> Corpus:
        return Corpus(messages=[list(c) for c in self.captions],
                      vocab_size=len(self.vocab),
                      provenance=dict(self.provenance) or {"generator": "captions"})


# -- emergent corpora --------------------------------------------------------------


def generate_corpus(checkpoint, features: FeatureSet, decode: str = "sample",
                    truncate_at_zero: bool = False, prng: Prng | None = None,
                    chunk: int = 512, provenance_extra: dict | None = None) -> Corpus:
    """One message per feature row, ordering preserved."""
    params, cfg = load_game_params(checkpoint)
    if features.dim != cfg.feature_dim:
        raise DataError(f"feature dim {features.dim} != game feature_dim "
                        f"{cfg.feature_dim}")
    return _roll_corpus(params, cfg, features, decode, truncate_at_zero, prng,
                        chunk, {"generator": "speaker",
                                "checkpoint": str(checkpoint) if isinstance(checkpoint, str) else "<memory>",
                                **(provenance_extra or {})})


def truncate_at_first_null(tokens):
    """Cut a message at the first 0 token (exclusive); no-op when absent."""
    tokens = list(tokens)
    if 0 in tokens:
        return tokens[: tokens.index(0)]
    return tokens


def _roll_corpus(params: dict, cfg: GameConfig, features: FeatureSet, decode: str,
                 truncate_at_zero: bool, prng: Prng | None, chunk: int,
                 provenance: dict) -> Corpus:
    if decode not in ("sample", "greedy"):
        raise DataError(f"corpus decode must be sample or greedy, got {decode!r}")
    messages: list[list[int]] = []
    with no_grad():
        for lo in range(0, features.n, chunk):
            rows = features.rows[lo : lo + chunk]
            rollout = speaker_forward(params, rows, cfg, decode, prng)
            for row in rollout.tokens:
                msg = row.tolist()
                if truncate_at_zero:
                    msg = truncate_at_first_null(msg)
                messages.append(msg)
    provenance = dict(provenance)
    provenance.update({"decode": decode, "truncate_at_zero": truncate_at_zero,
                       "seq_len": cfg.seq_len})
    return Corpus(messages=messages, vocab_size=cfg.vocab_size, provenance=provenance)


def random_speaker_corpus(cfg: GameConfig, features: FeatureSet, prng: Prng,
                          truncate_at_zero: bool = False) -> Corpus:
    """Sample-mode corpus from a freshly initialized (untrained) speaker."""
    params = init_speaker(cfg, prng.child("init"))
    return _roll_corpus(params, cfg, features, "sample", truncate_at_zero,
                        prng.child("decode"), 512,
                        {"generator": "random-speaker", "seed": prng.seed})


def permute_corpus(corpus: Corpus, prng: Prng) -> Corpus:
    """Independently shuffle the tokens inside every message."""
    messages = []
    for msg in corpus.messages:
        perm = prng.permutation(len(msg))
        messages.append([msg[p] for p in perm])
    provenance = dict(corpus.provenance)
    provenance.update({"ablation": "permuted", "permute_seed": prng.seed})
    return Corpus(messages=messages, vocab_size=corpus.vocab_size, provenance=provenance)


def random_inputs(stats: FeatureStats, n: int, prng: Prng) -> FeatureSet:
    """Rows drawn independently per dimension from Normal(mean_d, std_d)."""
    if n <= 0:
        raise DataError(f"random_inputs needs n > 0, got {n}")
    rows = stats.mean[None, :] + stats.std[None, :] * prng.normal((n, stats.mean.size))
    return FeatureSet(rows=rows.astype(np.float32),
                      provenance={"generator": "random-inputs", "n": n,
                                  "seed": prng.seed})


# -- balanced-bracket Zipf corpus ------------------------------------------------------


def zipf_cumulative(vocab_size: int, s: float) -> np.ndarray:
    weights = np.arange(1, vocab_size + 1, dtype=np.float64) ** (-s)
    cum = np.cumsum(weights)
    return cum / cum[-1]


def gen_paren_zipf(vocab_size: int, token_count: int, s: float = 1.0,
                   open_prob: float = 0.5, prng: Prng | None = None,
                   line_length: int = 512) -> Corpus:
    """Matched-pair stream with Zipf(s) unigrams.

    Each line is generated by a stack machine: opening draws a word from the
    Zipf table (cumulative table + binary search) and pushes it; closing pops
    and re-emits the word.  A step opens when the stack is empty, closes when
    the remaining line budget equals the stack depth, and otherwise opens
    with probability `open_prob`.  Every line therefore balances and every
    word id occurs an even number of times.
    """
    if vocab_size < 1:
        raise DataError(f"vocab_size must be >= 1, got {vocab_size}")
    if token_count % 2 != 0:
        raise DataError(f"token_count must be even, got {token_count}")
    if not (0.0 < open_prob < 1.0):
        raise DataError(f"open_prob must be in (0, 1), got {open_prob}")
    if line_length % 2 != 0:
        raise DataError(f"line_length must be even, got {line_length}")
    prng = prng or Prng(0)
    cum = zipf_cumulative(vocab_size, s)
    messages: list[list[int]] = []
    remaining = token_count
    while remaining > 0:
        budget = min(line_length, remaining)
        remaining -= budget
        line: list[int] = []
        stack: list[int] = []
        while budget > 0:
            if not stack:
                do_open = True
            elif budget == len(stack):
                do_open = False
            else:
                do_open = prng.uniform() < open_prob
            if do_open:
                word = int(np.searchsorted(cum, prng.uniform(), side="right"))
                word = min(word, vocab_size - 1)
                stack.append(word)
                line.append(word)
            else:
                line.append(stack.pop())
            budget -= 1
        messages.append(line)
    return Corpus(messages=messages, vocab_size=vocab_size,
                  provenance={"generator": "paren-zipf", "zipf_exponent": s,
                              "open_prob": open_prob, "line_length": line_length,
                              "token_count": token_count, "seed": prng.seed})


def verify_balanced(tokens) -> bool:
    """Stack-machine acceptance: a token closes iff it matches the stack top."""
    stack: list[int] = []
    for tok in tokens:
        if stack and stack[-1] == tok:
            stack.pop()
        else:
            stack.append(tok)
    return not stack


# -- synthetic grounded world -----------------------------------------------------------


@dataclass
class SyntheticWorldSpec:
    attributes: int
    values: int
    noise: float = 0.0
    seed: int = 0
    n_objects: int | None = None        # None -> enumerate all values**attributes tuples
    templates: tuple = ()               # entries: function-word str or attribute index

    def validate(self) -> None:
        if self.attributes < 1:
            raise DataError(f"attributes must be >= 1, got {self.attributes}")
        if self.values < 2:
            raise DataError(f"values must be >= 2, got {self.values}")
        if self.noise < 0:
            raise DataError(f"noise must be >= 0, got {self.noise}")


DEFAULT_TEMPLATES = (("a", "ATTRS", "thing"),)


def _expand_template(template, n_attrs: int):
    out = []
    for item in template:
        if item == "ATTRS":
            out.extend(range(n_attrs))
        else:
            out.append(item)
    return tuple(out)


def synthetic_world(spec: SyntheticWorldSpec) -> tuple[FeatureSet, CaptionSet, list]:
    """Objects are attribute tuples; the feature row concatenates one-hot
    blocks per attribute plus Normal(0, noise); the caption renders a template
    with one content word per (attribute, value)."""
    spec.validate()
    templates = spec.templates or DEFAULT_TEMPLATES
    templates = tuple(_expand_template(t, spec.attributes) for t in templates)

    prng = Prng(spec.seed, "world")
    if spec.n_objects is None:
        tuples = np.array(list(itertools.product(range(spec.values),
                                                 repeat=spec.attributes)),
                          dtype=np.int64)
    else:
        if spec.n_objects < 1:
            raise DataError(f"n_objects must be >= 1, got {spec.n_objects}")
        tuples = prng.child("objects").integers(
            spec.values, size=(spec.n_objects, spec.attributes)).astype(np.int64)

    n = tuples.shape[0]
    dim = spec.attributes * spec.values
    rows = np.zeros((n, dim), dtype=np.float32)
    for a in range(spec.attributes):
        rows[np.arange(n), a * spec.values + tuples[:, a]] = 1.0
    if spec.noise > 0:
        rows = rows + spec.noise * prng.child("noise").normal((n, dim)).astype(np.float32)

    function_words: list[str] = []
    for template in templates:
        for item in template:
            if isinstance(item, str) and item not in function_words:
                function_words.append(item)
    vocab = list(function_words)
    content_base = len(vocab)
    for a in range(spec.attributes):
        for v in range(spec.values):
            vocab.append(f"attr{a}_{v}")

    def word_id(item, obj) -> int:
        if isinstance(item, str):
            return function_words.index(item)
        return content_base + item * spec.values + int(obj[item])

    # template index derives from tuple content: identical objects caption identically
    primes = np.array([2, 3, 5, 7, 11, 13, 17, 19][: spec.attributes], dtype=np.int64)
    if primes.size < spec.attributes:
        primes = np.arange(2, 2 + spec.attributes, dtype=np.int64)
    choices = (tuples @ primes + spec.seed) % len(templates)
    captions = [[word_id(item, tuples[i]) for item in templates[choices[i]]]
                for i in range(n)]

    meta = {"generator": "synthetic-world", "attributes": spec.attributes,
            "values": spec.values, "noise": spec.noise, "seed": spec.seed,
            "n_objects": n}
    features = FeatureSet(rows=rows, provenance=dict(meta))
    caps = CaptionSet(captions=captions, vocab=vocab, provenance=dict(meta))
    return features, caps, vocab


def split_indices(n: int, fractions, prng: Prng) -> list:
    """Seeded shuffle of range(n) cut into len(fractions) parts."""
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    order = prng.permutation(n)
    cuts = np.cumsum([int(round(f * n)) for f in fractions[:-1]])
    return [part for part in np.split(order, cuts)]


# -- file IO -----------------------------------------------------------------------------


def _format_header_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_corpus(path: str, corpus: Corpus) -> None:
    corpus.validate()
    header = dict(corpus.provenance)
    header["vocab_size"] = corpus.vocab_size
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(header):
            f.write(f"# {key}={_format_header_value(header[key])}\n")
        for msg in corpus.messages:
            f.write(" ".join(str(t) for t in msg))
            f.write("\n")


def read_corpus(path: str, vocab_size: int | None = None) -> Corpus:
    provenance: dict = {}
    messages: list[list[int]] = []
    line_numbers: list[int] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    provenance[key.strip()] = value.strip()
                continue
            if line == "":
                messages.append([])
                line_numbers.append(lineno)
                continue
            try:
                tokens = [int(tok) for tok in line.split(" ")]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: cannot parse token ids: {e}") from e
            messages.append(tokens)
            line_numbers.append(lineno)
    if vocab_size is None:
        if "vocab_size" in provenance:
            vocab_size = int(provenance["vocab_size"])
        else:
            vocab_size = max((max(m) for m in messages if m), default=0) + 1
            provenance["vocab_size_inferred"] = "true"
    provenance.pop("vocab_size", None)
    for lineno, msg in zip(line_numbers, messages):
        for pos, tok in enumerate(msg):
            if not (0 <= tok < vocab_size):
                raise DataError(f"{path}:{lineno}: token {tok} at position {pos} "
                                f"outside vocab [0, {vocab_size})")
    if not provenance:
        provenance = {"source": path}
    return Corpus(messages=messages, vocab_size=vocab_size, provenance=provenance)


def write_features(path: str, features: FeatureSet) -> None:
    rows = np.ascontiguousarray(features.rows, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        f.write(rows.tobytes())


def read_features(path: str) -> FeatureSet:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    n, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise DataError(f"{path}: size {len(blob)} != expected {expected} for "
                        f"N={n}, D={d}")
    rows = np.frombuffer(blob, dtype="<f4", offset=12).reshape(n, d)
    return FeatureSet(rows=rows.astype(np.float32, copy=True),
                      provenance={"source": path})


def write_vocab(path: str, vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for token in vocab:
            if "\n" in token:
                raise DataError(f"vocab token contains newline: {token!r}")
            f.write(token)
            f.write("\n")


def read_vocab(path: str) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]
