"""
Subsequences, recipes and the recipe search space.

A subsequence is a named, fixed pass pipeline (one uppercase letter per
entry of a ``SubsequenceLibrary``).  A recipe is a sequence of such
letters, for instance ``"ACDCD"``; its expansion is the comma-joined
pipeline handed to the external optimizer.

All stochastic operators take a ``numpy.random.Generator`` and are pure
functions of their inputs and of the generator state.
"""
import itertools
import os
import string
import sys

from dataclasses import dataclass, field

import numpy as np

DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')

# shipped libraries, by name
LIBRARIES = {'default': os.path.join(DATA_DIR, 'default.lib'),
             'portable': os.path.join(DATA_DIR, 'portable.lib')}

DEFAULT_MAX_LENGTH = 5
ENUMERATION_CAP = 100000


class RecipeError(ValueError):
    """
    A recipe or library does not satisfy its invariants.
    """


class SpaceTooLarge(OverflowError):
    """
    The recipe space cannot be counted or enumerated within the limits.
    """


def make_rng(seed):
    """
    Return the seeded generator used by every stochastic operator.
    """
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SubsequenceLibrary:
    """
    Ordered map from single-letter identifiers to pipeline strings.

    EXAMPLES::

        >>> lib = SubsequenceLibrary.load('default')
        >>> lib.ids
        'ABCDE'
        >>> lib['C'][:20]
        'function<eager-inv>('
    """
    entries: tuple
    name: str = 'library'

    def __post_init__(self):
        entries = tuple((str(k), str(v)) for k, v in self.entries)
        object.__setattr__(self, 'entries', entries)
        seen = set()
        for ident, pipeline in entries:
            if len(ident) != 1 or ident not in string.ascii_uppercase:
                raise RecipeError("invalid subsequence identifier {!r}".format(ident))
            if ident in seen:
                raise RecipeError("duplicate subsequence identifier {!r}".format(ident))
            if not pipeline or '\n' in pipeline or '\r' in pipeline:
                raise RecipeError("subsequence {} has an empty or multi-line "
                                  "pipeline".format(ident))
            seen.add(ident)
        if not entries:
            raise RecipeError("the subsequence library {} is empty".format(self.name))

    @property
    def ids(self):
        return ''.join(ident for ident, _ in self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, ident):
        return any(ident == k for k, _ in self.entries)

    def __getitem__(self, ident):
        for key, pipeline in self.entries:
            if key == ident:
                return pipeline
        raise KeyError(ident)

    @classmethod
    def from_text(cls, text, name='library'):
        """
        Parse the ``ID<TAB>pipeline`` file format.

        Blank lines and lines starting with ``#`` are ignored.
        """
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            if '\t' not in line:
                msg = "{}:{}: expected ID<TAB>pipeline"
                raise RecipeError(msg.format(name, lineno))
            ident, pipeline = line.split('\t', 1)
            ident = ident.strip()
            if any(ident == k for k, _ in entries):
                msg = "{}:{}: duplicate subsequence identifier {!r}"
                raise RecipeError(msg.format(name, lineno, ident))
            entries.append((ident, pipeline.strip()))
        return cls(tuple(entries), name)

    @classmethod
    def load(cls, path='default'):
        """
        Load a library file, or one of the shipped libraries by name
        (``'default'`` or ``'portable'``).
        """
        name = path
        path = LIBRARIES.get(path, path)
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except OSError as msg:
            raise RecipeError("cannot read subsequence library {}: {}".format(path, msg))
        if name == path:
            name = os.path.basename(path)
        return cls.from_text(text, name)


@dataclass(frozen=True, order=True)
class Recipe:
    """
    A sequence of subsequence identifiers.

    EXAMPLES::

        >>> Recipe('CD') + Recipe('A')
        Recipe(genes='CDA')
    """
    genes: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'genes', ''.join(self.genes))

    def __str__(self):
        return self.genes

    def __len__(self):
        return len(self.genes)

    def __iter__(self):
        return iter(self.genes)

    def __add__(self, other):
        return Recipe(self.genes + other.genes)

    def check(self, space):
        """
        Raise ``RecipeError`` unless the recipe lives in ``space``.
        """
        if len(self.genes) > space.max_length:
            msg = "recipe {} is longer than the maximum length {}"
            raise RecipeError(msg.format(self.genes, space.max_length))
        for pos, gene in enumerate(self.genes):
            if gene not in space.alphabet:
                msg = "unknown subsequence {!r} at position {} of recipe {}"
                raise RecipeError(msg.format(gene, pos, self.genes))
        return self


@dataclass(frozen=True)
class SpaceConfig:
    """
    The recipe space: ``num_subsequences`` identifiers, recipes of length
    ``0`` to ``max_length``.

    ``alphabet`` defaults to the first ``num_subsequences`` letters.
    """
    num_subsequences: int = 5
    max_length: int = DEFAULT_MAX_LENGTH
    alphabet: str = field(default=None)

    def __post_init__(self):
        if self.num_subsequences < 1:
            raise RecipeError("the space needs at least one subsequence")
        if self.max_length < 0:
            raise RecipeError("the maximum recipe length must be non-negative")
        alphabet = self.alphabet
        if alphabet is None:
            alphabet = string.ascii_uppercase[:self.num_subsequences]
        if len(alphabet) != self.num_subsequences or len(set(alphabet)) != len(alphabet):
            raise RecipeError("alphabet {!r} does not have {} distinct "
                              "identifiers".format(alphabet, self.num_subsequences))
        object.__setattr__(self, 'alphabet', alphabet)

    @classmethod
    def from_library(cls, lib, max_length=DEFAULT_MAX_LENGTH):
        return cls(len(lib), max_length, lib.ids)


def space_size(cfg):
    """
    Return the number of recipes of length ``0`` to ``m`` over ``n``
    subsequences, that is `\\sum_{i=0}^m n^i`.

    EXAMPLES::

        >>> space_size(SpaceConfig(5, 3))
        156
        >>> space_size(SpaceConfig(5, 5))
        3906
    """
    n, m = cfg.num_subsequences, cfg.max_length
    msg = "space of {} subsequences up to length {} has more than {} recipes"
    if n == 1:
        if m + 1 > sys.maxsize:
            raise SpaceTooLarge(msg.format(n, m, sys.maxsize))
        return m + 1
    # stop as soon as the partial sum overflows
    total, term = 0, 1
    for _ in range(m + 1):
        total += term
        if total > sys.maxsize:
            raise SpaceTooLarge(msg.format(n, m, sys.maxsize))
        term *= n
    return total


def expand_recipe(r, lib):
    """
    Return the pipeline of the recipe: the pipelines of its genes joined by
    single commas.  The empty recipe expands to the empty string.
    """
    pipelines = []
    for pos, gene in enumerate(r.genes):
        try:
            pipelines.append(lib[gene])
        except KeyError:
            msg = "unknown subsequence {!r} at position {} of recipe {}"
            raise RecipeError(msg.format(gene, pos, r.genes))
    return ','.join(pipelines)


def canonical_recipe(lib, max_length=DEFAULT_MAX_LENGTH):
    """
    Return every library identifier once, in library order, truncated to
    ``max_length``.  This is ``ABCDE`` for the default library.
    """
    return Recipe(lib.ids[:max_length])


def random_recipe(cfg, rng):
    length = int(rng.integers(0, cfg.max_length + 1))
    picks = rng.integers(0, cfg.num_subsequences, size=length)
    return Recipe(''.join(cfg.alphabet[i] for i in picks))


def _random_gene(cfg, rng):
    return cfg.alphabet[int(rng.integers(0, cfg.num_subsequences))]


def mutate_flip_one(r, cfg, rng):
    """
    Replace one gene by a random identifier.

    One of ``n + 2`` moves is drawn uniformly: the ``n`` replacements,
    appending a gene, or deleting the chosen gene.  An append that would
    exceed the maximum length becomes a replacement.  The empty recipe
    grows by one gene.
    """
    genes = r.genes
    n = cfg.num_subsequences
    if not genes:
        if cfg.max_length == 0:
            return r
        return Recipe(_random_gene(cfg, rng))
    pos = int(rng.integers(0, len(genes)))
    move = int(rng.integers(0, n + 2))
    if move < n:
        return Recipe(genes[:pos] + cfg.alphabet[move] + genes[pos + 1:])
    if move == n:
        if len(genes) < cfg.max_length:
            return Recipe(genes + _random_gene(cfg, rng))
        return Recipe(genes[:pos] + _random_gene(cfg, rng) + genes[pos + 1:])
    return Recipe(genes[:pos] + genes[pos + 1:])


def mutate_swap_two(r, rng):
    """
    Exchange two distinct positions; recipes shorter than two are returned
    unchanged.
    """
    if len(r) < 2:
        return r
    i, j = (int(x) for x in rng.choice(len(r), size=2, replace=False))
    genes = list(r.genes)
    genes[i], genes[j] = genes[j], genes[i]
    return Recipe(''.join(genes))


def neighbor(r, cfg, temperature, t_max, rng):
    """
    Apply ``mutate_flip_one`` ``k`` times, with ``k`` scaled by the
    temperature: a near resample when hot, a single edit when cold.
    """
    if t_max > 0:
        k = max(1, int(round(cfg.max_length * temperature / t_max)))
    else:
        k = 1
    for _ in range(k):
        r = mutate_flip_one(r, cfg, rng)
    return r


def enumerate_space(cfg, cap=ENUMERATION_CAP):
    """
    Yield every recipe once, shortest first, lexicographically (in alphabet
    order) within a length.

    EXAMPLES::

        >>> [str(r) for r in enumerate_space(SpaceConfig(1, 2))]
        ['', 'A', 'AA']
    """
    size = space_size(cfg)
    if size > cap:
        msg = "refusing to enumerate {} recipes (cap {})"
        raise SpaceTooLarge(msg.format(size, cap))
    for length in range(cfg.max_length + 1):
        for genes in itertools.product(cfg.alphabet, repeat=length):
            yield Recipe(''.join(genes))
