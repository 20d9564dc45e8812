"""Dataset construction: synthetic KBs, and the countries-style task family.

Nothing here ships real data; the generators produce deterministic corpora
with the same shape as the published benchmarks, and the task builder works
on any triple set with a locatedIn/neighborOf-style geography.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kb import Atom, KnowledgeBase, Var, Vocabulary, parse_kb
from .oracle import sym_provable

# ---------------------------------------------------------------------------
# Small fixed KBs
# ---------------------------------------------------------------------------

FAMILY_KB = """\
fatherOf(abe, homer).
parentOf(homer, bart).
grandfatherOf(X,Y) :- fatherOf(X,Z), parentOf(Z,Y).
"""


def family_kb() -> KnowledgeBase:
    """The three-clause family tree used in examples and tests."""
    return parse_kb(FAMILY_KB)


# ---------------------------------------------------------------------------
# Random KBs with oracle-labelled goals
# ---------------------------------------------------------------------------

@dataclass
class SynthKbConfig:
    """Size knobs for gen_synthetic_kb.

    Rules never repeat a variable inside a single atom (none of the shapes
    below do), which keeps backward chaining with the flat binding check
    equivalent to exhaustive grounding; goal labels rely on that.
    """

    n_predicates: int = 4
    n_constants: int = 8
    n_facts: int = 12
    n_rules: int = 3
    depth: int = 2
    n_goals: int = 5  # per class (provable / unprovable)


_RULE_SHAPES = (
    "inverse",    # h(X,Y) :- b(Y,X)
    "alias",      # h(X,Y) :- b(X,Y)
    "chain",      # h(X,Y) :- b1(X,Z), b2(Z,Y)
    "transitive", # h(X,Y) :- h'(X,Z), h'(Z,Y) with shared body predicate
)


def gen_synthetic_kb(
    config: SynthKbConfig, seed: int = 0
) -> tuple[KnowledgeBase, list[Atom], list[Atom]]:
    """Random facts and rules plus goals labelled by the symbolic oracle.

    Returns (kb, provable_goals, unprovable_goals); both goal lists are
    ground atoms, each class holding up to config.n_goals entries.
    """
    rng = np.random.default_rng(seed)
    kb = KnowledgeBase()
    preds = [kb.vocab.intern(f"p{i}") for i in range(config.n_predicates)]
    consts = [kb.vocab.intern(f"c{i}") for i in range(config.n_constants)]

    seen = set()
    while len(seen) < config.n_facts:
        atom = (
            preds[rng.integers(len(preds))],
            consts[rng.integers(len(consts))],
            consts[rng.integers(len(consts))],
        )
        if atom not in seen:
            seen.add(atom)
            kb.add_clause(atom)

    x, y, z = Var("X"), Var("Y"), Var("Z")
    for _ in range(config.n_rules):
        shape = _RULE_SHAPES[rng.integers(len(_RULE_SHAPES))]
        h = preds[rng.integers(len(preds))]
        b1 = preds[rng.integers(len(preds))]
        b2 = preds[rng.integers(len(preds))]
        if shape == "inverse":
            kb.add_clause((h, x, y), [(b1, y, x)])
        elif shape == "alias":
            kb.add_clause((h, x, y), [(b1, x, y)])
        elif shape == "chain":
            kb.add_clause((h, x, y), [(b1, x, z), (b2, z, y)])
        else:
            kb.add_clause((h, x, y), [(b1, x, z), (b1, z, y)])

    # Label every possible ground atom; sample a balanced goal set.
    provable, unprovable = [], []
    candidates = [(p, a, b) for p in preds for a in consts for b in consts]
    for idx in rng.permutation(len(candidates)):
        atom = candidates[idx]
        if sym_provable(kb, atom, config.depth):
            if len(provable) < config.n_goals:
                provable.append(atom)
        elif len(unprovable) < config.n_goals:
            unprovable.append(atom)
        if len(provable) >= config.n_goals and len(unprovable) >= config.n_goals:
            break
    return kb, provable, unprovable


# ---------------------------------------------------------------------------
# Countries-style geography tasks
# ---------------------------------------------------------------------------

@dataclass
class CountriesTask:
    """One difficulty level of the region-prediction task."""

    level: str
    train_atoms: list          # KB facts after removals
    dev_queries: list          # (atom, label) pairs, countries x regions
    test_queries: list
    regions: list              # region symbol ids, ascending
    removed: dict = field(default_factory=dict)  # counts per removal kind


def infer_geography(atoms: Sequence[Atom], vocab: Vocabulary
                    ) -> tuple[set, set, set]:
    """Classify locatedIn entities into (countries, subregions, regions).

    Regions appear only as locatedIn objects; subregions appear on both
    sides; countries only as subjects.  An explicit override (from a types
    file) should be preferred when available.
    """
    loc = vocab.id_of("locatedIn")
    subjects = {a[1] for a in atoms if a[0] == loc}
    objects = {a[2] for a in atoms if a[0] == loc}
    regions = objects - subjects
    subregions = subjects & objects
    countries = subjects - objects
    return countries, subregions, regions


def build_countries_task(
    atoms: Sequence[Atom],
    vocab: Vocabulary,
    level: str,
    dev_countries: Sequence[int],
    test_countries: Sequence[int],
    *,
    remove_dev: bool = True,
    regions: Optional[set] = None,
    subregions: Optional[set] = None,
) -> CountriesTask:
    """Apply the S1/S2/S3 removal scheme and enumerate evaluation queries.

    S1 removes country->region links of evaluated countries; S2 also their
    country->subregion links; S3 additionally the region links of training
    countries that neighbor an evaluated country.  Queries pair every
    evaluated country with every region; the label is membership in the
    original (pre-removal) atom set.
    """
    if level not in ("s1", "s2", "s3"):
        raise ValueError(f"level must be s1, s2, or s3, not {level!r}")
    loc = vocab.id_of("locatedIn")
    nbr = vocab.id_of("neighborOf")
    if regions is None or subregions is None:
        _, inferred_sub, inferred_reg = infer_geography(atoms, vocab)
        regions = inferred_reg if regions is None else regions
        subregions = inferred_sub if subregions is None else subregions

    held = set(test_countries) | (set(dev_countries) if remove_dev else set())

    neighbors: dict[int, set] = {}
    for a in atoms:
        if a[0] == nbr:
            neighbors.setdefault(a[1], set()).add(a[2])
            neighbors.setdefault(a[2], set()).add(a[1])
    for c in set(test_countries) | set(dev_countries):
        if not (neighbors.get(c, set()) - held):
            raise ValueError(
                f"country '{vocab.name(c)}' has no training neighbor; "
                "the task would be unsolvable"
            )

    affected_neighbors = set()
    if level == "s3":
        for c in held:
            affected_neighbors |= neighbors.get(c, set())
        affected_neighbors -= held

    removed = {"country_region": 0, "country_subregion": 0,
               "neighbor_region": 0}
    train: list[Atom] = []
    for a in atoms:
        if a[0] == loc:
            subj, obj = a[1], a[2]
            if subj in held and obj in regions:
                removed["country_region"] += 1
                continue
            if level in ("s2", "s3") and subj in held and obj in subregions:
                removed["country_subregion"] += 1
                continue
            if (level == "s3" and subj in affected_neighbors
                    and obj in regions):
                removed["neighbor_region"] += 1
                continue
        train.append(a)

    original = set(map(tuple, atoms))
    region_list = sorted(regions)

    def queries(countries: Sequence[int]) -> list:
        out = []
        for c in countries:
            for r in region_list:
                atom = (loc, c, r)
                out.append((atom, atom in original))
        return out

    return CountriesTask(
        level=level,
        train_atoms=train,
        dev_queries=queries(list(dev_countries)),
        test_queries=queries(list(test_countries)),
        regions=region_list,
        removed=removed,
    )


# ---------------------------------------------------------------------------
# Synthetic countries corpus
# ---------------------------------------------------------------------------

@dataclass
class CountriesData:
    """A generated geography: triple names plus country splits."""

    triples: list           # (rel, subj, obj) name triples
    train_countries: list
    dev_countries: list
    test_countries: list
    regions: list
    subregions: list

    def triples_text(self) -> str:
        return "\n".join("\t".join(t) for t in self.triples) + "\n"


def gen_countries(
    seed: int = 0,
    n_countries: int = 244,
    n_subregions: int = 23,
    n_regions: int = 5,
    n_dev: int = 20,
    n_test: int = 20,
    cross_region_rate: float = 0.04,
) -> CountriesData:
    """Deterministic countries-style world with a solvable split.

    Every country gets locatedIn links to its subregion and region (plus
    subregion->region links), and a border graph that is mostly
    intra-subregion, with some intra-region and a few cross-region edges.
    Each border is stored as a single neighborOf fact in one direction.
    Dev and test countries are chosen so each keeps a stored edge to a
    training country.
    """
    if n_countries < n_subregions * 3:
        raise ValueError("need at least 3 countries per subregion")
    rng = np.random.default_rng(seed)
    regions = [f"region{i}" for i in range(n_regions)]
    subregions = [f"subregion{i}" for i in range(n_subregions)]
    countries = [f"country{i:03d}" for i in range(n_countries)]

    sub_region = {s: regions[i % n_regions]
                  for i, s in enumerate(subregions)}
    shuffled = list(rng.permutation(countries))
    country_sub = {c: subregions[i % n_subregions]
                   for i, c in enumerate(shuffled)}
    country_region = {c: sub_region[country_sub[c]] for c in countries}

    members: dict[str, list] = {s: [] for s in subregions}
    for c in countries:  # stable order
        members[country_sub[c]].append(c)

    borders: set[tuple] = set()

    def add_border(a: str, b: str) -> None:
        if a != b:
            borders.add((a, b) if a < b else (b, a))

    for s in subregions:
        group = list(rng.permutation(members[s]))
        m = len(group)
        for i in range(m):
            add_border(group[i], group[(i + 1) % m])
        for _ in range(max(1, int(0.3 * m))):
            i, j = rng.integers(m), rng.integers(m)
            add_border(group[i], group[j])

    by_region: dict[str, list] = {r: [] for r in regions}
    for c in countries:
        by_region[country_region[c]].append(c)
    for r in regions:
        group = by_region[r]
        for _ in range(max(1, int(0.12 * len(group)))):
            a, b = group[rng.integers(len(group))], group[rng.integers(len(group))]
            add_border(a, b)

    for _ in range(max(1, int(cross_region_rate * n_countries))):
        a = countries[rng.integers(n_countries)]
        b = countries[rng.integers(n_countries)]
        if country_region[a] != country_region[b]:
            add_border(a, b)

    # each border is stored once, in a random orientation
    directed = [(a, b) if rng.integers(2) == 0 else (b, a)
                for a, b in sorted(borders)]
    out_nbrs: dict[str, set] = {c: set() for c in countries}
    for a, b in directed:
        out_nbrs[a].add(b)

    held: set[str] = set()
    test_list: list[str] = []
    dev_list: list[str] = []
    for c in rng.permutation(countries):
        target = test_list if len(test_list) < n_test else dev_list
        if len(dev_list) >= n_dev and len(test_list) >= n_test:
            break
        # keep a stored edge to a training country, for this and prior picks
        if not (out_nbrs[c] - held - {c}):
            continue
        if any(not (out_nbrs[h] - (held | {c})) for h in held):
            continue
        target.append(c)
        held.add(c)
    if len(test_list) < n_test or len(dev_list) < n_dev:
        raise ValueError("could not find a solvable dev/test split; "
                         "increase connectivity or lower split sizes")
    train_list = [c for c in countries if c not in held]

    triples = []
    for c in countries:
        triples.append(("locatedIn", c, country_sub[c]))
        triples.append(("locatedIn", c, country_region[c]))
    for s in subregions:
        triples.append(("locatedIn", s, sub_region[s]))
    for a, b in directed:
        triples.append(("neighborOf", a, b))

    return CountriesData(
        triples=triples,
        train_countries=train_list,
        dev_countries=dev_list,
        test_countries=test_list,
        regions=regions,
        subregions=subregions,
    )


# Rule templates matching the three difficulty levels: an inverse template,
# plus 2-hop (s1), mixed 2-hop (s2), and 3-hop (s3) chains.
COUNTRIES_TEMPLATES = {
    "s1": "3 #1(X,Y) :- #1(Y,X).\n3 #1(X,Y) :- #2(X,Z), #2(Z,Y).\n",
    "s2": ("3 #1(X,Y) :- #1(Y,X).\n3 #1(X,Y) :- #2(X,Z), #2(Z,Y).\n"
           "3 #1(X,Y) :- #2(X,Z), #3(Z,Y).\n"),
    "s3": ("3 #1(X,Y) :- #1(Y,X).\n3 #1(X,Y) :- #2(X,Z), #2(Z,Y).\n"
           "3 #1(X,Y) :- #2(X,Z), #3(Z,Y).\n"
           "3 #1(X,Y) :- #2(X,Z), #3(Z,W), #4(W,Y).\n"),
}

# General link-prediction template set (one invented predicate per shape).
LINKPRED_TEMPLATES = (
    "20 #1(X,Y) :- #2(X,Y).\n"
    "20 #1(X,Y) :- #2(Y,X).\n"
    "20 #1(X,Y) :- #2(X,Z), #3(Z,Y).\n"
)
