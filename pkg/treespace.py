"""Taxon sets, splits and points of BHV tree space.

A split is stored as the bitmask of the side that does not contain the first
taxon. A tree is a map from such masks to strictly positive lengths; pendant
edges are not represented.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import reduce

import networkx as nx

logger = logging.getLogger(__name__)

# Interior lengths at or below this are contracted.
LENGTH_TOL = 1e-12
PENDANT_LENGTH = 0.1


class NewickParseError(ValueError):
    """Malformed Newick text, duplicate taxa or invalid branch lengths."""


class TaxonMismatchError(ValueError):
    """Objects built over different taxon sets, or labels outside the set."""


def popcount(mask):
    return bin(mask).count('1')


def masks_compatible(a, b):
    """Compatibility of two canonical masks (neither contains taxon 0)."""
    return (a & b) == 0 or (a & ~b) == 0 or (b & ~a) == 0


def double_factorial(k):
    """k!! for odd k >= -1."""
    return reduce(lambda acc, i: acc * i, range(k, 0, -2), 1)


class TaxonSet:
    """Ordered, distinct taxon labels; the order fixes split encoding."""

    def __init__(self, labels):
        labels = tuple(str(label) for label in labels)
        if len(labels) < 4:
            raise ValueError(f"A taxon set needs at least 4 labels, got {len(labels)}")
        if len(set(labels)) != len(labels):
            seen, dupes = set(), []
            for label in labels:
                if label in seen:
                    dupes.append(label)
                seen.add(label)
            raise ValueError(f"Duplicate taxon labels: {', '.join(dupes)}")
        self.labels = labels
        self._index = {label: i for i, label in enumerate(labels)}

    @classmethod
    def numbered(cls, n):
        return cls([str(i) for i in range(1, n + 1)])

    @property
    def size(self):
        return len(self.labels)

    @property
    def all_mask(self):
        return (1 << self.size) - 1

    @property
    def root_mask(self):
        """Everything but taxon 0: the cluster at the vertex next to taxon 0."""
        return self.all_mask ^ 1

    def index_of(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise TaxonMismatchError(f"Unknown taxon label: {label!r}")

    def canonical(self, side):
        """Canonical mask of the bipartition with one side ``side``."""
        return side ^ self.all_mask if side & 1 else side

    def mask_of(self, labels):
        return reduce(lambda acc, label: acc | (1 << self.index_of(label)), labels, 0)

    def members(self, mask):
        return [label for i, label in enumerate(self.labels) if mask >> i & 1]

    def __eq__(self, other):
        return isinstance(other, TaxonSet) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"TaxonSet({list(self.labels)!r})"


def load_taxa(path):
    """Read a taxon-map file: one label per line, line order = canonical index."""
    with open(path, 'r', encoding='utf-8') as f:
        labels = [line.strip() for line in f if line.strip()]
    logger.info(f"Loaded {len(labels)} taxa from {path}")
    return TaxonSet(labels)


@dataclass(frozen=True, order=True)
class Split:
    mask: int
    n: int

    def __post_init__(self):
        if self.mask & 1:
            raise ValueError("Split masks are stored without the first taxon")
        size = popcount(self.mask)
        if not 2 <= size <= self.n - 2:
            raise ValueError(f"Split side of size {size} is not interior for N={self.n}")

    @classmethod
    def from_side(cls, side, n):
        full = (1 << n) - 1
        return cls(side ^ full if side & 1 else side, n)

    @classmethod
    def from_labels(cls, taxa, labels):
        return cls.from_side(taxa.mask_of(labels), taxa.size)

    @property
    def size(self):
        return popcount(self.mask)

    def compatible(self, other):
        return splits_compatible(self, other)


def splits_compatible(a, b):
    if a.n != b.n:
        raise TaxonMismatchError(f"Splits over {a.n} and {b.n} taxa")
    return masks_compatible(a.mask, b.mask)


@dataclass(frozen=True)
class Topology:
    splits: frozenset
    n: int

    @property
    def codimension(self):
        return (self.n - 3) - len(self.splits)

    @property
    def key(self):
        """Stable short hash, identical across processes and runs."""
        text = ','.join(str(mask) for mask in sorted(self.splits))
        return hashlib.md5(f"{self.n}|{text}".encode('ascii')).hexdigest()[:12]

    def __len__(self):
        return len(self.splits)


class Tree:
    """A point of BHV tree space."""

    __slots__ = ('taxa', 'lengths', '_hash')

    def __init__(self, taxa, lengths=None, check=True):
        kept = {}
        for mask, length in (lengths or {}).items():
            length = float(length)
            if check:
                if length < 0 or not math.isfinite(length):
                    raise ValueError(f"Invalid length {length} for split {mask}")
                if mask & 1:
                    mask ^= taxa.all_mask
                if not 2 <= popcount(mask) <= taxa.size - 2:
                    raise ValueError(f"Split mask {mask} is not interior")
            if length > LENGTH_TOL:
                kept[mask] = length
        if check:
            masks = list(kept)
            for i, a in enumerate(masks):
                for b in masks[i + 1:]:
                    if not masks_compatible(a, b):
                        raise ValueError(f"Incompatible splits {a} and {b}")
        self.taxa = taxa
        self.lengths = kept
        self._hash = None

    @classmethod
    def star(cls, taxa):
        return cls(taxa, {}, check=False)

    @property
    def n_taxa(self):
        return self.taxa.size

    @property
    def dim(self):
        return self.taxa.size - 3

    @property
    def edges(self):
        n = self.taxa.size
        return {Split(mask, n): length for mask, length in self.lengths.items()}

    @property
    def topology(self):
        return Topology(frozenset(self.lengths), self.taxa.size)

    @property
    def codimension(self):
        return self.dim - len(self.lengths)

    @property
    def is_resolved(self):
        return len(self.lengths) == self.dim

    def length(self, mask):
        return self.lengths.get(mask, 0.0)

    def norm(self):
        return math.sqrt(sum(v * v for v in self.lengths.values()))

    def __eq__(self, other):
        return (isinstance(other, Tree) and self.taxa == other.taxa
                and self.lengths == other.lengths)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.taxa.size, frozenset(self.lengths.items())))
        return self._hash

    def __getstate__(self):
        return {'taxa': self.taxa, 'lengths': self.lengths}

    def __setstate__(self, state):
        self.taxa = state['taxa']
        self.lengths = state['lengths']
        self._hash = None

    def __repr__(self):
        return f"Tree({to_newick(self)})"


def tree_norm(x):
    """Euclidean norm of the edge-length vector, i.e. the distance to the star tree."""
    return x.norm()


def count_splits(n):
    if n < 4:
        raise ValueError(f"count_splits needs N >= 4, got {n}")
    return 2 ** (n - 1) - (n + 1)


def count_topologies(n):
    if n < 4:
        raise ValueError(f"count_topologies needs N >= 4, got {n}")
    return double_factorial(2 * n - 5)


def all_splits(taxa):
    """Canonical masks of every interior split, by brute force."""
    return [mask for mask in range(2, taxa.all_mask, 2)
            if 2 <= popcount(mask) <= taxa.size - 2]


def maximal_topologies(taxa):
    """Every fully resolved topology, by brute force over sets of N-3 splits."""
    splits = all_splits(taxa)
    found = []

    def extend(chosen, start):
        if len(chosen) == taxa.size - 3:
            found.append(Topology(frozenset(chosen), taxa.size))
            return
        for i in range(start, len(splits)):
            if all(masks_compatible(splits[i], s) for s in chosen):
                extend(chosen + [splits[i]], i + 1)

    extend([], 0)
    return found


class Hierarchy:
    """Clusters of a tree rooted at the vertex adjacent to taxon 0.

    Every interior vertex corresponds to a cluster: a split mask or the root
    mask (all taxa but taxon 0). Children are maximal sub-clusters, including
    single-taxon leaves.
    """

    def __init__(self, taxa, masks):
        self.taxa = taxa
        root = taxa.root_mask
        clusters = sorted(set(masks), key=popcount) + [root]
        self.parent = {}
        self.children = {c: [] for c in clusters}
        leaves = [1 << i for i in range(1, taxa.size)]
        for node in clusters[:-1] + leaves:
            parent = next(c for c in clusters
                          if c != node and (node & c) == node)
            self.parent[node] = parent
            self.children[parent].append(node)
        self.root = root

    def vertices(self):
        return list(self.children)

    def degree(self, cluster):
        return len(self.children[cluster]) + 1

    def neighbor_sets(self, cluster):
        """Leaf sets (over all N taxa) on each side of the vertex ``cluster``."""
        return list(self.children[cluster]) + [self.taxa.all_mask ^ cluster]

    def nni_alternatives(self, mask):
        """The two splits that replace ``mask`` across its codimension-1 face."""
        below = self.children[mask]
        parent = self.parent[mask]
        others = [c for c in self.neighbor_sets(parent) if c != mask]
        if len(below) != 2 or len(others) != 2:
            raise ValueError(f"Split {mask} does not join two degree-3 vertices")
        return [self.taxa.canonical(below[0] | other) for other in others]


def random_resolution(groups, taxa, rng):
    """Uniformly random binary tree on ``groups`` by stepwise addition.

    Args:
        groups: disjoint taxon masks, one per pendant position
        taxa: TaxonSet the masks refer to
        rng: numpy Generator

    Returns:
        list of canonical masks of the new interior splits
    """
    order = [int(i) for i in rng.permutation(len(groups))]
    graph = nx.Graph()
    for g in order[:3]:
        graph.add_edge(('v', 0), ('g', g))
    for count, g in enumerate(order[3:], start=1):
        edges = list(graph.edges())
        u, v = edges[int(rng.integers(len(edges)))]
        mid = ('v', count)
        graph.remove_edge(u, v)
        graph.add_edges_from([(u, mid), (mid, v), (mid, ('g', g))])

    splits = []
    for u, v in list(graph.edges()):
        if u[0] == 'g' or v[0] == 'g':
            continue
        graph.remove_edge(u, v)
        side = nx.node_connected_component(graph, u)
        graph.add_edge(u, v)
        mask = reduce(lambda acc, node: acc | groups[node[1]],
                      (node for node in side if node[0] == 'g'), 0)
        splits.append(taxa.canonical(mask))
    return splits


def random_tree(taxa, rng, shape=2.0, scale=0.5):
    """Uniform random resolved topology with Gamma(shape, scale) interior lengths."""
    masks = random_resolution([1 << i for i in range(taxa.size)], taxa, rng)
    lengths = rng.gamma(shape, scale, size=len(masks))
    return Tree(taxa, dict(zip(masks, lengths)), check=False)


# ---------------------------------------------------------------- Newick

_SPECIAL = set('(),:;[]\'')


class _NewickReader:

    def __init__(self, text):
        self.text = text
        self.pos = 0

    def fail(self, message):
        raise NewickParseError(f"{message} at position {self.pos}")

    def skip(self):
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isspace():
                self.pos += 1
            elif ch == '[':
                end = self.text.find(']', self.pos)
                if end < 0:
                    self.fail("Unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ''

    def expect(self, ch):
        if self.peek() != ch:
            self.fail(f"Expected '{ch}'")
        self.pos += 1

    def label(self):
        self.skip()
        if self.peek() == "'":
            end = self.text.find("'", self.pos + 1)
            if end < 0:
                self.fail("Unterminated quoted label")
            value = self.text[self.pos + 1:end]
            self.pos = end + 1
            return value
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in _SPECIAL \
                and not self.text[self.pos].isspace():
            self.pos += 1
        return self.text[start:self.pos]

    def length(self):
        if self.peek() != ':':
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in '0123456789.eE+-':
            self.pos += 1
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            self.fail("Invalid branch length")

    def node(self):
        """Returns (children, label, length); leaves have children None."""
        if self.peek() == '(':
            self.pos += 1
            children = [self.node()]
            while self.peek() == ',':
                self.pos += 1
                children.append(self.node())
            self.expect(')')
            self.label()  # interior labels and support values are ignored
            return children, None, self.length()
        name = self.label()
        if not name:
            self.fail("Missing taxon label")
        return None, name, self.length()


def parse_newick(text, taxa):
    """Parse an unrooted Newick tree over ``taxa``.

    Args:
        text: Newick string with interior branch lengths
        taxa: TaxonSet fixing the split encoding

    Returns:
        Tree (pendant lengths discarded, zero interior lengths contracted)
    """
    reader = _NewickReader(text.strip())
    root = reader.node()
    if reader.peek() != ';':
        reader.fail("Expected ';'")
    reader.pos += 1
    if reader.peek():
        reader.fail("Trailing text after ';'")
    if root[0] is None:
        raise NewickParseError("A tree needs at least one interior node")

    lengths = {}
    seen = set()

    def walk(node, is_root):
        children, name, length = node
        if children is None:
            index = taxa.index_of(name)
            if index in seen:
                raise NewickParseError(f"Duplicate taxon: {name}")
            seen.add(index)
            return 1 << index
        mask = 0
        for child in children:
            mask |= walk(child, False)
        if not is_root:
            canonical = taxa.canonical(mask)
            if 2 <= popcount(canonical) <= taxa.size - 2:
                if length is None:
                    raise NewickParseError(f"Missing interior branch length above {taxa.members(mask)}")
                if length < 0:
                    raise NewickParseError(f"Negative interior branch length {length}")
                # a bifurcating root splits one edge in two
                lengths[canonical] = lengths.get(canonical, 0.0) + length
        return mask

    walk(root, True)
    if len(seen) != taxa.size:
        missing = [taxa.labels[i] for i in range(taxa.size) if i not in seen]
        raise TaxonMismatchError(f"Tree is missing taxa: {', '.join(missing)}")

    masks = list(lengths)
    for i, a in enumerate(masks):
        for b in masks[i + 1:]:
            if not masks_compatible(a, b):
                raise NewickParseError("Tree contains incompatible splits")
    return Tree(taxa, lengths, check=False)


def _quote(label):
    if any(ch in _SPECIAL or ch.isspace() for ch in label):
        return "'" + label + "'"
    return label


def to_newick(tree):
    """Serialize with pendant lengths written as 0.1."""
    taxa = tree.taxa
    hierarchy = Hierarchy(taxa, tree.lengths)

    def render(cluster):
        if popcount(cluster) == 1:
            label = _quote(taxa.labels[cluster.bit_length() - 1])
            return f"{label}:{PENDANT_LENGTH!r}"
        inner = ','.join(render(c) for c in sorted(hierarchy.children[cluster]))
        return f"({inner}):{tree.lengths[cluster]!r}"

    parts = [render(c) for c in sorted(hierarchy.children[hierarchy.root])]
    parts.append(f"{_quote(taxa.labels[0])}:{PENDANT_LENGTH!r}")
    return '(' + ','.join(parts) + ');'


def topology_newick(topology, taxa):
    """Newick of a topology with unit interior lengths."""
    return to_newick(Tree(taxa, {mask: 1.0 for mask in topology.splits}, check=False))
