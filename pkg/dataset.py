import logging
import os
from collections import Counter
from dataclasses import dataclass

from treespace import NewickParseError, Topology, parse_newick

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    distinct_splits: int
    distinct_topologies: int
    modal_count: int
    modal_topology: Topology
    consensus: Topology

    @property
    def modal_is_consensus(self):
        return self.modal_topology == self.consensus

    def as_dict(self):
        return {
            'n': self.n,
            'distinct_splits': self.distinct_splits,
            'distinct_topologies': self.distinct_topologies,
            'modal_count': self.modal_count,
            'modal_topology': self.modal_topology.key,
            'majority_consensus': self.consensus.key,
            'modal_is_consensus': self.modal_is_consensus,
        }


def load_dataset(path, taxa):
    """Load one Newick tree per line.

    Args:
        path: data file
        taxa: TaxonSet shared by all trees

    Returns:
        list of Tree in file order
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Data file not found: {path}")

    trees, errors = [], []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                trees.append(parse_newick(text, taxa))
            except ValueError as e:
                logger.error(f"{path}:{number}: {e}")
                errors.append(f"line {number}: {e}")

    if errors:
        raise NewickParseError(f"{len(errors)} unparseable line(s) in {path}: " + '; '.join(errors))
    if not trees:
        raise NewickParseError(f"No trees in {path}")

    logger.info(f"Loaded {len(trees)} trees from {path}")
    return trees


def majority_consensus(trees):
    """Topology of the splits present in more than half of the trees."""
    counts = Counter(mask for x in trees for mask in x.lengths)
    return Topology(frozenset(mask for mask, c in counts.items() if 2 * c > len(trees)),
                    trees[0].n_taxa)


def summarize(trees):
    """Split and topology counts of a data set."""
    if not trees:
        raise ValueError("Cannot summarize an empty data set")
    topologies = Counter(x.topology for x in trees)
    modal, modal_count = topologies.most_common(1)[0]
    return DatasetSummary(
        n=len(trees),
        distinct_splits=len({mask for x in trees for mask in x.lengths}),
        distinct_topologies=len(topologies),
        modal_count=modal_count,
        modal_topology=modal,
        consensus=majority_consensus(trees),
    )
