import csv
import json
import logging
import math
import os

from treespace import to_newick

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ('iter', 't0', 'log_joint', 'bridges_accepted', 'x0_accepted', 't0_accepted',
                 'x0_topology', 'x0_newick')
BRIDGE_TRACE_COLUMNS = ('iter', 'accepted', 'log_target')
WALK_STEP_COLUMNS = ('walk', 'step', 'topology', 'distance_to_source')


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, 'item'):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ('inf' if value > 0 else '-inf')
    return value


class RunWriter:
    """Files of one command run, all under a single output directory."""

    def __init__(self, output_dir, name):
        self.run_dir = os.path.join(output_dir, name)
        os.makedirs(self.run_dir, exist_ok=True)
        logger.info(f"Writing outputs to {self.run_dir}")

    def path(self, filename):
        return os.path.join(self.run_dir, filename)

    def write_config(self, run_config):
        path = self.path('config.snapshot')
        with open(path, 'w', encoding='utf-8') as f:
            f.write(run_config.snapshot())
        return path

    def write_json(self, filename, payload):
        path = self.path(filename)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    def write_newick(self, filename, trees):
        path = self.path(filename)
        with open(path, 'w', encoding='utf-8') as f:
            for tree in trees:
                f.write(to_newick(tree) + '\n')
        return path

    def write_bridges(self, filename, bridges):
        """One Newick per bridge point; bridges separated by a blank line."""
        path = self.path(filename)
        with open(path, 'w', encoding='utf-8') as f:
            for i, bridge in enumerate(bridges):
                if i:
                    f.write('\n')
                for point in bridge.points:
                    f.write(to_newick(point) + '\n')
        return path

    def write_rows(self, filename, header, rows):
        path = self.path(filename)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
        return path

    def open_trace(self, filename='trace.csv'):
        return TraceWriter(self.path(filename))

    def open_bridge_trace(self, filename='iterations.csv'):
        return BridgeTraceWriter(self.path(filename))


class CsvStream:
    """CSV file written row by row while a sampler runs."""

    columns = ()

    def __init__(self, path):
        self.path = path
        self._file = open(path, 'w', encoding='utf-8', newline='')
        self._writer = csv.writer(self._file, lineterminator='\n')
        self._writer.writerow(self.columns)
        self.rows = 0

    def write(self, row):
        self._writer.writerow(row)
        self.rows += 1

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class TraceWriter(CsvStream):
    """Posterior states, as an ``on_sample(iteration, state)`` callback."""

    columns = TRACE_COLUMNS

    def __call__(self, iteration, state):
        c = state.counters
        self.write([iteration, repr(state.t0), repr(state.log_joint),
                    c['bridges_accepted'], c['x0_accepted'], c['t0_accepted'],
                    state.x0.topology.key, to_newick(state.x0)])


class BridgeTraceWriter(CsvStream):
    """Bridge chain moves, as an ``on_iteration(iteration, accepted, path)`` callback."""

    columns = BRIDGE_TRACE_COLUMNS

    def __call__(self, iteration, accepted, path):
        self.write([iteration, int(accepted), repr(path.log_target())])
