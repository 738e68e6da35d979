import numpy as np
import pytest

from regcal.core import McPredictionSet, McRecord, McSample


def make_record(rid, y, means, log_vars):
    """Build one record; y and each mean given as sequences of length d."""
    samples = [
        McSample(mean=np.asarray(m, dtype=float), log_var=float(lv))
        for m, lv in zip(means, log_vars)
    ]
    return McRecord(id=rid, y=np.asarray(y, dtype=float), samples=samples)


def make_set(records, d=None):
    if d is None:
        d = len(records[0].y)
    return McPredictionSet(d=d, records=records)


def random_set(rng, m=50, n=5, d=1, scale=0.1):
    """Random but well-formed prediction set for oracle comparisons."""
    records = []
    for i in range(m):
        y = rng.normal(0.0, 1.0, size=d)
        means = y + rng.normal(0.0, scale, size=(n, d))
        log_vars = rng.normal(np.log(scale**2), 0.5, size=n)
        records.append(make_record(f"r{i:04d}", y, means, log_vars))
    return make_set(records, d=d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
