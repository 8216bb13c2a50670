import numpy as np

from roadrisk import ingest
from roadrisk.synthetic import FIXTURE_WEEKS, fixture_region, generate_rows


def test_generator_deterministic():
    a = generate_rows()
    b = generate_rows()
    assert a == b


def test_fixture_parses_clean(fixture_csv):
    records, rejects = ingest.parse_accident_csv(fixture_csv)
    assert rejects == []
    assert len(records) > 2000
    region = fixture_region()
    assert len(ingest.filter_region(records, region)) == len(records)


def test_fixture_thirty_nodes(fixture_graph):
    graph, assignment = fixture_graph
    assert graph.n_nodes == 30
    assert (np.bincount(assignment) > 0).all()


def test_fixture_is_seasonal(fixture_records, fixture_graph):
    graph, assignment = fixture_graph
    weekly = ingest.aggregate_temporal(
        fixture_records, assignment, ingest.Granularity.WEEKLY,
        graph.n_nodes, fixture_region().period,
    )
    totals = weekly.totals()
    assert len(totals) == FIXTURE_WEEKS
    # a yearly cycle: lag-52 autocorrelation of weekly totals is strongly positive
    lag = 52
    r = np.corrcoef(totals[:-lag], totals[lag:])[0, 1]
    assert r > 0.5
    assert totals.max() > 3 * totals.min() + 1


def test_fixture_snr_ordering(fixture_records, fixture_graph):
    graph, assignment = fixture_graph
    region = fixture_region()
    values = {}
    for granularity in ingest.Granularity:
        series = ingest.aggregate_temporal(
            fixture_records, assignment, granularity, graph.n_nodes, region.period
        )
        values[granularity] = ingest.snr(series)
    assert values[ingest.Granularity.WEEKLY] > values[ingest.Granularity.DAILY]
    assert values[ingest.Granularity.MONTHLY] > values[ingest.Granularity.WEEKLY]


def test_fixture_winter_tilts_environment(fixture_records):
    from roadrisk.features import WeightTables, environmental_risk

    tables = WeightTables.default()
    winter = [r for r in fixture_records if r.date.month in (12, 1, 2)]
    summer = [r for r in fixture_records if r.date.month in (6, 7, 8)]
    env_winter = np.mean([environmental_risk(tables, r) for r in winter])
    env_summer = np.mean([environmental_risk(tables, r) for r in summer])
    assert env_winter > env_summer + 0.05
