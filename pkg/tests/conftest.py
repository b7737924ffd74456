import numpy as np
import pytest

from evgame.data_io import ScenarioConfig, SeriesBundle, load_scenario_series
from evgame.domain import EvRecord, TimeGrid


@pytest.fixture(scope="session")
def bundled_series():
    return load_scenario_series(ScenarioConfig())


def flat_series(n=96, base=50.0, price=1.0, solar=0.0, wind=0.0):
    """Constant signals, handy for hand-checkable runs."""
    stamps = [f"2018-05-01T{(t * 15) // 60:02d}:{(t * 15) % 60:02d}:00" for t in range(n)]
    price = np.broadcast_to(np.asarray(price, dtype=float), (n,)).copy()
    return SeriesBundle(
        timestamps=stamps,
        base_load_kw=np.full(n, float(base)),
        price_per_kwh=price,
        solar_per_unit=np.full(n, float(solar)),
        wind_per_unit=np.full(n, float(wind)),
    )


def make_ev(i=0, station=0, a=32, v=68, soc=0.5, **kw):
    return EvRecord(id=i, station=station, arrival_slot=a, deadline_slot=v, soc=soc, **kw)


GRID = TimeGrid()

V_SWEEP = (50.0, 350.0, 1000.0, 5000.0)
SEEDS = range(1, 11)


@pytest.fixture(scope="session")
def v_sweep_costs(bundled_series):
    """Mean total cost of the proposed scheduler per V over seeds 1..10."""
    from evgame import engine
    cfg = ScenarioConfig()
    return {v: float(np.mean([engine.run(cfg.replace(rng_seed=s, v_charg_init=v),
                                         bundled_series).total_cost for s in SEEDS]))
            for v in V_SWEEP}


@pytest.fixture(scope="session")
def compare_runs(bundled_series):
    """All five algorithms on seeds 1..10 of the default scenario."""
    from evgame import engine
    from evgame.data_io import ALGORITHMS
    cfg = ScenarioConfig()
    return {s: {a: engine.run(cfg.replace(rng_seed=s), bundled_series, algorithm=a)
                for a in ALGORITHMS} for s in SEEDS}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
