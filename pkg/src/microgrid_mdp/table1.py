"""Three microgrids over two intervals: storing beats selling low and buying back high.

Demand and supply per interval::

            interval 1      interval 2
            demand supply   demand supply
    MG-1      1      2        1      0
    MG-2      1      0        1      1
    MG-3      1      2        1      1

The interval-2 price is higher than the interval-1 price and nobody trades
with the main grid. Three hand-written schedules are played through the
domain transition:

1. no sharing and each interval balanced on its own: deficits go unmet;
2. MG-1 sells its surplus to MG-2, MG-3 stores, MG-1 buys back from MG-3;
3. MG-3 sells to MG-2, MG-1 stores its surplus for interval 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import domain
from .domain import EnvSnapshot, GridParams, JointAction, MicrogridState
from .market import settle

DEMAND = [(1, 1), (1, 1), (1, 1)]
SUPPLY = [(2, 0), (0, 1), (2, 1)]
PRICES = (5, 10)

# per-microgrid trades (interval 1, interval 2); positive sells
SCHEDULES = {
    1: [(0, 0), (0, 0), (0, 0)],
    2: [(1, -1), (-1, 0), (0, 1)],
    3: [(0, 0), (-1, 0), (1, 0)],
}


@dataclass
class Table1Outcome:
    profit: dict[int, list[float]] = field(default_factory=dict)  # scenario -> per microgrid
    unmet: dict[int, dict[tuple[int, int], int]] = field(default_factory=dict)  # (mg, interval) -> units
    main_grid_units: dict[int, int] = field(default_factory=dict)
    peer_units: dict[int, int] = field(default_factory=dict)

    @property
    def storing_beats_trading(self) -> bool:
        return self.profit[3][0] > self.profit[2][0]

    def as_dict(self) -> dict:
        return {
            "profit": {str(k): v for k, v in self.profit.items()},
            "unmet": {
                str(k): {f"MG-{mg}/interval-{t}": u for (mg, t), u in v.items()}
                for k, v in self.unmet.items()
            },
            "main_grid_units": {str(k): v for k, v in self.main_grid_units.items()},
            "peer_units": {str(k): v for k, v in self.peer_units.items()},
            "scenario3_beats_scenario2_for_MG-1": self.storing_beats_trading,
        }


PARAMS = GridParams(battery_capacity=8, max_grid_buy=14, penalty=0.0, slots_per_day=2, daily_jobs=())


def play(scenario: int) -> tuple[list[float], dict[tuple[int, int], int], int, int]:
    params = PARAMS
    # scenario 1 balances each interval on its own: nothing carries over
    carry = scenario != 1
    snaps = []
    for mg in range(3):
        r, d = SUPPLY[mg][0], DEMAND[mg][0]
        state = MicrogridState(1, r - d, PRICES[0])
        snaps.append(EnvSnapshot(state, 0, r, d))
    profit = [0.0, 0.0, 0.0]
    unmet: dict[tuple[int, int], int] = {}
    main = peer = 0
    for t in range(2):
        trades = []
        for mg in range(3):
            snap = snaps[mg]
            action = JointAction(SCHEDULES[scenario][mg][t])
            short = -min(0, snap.state.net_demand - action.trade)
            if short:
                unmet[(mg + 1, t + 1)] = short
            trades.append(action.trade)
            if t == 0:
                r, d = SUPPLY[mg][1], DEMAND[mg][1]
                snaps[mg], g = domain.step(snap, action, r, d, PRICES[1], (), params)
                if not carry:
                    snaps[mg] = EnvSnapshot(MicrogridState(2, r - d, PRICES[1]), 0, r, d)
            else:
                g = domain.reward(snap.state, action, params)
            profit[mg] += g
        rec = settle(trades, t + 1, PRICES[t])
        main += rec.main_grid_absorbed + rec.main_grid_supplied
        peer += rec.peer_units
    return profit, unmet, main, peer


def table1_regression() -> Table1Outcome:
    out = Table1Outcome()
    for k in SCHEDULES:
        profit, unmet, main, peer = play(k)
        out.profit[k] = profit
        out.unmet[k] = unmet
        out.main_grid_units[k] = main
        out.peer_units[k] = peer
    return out
