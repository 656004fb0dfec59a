import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quietpath.energy import BatteryParams, ModeConstraint, evaluate_edge
from quietpath.exceptions import (
    GraphFormatError,
    InvalidArgumentError,
    InvalidScenarioError,
    MapValidationError,
)
from quietpath.geometry import ConvexPolygon, Zone, ZoneKind, is_visible, segment_intersects_interior
from quietpath.graph import (
    ChargeInterval,
    ExactCharge,
    Role,
    attach_endpoints,
    build_base_graph,
    build_charge_core,
    build_charge_graph_exact,
    build_charge_graph_interval,
    charge_intervals,
    charge_levels,
    default_goal_intervals,
    load_graph,
    save_graph,
)
from quietpath.harness import generate_random_map

P = BatteryParams()


def square(x0, y0, s, zid=0, kind=ZoneKind.QUIET):
    return Zone(zid, ConvexPolygon([(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]), kind)


@pytest.fixture(scope="module")
def small_map():
    return generate_random_map(4, 5, (600.0, 600.0))


class TestBaseGraph:
    def test_single_square(self):
        g = build_base_graph([square(0, 0, 1)], 1.0, P)
        assert g.n_vertices == 4 and g.n_edges == 6
        assert g.electric_only.all()

    def test_two_far_squares(self):
        g = build_base_graph([square(0, 0, 1, 0), square(10, 0, 1, 1)], 1.0, P)
        cross = ~g.electric_only
        assert cross.sum() > 0
        for k in np.flatnonzero(cross):
            u, v = g.edges[k]
            assert g.zone_ids[u] != g.zone_ids[v]
            assert is_visible(g.positions[u], g.positions[v], g.zones)

    def test_empty(self):
        g = build_base_graph([], 1.0, P)
        assert g.n_vertices == 0 and g.n_edges == 0

    def test_overlap_rejected(self):
        with pytest.raises(MapValidationError):
            build_base_graph([square(0, 0, 2, 0), square(1, 1, 2, 1)], 1.0, P)

    def test_no_fly_contributes_corners_only(self):
        g = build_base_graph([square(0, 0, 10, 0, ZoneKind.NO_FLY)], 1.0, P)
        assert g.n_vertices == 4
        assert not g.electric_only.any()
        # opposite corners are not mutually visible through the obstacle
        assert g.n_edges == 4

    def test_edge_invariants(self, small_map):
        g = build_base_graph(small_map.zones, 40.0, P)
        for k in range(g.n_edges):
            u, v = g.edges[k]
            assert u < v
            assert g.lengths[k] == pytest.approx(math.dist(g.positions[u], g.positions[v]))
            if g.electric_only[k]:
                assert g.zone_ids[u] == g.zone_ids[v] >= 0
            else:
                assert is_visible(g.positions[u], g.positions[v], g.zones)

    def test_long_edges_split(self):
        params = BatteryParams(alpha=2.0, beta=1.0)  # split length 135
        g = build_base_graph([square(0, 0, 10, 0), square(500, 0, 10, 1)], 10.0, params)
        assert g.lengths.max() <= params.split_length
        assert (g.zone_ids == -1).any()
        plain = build_base_graph([square(0, 0, 10, 0), square(500, 0, 10, 1)], 10.0, P)
        assert g.n_vertices > plain.n_vertices

    def test_deterministic(self, small_map):
        assert build_base_graph(small_map.zones, 40.0, P) == build_base_graph(small_map.zones, 40.0, P)

    def test_interior_chords_removed_for_baseline(self):
        g = build_base_graph([square(0, 0, 1)], 0.5, P)
        nf = g.without_interior_chords()
        assert nf.n_edges < g.n_edges
        for k in range(nf.n_edges):
            u, v = nf.edges[k]
            assert not segment_intersects_interior(nf.positions[u], nf.positions[v], g.zones[0].polygon)


class TestAttach:
    def test_empty_base(self):
        gs = attach_endpoints(build_base_graph([], 1.0, P), (0, 0), (3, 4))
        assert gs.n_edges == 1 and gs.lengths[0] == pytest.approx(5.0)
        assert gs.edge(0).constraint is ModeConstraint.ANY

    def test_blocked_pair(self):
        base = build_base_graph([square(1, -1, 2)], 1.0, P)
        gs = attach_endpoints(base, (0, 0), (4, 0))
        assert gs.find_edge(gs.start, gs.goal) is None
        assert any(gs.find_edge(gs.start, v) is not None for v in range(base.n_vertices))
        assert base.start is None and base.n_vertices == 8

    def test_inside_zone_rejected(self):
        base = build_base_graph([square(0, 0, 2)], 1.0, P)
        with pytest.raises(InvalidScenarioError):
            attach_endpoints(base, (1, 1), (5, 5))

    def test_base_untouched(self, small_map):
        base = build_base_graph(small_map.zones, 40.0, P)
        before = (base.positions.copy(), base.edges.copy())
        attach_endpoints(base, (1, 1), (599, 599))
        assert np.array_equal(before[0], base.positions) and np.array_equal(before[1], base.edges)


class TestChargeGrids:
    def test_levels_anchor_endpoints(self):
        assert charge_levels(0, 100, 30).tolist() == [0, 30, 60, 90, 100]
        assert charge_levels(0, 100, 150).tolist() == [0, 100]
        assert charge_levels(50, 100, 25).tolist() == [50, 75, 100]

    @given(st.integers(1, 64), st.integers(1, 6))
    def test_nested_levels(self, k, halvings):
        coarse = set(charge_levels(0, 100, 100 / k).tolist())
        fine = set(charge_levels(0, 100, 100 / (k * 2 ** halvings)).tolist())
        assert coarse <= fine

    @given(st.integers(1, 64))
    def test_nested_intervals(self, n):
        lo1, hi1 = charge_intervals(0, 100, n)
        lo2, hi2 = charge_intervals(0, 100, 2 * n)
        assert np.array_equal(lo1, lo2[::2]) and np.array_equal(hi1, hi2[1::2])
        assert np.array_equal(hi2[::2], lo2[1::2])

    def test_default_goal_intervals(self):
        assert default_goal_intervals(40, 50, P) == 20
        assert default_goal_intervals(3, 50, P) == 2


class TestExactGraph:
    def test_two_vertex_example(self):
        gs = attach_endpoints(build_base_graph([], 1.0, P), (0, 0), (100, 0))
        g = build_charge_graph_exact(gs, 25, 80, 50, P)
        goals = [n for n in g.nodes() if n.role is Role.GOAL_CANDIDATE]
        assert [n.label.q for n in goals] == [50, 75, 100]
        costs = {g.node(v).label.q: c for v, c in g.out_edges(g.start)}
        assert costs[50] == 0.0
        assert costs[75] == pytest.approx(50.0)
        assert 100 not in costs
        assert g.n_nodes == 1 + 0 + 3 + 1

    def test_node_count_formula(self, small_map):
        base = build_base_graph(small_map.zones, 40.0, P)
        gs = attach_endpoints(base, (1, 1), (599, 599))
        g = build_charge_graph_exact(gs, 10, 80, 50, P)
        assert g.n_nodes == 1 + base.n_vertices * 11 + 6 + 1
        roles = [n.role for n in g.nodes()]
        assert roles.count(Role.START) == 1 and roles.count(Role.SUPER_SINK) == 1

    def test_electric_only_edges_decrease_charge(self):
        gs = attach_endpoints(build_base_graph([square(0, 0, 10)], 5.0, P), (-5, -5), (20, 20))
        g = build_charge_graph_exact(gs, 10, 80, 50, P)
        for e in g.charge_edges():
            if e.traversal is None:
                assert g.node(e.target).role is Role.SUPER_SINK and e.cost == 0
                continue
            a, b = g.node(e.source), g.node(e.target)
            k = gs.find_edge(a.spatial_id, b.spatial_id)
            if gs.electric_only[k]:
                assert b.label.q < a.label.q and e.cost == 0
            assert e.cost >= 0
            tr = evaluate_edge(a.label.q, b.label.q, gs.lengths[k], gs.edge(k).constraint, P)
            assert tr.feasible and tr.cost == e.cost

    def test_cached_core_is_identical(self, small_map):
        base = build_base_graph(small_map.zones, 40.0, P)
        gs = attach_endpoints(base, (1, 1), (599, 599))
        core = build_charge_core(base, "exact", P, delta_q=10)
        a = build_charge_graph_exact(gs, 10, 80, 50, P)
        b = build_charge_graph_exact(gs, 10, 80, 50, P, core=core)
        for x, y in zip(a.edge_arrays(), b.edge_arrays()):
            assert np.array_equal(x, y)

    def test_core_for_other_map_rejected(self, small_map):
        base = build_base_graph(small_map.zones, 40.0, P)
        other = build_base_graph(generate_random_map(4, 6, (600.0, 600.0)).zones, 40.0, P)
        gs = attach_endpoints(other, (1, 1), (599, 599))
        core = build_charge_core(base, "exact", P, delta_q=10)
        with pytest.raises(InvalidArgumentError):
            build_charge_graph_exact(gs, 10, 80, 50, P, core=core)

    def test_charge_out_of_range(self):
        gs = attach_endpoints(build_base_graph([], 1.0, P), (0, 0), (1, 0))
        with pytest.raises(InvalidScenarioError):
            build_charge_graph_exact(gs, 10, 120, 50, P)


class TestIntervalGraph:
    def test_edge_example(self):
        # [40, 60] -> [60, 80] over 100 units is priced at (60, 60)
        base = build_base_graph([square(0, 0, 1, 0), square(101, 0, 1, 1)], 1.0, P)
        gs = attach_endpoints(base, (-50, 0.5), (200, 0.5))
        g = build_charge_graph_interval(gs, 5, None, 80, 50, P)
        u = g.node_id(1, 2)   # corner (1, 0), interval [40, 60]
        v = g.node_id(4, 3)   # corner (101, 0), interval [60, 80]
        assert (g.node_lo[u], g.node_hi[u], g.node_lo[v], g.node_hi[v]) == (40, 60, 60, 80)
        assert g.edge_cost(u, v) == pytest.approx(66.667, abs=1e-3)
        for qi in np.linspace(40, 60, 5):
            for qj in np.linspace(60, 80, 5):
                tr = evaluate_edge(qi, qj, 100.0, ModeConstraint.ANY, P)
                assert not tr.feasible or tr.cost >= g.edge_cost(u, v) - 1e-9

    def test_single_interval(self):
        gs = attach_endpoints(build_base_graph([square(40, -10, 20)], 10.0, P), (0, 0), (100, 0))
        g = build_charge_graph_interval(gs, 1, 1, 80, 50, P)
        interior = [n for n in g.nodes() if n.role is Role.INTERIOR]
        assert all(n.label == ChargeInterval(0.0, 100.0) for n in interior)
        src, dst, cost = g.edge_arrays()
        for u, v, c in zip(src, dst, cost):
            if g.node_role[u] == Role.INTERIOR and g.node_role[v] == Role.INTERIOR:
                assert c == 0.0

    def test_start_keeps_exact_label(self):
        gs = attach_endpoints(build_base_graph([], 1.0, P), (0, 0), (100, 0))
        g = build_charge_graph_interval(gs, 4, None, 80, 50, P)
        assert g.node(g.start).label == ExactCharge(80.0)
        goal_labels = [n.label for n in g.nodes() if n.role is Role.GOAL_CANDIDATE]
        assert goal_labels == [ChargeInterval(50.0, 75.0), ChargeInterval(75.0, 100.0)]

    def test_relaxation_property(self, small_map):
        base = build_base_graph(small_map.zones, 60.0, P)
        gs = attach_endpoints(base, (1, 1), (599, 599))
        g = build_charge_graph_interval(gs, 5, None, 80, 50, P)
        rng = np.random.default_rng(2)
        src, dst, cost = g.edge_arrays()
        pick = rng.choice(len(src), size=min(300, len(src)), replace=False)
        for k in pick:
            u, v = int(src[k]), int(dst[k])
            if g.node_role[v] == Role.SUPER_SINK:
                continue
            a, b = g.node_spatial[u], g.node_spatial[v]
            e = gs.edge(gs.find_edge(a, b))
            for _ in range(5):
                qi = rng.uniform(g.node_lo[u], g.node_hi[u])
                qj = rng.uniform(g.node_lo[v], g.node_hi[v])
                tr = evaluate_edge(qi, qj, e.length, e.constraint, P)
                if tr.feasible:
                    assert cost[k] <= tr.cost + 1e-9

    def test_deterministic(self, small_map):
        base = build_base_graph(small_map.zones, 60.0, P)
        gs = attach_endpoints(base, (1, 1), (599, 599))
        a = build_charge_graph_interval(gs, 8, None, 80, 50, P)
        b = build_charge_graph_interval(gs, 8, None, 80, 50, P,
                                        core=build_charge_core(base, "interval", P, n_l=8))
        for x, y in zip(a.edge_arrays(), b.edge_arrays()):
            assert np.array_equal(x, y)


class TestCacheFiles:
    def test_round_trip_base(self, small_map, tmp_path):
        g = build_base_graph(small_map.zones, 40.0, P)
        save_graph(g, tmp_path / "g.qpg")
        assert load_graph(tmp_path / "g.qpg") == g

    def test_round_trip_attached_and_core(self, small_map, tmp_path):
        base = build_base_graph(small_map.zones, 40.0, P)
        gs = attach_endpoints(base, (1, 1), (599, 599))
        save_graph(gs, tmp_path / "a.qpg")
        assert load_graph(tmp_path / "a.qpg") == gs
        core = build_charge_core(base, "exact", P, delta_q=20)
        save_graph(core, tmp_path / "c.qpg")
        back = load_graph(tmp_path / "c.qpg")
        assert back.matches(gs, core.lows, core.highs, P, "exact")
        assert np.array_equal(back.block.costs, core.block.costs)

    def test_truncated(self, small_map, tmp_path):
        save_graph(build_base_graph(small_map.zones, 40.0, P), tmp_path / "g.qpg")
        data = (tmp_path / "g.qpg").read_bytes()
        (tmp_path / "t.qpg").write_bytes(data[: len(data) // 2])
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path / "t.qpg")

    def test_wrong_version(self, small_map, tmp_path):
        save_graph(build_base_graph(small_map.zones, 40.0, P), tmp_path / "g.qpg")
        data = bytearray((tmp_path / "g.qpg").read_bytes())
        data[7:9] = struct.pack("<H", 99)
        (tmp_path / "v.qpg").write_bytes(bytes(data))
        with pytest.raises(GraphFormatError, match="version"):
            load_graph(tmp_path / "v.qpg")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.qpg").write_bytes(b"not a graph at all")
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path / "x.qpg")
