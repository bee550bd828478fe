"""Active probing on the simulator loopback: harvests, discovery curves,
Jaccard clustering, and load-balancer-type detection."""



import pytest

from quicscope.probe import (
    EmptyHarvest,
    ExcessiveFailureRate,
    HostIdHarvest,
    LbType,
    PortStrategy,
    ProbeCampaign,
    SimulatorTransport,
    TransportUnavailable,
    cluster_vips,
    detect_lb_type,
    discovery_curve,
    harvest_from_ids,
    harvest_host_ids,
    jaccard,
    port_sequence,
    run_campaign,
)
from quicscope.sim import (
    ClusterConfig,
    DeploymentConfig,
    DeploymentSimulator,
    RoutingMode,
    default_stack_profile,
)


def make_sim(l7lb_count=40, mode=RoutingMode.FIVE_TUPLE, operator="Facebook", vip_count=1, seed=5):
    cfg = DeploymentConfig(
        clusters=[
            ClusterConfig(
                vips=[f"203.0.113.{i + 1}" for i in range(vip_count)],
                l7lb_count=l7lb_count,
                routing_mode=mode,
                profile=default_stack_profile(operator),
            )
        ],
        seed=seed,
    )
    return DeploymentSimulator(cfg)


class TestHarvest:
    def test_single_handshake(self):
        sim = make_sim()
        transport = SimulatorTransport(sim, seed=1)
        harvest = harvest_host_ids("203.0.113.1", 1, transport)
        assert harvest.attempts == 1
        assert len(harvest.observations) == 1
        assert len(harvest.unique_ids) == 1

    def test_ids_stay_within_cluster_set(self):
        sim = make_sim(l7lb_count=30)
        transport = SimulatorTransport(sim, seed=2)
        harvest = harvest_host_ids("203.0.113.1", 500, transport)
        assert harvest.unique_ids <= sim.clusters[0].host_id_set()
        assert harvest.failures == 0

    def test_uniform_discovery_expectation(self):
        # 1000 draws over 400 instances: expected unique fraction
        # 1 - (1 - 1/400)^1000 ~ 0.918; seeded run must be within +-0.05
        sim = make_sim(l7lb_count=400)
        transport = SimulatorTransport(sim, seed=3)
        harvest = harvest_host_ids("203.0.113.1", 1000, transport)
        expected = 1 - (1 - 1 / 400) ** 1000
        assert abs(len(harvest.unique_ids) / 400 - expected) < 0.05

    def test_unknown_vip_unavailable(self):
        sim = make_sim()
        transport = SimulatorTransport(sim)
        with pytest.raises(TransportUnavailable):
            harvest_host_ids("8.8.8.8", 5, transport)

    def test_undecodable_scids_abort_when_dominant(self):
        # Google echoes the client DCID, which never decodes as a host ID
        sim = make_sim(operator="Google")
        transport = SimulatorTransport(sim, seed=4)
        with pytest.raises(ExcessiveFailureRate):
            harvest_host_ids("203.0.113.1", 40, transport)

    def test_campaign_runs_all_targets(self):
        sim = make_sim(vip_count=3, l7lb_count=10)
        transport = SimulatorTransport(sim, seed=6)
        campaign = ProbeCampaign(targets=sim.clusters[0].vips, handshakes_per_vip=50)
        harvests = run_campaign(campaign, transport)
        assert set(harvests) == set(sim.clusters[0].vips)
        for h in harvests.values():
            assert h.unique_ids <= sim.clusters[0].host_id_set()


class TestPortSequence:
    def test_decreasing_from_max(self):
        ports = list(port_sequence(PortStrategy.DECREASING_FROM_MAX, 5))
        assert ports == [65535, 65534, 65533, 65532, 65531]

    def test_wrap_stays_in_range(self):
        ports = list(port_sequence(PortStrategy.DECREASING_FROM_MAX, 70000))
        assert all(1024 <= p <= 65535 for p in ports)

    def test_random_seeded_deterministic(self):
        a = list(port_sequence(PortStrategy.RANDOM_SEEDED, 100, seed=9))
        b = list(port_sequence(PortStrategy.RANDOM_SEEDED, 100, seed=9))
        assert a == b
        assert all(1024 <= p <= 65535 for p in a)


class TestDiscoveryCurve:
    def test_every_handshake_new_id_is_linear(self):
        harvest = HostIdHarvest(vip="v", observations=[(i, i) for i in range(10)], attempts=10)
        curve = discovery_curve(harvest)
        assert curve[0] == (1, 0.1)
        assert curve[-1] == (10, 1.0)

    def test_monotone_and_ends_at_one(self):
        sim = make_sim(l7lb_count=25)
        transport = SimulatorTransport(sim, seed=7)
        harvest = harvest_host_ids("203.0.113.1", 300, transport)
        curve = discovery_curve(harvest)
        fractions = [f for _, f in curve]
        assert fractions == sorted(fractions)
        assert fractions[-1] == 1.0

    def test_single_instance_cluster_constant(self):
        sim = make_sim(l7lb_count=1)
        transport = SimulatorTransport(sim, seed=8)
        harvest = harvest_host_ids("203.0.113.1", 20, transport)
        curve = discovery_curve(harvest)
        assert all(f == 1.0 for _, f in curve)

    def test_empty_harvest(self):
        with pytest.raises(EmptyHarvest):
            discovery_curve(HostIdHarvest(vip="v", attempts=3, failures=3))


class TestJaccardClustering:
    def test_jaccard_basics(self):
        assert jaccard(frozenset({1, 2}), frozenset({1, 2})) == 1.0
        assert jaccard(frozenset({1, 2}), frozenset({3})) == 0.0
        assert jaccard(frozenset({1, 2}), frozenset({2, 3})) == pytest.approx(1 / 3)
        assert jaccard(frozenset(), frozenset()) == 1.0

    def test_disjoint_vips_singleton_clusters(self):
        report = cluster_vips(
            {
                "a": harvest_from_ids("a", [1, 2, 3]),
                "b": harvest_from_ids("b", [4, 5]),
            }
        )
        assert report.clusters == [["a"], ["b"]]
        assert report.jaccard("a", "b") == 0.0
        assert report.jaccard("a", "a") == 1.0

    def test_shared_sets_cluster_together(self):
        report = cluster_vips(
            {
                "a": harvest_from_ids("a", range(100)),
                "b": harvest_from_ids("b", range(100)),
                "c": harvest_from_ids("c", range(200, 300)),
            }
        )
        assert report.clusters == [["a", "b"], ["c"]]

    def test_partition_covers_all_vips(self):
        harvests = {f"v{i}": harvest_from_ids(f"v{i}", range(i * 10, i * 10 + 10)) for i in range(6)}
        report = cluster_vips(harvests)
        flat = sorted(v for cluster in report.clusters for v in cluster)
        assert flat == sorted(harvests)

    def test_partial_harvest_still_clusters(self):
        # two partial views of the same 100-instance cluster overlap enough
        full = list(range(100))
        report = cluster_vips(
            {
                "a": harvest_from_ids("a", full[:80]),
                "b": harvest_from_ids("b", full[15:95]),
            },
            threshold=0.5,
        )
        assert report.clusters == [["a", "b"]]

    def test_matrix_shape_and_symmetry(self):
        harvests = {
            "a": harvest_from_ids("a", [1, 2]),
            "b": harvest_from_ids("b", [1, 2]),
            "c": harvest_from_ids("c", [9]),
        }
        m = cluster_vips(harvests).matrix()
        assert m.shape == (3, 3)
        assert (m == m.T).all()
        assert (m.diagonal() == 1.0).all()


class TestDetectLbType:
    def test_cid_aware_fail_window(self):
        sim = make_sim(l7lb_count=60, mode=RoutingMode.CID_AWARE, operator="Facebook")
        transport = SimulatorTransport(sim, seed=11)
        verdict = detect_lb_type("203.0.113.1", transport, codec=None, seed=11)
        assert verdict.kind == LbType.CID_AWARE
        assert abs(verdict.fail_window - 240.0) <= 1.0 + 1e-9

    def test_five_tuple_immediate_followup(self):
        sim = make_sim(l7lb_count=60, mode=RoutingMode.FIVE_TUPLE, operator="Facebook")
        transport = SimulatorTransport(sim, seed=12)
        from quicscope.probe import facebook_host_codec

        verdict = detect_lb_type("203.0.113.1", transport, codec=facebook_host_codec, seed=12)
        assert verdict.kind == LbType.FIVE_TUPLE
        assert verdict.followup_host_id != verdict.held_host_id

    def test_deterministic_given_seed(self):
        results = []
        for _ in range(2):
            sim = make_sim(l7lb_count=20, mode=RoutingMode.CID_AWARE)
            transport = SimulatorTransport(sim, seed=13)
            results.append(detect_lb_type("203.0.113.1", transport, codec=None, seed=13))
        assert results[0] == results[1]

    def test_unreachable_vip(self):
        sim = make_sim()
        transport = SimulatorTransport(sim)
        with pytest.raises(TransportUnavailable):
            detect_lb_type("198.18.0.1", transport)

    def test_inconclusive_when_window_exceeds_max_wait(self):
        sim = make_sim(l7lb_count=10, mode=RoutingMode.CID_AWARE)
        transport = SimulatorTransport(sim, seed=14)
        verdict = detect_lb_type("203.0.113.1", transport, max_wait=30.0, seed=14)
        assert verdict.kind == LbType.INCONCLUSIVE
