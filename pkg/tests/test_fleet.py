import math

import numpy as np
import pytest

from patrolplan.cycles import Cycle, SteadyStateCache, cycle_lower_bound, greedy_construct
from patrolplan.fleet import (
    FleetError,
    DisparityMatrix,
    cluster_subnetwork,
    disparity_matrix,
    enumerate_ceos,
    partition_to_document,
    plan_fleet,
    similarity_from_disparity,
    spectral_cluster,
    tes_refine,
)
from patrolplan.model import TargetSpec, TargetNetwork, generate_random_instance


class TestEnumerateCeos:
    def test_singleton_dedupes_to_one(self):
        net, _ = generate_random_instance(3, seed=1)
        cands = enumerate_ceos(Cycle.from_targets(net, [1]), 2)
        assert len(cands) == 1
        assert cands[0].target_ids == {1, 2}

    def test_edge_insertion_present(self):
        net, _ = generate_random_instance(4, seed=2)
        cands = enumerate_ceos(Cycle.from_targets(net, [1, 2, 3]), 4)
        seqs = [tuple(i.target for i in c.instances) for c in cands]
        assert (1, 4, 2, 3) in seqs
        for c in cands:
            assert 4 in c.target_ids
            assert c.dwell_targets >= {1, 2, 3, 4}

    def test_rejects_already_covered_target(self):
        net, _ = generate_random_instance(3, seed=3)
        with pytest.raises(ValueError):
            enumerate_ceos(Cycle.from_targets(net, [1, 2]), 2)

    def test_growth_is_monotone_along_sweep(self):
        net, _ = generate_random_instance(6, seed=4)
        cache = SteadyStateCache(net)
        cycle = Cycle.from_targets(net, [1])
        metric = cycle_lower_bound(cycle, cache)
        values = [metric.value]
        remaining = [t for t in net.ids if t != 1]
        while remaining:
            best = None
            for j in remaining:
                for cand in enumerate_ceos(cycle, j):
                    m = cycle_lower_bound(cand, cache)
                    gain = metric.value - m.value
                    if best is None or gain > best[0] + 1e-15:
                        best = (gain, j, cand, m)
            _, joined, cycle, metric = best
            remaining.remove(joined)
            values.append(metric.value)
        for a, b in zip(values[:-1], values[1:]):
            assert b >= a - 1e-9


class TestDisparity:
    def test_single_target(self):
        net, _ = generate_random_instance(1, seed=5)
        disp = disparity_matrix(net)
        assert disp.values.shape == (1, 1)
        assert disp.values[0, 0] == 0.0

    @pytest.mark.parametrize("method", ["exact-pair", "greedy-sweep"])
    def test_two_targets_equals_cycle_metric(self, method):
        net, _ = generate_random_instance(2, seed=6)
        cache = SteadyStateCache(net)
        disp = disparity_matrix(net, cache, method=method)
        two_cycle = Cycle.from_targets(net, [1, 2])
        expected = cycle_lower_bound(two_cycle, cache).value
        assert disp.of(1, 2) == pytest.approx(expected, rel=1e-9)
        assert disp.of(2, 1) == disp.of(1, 2)

    @pytest.mark.parametrize("method", ["exact-pair", "greedy-sweep"])
    def test_dominates_zero_gap_floors(self, method):
        net, _ = generate_random_instance(5, seed=7)
        cache = SteadyStateCache(net)
        disp = disparity_matrix(net, cache, method=method)
        for i in net.ids:
            for j in net.ids:
                if i == j:
                    continue
                floor = max(cache.lower_bound(i, 0.0), cache.lower_bound(j, 0.0))
                assert disp.of(i, j) >= floor - 1e-9

    @pytest.mark.parametrize("method", ["exact-pair", "greedy-sweep"])
    def test_symmetric(self, method):
        net, _ = generate_random_instance(6, seed=8)
        disp = disparity_matrix(net, method=method)
        assert np.allclose(disp.values, disp.values.T)
        assert np.all(np.diag(disp.values) == 0.0)


class TestSimilarity:
    def test_kernel_properties(self):
        net, _ = generate_random_instance(5, seed=9)
        disp = disparity_matrix(net)
        sim = similarity_from_disparity(disp)
        s = sim.values
        assert np.allclose(np.diag(s), 1.0)
        assert np.allclose(s, s.T)
        assert np.all(s > 0) and np.all(s <= 1.0)
        # monotone decreasing in disparity
        d = disp.values
        flat = [(d[a, b], s[a, b]) for a in range(5) for b in range(5) if a < b]
        flat.sort()
        for (d1, s1), (d2, s2) in zip(flat[:-1], flat[1:]):
            if d2 > d1:
                assert s2 <= s1 + 1e-12

    def test_sigma_override(self):
        disp = DisparityMatrix(ids=[1, 2], values=np.array([[0.0, 2.0], [2.0, 0.0]]))
        sim = similarity_from_disparity(disp, sigma=1.0)
        assert sim.values[0, 1] == pytest.approx(math.exp(-2.0))


class TestSpectralCluster:
    def block_similarity(self):
        ids = [1, 2, 3, 4, 5, 6]
        s = np.full((6, 6), 1e-6)
        for block in ((0, 1, 2), (3, 4, 5)):
            for a in block:
                for b in block:
                    s[a, b] = 1.0
        from patrolplan.fleet import SimilarityMatrix
        return SimilarityMatrix(ids=ids, values=s, sigma=1.0)

    def test_two_cliques_recovered(self):
        sim = self.block_similarity()
        clusters = spectral_cluster(sim, 2, seed=0)
        assert sorted(sorted(c) for c in clusters) == [[1, 2, 3], [4, 5, 6]]

    def test_single_cluster(self):
        sim = self.block_similarity()
        assert spectral_cluster(sim, 1) == [{1, 2, 3, 4, 5, 6}]

    def test_all_singletons(self):
        net, _ = generate_random_instance(4, seed=10)
        disp = disparity_matrix(net)
        sim = similarity_from_disparity(disp)
        clusters = spectral_cluster(sim, 4, seed=0)
        assert sorted(sorted(c) for c in clusters) == [[1], [2], [3], [4]]

    def test_eigenpair_residuals(self):
        sim = self.block_similarity()
        W = sim.values
        D = np.diag(W.sum(axis=1))
        L = D - W
        import scipy.linalg
        vals, vecs = scipy.linalg.eigh(L, D)
        for k in range(2):
            residual = np.linalg.norm(L @ vecs[:, k] - vals[k] * (D @ vecs[:, k]))
            assert residual <= 1e-8
        # connected similarity graph: smallest eigenvalue 0, constant vector
        assert abs(vals[0]) <= 1e-10
        v0 = vecs[:, 0]
        assert np.allclose(v0, v0[0], atol=1e-8)

    def test_too_many_clusters_rejected(self):
        sim = self.block_similarity()
        with pytest.raises(FleetError):
            spectral_cluster(sim, 7)


class TestClusterSubnetwork:
    def test_disconnected_cluster_bridged(self):
        net = TargetNetwork(
            targets=[TargetSpec(id=k, A=0.1, Q=1.0, H=1.0, R=1.0) for k in (1, 2, 3)],
            edges=[(1, 2, 1.0), (2, 3, 1.0)],
        )
        sub = cluster_subnetwork(net, {1, 3})
        assert sub.is_connected()
        assert sub.travel[1][3] == pytest.approx(2.0)
        assert sub.path[1][3] == [2]  # pass-through stays physical


class TestPlanFleet:
    def test_single_agent_reduces_to_greedy(self):
        net, _ = generate_random_instance(5, seed=11)
        cache = SteadyStateCache(net)
        part = plan_fleet(net, 1, cache=cache, with_dwells=False)
        assert part.clusters == [set(net.ids)]
        _, metric, _ = greedy_construct(net, net.ids, cache)
        assert part.fleet_metric == pytest.approx(metric.value, rel=1e-12)

    def test_fifteen_three_structure(self):
        net, _ = generate_random_instance(15, seed=42, num_agents=3)
        part = plan_fleet(net, 3, refine=False, with_dwells=False)
        assert len(part.clusters) == 3
        covered = set()
        for c in part.clusters:
            assert c, "empty cluster"
            assert not (covered & c), "clusters overlap"
            covered |= c
        assert covered == set(net.ids)
        assert part.fleet_metric == pytest.approx(max(m.value for m in part.metrics))
        # every cluster cycle dwells on all its members
        for members, cycle in zip(part.clusters, part.cycles):
            assert cycle.dwell_targets >= members

    def test_more_agents_than_targets_rejected(self):
        net, _ = generate_random_instance(2, seed=12)
        with pytest.raises(FleetError):
            plan_fleet(net, 3)

    def test_deterministic(self):
        net, _ = generate_random_instance(10, seed=13)
        p1 = plan_fleet(net, 2, refine=False, with_dwells=False)
        p2 = plan_fleet(net, 2, refine=False, with_dwells=False)
        assert p1.clusters == p2.clusters
        assert [c.sequence() for c in p1.cycles] == [c.sequence() for c in p2.cycles]

    def test_with_dwell_schedules(self):
        net, _ = generate_random_instance(8, seed=14)
        part = plan_fleet(net, 2, refine=False, with_dwells=True)
        assert part.plans is not None
        assert part.fleet_cost >= part.fleet_metric - 1e-9
        for members, plan in zip(part.clusters, part.plans):
            assert set(plan.costs) == members


class TestTesRefine:
    def test_never_worsens_and_ratio_never_grows(self):
        for seed in (20, 21, 22):
            net, _ = generate_random_instance(12, seed=seed)
            part = plan_fleet(net, 3, refine=False, with_dwells=False)
            refined = tes_refine(part)
            assert refined.fleet_metric <= part.fleet_metric + 1e-12
            assert refined.metric_ratio <= part.metric_ratio * (1 + 1e-9)
            for entry in refined.tes_log:
                assert entry["fleet_metric_after"] <= entry["fleet_metric_before"] * (1 + 1e-12)

    def test_identity_when_balanced(self):
        net, _ = generate_random_instance(12, seed=20)
        part = plan_fleet(net, 3, refine=True, with_dwells=False)
        again = tes_refine(part)
        assert again.tes_log == part.tes_log  # no further exchange found
        assert again.clusters == part.clusters

    def test_clusters_stay_valid_after_commits(self):
        net, _ = generate_random_instance(12, seed=23)
        part = plan_fleet(net, 3, refine=True, with_dwells=False)
        covered = set()
        for members, cycle in zip(part.clusters, part.cycles):
            assert members
            assert not (covered & members)
            covered |= members
            assert cycle.dwell_targets >= members
            # unstable members must be dwellable in their own cluster's cycle
            for tid in members:
                if not net.target(tid).is_hurwitz:
                    assert tid in cycle.dwell_targets
        assert covered == set(net.ids)


class TestPartitionDocument:
    def test_fields(self):
        net, _ = generate_random_instance(8, seed=24)
        part = plan_fleet(net, 2, refine=True, with_dwells=True)
        doc = partition_to_document(part)
        assert doc["num_agents"] == 2
        assert len(doc["clusters"]) == 2
        assert len(doc["cycles"]) == 2
        assert doc["fleet_metric"] == part.fleet_metric
        assert "target_exchanges" in doc
        assert len(doc["plans"]) == 2
