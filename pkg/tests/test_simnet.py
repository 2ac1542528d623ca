import pytest

from agdh.errors import ConfigError, OverlapError, UnknownNode
from agdh.group_arith import TOY
from agdh.node_fsm import Mode, NodeConfig
from agdh.oracle import audit_transcript
from agdh.simnet import (
    SECOND,
    CrashAt,
    HealAt,
    JoinAt,
    LeaveAt,
    PartitionAt,
    SimConfig,
    converged,
    converged_by,
    leaders,
    run,
)

EAGER = NodeConfig(eager_rekey=True)


def toy_run(**kwargs):
    node_config = kwargs.pop("node_config", NodeConfig())
    return run(SimConfig(**kwargs), node_config, TOY)


class TestBasics:
    def test_single_node_elects_itself_and_beacons(self):
        res = toy_run(node_count=1, seed=1, duration=60 * SECOND)
        assert leaders(res) == [1]
        node = res.nodes[1]
        assert node.session is None  # nobody to share a key with
        beacons = [r for r in res.transcript.of_kind("SEND")
                   if r.get("kind") == "IGROUP"]
        assert len(beacons) >= 5
        assert all(r.get("entries") == "0" for r in beacons)
        # election happened after the silence threshold plus one backoff slot
        config = NodeConfig()
        first = beacons[0].time
        assert config.silence_threshold + config.slot_trtd <= first
        assert first <= config.silence_threshold + \
            config.backoff_window * config.slot_trtd

    def test_two_nodes_share_key_two_expos_each(self):
        res = toy_run(node_count=2, seed=42, duration=60 * SECOND)
        assert converged(res)
        a, b = res.nodes[1], res.nodes[2]
        assert a.session.derived == b.session.derived
        member = next(n for n in (a, b) if n.mode is Mode.MEMBER)
        assert res.metrics.exp_total(member.node_id) == 2

    def test_determinism_bit_identical_transcripts(self):
        first = toy_run(node_count=5, seed=9, loss_prob=0.2, duration=45 * SECOND)
        second = toy_run(node_count=5, seed=9, loss_prob=0.2, duration=45 * SECOND)
        assert first.transcript.render() == second.transcript.render()

    def test_different_seeds_differ(self):
        first = toy_run(node_count=5, seed=1, duration=30 * SECOND)
        second = toy_run(node_count=5, seed=2, duration=30 * SECOND)
        assert first.transcript.render() != second.transcript.render()

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(node_count=0).validate()
        with pytest.raises(ConfigError):
            SimConfig(node_count=2, loss_prob=1.5).validate()
        with pytest.raises(ConfigError):
            SimConfig(node_count=2, latency_min=0).validate()


class TestChannel:
    def test_lossless_broadcast_reaches_all(self):
        res = toy_run(node_count=5, seed=3, duration=30 * SECOND)
        sends = res.transcript.of_kind("SEND")
        bcast = next(r for r in sends if r.get("dest") == "bcast")
        outcomes = res.metrics.per_message[int(bcast.get("id"))]
        assert outcomes["scheduled"] == 4
        assert outcomes["dropped"] == 0

    def test_full_loss_drops_everything(self):
        res = toy_run(node_count=5, seed=3, loss_prob=1.0, duration=30 * SECOND)
        assert res.metrics.delivered == 0
        assert res.metrics.dropped > 0
        # every node ends up leading its own silent group
        assert len(leaders(res)) == 5

    def test_conservation_per_message(self):
        res = toy_run(node_count=8, seed=5, loss_prob=0.4, duration=60 * SECOND,
                      node_config=EAGER)
        sends = {int(r.get("id")): r for r in res.transcript.of_kind("SEND")}
        for msg_id, rec in sends.items():
            outcomes = res.metrics.per_message.get(msg_id)
            if outcomes is None:
                continue
            targets = outcomes["scheduled"] + outcomes["dropped"] \
                + outcomes["suppressed"]
            if rec.get("dest") == "bcast":
                assert 0 <= targets <= 7
            else:
                assert targets <= 1
            assert outcomes["delivered"] <= outcomes["scheduled"]

    def test_latency_bounds(self):
        res = toy_run(node_count=3, seed=4, duration=30 * SECOND)
        sends = {int(r.get("id")): r.time for r in res.transcript.of_kind("SEND")}
        for rec in res.transcript.of_kind("DELIVER"):
            delay = rec.time - sends[int(rec.get("id"))]
            assert 10_000 <= delay <= 50_000


class TestPartitions:
    def test_partition_suppresses_not_drops(self):
        res = toy_run(node_count=4, seed=6, duration=60 * SECOND,
                      schedule=(PartitionAt(30 * SECOND, ((1, 2), (3, 4))),))
        suppressed = [r for r in res.transcript.of_kind("SUPPRESS")
                      if r.get("reason") == "partition"]
        assert suppressed
        assert all(r.time >= 30 * SECOND for r in suppressed)

    def test_orphan_side_elects_min_id(self):
        # nodes 1..5; either side of the split elects its own minimum
        res = toy_run(node_count=5, seed=8, duration=120 * SECOND,
                      node_config=EAGER,
                      schedule=(PartitionAt(40 * SECOND, ((1, 2, 3), (4, 5))),))
        modes = {n: res.nodes[n].mode for n in res.live}
        side_a = [n for n in (1, 2, 3) if modes[n] is Mode.LEADER]
        side_b = [n for n in (4, 5) if modes[n] is Mode.LEADER]
        assert len(side_a) == 1 and len(side_b) == 1
        # each side shares a key internally
        for side, head in (((1, 2, 3), side_a[0]), ((4, 5), side_b[0])):
            session = res.nodes[head].session
            for n in side:
                assert res.nodes[n].session.derived == session.derived

    def test_heal_merges_to_single_min_leader(self):
        res = toy_run(node_count=6, seed=11, duration=200 * SECOND,
                      node_config=EAGER,
                      schedule=(PartitionAt(60 * SECOND, ((1, 2, 3), (4, 5, 6))),
                                HealAt(120 * SECOND)))
        assert converged(res)
        [head] = leaders(res)
        # survivors of the merge follow the smaller-id leader
        demotions = [r for r in res.transcript.of_kind("STATE")
                     if (r.get("why") or "").startswith("demoted_to_")]
        for rec in demotions:
            new_leader = int(rec.get("why").rsplit("_", 1)[1])
            assert new_leader < rec.node

    def test_interim_keys_differ_from_final(self):
        res = toy_run(node_count=6, seed=11, duration=200 * SECOND,
                      node_config=EAGER,
                      schedule=(PartitionAt(60 * SECOND, ((1, 2, 3), (4, 5, 6))),
                                HealAt(120 * SECOND)))
        [head] = leaders(res)
        final = res.nodes[head].session.derived
        partition_keys = {k.derived for k in res.metrics.key_events
                          if 60 * SECOND < k.time < 120 * SECOND}
        assert partition_keys
        assert final not in partition_keys

    def test_overlapping_cells_rejected(self):
        with pytest.raises(OverlapError):
            toy_run(node_count=4, seed=1, duration=10 * SECOND,
                    schedule=(PartitionAt(SECOND, ((1, 2), (2, 3))),))

    def test_empty_partition_noop(self):
        res = toy_run(node_count=3, seed=1, duration=40 * SECOND,
                      schedule=(PartitionAt(SECOND, ()),))
        assert converged(res)


class TestChurn:
    def test_graceful_leave_rekeys_within_one_beacon(self):
        res = toy_run(node_count=4, seed=5, duration=70 * SECOND,
                      node_config=EAGER,
                      schedule=(LeaveAt(40 * SECOND, 2, graceful=True),))
        assert converged(res)
        assert 2 not in res.live
        del_send = next(r for r in res.transcript.of_kind("SEND")
                        if r.get("kind") == "DEL")
        rekey = next(r for r in res.transcript.of_kind("REKEY")
                     if r.time > 40 * SECOND)
        assert rekey.time - del_send.time <= NodeConfig().period_t

    def test_crash_rekeys_within_expiry_window(self):
        res = toy_run(node_count=4, seed=5, duration=80 * SECOND,
                      node_config=EAGER,
                      schedule=(CrashAt(40 * SECOND, 2),))
        assert converged(res)
        config = NodeConfig()
        rekey = next(r for r in res.transcript.of_kind("REKEY")
                     if r.time > 40 * SECOND)
        # expiry threshold plus one beacon period plus jitters
        bound = config.silence_threshold + config.period_t + 2 * config.jitter_max
        assert rekey.time - 40 * SECOND <= bound

    def test_leader_crash_triggers_election(self):
        probe = toy_run(node_count=6, seed=13, duration=30 * SECOND)
        [old] = leaders(probe)
        res = toy_run(node_count=6, seed=13, duration=90 * SECOND,
                      schedule=(CrashAt(30 * SECOND, old),))
        heads = leaders(res)
        assert len(heads) == 1 and heads[0] != old
        assert converged(res)

    def test_join_deferred_until_leader_renewal(self):
        # with deferred inclusion the joiner is keyless until the leader's
        # next contribution change; shorten the renewal period to observe it
        config = NodeConfig(renew_p=45 * SECOND)
        res = run(SimConfig(node_count=3, seed=5, duration=100 * SECOND,
                            schedule=(JoinAt(30 * SECOND, 9),)),
                  config, TOY)
        join_keys = [k for k in res.metrics.key_events if k.node_id == 9]
        assert join_keys
        first_key = min(k.time for k in join_keys)
        assert first_key > 45 * SECOND  # waited for a renewal fold
        assert converged(res)

    def test_join_immediate_with_eager(self):
        res = toy_run(node_count=3, seed=5, duration=60 * SECOND,
                      node_config=EAGER,
                      schedule=(JoinAt(30 * SECOND, 9),))
        join_keys = [k for k in res.metrics.key_events if k.node_id == 9]
        assert join_keys
        assert min(k.time for k in join_keys) < 40 * SECOND
        assert converged(res)

    def test_unknown_node_leave_rejected(self):
        with pytest.raises(UnknownNode):
            toy_run(node_count=3, seed=1, duration=20 * SECOND,
                    schedule=(LeaveAt(SECOND, 77, graceful=True),))


class TestAuditIntegration:
    def test_clean_lossy_run_audits_clean_on_prod(self):
        from agdh.group_arith import PROD
        res = run(SimConfig(node_count=6, seed=21, loss_prob=0.2,
                            duration=60 * SECOND), EAGER, PROD)
        report = audit_transcript(res)
        assert report.clean, report.findings

    def test_converged_by_finds_convergence_time(self):
        res = toy_run(node_count=5, seed=3, duration=60 * SECOND)
        t = converged_by(res)
        assert t is not None
        assert t <= 30 * SECOND


def test_steady_state_message_rate():
    """Established group of n: one period carries n-1 contribution unicasts
    and one announcement broadcast (counted over ten periods to absorb
    jitter at the window edges)."""
    n, periods = 5, 10
    config = NodeConfig()
    res = toy_run(node_count=n, seed=33,
                  duration=(30 + periods * 5) * SECOND)
    assert converged(res)
    window = (30 * SECOND, (30 + periods * 5) * SECOND)
    ireplies = sum(1 for r in res.transcript.of_kind("SEND")
                   if r.get("kind") == "IREPLY" and window[0] <= r.time < window[1])
    igroups = sum(1 for r in res.transcript.of_kind("SEND")
                  if r.get("kind") == "IGROUP" and window[0] <= r.time < window[1])
    slack = n - 1
    assert abs(ireplies - periods * (n - 1)) <= slack
    assert abs(igroups - periods) <= 1
