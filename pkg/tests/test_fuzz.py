"""Fuzz engine: mutation, determinism, goals, and corpus sharing."""

import random

import pytest

from vxe.config import load_config
from vxe.fuzz import FuzzEngine, Mutator, run_fuzz


class TestMutator:
    def test_deterministic_for_seed(self):
        a = Mutator(random.Random(1), 64)
        b = Mutator(random.Random(1), 64)
        data = b"\x00\x01\x02\x03"
        assert [a.mutate(data, None) for _ in range(50)] == \
               [b.mutate(data, None) for _ in range(50)]

    def test_respects_max_len(self):
        mutator = Mutator(random.Random(2), 8)
        data = b"\xAA" * 8
        for _ in range(200):
            data = mutator.mutate(data, b"\xBB" * 8)
            assert 1 <= len(data) <= 8

    def test_never_empty(self):
        mutator = Mutator(random.Random(3), 16)
        data = b"\x00"
        for _ in range(200):
            data = mutator.mutate(data, None)
            assert data


class TestCampaigns:
    def test_reproducible_with_fixed_seed(self, workspace, tmp_path):
        def campaign(out):
            config = load_config(workspace.config("backdoor"))
            config.fuzz.max_execs = 3000
            config.fuzz.corpus_dir = str(tmp_path / out)
            report = run_fuzz(config)
            return (report.executions, report.coverage,
                    [g[1] for g in report.goals])
        assert campaign("a") == campaign("b")

    def test_red_zone_goal_via_fuzzing(self, workspace, tmp_path):
        config = load_config(workspace.config("overflow"))
        config.fuzz.corpus_dir = str(tmp_path / "corpus")
        report = run_fuzz(config)
        assert report.goals, "red-zone write never found"
        index, data = report.goals[0]
        assert len(data) > 62

    def test_splitting_coverage_superset_of_control(self, workspace,
                                                    tmp_path):
        """With identical seeds and budgets, splitting only adds feedback
        signals: branch-direction coverage is a superset."""
        def run(splitting, out):
            config = load_config(workspace.config("backdoor"))
            config.fuzz.max_execs = 2000
            config.fuzz.splitting = splitting
            config.fuzz.corpus_dir = str(tmp_path / out)
            config.fuzz.stop_on_goal = False
            from vxe.environment import Environment
            from vxe.fuzz import FuzzEngine
            env = Environment(config)
            device = env.devices[config.fuzz.device]
            engine = FuzzEngine(device.sim,
                                device.peripherals["request"],
                                config.fuzz)
            engine.run()
            return {item for item in engine.coverage.covered
                    if len(item) == 2}
        with_split = run(True, "s")
        without = run(False, "n")
        assert without <= with_split

    def test_multi_instance_shares_corpus(self, workspace, tmp_path):
        config = load_config(workspace.config("backdoor"))
        config.fuzz.max_execs = 40_000
        config.fuzz.instances = 2
        config.fuzz.corpus_dir = str(tmp_path / "corpus")
        report = run_fuzz(config)
        assert report.executions <= 80_000
        assert report.corpus_size >= 2   # shared finds propagated

    def test_warm_up_failure_is_configuration_error(self, workspace,
                                                    tmp_path):
        config = load_config(workspace.config("backdoor"))
        config.fuzz.snapshot_at = 0xDEAD000   # unreachable
        with pytest.raises(RuntimeError, match="snapshot point"):
            run_fuzz(config)
