"""Config loading, coordinator, and whole-environment behavior."""

import glob
import os
import threading

import pytest

from vxe.config import ConfigError, load_config
from vxe.coordinator import Coordinator, Message
from vxe.environment import Environment, run_vxe


class TestLoadConfig:
    def test_bundled_interdevice_shape(self, workspace):
        config = load_config(workspace.config("interdevice"))
        assert [d.name for d in config.devices] == ["sender", "gateway"]
        assert len(config.routes) == 2

    def test_route_to_unknown_device(self, tmp_path, workspace):
        bad = tmp_path / "bad.toml"
        bad.write_text(f"""
[[device]]
name = "a"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}

[[route]]
from = "a"
event = {{ kind = "memory_write", addr = 1 }}
to = "ghost"
action = {{ kind = "feed_bytes" }}
""")
        with pytest.raises(ConfigError, match="route\\[0\\].to"):
            load_config(str(bad))

    def test_missing_image_file(self, tmp_path, workspace):
        bad = tmp_path / "bad.toml"
        bad.write_text(f"""
[[device]]
name = "a"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "missing.bin", base = 0 }}
""")
        with pytest.raises(ConfigError, match="no such file"):
            load_config(str(bad))

    def test_fuzz_input_peripheral_must_exist(self, tmp_path, workspace):
        bad = tmp_path / "bad.toml"
        bad.write_text(f"""
[[device]]
name = "a"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}

[fuzz]
device = "a"
input = "nonexistent"
""")
        with pytest.raises(ConfigError, match="fuzz.input"):
            load_config(str(bad))


class TestCoordinator:
    def test_per_sender_fifo_order(self):
        coordinator = Coordinator()
        coordinator.register_device("dev")
        for i in range(10):
            coordinator.route(Message("src", "m", i), "dev")
        drained = coordinator.drain("dev")
        assert [m.payload for m in drained] == list(range(10))

    def test_route_to_stopped_device_drops_with_diagnostic(self):
        coordinator = Coordinator()
        coordinator.register_device("dev")
        coordinator.mark_stopped("dev")
        assert not coordinator.route(Message("src", "m", 0), "dev")
        assert coordinator.dropped == 1
        assert coordinator.diagnostics

    def test_overflow_drops_oldest(self):
        coordinator = Coordinator(queue_limit=3)
        coordinator.register_device("dev")
        for i in range(5):
            coordinator.route(Message("src", "m", i), "dev")
        assert [m.payload for m in coordinator.drain("dev")] == [2, 3, 4]
        assert coordinator.dropped == 2

    def test_interleaved_fact_puts_are_atomic(self):
        coordinator = Coordinator()
        written = [b"a" * 8, b"b" * 8]

        def writer(data):
            for _ in range(1000):
                coordinator.fact_put("ns", "key", data)

        threads = [threading.Thread(target=writer, args=(d,))
                   for d in written]
        for t in threads:
            t.start()
        for _ in range(1000):
            value = coordinator.fact_get("ns", "key")
            assert value is None or value in written
        for t in threads:
            t.join()

    def test_fact_visible_across_devices(self):
        coordinator = Coordinator()
        coordinator.fact_put("coverage", "a", b"\x01")
        assert coordinator.fact_get("coverage", "a") == b"\x01"
        assert coordinator.fact_keys("coverage") == ["a"]


class TestEnvironment:
    def test_single_device_matches_direct_run(self, toy32, workspace):
        from vxe.machine import Simulator
        env = Environment(load_config(workspace.config("hello")))
        reasons = env.run()
        via_env = env.devices["board"].sim

        direct = Simulator(toy32)
        with open(workspace.images["hello"], "rb") as f:
            direct.load_image(f.read(), 0, entry=0)
        direct.state.map_page(0x7000)
        direct.run(instruction_budget=2_000_000)

        assert reasons["board"].kind == "halt"
        assert bytes(via_env.state.register_file) == bytes(
            direct.state.register_file)
        assert via_env.read_mem(0x7000, 2) == direct.read_mem(0x7000, 2)

    def test_same_firmware_devices_share_lift_cache(self, tmp_path,
                                                    workspace):
        config_text = f"""
[[device]]
name = "a"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}
ram = [[0x7000, 0x7FFF]]

[[device]]
name = "b"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}
ram = [[0x7000, 0x7FFF]]
"""
        path = tmp_path / "pair.toml"
        path.write_text(config_text)
        env = Environment(load_config(str(path)))
        env.run()
        cache = env.devices["a"].sim.cache
        assert cache is env.devices["b"].sim.cache
        assert cache.hits >= 1
        assert cache.saturation_calls == cache.misses

    def test_device_fault_stops_only_that_device(self, tmp_path,
                                                 workspace):
        config_text = f"""
[[device]]
name = "crasher"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}
# no ram mapping: the store at 0x7000 faults

[[device]]
name = "survivor"
spec = "{workspace.root}/specs/toy32.spec"
image = {{ path = "{workspace.images['hello']}", base = 0 }}
ram = [[0x7000, 0x7FFF]]
"""
        path = tmp_path / "crash.toml"
        path.write_text(config_text)
        reasons = run_vxe(load_config(str(path)))
        assert reasons["crasher"].kind == "fault"
        assert reasons["survivor"].kind == "halt"

    def test_no_cross_device_shared_mutable_state(self, workspace):
        env = Environment(load_config(workspace.config("interdevice")))
        sender = env.devices["sender"].sim
        gateway = env.devices["gateway"].sim
        assert sender.state.ram is not gateway.state.ram
        gateway_pages = {base: bytes(page)
                         for base, page in gateway.state.ram.items()}
        sender.state.map_page(0x123000)
        sender.write_mem(0x123000, 4, 0xBEEF)
        for base, page in gateway_pages.items():
            assert bytes(gateway.state.ram[base]) == page

    def test_interdevice_pairs_on_new_coverage(self, workspace, tmp_path):
        out = str(tmp_path / "out")
        env = Environment(load_config(workspace.config("interdevice")),
                          out_dir=out)
        env.run()
        traces = sorted(glob.glob(os.path.join(out, "traces",
                                               "trace-*.txt")))
        inputs = sorted(glob.glob(os.path.join(out, "traces",
                                               "input-*.bin")))
        assert len(traces) >= 1
        assert len(traces) == len(inputs)
        dumper = env.devices["sender"].observers["dumper"]
        coverage = env.devices["gateway"].observers["cov"]
        assert dumper.pairs <= len(coverage.covered)
