"""Architecture quirk support wired through intrinsics and observers.

TOY16-DPP resolves memory operands through the `dpp_translate` intrinsic:
the top 2 bits of a 16-bit far pointer select a DPP page register and the
effective address is (page << 14) | (pointer & 0x3fff).  The `dpp_override`
intrinsic forces a page for exactly the next memory-touching instruction
(the simulator's address-override window).  A write to CTX remaps the GPR
bank through an observer, modeling hardware register banking.
"""

from __future__ import annotations

from .machine import Simulator
from .observe import Event, ObserverRegistration

PAGE_SHIFT = 14
OFFSET_MASK = (1 << PAGE_SHIFT) - 1


def attach_dpp_intrinsics(sim: Simulator) -> None:
    def dpp_translate(s: Simulator, args) -> int:
        pointer = args[0]
        override = s.address_override()
        if override is not None:
            page = override
            s._touched_memory = True   # consume the window this instruction
        else:
            sel = (pointer >> PAGE_SHIFT) & 0x3
            page = s.read_varnode(s.spec.registers[f"DPP{sel}"])
        return (page << PAGE_SHIFT) | (pointer & OFFSET_MASK)

    def dpp_override(s: Simulator, args) -> None:
        s.set_address_override(args[0], window_instructions=1)

    sim.register_intrinsic("dpp_translate", dpp_translate)
    sim.register_intrinsic("dpp_override", dpp_override)


class GprBankSwitcher:
    """Observer: a CTX register write swaps R0..R7 with the named bank.

    Banks live outside the register file (hardware-internal storage); the
    active bank id is whatever CTX was last written with.
    """

    def __init__(self, sim: Simulator, bank_count: int = 4):
        self.sim = sim
        self.banks: dict[int, bytes] = {}
        self.active = 0
        self.bank_count = bank_count
        offsets = [sim.spec.registers[f"R{i}"] for i in range(8)]
        self.lo = min(vn.offset for vn in offsets)
        self.hi = max(vn.offset + vn.size for vn in offsets)
        sim.add_stateful(self)

    def attach(self) -> int:
        reg = ObserverRegistration(
            kinds=frozenset({"register_write"}),
            register=self.sim.spec.registers["CTX"])
        return self.sim.observers.attach(reg, self.on_ctx_write)

    def on_ctx_write(self, event: Event):
        bank = event.value % self.bank_count
        if bank == self.active:
            return None
        rf = self.sim.state.register_file
        self.banks[self.active] = bytes(rf[self.lo:self.hi])
        stored = self.banks.get(bank)
        if stored is None:
            stored = bytes(self.hi - self.lo)
        rf[self.lo:self.hi] = stored
        self.active = bank
        return None

    def snapshot_state(self):
        return (dict(self.banks), self.active)

    def restore_state(self, blob):
        self.banks, self.active = dict(blob[0]), blob[1]
