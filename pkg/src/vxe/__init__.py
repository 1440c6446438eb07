"""vxe - synthesize per-firmware simulators from declarative processor specs.

The package lifts machine code to a register-transfer IR, optimizes it with
equality saturation, executes it under several policies with observer-based
introspection, models peripherals and interrupts declaratively, and
coordinates multiple simulators for inter-device analysis and fuzzing.
"""

__version__ = "0.1.0"
