"""Memory footprint of the 1.05e9-node / 300e9-edge configuration, plus intensity."""
from nembed.perfmodel import CostInputs, arithmetic_intensity, format_bytes, memory_cost, mixed_unit_tb

inp = CostInputs(nodes=1.05e9, edges=300e9, augmentation=10, dim=128)
m = memory_cost(inp)
print(f"{'data type':<20}{'binary':>12}{'GiB/1000':>10}")
for name, val in m.rows():
    print(f"{name:<20}{format_bytes(val):>12}{mixed_unit_tb(val):>10.3f}")
ai = arithmetic_intensity(inp)
print(f"arithmetic intensity: {ai.intensity:.3f} flop/byte")
