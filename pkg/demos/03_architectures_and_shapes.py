"""The three reference architectures and the layer-combination grid.

Prints each stack's shape chain and parameter budget, then builds the seven
standard C3D/CLSTM orderings and shows they all land near the hybrid
stack's parameter count (unit counts of the recurrent layers are auto
scaled by a small search).
"""

from sonovox import (
    ARCHITECTURES,
    GRID_COMBOS,
    build_architecture,
    build_combo,
    count_params,
    infer_shapes,
)
from sonovox.models import parity_reference

for name in ARCHITECTURES:
    spec = build_architecture(name)
    chain = infer_shapes(spec)
    print(f"== {name}: {count_params(spec):,} parameters ==")
    shape = spec.input_shape
    for lspec, out in zip(spec.layers, chain):
        extra = ""
        if lspec.kind == "conv3d":
            extra = f"({lspec.filters}, {lspec.kernel}, strides={lspec.strides})"
        elif lspec.kind == "convlstm":
            extra = f"({lspec.units}, {lspec.kernel}, strides={lspec.strides})"
        elif lspec.kind in ("dense", "lstm", "bilstm"):
            extra = f"({lspec.units})"
        elif lspec.kind == "maxpool3d":
            extra = f"{lspec.pool}"
        elif lspec.kind == "dropout":
            extra = f"({lspec.rate})"
        elif lspec.kind == "reshape":
            extra = f"{lspec.target}"
        print(f"   {lspec.kind:<10}{extra:<28} -> {out}")
    print()

ref = parity_reference()
print(f"== grid combos, parameter parity vs hybrid reference ({ref:,}) ==")
for tokens in GRID_COMBOS:
    spec = build_combo(tokens)
    total = count_params(spec)
    units = [l.units for l in spec.layers if l.kind == "convlstm"]
    print(f"   {'+'.join(tokens):<27} {total:>9,}  ({total / ref - 1:+.1%})  "
          f"convlstm units {units}")
