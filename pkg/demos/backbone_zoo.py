"""Parameter budgets of the four backbones in each mode.

The adaptive mode costs one scalar per convolution output channel, which is
the same order as the biases; the QP-plane baseline instead widens the first
convolution by one input channel.  dcad and vrcnn are exact reconstructions
(vrcnn is bias-free; its published total counts weights only); liu and
tucodec are flagged stand-ins sized near their published totals.
"""

from qafilter import build_model, count_params
from qafilter.models import MODEL_NAMES, conv_layers

print(f"{'model':<10} {'vanilla':>10} {'qp-adaptive':>12} {'qp-map':>10}  notes")
for name in MODEL_NAMES:
    counts = {mode: count_params(build_model(name, mode)) for mode in
              ("vanilla", "qp-adaptive", "qp-map")}
    note = "approximate stand-in" if counts["vanilla"].approximate else "exact"
    print(f"{name:<10} {counts['vanilla'].total:>10,} {counts['qp-adaptive'].total:>12,} "
          f"{counts['qp-map'].total:>10,}  {note}")

print("\nper-layer breakdown of dcad (qp-adaptive):")
pc = count_params(build_model("dcad", "qp-adaptive"))
print(f"{'layer':<8} {'weights':>9} {'biases':>7} {'thetas':>7}")
for row in pc.layers:
    print(f"{row.name:<8} {row.weights:>9,} {row.biases:>7} {row.thetas:>7}")
print(f"{'total':<8} {pc.weights:>9,} {pc.biases:>7} {pc.thetas:>7}")

spec = build_model("dcad", "qp-adaptive")
channel_sum = sum(c.out_channels for c in conv_layers(spec.layers))
print(f"\nmodulation cost = sum of output channels = {channel_sum} "
      f"(the vanilla-to-adaptive delta)")
