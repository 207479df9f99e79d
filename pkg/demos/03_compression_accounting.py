"""Parameter accounting of the full-scale network and its low-rank compressed forms."""
from deepfont import compress
from deepfont.network import FULL, build_cnn

spec = build_cnn(FULL, compress.FULL_CLASSES, 2)
base = compress.size_report(spec)
for name, count, _ in base.rows():
    print(f"{name:6s} {count:>12,d}")
print(f"total  {base.total_before:>12,d}")

# fc6 is 36,864 x 4,096 and holds 85% of the weights. Factorizing it at rank k
# stores k(m + n + 1) numbers instead.
print("\n   k   fc6 size        total  ratio")
for k in (5, 10, 50, 100):
    r = compress.size_report(spec, {"fc6": k})
    print(f"{k:4d} {r.compressed['fc6']:>10,d} {r.total_after:>12,d}   {r.ratio_2dp}")

mini = compress.mini_model_report()
print(f"\nfc6/fc7 at 2048 wide, fc6 at k=10: {mini.total_after:,d} parameters, "
      f"{mini.ratio_2dp}x smaller than the default model")
