# Reproduce the trainable-parameter budget per adapted-block set.
# Adapting the MLP of the last three blocks of a B/32 tower with one
# shared rank-8 LoRA plus rank-4/8/16 experts and a 3-way router costs
# 173,569 trainable scalars, about 0.2% of the model.

from molex import trainer

rows = trainer.params_report(presets=("b32", "b16", "l14"))
print(trainer.params_report_tsv(rows))

print("exact arithmetic for the B/32 last-3 row:")
per_block = 36 * 2 * 768 + 3 * 768   # (8+4+8+16 ranks) A/B pairs + router
print(f"  per adapted block: {per_block:,}")
print(f"  3 blocks + 769-parameter head: {3 * per_block + 769:,}")

print()
print("equivalent command: molex params --preset all")
