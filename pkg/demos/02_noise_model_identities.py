"""The contamination-mixture identities, exactly and by sampling.

When noisy groups are mixtures of the true groups (a fraction alpha of the
noisy majority is really minority, beta vice versa), two facts hold:

  * signed fairness gaps shrink by the factor (1 - alpha - beta), and
  * the distance between group means shrinks by |1 - alpha - beta|.

The exact path below evaluates both on population quantities; the sampled
path draws finite noisy groups and shows the same ratios up to Monte-Carlo
error. These identities are what make the pseudo-labeller selection rule
sound: the labeller with the largest mean distance has the least mixing.
"""

import numpy as np

from fairtune import NoiseSpec, verify_edm_lemma, verify_proportionality
from fairtune.noise import difference_of_means_probe, dp_gap_noisy_exact, edm_exact

mu_major, mu_minor = np.array([1.0, 0.0]), np.array([0.0, 1.0])

print("exact path (no sampling): worst deviation over the 0.1-step grid")
worst_edm = worst_dp = 0.0
for i in range(10):
    for j in range(10):
        a, b = i / 10.0, j / 10.0
        clean, noisy = edm_exact(mu_major, mu_minor, a, b)
        worst_edm = max(worst_edm, abs(noisy - abs(1 - a - b) * clean) / clean)
        gap = dp_gap_noisy_exact(0.7, 0.2, a, b)
        worst_dp = max(worst_dp, abs(gap - (1 - a - b) * 0.5))
print(f"  mean-distance identity: {worst_edm:.2e}")
print(f"  signed-gap identity:    {worst_dp:.2e}  (sign flips past alpha+beta=1)")

print()
print("sampled path (100k draws per group):")
rng = np.random.default_rng(0)
majority = rng.normal(mu_major, 1.0, (100_000, 2))
minority = rng.normal(mu_minor, 1.0, (100_000, 2))
y_major = rng.integers(0, 2, 100_000)
y_minor = rng.integers(0, 2, 100_000)
probe = difference_of_means_probe(majority, minority)

print("  alpha beta | edm ratio  target | dp ratio  eo ratio  target")
grid = [(0.0, 0.0), (0.1, 0.2), (0.2, 0.3), (0.4, 0.4), (0.6, 0.5)]
edm_records = verify_edm_lemma(majority, minority, grid, 100_000, seed=1)
for i, (alpha, beta) in enumerate(grid):
    prop = verify_proportionality(
        probe, (majority, y_major), (minority, y_minor),
        NoiseSpec(alpha, beta, seed=2 + i), 100_000,
    )
    target = 1 - alpha - beta
    print(
        f"  {alpha:.1f}   {beta:.1f} |   {edm_records[i].ratio:.3f}   {abs(target):.2f}  "
        f"|   {prop.ratio_dp:.3f}    {prop.ratio_eo:.3f}    {target:.2f}"
    )
