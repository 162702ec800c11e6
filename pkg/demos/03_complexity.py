"""
Counting correspondence configurations
======================================

Log-domain sizes of the registration and labelling search spaces,
checked against brute force on tiny grids.
"""

from dyskernel.complexity import (
    ComplexityScenario, crossover_n, dynamic_reduction_report, enumerate_small,
    log_registration_complexity, log_segmentation_complexity, sweep,
)

# 2x2 grid, every feature picks one of N - 1 partners
s = ComplexityScenario(2, 2)
print("closed form  log10:", round(log_registration_complexity(s), 4))
print("enumerated   count:", enumerate_small(s))

# with 4 labels, labelling stays cheaper until N passes the crossover
print("crossover N for 4 labels:", crossover_n(1.0, 4))
for n, lh, lc, r in sweep([4, 8, 16, 64, 256], alpha=1.0, L=4):
    print(f"N={n:4d}  log10|H|={lh:9.2f}  log10|C|={lc:8.2f}  R={r:.3f}")

# the alternative candidate count (alpha*N instead of alpha*N - 1)
print("self-inclusive form, 2x2:", round(log_registration_complexity(s, include_self=True), 4))
print("segmentation, 3x3 with 3 labels:", round(log_segmentation_complexity(ComplexityScenario(3, 3, L=3)), 4))

# effective taps and relations after dynamic sampling versus the static product
print(dynamic_reduction_report(9, 4, 9, 3))
print(dynamic_reduction_report(9, 9, 9, 9))
