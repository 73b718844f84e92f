"""
Checking backpropagated gradients
=================================

Every loss component is composed with both branches at widths [8, 8, 8]
and compared against central finite differences over all parameters.
"""

# %%
from crosstriplet.gradcheck import run_gradcheck

for seed in range(3):
    for row in run_gradcheck(seed):
        print(f"seed {seed}  {row.component:<34} max rel err {row.max_rel_error:.2e}  "
              f"{'ok' if row.passed else 'FAIL'}")
