"""
Trusting the hand-written backward passes
=========================================

Every operator has an analytic backward pass. The self-check compares each
against central differences on random instances, and the tiled rasteriser
against a brute-force per-pixel compositor.
"""
from illumsplat.selfcheck import format_report, run_selfcheck

results = run_selfcheck(seed=0, instances=3)
print(format_report(results))

# a deliberately broken backward pass must be caught
broken = run_selfcheck(seed=0, instances=3, inject=("shader",))
print("\nwith the shader gradient sign flipped:")
print([r.name for r in broken if not r.passed])
