"""
Tour of the three task environments
===================================

Each environment is a grid DAG: moves go right or down (plus an explicit
stop action on the open grid), so every trajectory terminates and exact
enumeration stays cheap.
"""

from pgflow import make_task

# -- open grid: every cell can be stopped on --------------------------------

gw = make_task("grid_world", 0, grid_size=(8, 8), r0=0.05)
print(gw)
print("  states:", len(gw.states), " terminals:", len(gw.enumerate_terminals()))
best = max(r for _, r in gw.enumerate_terminals())
modes = [s for s, r in gw.enumerate_terminals() if r == best]
print("  highest reward", best, "at", sorted((s.row, s.col) for s in modes))

# -- frozen lake: three goal cells, holes end the walk early -----------------

fl = make_task("frozen_lake", 3, grid_size=(8, 8), n_holes=4)
print(fl)
print("  holes:", sorted(fl.spec.holes))
for s, r in sorted(fl.enumerate_terminals(), key=lambda t: -t[1])[:4]:
    print(f"  terminal ({s.row},{s.col}) reward {r}")

# -- cliff walking: a corridor of traps guards the goal ----------------------

cw = make_task("cliff_walking", 0, grid_size=(4, 12), cliff_length=8)
print(cw)
rows = [["." for _ in range(cw.cols)] for _ in range(cw.rows)]
for s, r in cw.enumerate_terminals():
    rows[s.row][s.col] = "G" if r >= 1.0 else "x"
rows[0][0] = "S"
print("\n".join("  " + "".join(line) for line in rows))

# transition sanity: actions are only offered where they stay on the grid
start = gw.start
print("valid actions at start:", gw.valid_actions(start))
child = gw.transition(start, gw.valid_actions(start)[0])
print("one step:", (start.row, start.col), "->", (child.row, child.col))
