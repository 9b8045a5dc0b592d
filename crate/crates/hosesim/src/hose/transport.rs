//! Exact linear maximization over a capacitated transportation polytope.
//!
//! Variables are nonnegative per-cell shipments; each cell belongs to one
//! row and one column, and the shipments in a row (column) may not exceed
//! that row's (column's) capacity. Solved with a dense primal simplex over
//! arbitrary-precision rationals using Bland's pivot rule, so the optimum
//! is exact and termination is guaranteed even on degenerate instances.
//! Problem sizes here are tiny, so no sparsity or revised form.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub row: usize,
    pub col: usize,
    pub weight: BigRational,
}

#[derive(Debug, Clone)]
pub(crate) struct Instance {
    pub row_caps: Vec<BigRational>,
    pub col_caps: Vec<BigRational>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub objective: BigRational,
    /// Shipment per cell, in the order the cells were given.
    pub cell_values: Vec<BigRational>,
}

/// Maximizes `sum(weight * shipment)` subject to the capacity constraints.
/// Capacities must be nonnegative; the origin is then always feasible.
pub(crate) fn maximize(inst: &Instance) -> Solution {
    let n = inst.cells.len();
    let m = inst.row_caps.len() + inst.col_caps.len();
    debug_assert!(inst.row_caps.iter().chain(&inst.col_caps).all(|c| !c.is_negative()));
    debug_assert!(inst
        .cells
        .iter()
        .all(|c| c.row < inst.row_caps.len() && c.col < inst.col_caps.len()));

    // Tableau layout: columns [structural 0..n | slack n..n+m | rhs].
    // Row i holds constraint i; row m holds reduced costs and -objective.
    let width = n + m + 1;
    let mut tab = vec![vec![BigRational::zero(); width]; m + 1];
    for (j, cell) in inst.cells.iter().enumerate() {
        tab[cell.row][j] = BigRational::one();
        tab[inst.row_caps.len() + cell.col][j] = BigRational::one();
        tab[m][j] = -cell.weight.clone();
    }
    for i in 0..m {
        tab[i][n + i] = BigRational::one();
        tab[i][n + m] = if i < inst.row_caps.len() {
            inst.row_caps[i].clone()
        } else {
            inst.col_caps[i - inst.row_caps.len()].clone()
        };
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    loop {
        // Bland: entering variable is the lowest-index negative reduced cost.
        let Some(enter) = (0..n + m).find(|&j| tab[m][j].is_negative()) else {
            break;
        };
        // Ratio test; ties broken by the smallest basis variable index, which
        // with Bland's entering rule prevents cycling.
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if !tab[i][enter].is_positive() {
                continue;
            }
            let ratio = &tab[i][n + m] / &tab[i][enter];
            let better = match leave {
                None => true,
                Some(l) => {
                    let best = &tab[l][n + m] / &tab[l][enter];
                    ratio < best || (ratio == best && basis[i] < basis[l])
                }
            };
            if better {
                leave = Some(i);
            }
        }
        let leave = leave.expect("bounded polytope: some coefficient must be positive");

        // Pivot on (leave, enter).
        let pivot = tab[leave][enter].clone();
        for v in &mut tab[leave] {
            *v /= &pivot;
        }
        for i in 0..=m {
            if i == leave || tab[i][enter].is_zero() {
                continue;
            }
            let factor = tab[i][enter].clone();
            for j in 0..width {
                let delta = &factor * &tab[leave][j];
                tab[i][j] -= delta;
            }
        }
        basis[leave] = enter;
    }

    let mut cell_values = vec![BigRational::zero(); n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            cell_values[var] = tab[i][n + m].clone();
        }
    }
    Solution { objective: tab[m][n + m].clone(), cell_values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::{FromPrimitive, ToPrimitive};

    fn rat(x: i64) -> BigRational {
        BigRational::from_i64(x).unwrap()
    }

    fn half() -> BigRational {
        BigRational::new(1.into(), 2.into())
    }

    fn solve(rows: &[i64], cols: &[i64], cells: &[(usize, usize, i64)]) -> Solution {
        maximize(&Instance {
            row_caps: rows.iter().map(|&r| rat(r)).collect(),
            col_caps: cols.iter().map(|&c| rat(c)).collect(),
            cells: cells
                .iter()
                .map(|&(row, col, w)| Cell { row, col, weight: rat(w) })
                .collect(),
        })
    }

    #[test]
    fn empty_objective_is_zero() {
        let sol = solve(&[1, 2], &[3], &[]);
        assert_eq!(sol.objective, rat(0));
    }

    // Picking cells in descending weight order yields 3 here; the optimum
    // is 4. Guards against ever swapping the solver for a greedy shortcut.
    #[test]
    fn beats_greedy_cell_selection() {
        let sol = solve(&[1, 1], &[1, 1], &[(0, 0, 3), (0, 1, 2), (1, 0, 2)]);
        assert_eq!(sol.objective, rat(4));
        assert_eq!(sol.cell_values[0], rat(0));
        assert_eq!(sol.cell_values[1], rat(1));
        assert_eq!(sol.cell_values[2], rat(1));
    }

    #[test]
    fn respects_both_row_and_column_caps() {
        // Two senders into one receiver of capacity 1.
        let sol = solve(&[1, 1], &[1], &[(0, 0, 1), (1, 0, 1)]);
        assert_eq!(sol.objective, rat(1));
        // One sender into two receivers, sender cap binds.
        let sol = solve(&[1], &[1, 1], &[(0, 0, 1), (0, 1, 1)]);
        assert_eq!(sol.objective, rat(1));
    }

    #[test]
    fn fractional_capacities_stay_exact() {
        let sol = maximize(&Instance {
            row_caps: vec![half()],
            col_caps: vec![rat(7)],
            cells: vec![Cell { row: 0, col: 0, weight: rat(1) }],
        });
        assert_eq!(sol.objective, half());
        assert_eq!(sol.objective.to_f64().unwrap(), 0.5);
    }

    #[test]
    fn zero_capacity_rows_are_degenerate_but_terminate() {
        let sol = solve(
            &[0, 2, 0],
            &[1, 0, 1],
            &[(0, 0, 5), (1, 0, 1), (1, 1, 9), (1, 2, 1), (2, 2, 7)],
        );
        // Only row 1 can ship: one unit to col 0 and one to col 2.
        assert_eq!(sol.objective, rat(2));
    }

    #[test]
    fn shipments_satisfy_all_constraints() {
        let rows = [3, 1, 2];
        let cols = [2, 2, 1];
        let cells: Vec<(usize, usize, i64)> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c, ((r * 3 + c) % 4 + 1) as i64)))
            .collect();
        let sol = solve(&rows, &cols, &cells);
        let mut row_sum = vec![rat(0); 3];
        let mut col_sum = vec![rat(0); 3];
        for (v, &(r, c, _)) in sol.cell_values.iter().zip(&cells) {
            assert!(!v.is_negative());
            row_sum[r] += v;
            col_sum[c] += v;
        }
        for r in 0..3 {
            assert!(row_sum[r] <= rat(rows[r]));
        }
        for c in 0..3 {
            assert!(col_sum[c] <= rat(cols[c]));
        }
        let recomputed: BigRational = sol
            .cell_values
            .iter()
            .zip(&cells)
            .map(|(v, &(_, _, w))| v * rat(w))
            .sum();
        assert_eq!(recomputed, sol.objective);
    }
}
