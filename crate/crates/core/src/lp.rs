//! Small dense linear programs.
//!
//! The planner only ever solves LPs with a few hundred rows and columns
//! (assignment fractions for a handful of replicas, or the activation
//! relaxation used while branching), so a plain two-phase tableau simplex is
//! enough. Variables carry optional lower/upper bounds which are handled by
//! shifting and by explicit rows.

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    rel: Relation,
    rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub values: Vec<f64>,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

/// A maximization problem over bounded, continuous variables.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    lower: Vec<f64>,
    upper: Vec<Option<f64>>,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with `lower <= v <= upper` and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: Option<f64>) -> usize {
        assert!(lower.is_finite() && lower >= 0.0, "lower bound must be finite and >= 0");
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        self.lower.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(v, _)| v < self.num_vars()));
        self.rows.push(Row { coeffs, rel, rhs });
    }

    /// Maximizes the objective.
    pub fn maximize(&self) -> LpOutcome {
        let n = self.num_vars();
        // Shift every variable by its lower bound so the tableau works with v' >= 0.
        let mut rows: Vec<Row> = Vec::with_capacity(self.rows.len() + n);
        for row in &self.rows {
            let shift: f64 = row.coeffs.iter().map(|&(v, a)| a * self.lower[v]).sum();
            rows.push(Row {
                coeffs: row.coeffs.clone(),
                rel: row.rel,
                rhs: row.rhs - shift,
            });
        }
        for (v, ub) in self.upper.iter().enumerate() {
            if let Some(ub) = ub {
                let span = ub - self.lower[v];
                if span < -FEAS_EPS {
                    return LpOutcome::Infeasible;
                }
                rows.push(Row {
                    coeffs: vec![(v, 1.0)],
                    rel: Relation::Le,
                    rhs: span.max(0.0),
                });
            }
        }
        let offset: f64 = self
            .objective
            .iter()
            .zip(&self.lower)
            .map(|(c, l)| c * l)
            .sum();
        match Tableau::build(n, &rows).solve(&self.objective) {
            LpOutcome::Optimal(mut s) => {
                for (v, l) in s.values.iter_mut().zip(&self.lower) {
                    *v += l;
                }
                s.objective += offset;
                LpOutcome::Optimal(s)
            }
            other => other,
        }
    }
}

struct Tableau {
    /// `m` rows of `width` coefficients followed by the rhs column.
    data: Vec<f64>,
    m: usize,
    width: usize,
    num_structural: usize,
    first_artificial: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(num_structural: usize, rows: &[Row]) -> Self {
        let m = rows.len();
        let mut slack_count = 0;
        let mut art_count = 0;
        // Normalize to rhs >= 0 first; the relation may flip.
        let normalized: Vec<(Vec<(usize, f64)>, Relation, f64)> = rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    let rel = match r.rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (r.coeffs.iter().map(|&(v, a)| (v, -a)).collect(), rel, -r.rhs)
                } else {
                    (r.coeffs.clone(), r.rel, r.rhs)
                }
            })
            .collect();
        for (_, rel, _) in &normalized {
            match rel {
                Relation::Le => slack_count += 1,
                Relation::Ge => {
                    slack_count += 1;
                    art_count += 1;
                }
                Relation::Eq => art_count += 1,
            }
        }
        let first_slack = num_structural;
        let first_artificial = first_slack + slack_count;
        let width = first_artificial + art_count;
        let stride = width + 1;
        let mut data = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut next_slack = first_slack;
        let mut next_art = first_artificial;
        for (i, (coeffs, rel, rhs)) in normalized.into_iter().enumerate() {
            let row = &mut data[i * stride..(i + 1) * stride];
            for (v, a) in coeffs {
                row[v] += a;
            }
            row[width] = rhs;
            match rel {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
        }
        Tableau {
            data,
            m,
            width,
            num_structural,
            first_artificial,
            basis,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.width + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let stride = self.width + 1;
        let p = self.at(r, c);
        for j in 0..stride {
            self.data[r * stride + j] /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * stride);
        let (prow, after) = rest.split_at_mut(stride);
        for row in before.chunks_mut(stride).chain(after.chunks_mut(stride)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for (x, &pv) in obj.iter_mut().zip(prow.iter()) {
                *x -= f * pv;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for maximizing `costs` (entries are `z_j - c_j`; a
    /// negative entry means the column improves the objective).
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let stride = self.width + 1;
        let mut obj = vec![0.0; stride];
        for (j, &c) in costs.iter().enumerate() {
            obj[j] = -c;
        }
        for i in 0..self.m {
            let cb = costs.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..stride {
                    obj[j] += cb * self.at(i, j);
                }
            }
        }
        obj
    }

    /// Runs primal simplex on `obj`; columns `>= col_limit` never enter.
    fn iterate(&mut self, obj: &mut [f64], col_limit: usize) -> bool {
        let mut degenerate_run = 0usize;
        let max_iter = 50 * (self.m + self.width) + 1000;
        for _ in 0..max_iter {
            let bland = degenerate_run > self.m + 5;
            let mut enter = None;
            let mut best = -PIVOT_EPS * 10.0;
            for j in 0..col_limit {
                if obj[j] < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = obj[j];
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else { return false };
            if best_ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c, obj);
        }
        // Iteration cap reached; treat as converged at the current vertex.
        true
    }

    fn solve(mut self, objective: &[f64]) -> LpOutcome {
        if self.first_artificial < self.width {
            let mut phase1 = vec![0.0; self.width];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            let mut obj = self.reduced_costs(&phase1);
            self.iterate(&mut obj, self.width);
            let infeas: f64 = (0..self.m)
                .filter(|&i| self.basis[i] >= self.first_artificial)
                .map(|i| self.rhs(i))
                .sum();
            let scale = 1.0 + (0..self.m).map(|i| self.rhs(i).abs()).fold(0.0, f64::max);
            if infeas > FEAS_EPS * scale.max(1.0) * 10.0 {
                return LpOutcome::Infeasible;
            }
            // Drive zero-valued artificials out of the basis where possible.
            for i in 0..self.m {
                if self.basis[i] >= self.first_artificial {
                    let col = (0..self.first_artificial)
                        .filter(|&j| self.at(i, j).abs() > 1e-9)
                        .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
                    if let Some(c) = col {
                        let mut dummy = vec![0.0; self.width + 1];
                        self.pivot(i, c, &mut dummy);
                    }
                }
            }
        }
        let mut costs = vec![0.0; self.width];
        costs[..self.num_structural].copy_from_slice(objective);
        let mut obj = self.reduced_costs(&costs);
        if !self.iterate(&mut obj, self.first_artificial) {
            return LpOutcome::Unbounded;
        }
        let mut values = vec![0.0; self.num_structural];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.num_structural {
                values[b] = self.rhs(i).max(0.0);
            }
        }
        let objective_value = values.iter().zip(objective).map(|(v, c)| v * c).sum();
        LpOutcome::Optimal(LpSolution {
            objective: objective_value,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, None);
        let y = lp.add_var(0.0, None);
        lp.set_objective(x, 3.0);
        lp.set_objective(y, 5.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Le, 4.0);
        lp.add_constraint(vec![(y, 2.0)], Relation::Le, 12.0);
        lp.add_constraint(vec![(x, 3.0), (y, 2.0)], Relation::Le, 18.0);
        let s = lp.maximize().optimal().unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.values[0] - 2.0).abs() < 1e-9);
        assert!((s.values[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_bounds() {
        // max -t  s.t. a + b = 1, 80a - t <= 0, 40b - t <= 0  ->  t = 80/3
        let mut lp = LinearProgram::new();
        let a = lp.add_var(0.0, None);
        let b = lp.add_var(0.0, None);
        let t = lp.add_var(0.0, None);
        lp.set_objective(t, -1.0);
        lp.add_constraint(vec![(a, 1.0), (b, 1.0)], Relation::Eq, 1.0);
        lp.add_constraint(vec![(a, 80.0), (t, -1.0)], Relation::Le, 0.0);
        lp.add_constraint(vec![(b, 40.0), (t, -1.0)], Relation::Le, 0.0);
        let s = lp.maximize().optimal().unwrap();
        assert!((s.values[t] - 80.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn lower_bounds_are_respected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(2.0, Some(5.0));
        lp.set_objective(x, -1.0);
        let s = lp.maximize().optimal().unwrap();
        assert!((s.values[x] - 2.0).abs() < 1e-12);
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, None);
        lp.add_constraint(vec![(x, 1.0)], Relation::Ge, 3.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Le, 2.0);
        assert_eq!(lp.maximize(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, None);
        lp.set_objective(x, 1.0);
        assert_eq!(lp.maximize(), LpOutcome::Unbounded);

        let mut lp = LinearProgram::new();
        lp.add_var(3.0, Some(1.0));
        assert_eq!(lp.maximize(), LpOutcome::Infeasible);
    }
}
