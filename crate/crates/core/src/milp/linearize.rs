use super::LinearConstraint;

/// An affine expression `constant + Σ coeff·x_j` known to take only the
/// values 0 and 1 on the feasible set (a variable, its complement, or a sum
/// of one-hot entries).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl BinaryExpr {
    pub fn var(j: usize) -> Self {
        Self {
            terms: vec![(j, 1.0)],
            constant: 0.0,
        }
    }

    /// `1 − x_j`.
    pub fn complement(j: usize) -> Self {
        Self {
            terms: vec![(j, -1.0)],
            constant: 1.0,
        }
    }

    pub fn sum(vars: impl IntoIterator<Item = usize>) -> Self {
        Self {
            terms: vars.into_iter().map(|j| (j, 1.0)).collect(),
            constant: 0.0,
        }
    }

    /// `1 − Σ vars`.
    pub fn complement_of_sum(vars: impl IntoIterator<Item = usize>) -> Self {
        Self {
            terms: vars.into_iter().map(|j| (j, -1.0)).collect(),
            constant: 1.0,
        }
    }

    pub fn eval(&self, x: &[u8]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * f64::from(x[j])).sum::<f64>()
    }
}

/// `≤` rows forcing `z = Π factors` whenever every factor is 0 or 1:
/// `z ≤ f` for each factor and `z ≥ Σ f − (m − 1)`.
pub fn linearize_binary_product(z: usize, factors: &[BinaryExpr]) -> Vec<LinearConstraint> {
    assert!(!factors.is_empty(), "a product needs at least one factor");
    let mut rows = Vec::with_capacity(factors.len() + 1);
    for f in factors {
        let mut terms = vec![(z, 1.0)];
        terms.extend(f.terms.iter().map(|&(j, a)| (j, -a)));
        rows.push(LinearConstraint::new(terms, f.constant));
    }
    let mut terms: Vec<(usize, f64)> = factors.iter().flat_map(|f| f.terms.iter().copied()).collect();
    terms.push((z, -1.0));
    let constants: f64 = factors.iter().map(|f| f.constant).sum();
    rows.push(LinearConstraint::new(terms, (factors.len() - 1) as f64 - constants));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve, MilpProblem, SolveStatus};

    fn feasible_z(rows: &[LinearConstraint], x: &mut [u8], z: usize) -> Vec<u8> {
        (0..=1u8)
            .filter(|&v| {
                x[z] = v;
                rows.iter().all(|r| r.activity(x) <= r.rhs + 1e-12)
            })
            .collect()
    }

    #[test]
    fn fixed_factor_examples() {
        // x0 = x1 = 1 ⇒ z = 1; x0 = 1, x1 = 0 ⇒ z = 0.
        let rows = linearize_binary_product(2, &[BinaryExpr::var(0), BinaryExpr::var(1)]);
        assert_eq!(feasible_z(&rows, &mut vec![1, 1, 0], 2), vec![1]);
        assert_eq!(feasible_z(&rows, &mut vec![1, 0, 0], 2), vec![0]);
    }

    #[test]
    fn exhaustive_products_up_to_four_factors() {
        for m in 1..=4usize {
            for comp_mask in 0..(1u32 << m) {
                let factors: Vec<BinaryExpr> = (0..m)
                    .map(|i| if comp_mask >> i & 1 == 1 { BinaryExpr::complement(i) } else { BinaryExpr::var(i) })
                    .collect();
                let rows = linearize_binary_product(m, &factors);
                for code in 0..(1u32 << m) {
                    let mut x: Vec<u8> = (0..m).map(|i| (code >> i & 1) as u8).collect();
                    x.push(0);
                    let product: u8 = factors.iter().map(|f| f.eval(&x) as u8).product();
                    assert_eq!(feasible_z(&rows, &mut x, m), vec![product], "m={m} comp={comp_mask:b} x={code:b}");
                }
            }
        }
    }

    #[test]
    fn one_hot_sum_factors() {
        // Two one-hot groups {0,1,2} and {3,4,5}; z = (x0 + x1) · (1 − x3).
        let factors = [BinaryExpr::sum([0, 1]), BinaryExpr::complement_of_sum([3])];
        let rows = linearize_binary_product(6, &factors);
        for a in 0..3 {
            for b in 3..6 {
                let mut x = vec![0u8; 7];
                x[a] = 1;
                x[b] = 1;
                let product = (factors[0].eval(&x) * factors[1].eval(&x)) as u8;
                assert_eq!(feasible_z(&rows, &mut x, 6), vec![product]);
            }
        }
    }

    #[test]
    fn solver_respects_linearized_product() {
        // Reward z but charge each factor: z = x0·x1 is worth taking.
        let mut p = MilpProblem::new(3).with_objective(vec![1.0, 1.0, -3.0]);
        p.le_constraints = linearize_binary_product(2, &[BinaryExpr::var(0), BinaryExpr::var(1)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.assignment, vec![1, 1, 1]);
    }
}
