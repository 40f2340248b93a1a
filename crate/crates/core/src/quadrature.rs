//! Gauss–Legendre rules and tensor-product node generation on boxes.

use std::f64::consts::PI;

/// A one-dimensional rule on the reference interval [0, 1]; weights sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// `q`-point Gauss–Legendre rule, exact for polynomials of degree 2q - 1.
    pub fn gauss_legendre(q: usize) -> Self {
        assert!(q >= 1, "quadrature needs at least one node");
        let mut nodes = vec![0.0; q];
        let mut weights = vec![0.0; q];
        let n = q as f64;
        for i in 0..q.div_ceil(2) {
            // Newton iteration from the Chebyshev-like initial guess.
            let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(q, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(q, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - z);
            nodes[q - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[q - 1 - i] = 0.5 * w;
        }
        Rule1d { nodes, weights }
    }

    /// `k`-point composite midpoint rule.
    pub fn midpoint(k: usize) -> Self {
        assert!(k >= 1, "quadrature needs at least one node");
        let w = 1.0 / k as f64;
        Rule1d {
            nodes: (0..k).map(|i| (i as f64 + 0.5) * w).collect(),
            weights: vec![w; k],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn legendre_with_derivative(q: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = q as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Tensor product of a 1D rule over `dim` axes. Yields reference nodes in
/// [0,1]^dim (axis 0 slowest) together with their product weights.
#[derive(Clone, Debug)]
pub struct TensorRule {
    dim: usize,
    rule: Rule1d,
}

impl TensorRule {
    pub fn new(dim: usize, rule: Rule1d) -> Self {
        TensorRule { dim, rule }
    }

    pub fn len(&self) -> usize {
        self.rule.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Calls `f(reference_point, weight)` for every tensor node.
    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let q = self.rule.len();
        let mut idx = vec![0usize; self.dim];
        let mut point = vec![0.0; self.dim];
        for _ in 0..self.len() {
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                point[k] = self.rule.nodes[i];
                w *= self.rule.weights[i];
            }
            f(&point, w);
            for k in (0..self.dim).rev() {
                idx[k] += 1;
                if idx[k] < q {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        for q in 1..=8 {
            let rule = Rule1d::gauss_legendre(q);
            for deg in 0..(2 * q) {
                let approx: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                assert_abs_diff_eq!(approx, 1.0 / (deg as f64 + 1.0), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn four_point_nodes_match_table() {
        let rule = Rule1d::gauss_legendre(4);
        // +-0.3399810435848563, +-0.8611363115940526 on [-1, 1]
        assert_abs_diff_eq!(rule.nodes[0], 0.5 * (1.0 - 0.8611363115940526), epsilon = 1e-15);
        assert_abs_diff_eq!(rule.nodes[1], 0.5 * (1.0 - 0.3399810435848563), epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights[0], 0.5 * 0.3478548451374538, epsilon = 1e-15);
    }

    #[test]
    fn tensor_rule_weights_sum_to_one() {
        let t = TensorRule::new(3, Rule1d::gauss_legendre(3));
        let mut total = 0.0;
        let mut count = 0;
        t.for_each(|_, w| {
            total += w;
            count += 1;
        });
        assert_eq!(count, 27);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }
}
