use nalgebra::{DMatrix, SymmetricEigen};

use super::DpError;

/// Tensor-product Gauss-Hermite rule for a standard normal vector.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Points per dimension.
    pub points: usize,
    /// Joint nodes, each of length `dims`.
    pub nodes: Vec<Vec<f64>>,
    /// Probability weights, summing to one.
    pub weights: Vec<f64>,
}

/// Probabilists' Gauss-Hermite nodes and weights by the Golub-Welsch method.
pub fn hermite_rule(q: usize) -> Result<(Vec<f64>, Vec<f64>), DpError> {
    if !matches!(q, 3 | 5 | 7) {
        return Err(DpError::UnsupportedQuadrature(q));
    }
    // Jacobi matrix of the monic He_k recurrence: off-diagonal sqrt(k).
    let jac = DMatrix::from_fn(q, q, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..q)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Enforce exact symmetry about zero.
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q / 2 {
        let j = q - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    let outer: f64 = weights.iter().sum();
    weights[q / 2] = 1.0 - outer;
    Ok((nodes, weights))
}

pub fn build_quadrature(q: usize, dims: usize) -> Result<QuadratureRule, DpError> {
    if dims == 0 || dims > 4 {
        return Err(DpError::QuadratureDimension(dims));
    }
    let (x, w) = hermite_rule(q)?;
    let total = q.pow(dims as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut node = vec![0.0; dims];
        let mut weight = 1.0;
        // Last dimension varies fastest.
        for dim in (0..dims).rev() {
            let idx = rem % q;
            rem /= q;
            node[dim] = x[idx];
            weight *= w[idx];
        }
        nodes.push(node);
        weights.push(weight);
    }
    Ok(QuadratureRule {
        points: q,
        nodes,
        weights,
    })
}

impl QuadratureRule {
    pub fn dims(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}
