use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::Matrix;
use crate::hypgeom::{exp0_raw, project_in_place, Curvature, BALL_EPS};

/// How the optimizer treats a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Rows are ball points; Riemannian Adam.
    Ball,
    /// Square matrix kept orthogonal by QR re-projection after each step.
    Orthogonal,
    Euclidean,
}

/// Every learnable tensor of the encoder. Vectors used as row-broadcast
/// biases are stored as `1×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: Matrix,
    pub layers: Vec<Matrix>,
    pub edge_w: Matrix,
    pub edge_b: Matrix,
    pub gru_w: [Matrix; 3],
    pub gru_u: [Matrix; 3],
    pub gru_b: [Matrix; 3],
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub mlp_w2: Matrix,
    pub mlp_b2: Matrix,
}

/// Gate order inside the `gru_*` arrays.
pub const GATE_RESET: usize = 0;
pub const GATE_UPDATE: usize = 1;
pub const GATE_CANDIDATE: usize = 2;

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
}

/// Replaces `m` by the orthogonal factor of its QR decomposition (modified
/// Gram–Schmidt on columns, positive diagonal of R).
pub fn orthonormalize(m: &mut Matrix) {
    let n = m.rows;
    debug_assert_eq!(n, m.cols);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| m.at(i, j)).collect()).collect();
    for j in 0..n {
        for k in 0..j {
            let (done, rest) = cols.split_at_mut(j);
            let proj: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(&done[k]).for_each(|(v, q)| *v -= proj * q);
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            cols[j].iter_mut().for_each(|v| *v /= norm);
        } else {
            // Degenerate column: fall back to the matching unit vector.
            cols[j].iter_mut().enumerate().for_each(|(i, v)| *v = if i == j { 1.0 } else { 0.0 });
        }
    }
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            m.data[i * n + j] = *v;
        }
    }
}

/// `‖WᵀW − I‖_F`
pub fn orthogonality_error(m: &Matrix) -> f64 {
    let g = m.transpose().matmul(m);
    let mut s = 0.0;
    for i in 0..g.rows {
        for j in 0..g.cols {
            let e = g.at(i, j) - if i == j { 1.0 } else { 0.0 };
            s += e * e;
        }
    }
    s.sqrt()
}

impl ModelParams {
    pub fn init<R: Rng>(
        rng: &mut R,
        n_nodes: usize,
        dim: usize,
        n_layers: usize,
        mlp_hidden: usize,
        embedding_std: f64,
        c: Curvature,
    ) -> Self {
        let mut embeddings = gaussian(rng, n_nodes, dim, embedding_std);
        for r in 0..n_nodes {
            let mut p = exp0_raw(embeddings.row(r), c.value());
            project_in_place(&mut p, c, BALL_EPS);
            embeddings.row_mut(r).copy_from_slice(&p);
        }
        let layers = (0..n_layers)
            .map(|_| {
                let mut w = gaussian(rng, dim, dim, 1.0);
                orthonormalize(&mut w);
                w
            })
            .collect();
        let edge_w = xavier(rng, 3, 1);
        let edge_b = Matrix::zeros(1, 1);
        let gru_w = [xavier(rng, dim, dim), xavier(rng, dim, dim), xavier(rng, dim, dim)];
        let gru_u = [xavier(rng, dim, dim), xavier(rng, dim, dim), xavier(rng, dim, dim)];
        let gru_b = [Matrix::zeros(1, dim), Matrix::zeros(1, dim), Matrix::zeros(1, dim)];
        let mlp_w1 = xavier(rng, 2 * dim, mlp_hidden);
        let mlp_b1 = Matrix::zeros(1, mlp_hidden);
        let mlp_w2 = xavier(rng, mlp_hidden, 1);
        let mlp_b2 = Matrix::zeros(1, 1);
        Self { embeddings, layers, edge_w, edge_b, gru_w, gru_u, gru_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2 }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols
    }

    pub fn n_nodes(&self) -> usize {
        self.embeddings.rows
    }

    /// Canonical (name, kind, tensor) listing; the order is shared by the
    /// optimizer, the gradient checker, and the checkpoint format.
    pub fn tensors(&self) -> Vec<(String, ParamKind, &Matrix)> {
        let mut out = vec![("embeddings".to_string(), ParamKind::Ball, &self.embeddings)];
        for (i, w) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), ParamKind::Orthogonal, w));
        }
        out.push(("edge.w".into(), ParamKind::Euclidean, &self.edge_w));
        out.push(("edge.b".into(), ParamKind::Euclidean, &self.edge_b));
        for (g, name) in ["reset", "update", "candidate"].iter().enumerate() {
            out.push((format!("gru.{name}.w"), ParamKind::Euclidean, &self.gru_w[g]));
            out.push((format!("gru.{name}.u"), ParamKind::Euclidean, &self.gru_u[g]));
            out.push((format!("gru.{name}.b"), ParamKind::Euclidean, &self.gru_b[g]));
        }
        out.push(("mlp.w1".into(), ParamKind::Euclidean, &self.mlp_w1));
        out.push(("mlp.b1".into(), ParamKind::Euclidean, &self.mlp_b1));
        out.push(("mlp.w2".into(), ParamKind::Euclidean, &self.mlp_w2));
        out.push(("mlp.b2".into(), ParamKind::Euclidean, &self.mlp_b2));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.embeddings];
        out.extend(self.layers.iter_mut());
        out.push(&mut self.edge_w);
        out.push(&mut self.edge_b);
        let [w0, w1, w2] = &mut self.gru_w;
        let [u0, u1, u2] = &mut self.gru_u;
        let [b0, b1, b2] = &mut self.gru_b;
        out.extend([w0, u0, b0, w1, u1, b1, w2, u2, b2]);
        out.push(&mut self.mlp_w1);
        out.push(&mut self.mlp_b1);
        out.push(&mut self.mlp_w2);
        out.push(&mut self.mlp_b2);
        out
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        self.tensors().into_iter().map(|(_, k, _)| k).collect()
    }
}
