//! Gated recurrent unit shared by the encoder, the decoder and the contexter.
//!
//! ```text
//! z_t  = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t  = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! h~_t = tanh(W x_t + U (r_t * h_{t-1}) + b)
//! h_t  = (1 - z_t) * h_{t-1} + z_t * h~_t
//! ```
//!
//! The input half (`W x + b`) is split from the recurrent half so callers that
//! feed the same inputs many times (the contexter rereads the whole source for
//! every target word) can project once and reuse it.

use rand::Rng;

use crate::numerics::{sigmoid, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_c: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_c: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_c: Matrix,
}

/// Pre-activations contributed by the input: `W_* x + b_*` for the three
/// gates. Also used for pre-activation gradients in the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePre {
    pub z: Vector,
    pub r: Vector,
    pub c: Vector,
}

impl GatePre {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            z: vec![0.0; hidden],
            r: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn add(&mut self, other: &GatePre) {
        for (a, b) in [
            (&mut self.z, &other.z),
            (&mut self.r, &other.r),
            (&mut self.c, &other.c),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Everything one step needs to run backward.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: Vector,
    pub r: Vector,
    pub cand: Vector,
    pub h: Vector,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_c: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_c: Matrix::zeros(hidden, hidden),
            b_z: Matrix::zeros(hidden, 1),
            b_r: Matrix::zeros(hidden, 1),
            b_c: Matrix::zeros(hidden, 1),
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for m in [
            &mut p.w_z, &mut p.w_r, &mut p.w_c, &mut p.u_z, &mut p.u_r, &mut p.u_c,
        ] {
            m.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Matrix)> {
        vec![
            (format!("{prefix}.w_z"), &self.w_z),
            (format!("{prefix}.w_r"), &self.w_r),
            (format!("{prefix}.w_c"), &self.w_c),
            (format!("{prefix}.u_z"), &self.u_z),
            (format!("{prefix}.u_r"), &self.u_r),
            (format!("{prefix}.u_c"), &self.u_c),
            (format!("{prefix}.b_z"), &self.b_z),
            (format!("{prefix}.b_r"), &self.b_r),
            (format!("{prefix}.b_c"), &self.b_c),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Matrix)> {
        vec![
            (format!("{prefix}.w_z"), &mut self.w_z),
            (format!("{prefix}.w_r"), &mut self.w_r),
            (format!("{prefix}.w_c"), &mut self.w_c),
            (format!("{prefix}.u_z"), &mut self.u_z),
            (format!("{prefix}.u_r"), &mut self.u_r),
            (format!("{prefix}.u_c"), &mut self.u_c),
            (format!("{prefix}.b_z"), &mut self.b_z),
            (format!("{prefix}.b_r"), &mut self.b_r),
            (format!("{prefix}.b_c"), &mut self.b_c),
        ]
    }

    /// `W_* x + b_*` for all three gates.
    pub fn project(&self, x: &[f64]) -> GatePre {
        let mut pre = GatePre {
            z: self.b_z.data().to_vec(),
            r: self.b_r.data().to_vec(),
            c: self.b_c.data().to_vec(),
        };
        self.w_z.matvec_acc(x, &mut pre.z);
        self.w_r.matvec_acc(x, &mut pre.r);
        self.w_c.matvec_acc(x, &mut pre.c);
        pre
    }

    /// Recurrent half of one step given the projected input.
    pub fn step(&self, pre: &GatePre, h_prev: &[f64]) -> GruStep {
        let hidden = self.hidden_dim();
        let mut z = pre.z.clone();
        let mut r = pre.r.clone();
        self.u_z.matvec_acc(h_prev, &mut z);
        self.u_r.matvec_acc(h_prev, &mut r);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vector = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        let mut cand = pre.c.clone();
        self.u_c.matvec_acc(&rh, &mut cand);
        cand.iter_mut().for_each(|v| *v = v.tanh());

        let mut h = vec![0.0; hidden];
        for k in 0..hidden {
            h[k] = (1.0 - z[k]) * h_prev[k] + z[k] * cand[k];
        }
        GruStep { z, r, cand, h }
    }

    /// Backward through the recurrent half. Accumulates the `U_*` gradients
    /// into `grads`, adds the gradient w.r.t. `h_prev` into `dh_prev`, and
    /// returns the pre-activation gradients for the input half.
    pub fn step_backward(
        &self,
        step: &GruStep,
        h_prev: &[f64],
        dh: &[f64],
        grads: &mut GruParams,
        dh_prev: &mut [f64],
    ) -> GatePre {
        let hidden = self.hidden_dim();
        let mut dpre = GatePre::zeros(hidden);
        let mut drh = vec![0.0; hidden];
        for k in 0..hidden {
            let (z, c) = (step.z[k], step.cand[k]);
            dh_prev[k] += dh[k] * (1.0 - z);
            dpre.z[k] = dh[k] * (c - h_prev[k]) * z * (1.0 - z);
            dpre.c[k] = dh[k] * z * (1.0 - c * c);
        }
        let rh: Vector = step.r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        grads.u_c.add_outer(&dpre.c, &rh);
        self.u_c.matvec_t_acc(&dpre.c, &mut drh);
        for k in 0..hidden {
            let r = step.r[k];
            dh_prev[k] += drh[k] * r;
            dpre.r[k] = drh[k] * h_prev[k] * r * (1.0 - r);
        }
        grads.u_z.add_outer(&dpre.z, h_prev);
        grads.u_r.add_outer(&dpre.r, h_prev);
        self.u_z.matvec_t_acc(&dpre.z, dh_prev);
        self.u_r.matvec_t_acc(&dpre.r, dh_prev);
        dpre
    }

    /// Backward through the input half. Accumulates `W_*` and `b_*` gradients
    /// and adds the input gradient into `dx`.
    pub fn project_backward(&self, x: &[f64], dpre: &GatePre, grads: &mut GruParams, dx: &mut [f64]) {
        grads.w_z.add_outer(&dpre.z, x);
        grads.w_r.add_outer(&dpre.r, x);
        grads.w_c.add_outer(&dpre.c, x);
        for (b, d) in [
            (&mut grads.b_z, &dpre.z),
            (&mut grads.b_r, &dpre.r),
            (&mut grads.b_c, &dpre.c),
        ] {
            b.data_mut().iter_mut().zip(d).for_each(|(b, d)| *b += d);
        }
        self.w_z.matvec_t_acc(&dpre.z, dx);
        self.w_r.matvec_t_acc(&dpre.r, dx);
        self.w_c.matvec_t_acc(&dpre.c, dx);
    }
}
