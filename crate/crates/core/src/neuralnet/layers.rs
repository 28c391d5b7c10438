//! Dense and GRU kernels with their hand-written backward passes.
//!
//! Batches are row matrices. For sequences the rows are time-major: row
//! `i * batch + b` holds path `b` at step `i`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        z
    }

    /// Accumulates parameter gradients for upstream gradient `dz` and returns `dx` if wanted.
    pub(crate) fn backward(&self, x: ArrayView2<f64>, dz: &Array2<f64>, grad: &mut Dense, want_dx: bool) -> Option<Array2<f64>> {
        grad.weight += &x.t().dot(dz);
        grad.bias += &dz.sum_axis(Axis(0));
        want_dx.then(|| dz.dot(&self.weight.t()))
    }
}

pub(crate) fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

/// `d ⊙ 1[a > 0]` where `a` is the ReLU output.
pub(crate) fn relu_backward_inplace(d: &mut Array2<f64>, a: &Array2<f64>) {
    Zip::from(d).and(a).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// c  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ c
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

/// Activations kept for the backward pass, all `rows × H`.
pub(crate) struct GruTrace {
    batch: usize,
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
}

impl GruTrace {
    pub(crate) fn output(&self) -> &Array2<f64> {
        &self.h
    }
}

impl GruParams {
    pub fn zeros(input: usize, cells: usize) -> Self {
        Self {
            w_z: Array2::zeros((input, cells)),
            w_r: Array2::zeros((input, cells)),
            w_h: Array2::zeros((input, cells)),
            u_z: Array2::zeros((cells, cells)),
            u_r: Array2::zeros((cells, cells)),
            u_h: Array2::zeros((cells, cells)),
            b_z: Array1::zeros(cells),
            b_r: Array1::zeros(cells),
            b_h: Array1::zeros(cells),
        }
    }

    pub fn cells(&self) -> usize {
        self.b_z.len()
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn m<'a>(name: &str, a: &'a Array2<f64>) -> (String, Vec<usize>, &'a [f64]) {
            (format!("gru.{name}"), a.shape().to_vec(), a.as_slice().unwrap())
        }
        fn v<'a>(name: &str, a: &'a Array1<f64>) -> (String, Vec<usize>, &'a [f64]) {
            (format!("gru.{name}"), vec![a.len()], a.as_slice().unwrap())
        }
        vec![
            m("w_z", &self.w_z),
            m("w_r", &self.w_r),
            m("w_h", &self.w_h),
            m("u_z", &self.u_z),
            m("u_r", &self.u_r),
            m("u_h", &self.u_h),
            v("b_z", &self.b_z),
            v("b_r", &self.b_r),
            v("b_h", &self.b_h),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_slice_mut().unwrap(),
            self.w_r.as_slice_mut().unwrap(),
            self.w_h.as_slice_mut().unwrap(),
            self.u_z.as_slice_mut().unwrap(),
            self.u_r.as_slice_mut().unwrap(),
            self.u_h.as_slice_mut().unwrap(),
            self.b_z.as_slice_mut().unwrap(),
            self.b_r.as_slice_mut().unwrap(),
            self.b_h.as_slice_mut().unwrap(),
        ]
    }

    fn input_projections(&self, x: ArrayView2<f64>) -> [Array2<f64>; 3] {
        let mut xz = x.dot(&self.w_z);
        xz += &self.b_z;
        let mut xr = x.dot(&self.w_r);
        xr += &self.b_r;
        let mut xh = x.dot(&self.w_h);
        xh += &self.b_h;
        [xz, xr, xh]
    }

    /// One step for a single row given its input projections; writes gates and the new state.
    #[allow(clippy::too_many_arguments)]
    fn step_row(&self, xz: &[f64], xr: &[f64], xh: &[f64], hp: &[f64], z: &mut [f64], r: &mut [f64], c: &mut [f64], h: &mut [f64]) {
        let cells = self.cells();
        for j in 0..cells {
            let (mut az, mut ar) = (xz[j], xr[j]);
            for k in 0..cells {
                az += hp[k] * self.u_z[[k, j]];
                ar += hp[k] * self.u_r[[k, j]];
            }
            z[j] = sigmoid(az);
            r[j] = sigmoid(ar);
        }
        for j in 0..cells {
            let mut ac = xh[j];
            for k in 0..cells {
                ac += r[k] * hp[k] * self.u_h[[k, j]];
            }
            c[j] = ac.tanh();
            h[j] = (1.0 - z[j]) * hp[j] + z[j] * c[j];
        }
    }

    /// Run the cell over time-major rows, starting every path from the zero state.
    pub(crate) fn forward_sequence(&self, x: ArrayView2<f64>, batch: usize) -> GruTrace {
        let rows = x.nrows();
        let cells = self.cells();
        let [xz, xr, xh] = self.input_projections(x);
        let mut h = Array2::zeros((rows, cells));
        let mut z = Array2::zeros((rows, cells));
        let mut r = Array2::zeros((rows, cells));
        let mut c = Array2::zeros((rows, cells));
        let zero = vec![0.0; cells];
        for row in 0..rows {
            let hp: Vec<f64> = if row >= batch {
                h.row(row - batch).to_vec()
            } else {
                zero.clone()
            };
            let mut zr = vec![0.0; cells];
            let mut rr = vec![0.0; cells];
            let mut cr = vec![0.0; cells];
            let mut hr = vec![0.0; cells];
            self.step_row(
                xz.row(row).as_slice().unwrap(),
                xr.row(row).as_slice().unwrap(),
                xh.row(row).as_slice().unwrap(),
                &hp,
                &mut zr,
                &mut rr,
                &mut cr,
                &mut hr,
            );
            for j in 0..cells {
                z[[row, j]] = zr[j];
                r[[row, j]] = rr[j];
                c[[row, j]] = cr[j];
                h[[row, j]] = hr[j];
            }
        }
        GruTrace { batch, h, z, r, c }
    }

    /// Backpropagate `dh` (gradient w.r.t. every row's output state) through time.
    ///
    /// Returns the gradient w.r.t. `x`.
    pub(crate) fn backward_sequence(&self, x: ArrayView2<f64>, trace: &GruTrace, dh: &Array2<f64>, grad: &mut GruParams) -> Array2<f64> {
        let rows = x.nrows();
        let cells = self.cells();
        let batch = trace.batch;
        let mut daz = Array2::<f64>::zeros((rows, cells));
        let mut dar = Array2::<f64>::zeros((rows, cells));
        let mut dac = Array2::<f64>::zeros((rows, cells));
        // Gradient flowing into each row's previous state.
        let mut carry = Array2::<f64>::zeros((rows, cells));
        for row in (0..rows).rev() {
            let has_prev = row >= batch;
            let hp: Vec<f64> = if has_prev {
                trace.h.row(row - batch).to_vec()
            } else {
                vec![0.0; cells]
            };
            let d: Vec<f64> = (0..cells)
                .map(|j| dh[[row, j]] + if row + batch < rows { carry[[row + batch, j]] } else { 0.0 })
                .collect();
            let mut dhp = vec![0.0; cells];
            for j in 0..cells {
                let (z, c) = (trace.z[[row, j]], trace.c[[row, j]]);
                dac[[row, j]] = d[j] * z * (1.0 - c * c);
                daz[[row, j]] = d[j] * (c - hp[j]) * z * (1.0 - z);
                dhp[j] += d[j] * (1.0 - z);
            }
            // Candidate path through r ⊙ h.
            for k in 0..cells {
                let rk = trace.r[[row, k]];
                let mut drh = 0.0;
                for j in 0..cells {
                    drh += dac[[row, j]] * self.u_h[[k, j]];
                    grad.u_h[[k, j]] += rk * hp[k] * dac[[row, j]];
                }
                dar[[row, k]] = drh * hp[k] * rk * (1.0 - rk);
                dhp[k] += drh * rk;
            }
            for k in 0..cells {
                for j in 0..cells {
                    grad.u_z[[k, j]] += hp[k] * daz[[row, j]];
                    grad.u_r[[k, j]] += hp[k] * dar[[row, j]];
                    dhp[k] += daz[[row, j]] * self.u_z[[k, j]] + dar[[row, j]] * self.u_r[[k, j]];
                }
            }
            if has_prev {
                for k in 0..cells {
                    carry[[row, k]] = dhp[k];
                }
            }
        }
        grad.w_z += &x.t().dot(&daz);
        grad.w_r += &x.t().dot(&dar);
        grad.w_h += &x.t().dot(&dac);
        grad.b_z += &daz.sum_axis(Axis(0));
        grad.b_r += &dar.sum_axis(Axis(0));
        grad.b_h += &dac.sum_axis(Axis(0));
        let mut dx = daz.dot(&self.w_z.t());
        dx += &dar.dot(&self.w_r.t());
        dx += &dac.dot(&self.w_h.t());
        dx
    }

    /// Single step for one row of input; returns the new state.
    pub(crate) fn step(&self, x: ArrayView2<f64>, h_prev: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.nrows(), 1);
        let [xz, xr, xh] = self.input_projections(x);
        let cells = self.cells();
        let (mut z, mut r, mut c, mut h) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        self.step_row(
            xz.slice(s![0, ..]).as_slice().unwrap(),
            xr.slice(s![0, ..]).as_slice().unwrap(),
            xh.slice(s![0, ..]).as_slice().unwrap(),
            h_prev,
            &mut z,
            &mut r,
            &mut c,
            &mut h,
        );
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn random_gru(input: usize, cells: usize, rng: &mut ChaCha8Rng) -> GruParams {
        let mut g = GruParams::zeros(input, cells);
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        }
        g
    }

    /// Scalar objective `Σ w ⊙ h` so that `dh = w`.
    fn gru_objective(g: &GruParams, x: &Array2<f64>, batch: usize, w: &Array2<f64>) -> f64 {
        (g.forward_sequence(x.view(), batch).h * w).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gru_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (input, cells, batch, steps) = (4, 3, 2, 4);
        let g = random_gru(input, cells, &mut rng);
        let x = random(batch * steps, input, &mut rng);
        let w = random(batch * steps, cells, &mut rng);
        let trace = g.forward_sequence(x.view(), batch);
        let mut grad = GruParams::zeros(input, cells);
        let dx = g.backward_sequence(x.view(), &trace, &w, &mut grad);

        let h = 1e-6;
        let analytic: Vec<f64> = grad.named_tensors().iter().flat_map(|(_, _, t)| t.to_vec()).collect();
        let mut flat_idx = 0;
        for ti in 0..9 {
            let len = g.named_tensors()[ti].2.len();
            for e in 0..len {
                let mut plus = g.clone();
                plus.tensors_mut()[ti][e] += h;
                let mut minus = g.clone();
                minus.tensors_mut()[ti][e] -= h;
                let fd = (gru_objective(&plus, &x, batch, &w) - gru_objective(&minus, &x, batch, &w)) / (2.0 * h);
                assert!(rel_err(fd, analytic[flat_idx]) < 1e-6, "tensor {ti} entry {e}: {fd} vs {}", analytic[flat_idx]);
                flat_idx += 1;
            }
        }
        for r in 0..x.nrows() {
            for c in 0..input {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (gru_objective(&g, &xp, batch, &w) - gru_objective(&g, &xm, batch, &w)) / (2.0 * h);
                assert!(rel_err(fd, dx[[r, c]]) < 1e-6);
            }
        }
    }

    #[test]
    fn dense_relu_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Dense {
            weight: random(3, 4, &mut rng),
            bias: Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
        };
        let x = random(5, 3, &mut rng);
        let w = random(5, 4, &mut rng);
        let obj = |d: &Dense, x: &Array2<f64>| {
            let mut a = d.forward(x.view());
            relu_inplace(&mut a);
            (a * &w).sum()
        };
        let mut a = d.forward(x.view());
        relu_inplace(&mut a);
        let mut dz = w.clone();
        relu_backward_inplace(&mut dz, &a);
        let mut grad = Dense {
            weight: Array2::zeros((3, 4)),
            bias: Array1::zeros(4),
        };
        let dx = d.backward(x.view(), &dz, &mut grad, true).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut p = d.clone();
                p.weight[[i, j]] += h;
                let mut m = d.clone();
                m.weight[[i, j]] -= h;
                let fd = (obj(&p, &x) - obj(&m, &x)) / (2.0 * h);
                assert!(rel_err(fd, grad.weight[[i, j]]) < 1e-6);
            }
        }
        for j in 0..4 {
            let mut p = d.clone();
            p.bias[j] += h;
            let mut m = d.clone();
            m.bias[j] -= h;
            assert!(rel_err((obj(&p, &x) - obj(&m, &x)) / (2.0 * h), grad.bias[j]) < 1e-6);
        }
        for r in 0..5 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                assert!(rel_err((obj(&d, &xp) - obj(&d, &xm)) / (2.0 * h), dx[[r, c]]) < 1e-6);
            }
        }
    }

    #[test]
    fn gru_step_matches_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gru(3, 2, &mut rng);
        let x = random(3, 3, &mut rng); // one path, three steps
        let seq = g.forward_sequence(x.view(), 1);
        let mut h = vec![0.0; 2];
        for i in 0..3 {
            h = g.step(x.slice(s![i..i + 1, ..]), &h);
            assert_eq!(h, seq.output().row(i).to_vec());
        }
    }
}
