use ndarray::{Array2, ArrayView2};

use super::{activate_in_place, Activation, LayerLayout, NetError, PredictorArch, Result};
use crate::diffmath::{CustomOp, Tape, Var};

fn check_inputs(arch: &PredictorArch, d: usize, x: &ArrayView2<f64>) -> Result<()> {
    if d != arch.num_params() {
        return Err(NetError::DimensionMismatch {
            what: "parameter vector",
            expected: arch.num_params(),
            got: d,
        });
    }
    if x.ncols() != arch.input_dim {
        return Err(NetError::DimensionMismatch {
            what: "input columns",
            expected: arch.input_dim,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Forward pass of one network over a batch of inputs. Hidden activations
/// are written to `acts` (one buffer per hidden layer, each `m × width`
/// row-major) and the outputs to `out`.
fn forward_into(
    layouts: &[LayerLayout],
    activation: Activation,
    theta: &[f64],
    x: &[f64],
    m: usize,
    acts: &mut [Vec<f64>],
    out: &mut [f64],
) {
    let n_layers = layouts.len();
    for (li, l) in layouts.iter().enumerate() {
        let w = &theta[l.weight_offset..l.bias_offset];
        let b = &theta[l.bias_offset..l.bias_offset + l.fan_out];
        let last = li + 1 == n_layers;
        let (inputs, dest): (&[f64], &mut [f64]) = if li == 0 {
            if last {
                (x, &mut *out)
            } else {
                (x, &mut acts[0][..])
            }
        } else {
            let (before, after) = acts.split_at_mut(li);
            let inp = &before[li - 1][..];
            if last {
                (inp, &mut *out)
            } else {
                (inp, &mut after[0][..])
            }
        };
        for t in 0..m {
            let row = &inputs[t * l.fan_in..(t + 1) * l.fan_in];
            let zs = &mut dest[t * l.fan_out..(t + 1) * l.fan_out];
            if l.fan_in == 1 {
                let x0 = row[0];
                for ((z, &wj), &bj) in zs.iter_mut().zip(w).zip(b) {
                    *z = bj + wj * x0;
                }
            } else {
                for (j, z) in zs.iter_mut().enumerate() {
                    *z = b[j] + dot(row, &w[j * l.fan_in..(j + 1) * l.fan_in]);
                }
            }
            if !last {
                activate_in_place(activation, zs);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hidden_buffers(arch: &PredictorArch, m: usize) -> Vec<Vec<f64>> {
    arch.hidden_widths
        .iter()
        .map(|&w| vec![0.0; m * w])
        .collect()
}

fn contiguous(x: &ArrayView2<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

/// Predictions `f_θ(x_t)` for every row of `x`.
pub fn mlp_forward(arch: &PredictorArch, theta: &[f64], x: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_inputs(arch, theta.len(), &x)?;
    let m = x.nrows();
    let layouts = arch.layouts();
    let mut acts = hidden_buffers(arch, m);
    let mut out = vec![0.0; m];
    forward_into(
        &layouts,
        arch.activation,
        theta,
        &contiguous(&x),
        m,
        &mut acts,
        &mut out,
    );
    Ok(out)
}

/// Evaluates every parameter row of `thetas` (`n × d`) at every input row of
/// `x` (`m × D`), returning the `n × m` matrix of predictions.
pub fn predict_batch(
    arch: &PredictorArch,
    thetas: ArrayView2<f64>,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_inputs(arch, thetas.ncols(), &x)?;
    let (n, m) = (thetas.nrows(), x.nrows());
    let layouts = arch.layouts();
    let xs = contiguous(&x);
    let mut acts = hidden_buffers(arch, m);
    let mut out = Array2::zeros((n, m));
    let mut theta_buf = vec![0.0; thetas.ncols()];
    for (i, row) in thetas.rows().into_iter().enumerate() {
        let theta: &[f64] = match row.as_slice() {
            Some(s) => s,
            None => {
                theta_buf
                    .iter_mut()
                    .zip(row.iter())
                    .for_each(|(d, s)| *d = *s);
                &theta_buf
            }
        };
        let mut o = out.row_mut(i);
        let dest = o.as_slice_mut().expect("fresh array is contiguous");
        forward_into(&layouts, arch.activation, theta, &xs, m, &mut acts, dest);
    }
    Ok(out)
}

/// Pullback of [`predict_batch`] with respect to the parameter rows. Keeps
/// the hidden activations of the forward pass, `acts[layer]` holding
/// `n × m × width` values.
struct PredictBatchOp {
    arch: PredictorArch,
    x: Vec<f64>,
    m: usize,
    acts: Vec<Vec<f64>>,
}

impl CustomOp for PredictBatchOp {
    fn name(&self) -> &'static str {
        "predict_batch"
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>> {
        let thetas = inputs[0];
        let (n, d) = thetas.dim();
        let m = self.m;
        let layouts = self.arch.layouts();
        let act = self.arch.activation;
        let mut grad = Array2::zeros((n, d));
        let max_width = layouts
            .iter()
            .map(|l| l.fan_out.max(l.fan_in))
            .max()
            .unwrap_or(1);
        let mut delta = vec![0.0; m * max_width];
        let mut delta_prev = vec![0.0; m * max_width];
        let thetas_std = thetas.as_standard_layout();
        for i in 0..n {
            let theta = thetas_std.row(i);
            let theta = theta.as_slice().unwrap();
            let acts: Vec<&[f64]> = self
                .acts
                .iter()
                .zip(&self.arch.hidden_widths)
                .map(|(a, &w)| &a[i * m * w..(i + 1) * m * w])
                .collect();
            let g_row = grad_out.row(i);
            for t in 0..m {
                delta[t] = g_row[t];
            }
            let mut grow = grad.row_mut(i);
            let gtheta = grow.as_slice_mut().unwrap();
            for li in (0..layouts.len()).rev() {
                let l = layouts[li];
                let inputs: &[f64] = if li == 0 { &self.x } else { acts[li - 1] };
                // weight and bias gradients
                if l.fan_in == 1 {
                    let (gw, gb) =
                        gtheta[l.weight_offset..l.bias_offset + l.fan_out].split_at_mut(l.fan_out);
                    for t in 0..m {
                        let x0 = inputs[t];
                        let dt = &delta[t * l.fan_out..(t + 1) * l.fan_out];
                        for ((w, b), &dj) in gw.iter_mut().zip(gb.iter_mut()).zip(dt) {
                            *w += dj * x0;
                            *b += dj;
                        }
                    }
                } else {
                    for t in 0..m {
                        let row = &inputs[t * l.fan_in..(t + 1) * l.fan_in];
                        for j in 0..l.fan_out {
                            let dj = delta[t * l.fan_out + j];
                            if dj == 0.0 {
                                continue;
                            }
                            let gw = &mut gtheta[l.weight_offset + j * l.fan_in
                                ..l.weight_offset + (j + 1) * l.fan_in];
                            for (gk, xk) in gw.iter_mut().zip(row) {
                                *gk += dj * xk;
                            }
                            gtheta[l.bias_offset + j] += dj;
                        }
                    }
                }
                if li == 0 {
                    break;
                }
                // propagate through the weights and the previous activation
                let w = &theta[l.weight_offset..l.bias_offset];
                for t in 0..m {
                    let a_prev = &inputs[t * l.fan_in..(t + 1) * l.fan_in];
                    let dp = &mut delta_prev[t * l.fan_in..(t + 1) * l.fan_in];
                    dp.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..l.fan_out {
                        let dj = delta[t * l.fan_out + j];
                        if dj == 0.0 {
                            continue;
                        }
                        let wr = &w[j * l.fan_in..(j + 1) * l.fan_in];
                        for (v, wk) in dp.iter_mut().zip(wr) {
                            *v += dj * wk;
                        }
                    }
                    for (v, a) in dp.iter_mut().zip(a_prev) {
                        *v *= act.derivative_from_output(*a);
                    }
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
        vec![Some(grad)]
    }
}

/// Differentiable version of [`predict_batch`]: gradients flow to the
/// parameter rows; the inputs are treated as constants.
pub fn predict_batch_node(
    tape: &mut Tape,
    arch: &PredictorArch,
    thetas: Var,
    x: ArrayView2<f64>,
) -> Result<Var> {
    let thetas_value = tape.value(thetas);
    check_inputs(arch, thetas_value.ncols(), &x)?;
    let (n, m) = (thetas_value.nrows(), x.nrows());
    let layouts = arch.layouts();
    let xs = contiguous(&x);
    let mut acts = hidden_buffers(arch, m);
    let mut kept: Vec<Vec<f64>> = arch
        .hidden_widths
        .iter()
        .map(|&w| Vec::with_capacity(n * m * w))
        .collect();
    let mut value = Array2::zeros((n, m));
    let thetas_std = thetas_value.as_standard_layout();
    for (i, theta) in thetas_std.rows().into_iter().enumerate() {
        let mut o = value.row_mut(i);
        let dest = o.as_slice_mut().expect("fresh array is contiguous");
        forward_into(
            &layouts,
            arch.activation,
            theta.as_slice().expect("standard layout"),
            &xs,
            m,
            &mut acts,
            dest,
        );
        for (k, a) in kept.iter_mut().zip(&acts) {
            k.extend_from_slice(a);
        }
    }
    let op = PredictBatchOp {
        arch: arch.clone(),
        x: xs,
        m,
        acts: kept,
    };
    Ok(tape.custom(&[thetas], value, Box::new(op)))
}
