//! LSTM and bidirectional LSTM returning the final hidden state, with full
//! backpropagation through time.
//!
//! Gate blocks are stacked in the order input, forget, candidate, output:
//!
//! ```text
//! a_t = W_x x_t + W_h h_{t-1} + b
//! i = sig(a_i)   f = sig(a_f)   g = tanh(a_g)   o = sig(a_o)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, Op, Tensor};

use super::init::glorot_uniform;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    /// `[4H, C]`
    pub w_input: Tensor<T>,
    /// `[4H, H]`
    pub w_hidden: Tensor<T>,
    /// `[4H]`; forget block initialised to one.
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    /// Input transposed to `[T, C]`.
    xt: Vec<T>,
    /// Post-activation gates, `[T, 4H]`.
    gates: Vec<T>,
    /// Cell states `c_0..c_T`, `[T + 1, H]`.
    cells: Vec<T>,
    /// Hidden states `h_0..h_T`, `[T + 1, H]`.
    hidden: Vec<T>,
    steps: usize,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> Lstm<T> {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        let w_input = glorot_uniform(vec![4 * units, inputs], inputs, 4 * units, rng);
        let w_hidden = glorot_uniform(vec![4 * units, units], units, 4 * units, rng);
        let mut bias = Tensor::zeros(vec![4 * units]);
        bias.data_mut()[units..2 * units]
            .iter_mut()
            .for_each(|b| *b = T::one());
        Lstm {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }

    pub(crate) fn check_input(&self, channels: usize, len: usize) -> Result<()> {
        if channels != self.inputs() {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                left: vec![channels, len],
                right: self.w_input.shape().to_vec(),
            });
        }
        if len == 0 {
            return Err(Error::Empty("lstm"));
        }
        Ok(())
    }

    /// `x` is `[C, T]`; returns `h_T`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LstmCache<T>)> {
        let (c, steps) = x.dims2()?;
        self.check_input(c, steps)?;
        let h = self.units();
        let g4 = 4 * h;

        let xt = x.transpose()?.into_data();
        // Input projections for every step at once: [T, 4H] = x^T W_x^T.
        let mut gates = vec![T::zero(); steps * g4];
        for row in gates.chunks_mut(g4) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            Op::N,
            Op::T,
            steps,
            c,
            g4,
            T::one(),
            &xt,
            self.w_input.data(),
            T::one(),
            &mut gates,
        );

        let mut cells = vec![T::zero(); (steps + 1) * h];
        let mut hidden = vec![T::zero(); (steps + 1) * h];
        for t in 0..steps {
            let (h_prev, h_rest) = hidden.split_at_mut((t + 1) * h);
            let h_prev = &h_prev[t * h..];
            let a = &mut gates[t * g4..(t + 1) * g4];
            gemm(
                Op::N,
                Op::N,
                g4,
                h,
                1,
                T::one(),
                self.w_hidden.data(),
                h_prev,
                T::one(),
                a,
            );
            let (c_prev, c_rest) = cells.split_at_mut((t + 1) * h);
            let c_prev = &c_prev[t * h..];
            let c_new = &mut c_rest[..h];
            let h_new = &mut h_rest[..h];
            for u in 0..h {
                let i = sigmoid(a[u]);
                let f = sigmoid(a[h + u]);
                let g = a[2 * h + u].tanh();
                let o = sigmoid(a[3 * h + u]);
                a[u] = i;
                a[h + u] = f;
                a[2 * h + u] = g;
                a[3 * h + u] = o;
                c_new[u] = f * c_prev[u] + i * g;
                h_new[u] = o * c_new[u].tanh();
            }
        }
        let out = Tensor::vector(hidden[steps * h..].to_vec());
        Ok((
            out,
            LstmCache {
                xt,
                gates,
                cells,
                hidden,
                steps,
            },
        ))
    }

    pub fn backward(&self, cache: &LstmCache<T>, grad_out: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        let h = self.units();
        let c = self.inputs();
        let g4 = 4 * h;
        let steps = cache.steps;
        if grad_out.shape() != [h] {
            return Err(Error::ShapeMismatch {
                op: "lstm backward",
                left: grad_out.shape().to_vec(),
                right: vec![h],
            });
        }
        let one = T::one();
        let mut da = vec![T::zero(); steps * g4];
        let mut dh = grad_out.data().to_vec();
        let mut dc = vec![T::zero(); h];
        for t in (0..steps).rev() {
            let gate = &cache.gates[t * g4..(t + 1) * g4];
            let c_t = &cache.cells[(t + 1) * h..(t + 2) * h];
            let c_prev = &cache.cells[t * h..(t + 1) * h];
            let d = &mut da[t * g4..(t + 1) * g4];
            for u in 0..h {
                let (i, f, g, o) = (gate[u], gate[h + u], gate[2 * h + u], gate[3 * h + u]);
                let tc = c_t[u].tanh();
                let d_o = dh[u] * tc;
                let dcu = dc[u] + dh[u] * o * (one - tc * tc);
                d[u] = dcu * g * i * (one - i);
                d[h + u] = dcu * c_prev[u] * f * (one - f);
                d[2 * h + u] = dcu * i * (one - g * g);
                d[3 * h + u] = d_o * o * (one - o);
                dc[u] = dcu * f;
            }
            // dh_{t-1} = W_h^T da_t
            gemm(
                Op::T,
                Op::N,
                h,
                g4,
                1,
                one,
                self.w_hidden.data(),
                d,
                T::zero(),
                &mut dh,
            );
        }

        let (g_in, rest) = grads.split_at_mut(1);
        let (g_hid, g_bias) = rest.split_at_mut(1);
        // dW_x += da^T x^T
        gemm(
            Op::T,
            Op::N,
            g4,
            steps,
            c,
            one,
            &da,
            &cache.xt,
            one,
            g_in[0].data_mut(),
        );
        // dW_h += da^T [h_0..h_{T-1}]
        gemm(
            Op::T,
            Op::N,
            g4,
            steps,
            h,
            one,
            &da,
            &cache.hidden[..steps * h],
            one,
            g_hid[0].data_mut(),
        );
        let gb = g_bias[0].data_mut();
        for row in da.chunks(g4) {
            for (b, &v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
        // dx = W_x^T da^T -> [C, T]
        let mut gx = vec![T::zero(); c * steps];
        gemm(
            Op::T,
            Op::T,
            c,
            g4,
            steps,
            one,
            self.w_input.data(),
            &da,
            T::zero(),
            &mut gx,
        );
        Tensor::new(vec![c, steps], gx)
    }
}

/// Two independent LSTMs, the second reading the sequence reversed in time.
/// Output is `[h_T(forward) ; h_T(backward)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T> {
    pub forward: Lstm<T>,
    pub backward: Lstm<T>,
}

fn reverse_time<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, t) = x.dims2()?;
    Ok(Tensor::from_fn(vec![c, t], |i| {
        let (ch, s) = (i / t, i % t);
        x.data()[ch * t + (t - 1 - s)]
    }))
}

impl<T: Scalar> BiLstm<T> {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        BiLstm {
            forward: Lstm::new(inputs, units, rng),
            backward: Lstm::new(inputs, units, rng),
        }
    }

    pub fn forward_pass(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LstmCache<T>, LstmCache<T>)> {
        let (hf, cf) = self.forward.forward(x)?;
        let (hb, cb) = self.backward.forward(&reverse_time(x)?)?;
        Ok((Tensor::concat(&[&hf, &hb]), cf, cb))
    }

    pub fn backward_pass(
        &self,
        cf: &LstmCache<T>,
        cb: &LstmCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Result<Tensor<T>> {
        let h = self.forward.units();
        if grad_out.shape() != [2 * h] {
            return Err(Error::ShapeMismatch {
                op: "bilstm backward",
                left: grad_out.shape().to_vec(),
                right: vec![2 * h],
            });
        }
        let (gf, gb) = grads.split_at_mut(3);
        let gh_f = Tensor::vector(grad_out.data()[..h].to_vec());
        let gh_b = Tensor::vector(grad_out.data()[h..].to_vec());
        let mut gx = self.forward.backward(cf, &gh_f, gf)?;
        let gx_rev = self.backward.backward(cb, &gh_b, gb)?;
        gx.add_assign(&reverse_time(&gx_rev)?)?;
        Ok(gx)
    }
}
