use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use super::{glorot_uniform, sigmoid, standard, FeatureSeq, Parameterized};
use crate::error::{Error, Result};

/// One direction of a GRU. Gate blocks are laid out `[update | reset | candidate]`
/// along the second axis of `w` (`D x 3H`) and `u` (`H x 3H`).
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct DirectionCache {
    input: Array2<f64>,
    /// `T + 1` rows; row 0 is the zero initial state.
    states: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    cand: Array2<f64>,
}

impl GruDirection {
    fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let gates_w: Vec<_> = (0..3).map(|_| glorot_uniform(input, hidden, input, hidden, rng)).collect();
        let gates_u: Vec<_> = (0..3).map(|_| glorot_uniform(hidden, hidden, hidden, hidden, rng)).collect();
        Self {
            w: standard(concatenate(Axis(1), &[gates_w[0].view(), gates_w[1].view(), gates_w[2].view()]).unwrap()),
            u: standard(concatenate(Axis(1), &[gates_u[0].view(), gates_u[1].view(), gates_u[2].view()]).unwrap()),
            b: Array1::zeros(3 * hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.u.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, DirectionCache) {
        let h = self.hidden();
        let t_len = x.nrows();
        let mut pre = x.dot(&self.w);
        pre += &self.b;
        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_h = self.u.slice(s![.., 2 * h..]);
        let mut states = Array2::zeros((t_len + 1, h));
        let mut z = Array2::zeros((t_len, h));
        let mut r = Array2::zeros((t_len, h));
        let mut cand = Array2::zeros((t_len, h));
        for t in 0..t_len {
            let prev = states.row(t).to_owned();
            let rec = prev.dot(&u_zr);
            let a = pre.row(t);
            for j in 0..h {
                z[[t, j]] = sigmoid(a[j] + rec[j]);
                r[[t, j]] = sigmoid(a[h + j] + rec[h + j]);
            }
            let reset_prev = &r.row(t) * &prev;
            let rec_h = reset_prev.dot(&u_h);
            for j in 0..h {
                let c = (a[2 * h + j] + rec_h[j]).tanh();
                cand[[t, j]] = c;
                states[[t + 1, j]] = (1.0 - z[[t, j]]) * prev[j] + z[[t, j]] * c;
            }
        }
        let out = states.slice(s![1.., ..]).to_owned();
        (
            out,
            DirectionCache {
                input: x.clone(),
                states,
                z,
                r,
                cand,
            },
        )
    }

    fn backward(&self, cache: &DirectionCache, grad_out: &Array2<f64>) -> (Array2<f64>, Self) {
        let h = self.hidden();
        let t_len = grad_out.nrows();
        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_h = self.u.slice(s![.., 2 * h..]);
        let mut dpre = Array2::<f64>::zeros((t_len, 3 * h));
        let mut reset_prev = Array2::<f64>::zeros((t_len, h));
        let mut carry = Array1::<f64>::zeros(h);
        for t in (0..t_len).rev() {
            let prev = cache.states.row(t);
            let (z, r, c) = (cache.z.row(t), cache.r.row(t), cache.cand.row(t));
            let dh = &grad_out.row(t) + &carry;
            let mut dprev = Array1::<f64>::zeros(h);
            let mut dah = Array1::<f64>::zeros(h);
            for j in 0..h {
                dah[j] = dh[j] * z[j] * (1.0 - c[j] * c[j]);
                dprev[j] = dh[j] * (1.0 - z[j]);
                reset_prev[[t, j]] = r[j] * prev[j];
            }
            let d_reset_prev = u_h.dot(&dah);
            let mut dzr = Array1::<f64>::zeros(2 * h);
            for j in 0..h {
                let dz = dh[j] * (c[j] - prev[j]);
                dzr[j] = dz * z[j] * (1.0 - z[j]);
                dzr[h + j] = d_reset_prev[j] * prev[j] * r[j] * (1.0 - r[j]);
                dprev[j] += d_reset_prev[j] * r[j];
            }
            dprev += &u_zr.dot(&dzr);
            dpre.slice_mut(s![t, ..2 * h]).assign(&dzr);
            dpre.slice_mut(s![t, 2 * h..]).assign(&dah);
            carry = dprev;
        }
        let prev_states = cache.states.slice(s![..t_len, ..]);
        let mut du = Array2::zeros((h, 3 * h));
        du.slice_mut(s![.., ..2 * h])
            .assign(&prev_states.t().dot(&dpre.slice(s![.., ..2 * h])));
        du.slice_mut(s![.., 2 * h..])
            .assign(&reset_prev.t().dot(&dpre.slice(s![.., 2 * h..])));
        let grads = Self {
            w: standard(cache.input.t().dot(&dpre)),
            u: du,
            b: dpre.sum_axis(Axis(0)),
        };
        (dpre.dot(&self.w.t()), grads)
    }
}

/// Bidirectional GRU: output row `t` is `[forward_t | backward_t]`, width `2H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

fn reversed(x: &Array2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl GruLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("GRU input and hidden sizes must be positive".into()));
        }
        Ok(Self {
            forward: GruDirection::new(input, hidden, rng),
            backward: GruDirection::new(input, hidden, rng),
        })
    }

    pub fn input_size(&self) -> usize {
        self.forward.w.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden()
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
        }
    }

    pub fn forward(&self, input: &FeatureSeq) -> Result<(FeatureSeq, BiGruCache)> {
        if input.ncols() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "GRU expects width {}, got {}",
                self.input_size(),
                input.ncols()
            )));
        }
        let (hf, fwd) = self.forward.forward(input);
        let (hb, bwd) = self.backward.forward(&reversed(input));
        let out = concatenate(Axis(1), &[hf.view(), reversed(&hb).view()]).expect("same length");
        Ok((out, BiGruCache { fwd, bwd }))
    }

    pub fn backward(&self, cache: &BiGruCache, grad_out: &FeatureSeq) -> Result<(FeatureSeq, Self)> {
        let h = self.hidden_size();
        if grad_out.dim() != (cache.fwd.z.nrows(), 2 * h) {
            return Err(Error::ShapeMismatch(format!(
                "GRU grad {:?} vs expected {:?}",
                grad_out.dim(),
                (cache.fwd.z.nrows(), 2 * h)
            )));
        }
        let (dxf, gf) = self
            .forward
            .backward(&cache.fwd, &grad_out.slice(s![.., ..h]).to_owned());
        let (dxb, gb) = self
            .backward
            .backward(&cache.bwd, &reversed(&grad_out.slice(s![.., h..]).to_owned()));
        Ok((
            dxf + reversed(&dxb),
            Self {
                forward: gf,
                backward: gb,
            },
        ))
    }
}

impl Parameterized for GruLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        [&self.forward, &self.backward]
            .into_iter()
            .flat_map(|d| {
                [
                    d.w.as_slice().expect("standard layout"),
                    d.u.as_slice().expect("standard layout"),
                    d.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let (f, b) = (&mut self.forward, &mut self.backward);
        vec![
            f.w.as_slice_mut().expect("standard layout"),
            f.u.as_slice_mut().expect("standard layout"),
            f.b.as_slice_mut().expect("standard layout"),
            b.w.as_slice_mut().expect("standard layout"),
            b.u.as_slice_mut().expect("standard layout"),
            b.b.as_slice_mut().expect("standard layout"),
        ]
    }
}
