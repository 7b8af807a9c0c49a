//! Dense multilinear arrays over C^d.
//!
//! An order-r array is stored row-major with `d^r` entries. Derivative
//! blocks K^(ij) are order i+j arrays whose first i slots belong to the
//! first argument.

use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    d: usize,
    order: usize,
    data: Vec<Complex64>,
}

impl Tensor {
    pub fn zeros(d: usize, order: usize) -> Self {
        Tensor { d, order, data: vec![Complex64::new(0.0, 0.0); d.pow(order as u32)] }
    }

    pub fn scalar(v: Complex64) -> Self {
        Tensor { d: 1, order: 0, data: vec![v] }
    }

    pub fn from_vec(d: usize, order: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), d.pow(order as u32), "tensor size mismatch");
        Tensor { d, order, data }
    }

    pub fn from_real(d: usize, order: usize, data: &[f64]) -> Self {
        Self::from_vec(d, order, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.d + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order];
        for k in (0..self.order).rev() {
            idx[k] = flat % self.d;
            flat /= self.d;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: Complex64) {
        let f = self.flat_index(idx);
        self.data[f] = v;
    }

    /// Value of an order-0 array.
    pub fn value(&self) -> Complex64 {
        self.data[0]
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: Complex64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn conj(&self) -> Tensor {
        Tensor { d: self.d, order: self.order, data: self.data.iter().map(|v| v.conj()).collect() }
    }

    /// Moves the last `j` slots in front of the first `order - j` ones.
    /// With conj this turns K^(ij)(x,x') into the layout of K^(ji)(x',x).
    pub fn swap_groups(&self, i: usize) -> Tensor {
        let j = self.order - i;
        let mut out = Tensor::zeros(self.d, self.order);
        for f in 0..self.data.len() {
            let idx = self.multi_index(f);
            let mut nidx = Vec::with_capacity(self.order);
            nidx.extend_from_slice(&idx[i..]);
            nidx.extend_from_slice(&idx[..i]);
            debug_assert_eq!(nidx.len(), j + i);
            out.set(&nidx, self.data[f]);
        }
        out
    }

    /// Applies the same d x d matrix to every slot.
    pub fn apply_all_slots(&self, s: &DMatrix<f64>) -> Tensor {
        let d = self.d;
        let mut cur = self.data.clone();
        let mut next = vec![Complex64::new(0.0, 0.0); cur.len()];
        for slot in 0..self.order {
            let stride = d.pow((self.order - 1 - slot) as u32);
            for (f, out) in next.iter_mut().enumerate() {
                let a = (f / stride) % d;
                let base = f - a * stride;
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..d {
                    acc += s[(a, b)] * cur[base + b * stride];
                }
                *out = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Tensor { d, order: self.order, data: cur }
    }

    /// Contracts the last slot with `v` (no conjugation).
    pub fn contract_last(&self, v: &[Complex64]) -> Tensor {
        assert!(self.order >= 1);
        assert_eq!(v.len(), self.d);
        let n = self.data.len() / self.d;
        let data = (0..n)
            .map(|f| (0..self.d).map(|c| self.data[f * self.d + c] * v[c]).sum())
            .collect();
        Tensor { d: self.d, order: self.order - 1, data }
    }

    /// T(q_1, ..., q_r) = sum T[a] q_1[a_1] ... q_r[a_r].
    pub fn eval_multilinear(&self, qs: &[Vec<Complex64>]) -> Complex64 {
        assert_eq!(qs.len(), self.order);
        let mut cur = self.clone();
        for q in qs.iter().rev() {
            cur = cur.contract_last(q);
        }
        cur.value()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        self.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn as_matrix(&self) -> DMatrix<Complex64> {
        assert_eq!(self.order, 2);
        DMatrix::from_fn(self.d, self.d, |a, b| self.data[a * self.d + b])
    }

    pub fn as_vector(&self) -> Vec<Complex64> {
        assert_eq!(self.order, 1);
        self.data.clone()
    }

    /// sup over unit vectors q_1..q_r of |T(q_1, ..., q_r)|.
    ///
    /// Exact for r <= 2. For higher orders an alternating maximisation is run
    /// from several starts; it returns a lower bound that is tight in practice
    /// for the small d used here.
    pub fn op_norm(&self) -> f64 {
        match self.order {
            0 => self.data[0].norm(),
            1 => self.frobenius(),
            2 => {
                if self.d == 1 {
                    return self.data[0].norm();
                }
                let svd = self.as_matrix().svd(false, false);
                svd.singular_values.iter().cloned().fold(0.0, f64::max)
            }
            _ => self.hopm_norm(),
        }
    }

    fn hopm_norm(&self) -> f64 {
        let d = self.d;
        let r = self.order;
        if d == 1 {
            return self.data[0].norm();
        }
        let fro = self.frobenius();
        if fro == 0.0 {
            return 0.0;
        }
        let mut starts: Vec<Vec<Vec<Complex64>>> = Vec::new();
        // start from the largest entry
        let (fmax, _) = self
            .data
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (f, v)| if v.norm() > acc.1 { (f, v.norm()) } else { acc });
        let idx = self.multi_index(fmax);
        starts.push(idx.iter().map(|&a| unit(d, a)).collect());
        // uniform and a few fixed pseudo-random starts
        let ones: Vec<Complex64> = vec![Complex64::new(1.0 / (d as f64).sqrt(), 0.0); d];
        starts.push(vec![ones; r]);
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..4 {
            let mut s = Vec::with_capacity(r);
            for _ in 0..r {
                let mut v: Vec<Complex64> = (0..d)
                    .map(|_| {
                        let a = next_unit_f64(&mut state) - 0.5;
                        let b = next_unit_f64(&mut state) - 0.5;
                        Complex64::new(a, b)
                    })
                    .collect();
                normalize(&mut v);
                s.push(v);
            }
            starts.push(s);
        }
        let idxs: Vec<Vec<usize>> = (0..self.data.len()).map(|f| self.multi_index(f)).collect();
        let mut best = 0.0f64;
        for mut qs in starts {
            let mut val = 0.0;
            for _ in 0..200 {
                for k in 0..r {
                    let g = self.partial_gradient(&idxs, &qs, k);
                    let n = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    if n == 0.0 {
                        break;
                    }
                    qs[k] = g.iter().map(|v| v.conj() / n).collect();
                }
                let nv = self.eval_multilinear(&qs).norm();
                if nv - val <= 1e-15 * nv.max(1e-300) {
                    val = nv;
                    break;
                }
                val = nv;
            }
            best = best.max(val);
        }
        best
    }

    /// Coefficients g_a with T(q_1..q_r) = sum_a g_a q_k[a].
    fn partial_gradient(&self, idxs: &[Vec<usize>], qs: &[Vec<Complex64>], k: usize) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.d];
        for (v, idx) in self.data.iter().zip(idxs) {
            let mut p = *v;
            for (l, &a) in idx.iter().enumerate() {
                if l != k {
                    p *= qs[l][a];
                }
            }
            g[idx[k]] += p;
        }
        g
    }
}

fn unit(d: usize, a: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); d];
    v[a] = Complex64::new(1.0, 0.0);
    v
}

fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

fn next_unit_f64(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Multi-index -> per-coordinate counts, for every entry of an order-r array.
pub fn count_table(d: usize, r: usize) -> Vec<Vec<usize>> {
    let t = Tensor::zeros(d, r);
    (0..t.len())
        .map(|f| {
            let mut counts = vec![0; d];
            for a in t.multi_index(f) {
                counts[a] += 1;
            }
            counts
        })
        .collect()
}
