//! Functional model of attention: dense softmax attention and the blocked
//! two-stage variant with running-max rescaling.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AttentionInput<T> {
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Key/value block size in tokens.
    pub block: usize,
    /// Multiply logits by `1/sqrt(d_h)`.
    pub scale: bool,
}

impl<T: Float> AttentionInput<T> {
    pub fn new(q: Array2<T>, k: Array2<T>, v: Array2<T>, block: usize) -> Self {
        Self { q, k, v, block, scale: true }
    }

    pub fn check(&self) -> Result<()> {
        let (l, dh) = self.q.dim();
        if l == 0 || dh == 0 {
            return Err(Error::Shape("attention needs L > 0 and d_h > 0".into()));
        }
        if self.k.dim() != (l, dh) || self.v.dim() != (l, dh) {
            return Err(Error::Shape(format!(
                "Q {:?}, K {:?}, V {:?} must all be L x d_h",
                self.q.dim(),
                self.k.dim(),
                self.v.dim()
            )));
        }
        if self.block == 0 || self.block > l {
            return Err(Error::Shape(format!("block size {} outside 1..={l}", self.block)));
        }
        Ok(())
    }

    fn logit_scale(&self) -> T {
        if self.scale {
            T::one() / T::from(self.q.ncols()).unwrap().sqrt()
        } else {
            T::one()
        }
    }

    fn logits(&self, keys: ArrayView2<'_, T>) -> Array2<T> {
        let scale = self.logit_scale();
        let mut p = Array2::zeros((self.q.nrows(), keys.nrows()));
        for ((i, j), out) in p.indexed_iter_mut() {
            let dot = self
                .q
                .row(i)
                .iter()
                .zip(keys.row(j))
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            *out = dot * scale;
        }
        p
    }
}

fn matmul<T: Float>(a: &Array2<T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    for ((i, j), out) in c.indexed_iter_mut() {
        *out = a
            .row(i)
            .iter()
            .zip(b.column(j))
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    }
    c
}

/// Row-wise stable softmax followed by `P·V`.
pub fn dense_attention<T: Float>(inp: &AttentionInput<T>) -> Result<Array2<T>> {
    inp.check()?;
    let mut p = inp.logits(inp.k.view());
    let mut sums = Vec::with_capacity(p.nrows());
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        sums.push(row.iter().fold(T::zero(), |a, &b| a + b));
    }
    let mut s = matmul(&p, inp.v.view());
    for (mut row, sum) in s.axis_iter_mut(Axis(0)).zip(sums) {
        row.mapv_inplace(|x| x / sum);
    }
    Ok(s)
}

/// Blocked attention visiting key blocks in natural order.
pub fn blocked_attention<T: Float>(inp: &AttentionInput<T>) -> Result<Array2<T>> {
    let n = inp.q.nrows().div_ceil(inp.block.max(1));
    blocked_attention_ordered(inp, &(0..n).collect::<Vec<_>>())
}

/// Blocked attention visiting key blocks in `order`, which must be a
/// permutation of `0..ceil(L/B)`.
pub fn blocked_attention_ordered<T: Float>(inp: &AttentionInput<T>, order: &[usize]) -> Result<Array2<T>> {
    inp.check()?;
    let (l, dh) = inp.q.dim();
    let blocks = l.div_ceil(inp.block);
    let mut seen = vec![false; blocks];
    if order.len() != blocks || order.iter().any(|&b| b >= blocks || std::mem::replace(&mut seen[b], true)) {
        return Err(Error::Shape(format!("block order {order:?} is not a permutation of 0..{blocks}")));
    }
    let mut m = Array1::from_elem(l, T::neg_infinity());
    let mut denom = Array1::<T>::zeros(l);
    let mut acc = Array2::<T>::zeros((l, dh));
    for &b in order {
        let lo = b * inp.block;
        let hi = (lo + inp.block).min(l);
        let mut p = inp.logits(inp.k.slice(s![lo..hi, ..]));
        for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
            let local_max = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
            let new_m = m[i].max(local_max);
            row.mapv_inplace(|x| (x - new_m).exp());
            let correction = (m[i] - new_m).exp();
            denom[i] = denom[i] * correction + row.iter().fold(T::zero(), |a, &x| a + x);
            acc.row_mut(i).mapv_inplace(|x| x * correction);
            m[i] = new_m;
        }
        acc = acc + matmul(&p, inp.v.slice(s![lo..hi, ..]));
    }
    for (mut row, &d) in acc.axis_iter_mut(Axis(0)).zip(denom.iter()) {
        row.mapv_inplace(|x| x / d);
    }
    Ok(acc)
}

/// Per-row SIMD element counts of the blocked softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SoftmaxOpCounts {
    pub max: u64,
    pub exp: u64,
    pub sum: u64,
    /// Accumulator rescales when the running max moves (worst case every block after the first).
    pub rescale: u64,
    pub divide: u64,
}

impl SoftmaxOpCounts {
    pub fn per_row(&self) -> u64 {
        self.max + self.exp + self.sum + self.rescale + self.divide
    }
}

/// `max = exp = sum = L`, `rescale = (blocks-1)·d_h`, `divide = d_h`.
pub fn softmax_op_counts(l: u64, block: u64, head_dim: u64) -> SoftmaxOpCounts {
    let blocks = l.div_ceil(block.clamp(1, l.max(1)));
    SoftmaxOpCounts {
        max: l,
        exp: l,
        sum: l,
        rescale: blocks.saturating_sub(1) * head_dim,
        divide: head_dim,
    }
}

/// Deterministic `L x d_h` matrices for self-checks.
pub fn random_input(l: usize, dh: usize, block: usize, seed: u64) -> AttentionInput<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut gen = || Array2::from_shape_fn((l, dh), |_| rng.gen_range(-1.0..1.0));
    let (q, k, v) = (gen(), gen(), gen());
    AttentionInput::new(q, k, v, block)
}

pub fn max_abs_diff<T: Float>(a: &Array2<T>, b: &Array2<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Largest deviation of f32 blocked attention from f64 dense attention on
/// seeded random inputs of shape `l x dh`.
pub fn attention_self_check(l: usize, dh: usize, block: usize, seed: u64) -> Result<f64> {
    let exact = random_input(l, dh, block, seed);
    let single = AttentionInput {
        q: exact.q.mapv(|x| x as f32),
        k: exact.k.mapv(|x| x as f32),
        v: exact.v.mapv(|x| x as f32),
        block,
        scale: exact.scale,
    };
    let reference = dense_attention(&exact)?;
    let blocked = blocked_attention(&single)?.mapv(f64::from);
    Ok(max_abs_diff(&reference, &blocked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn cast(inp: &AttentionInput<f64>) -> AttentionInput<f32> {
        AttentionInput {
            q: inp.q.mapv(|x| x as f32),
            k: inp.k.mapv(|x| x as f32),
            v: inp.v.mapv(|x| x as f32),
            block: inp.block,
            scale: inp.scale,
        }
    }

    /// Softmax attention summed in extended precision via compensated (Kahan-Neumaier) sums.
    fn oracle(inp: &AttentionInput<f64>) -> Array2<f64> {
        fn ksum(xs: impl Iterator<Item = f64>) -> f64 {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for x in xs {
                let t = s + x;
                c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
                s = t;
            }
            s + c
        }
        let (l, dh) = inp.q.dim();
        let scale = 1.0 / (dh as f64).sqrt();
        Array2::from_shape_fn((l, dh), |(i, c)| {
            let logits: Vec<f64> = (0..l)
                .map(|j| ksum((0..dh).map(|t| inp.q[[i, t]] * inp.k[[j, t]])) * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
            let z = ksum(w.iter().copied());
            ksum((0..l).map(|j| w[j] * inp.v[[j, c]])) / z
        })
    }

    #[test]
    fn seeded_self_check_is_tight_and_repeatable() {
        let a = attention_self_check(197, 64, 32, 42).unwrap();
        assert!(a <= 1e-6, "{a}");
        assert_eq!(a, attention_self_check(197, 64, 32, 42).unwrap());
    }

    #[test]
    fn single_token_returns_v() {
        let inp = AttentionInput::new(array![[0.3, -2.0]], array![[1.0, 5.0]], array![[7.0, 8.0]], 1);
        assert_eq!(dense_attention(&inp).unwrap(), array![[7.0, 8.0]]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut inp = random_input(6, 3, 2, 9);
        let k0 = inp.k.row(0).to_owned();
        for mut r in inp.k.axis_iter_mut(Axis(0)) {
            r.assign(&k0);
        }
        let s = dense_attention(&inp).unwrap();
        let mean = inp.v.mean_axis(Axis(0)).unwrap();
        for r in s.axis_iter(Axis(0)) {
            for (a, b) in r.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_matches_compensated_oracle_seed_42() {
        let inp = random_input(8, 4, 8, 42);
        let d = dense_attention(&inp).unwrap();
        assert!(max_abs_diff(&d, &oracle(&inp)) <= 1e-12);
    }

    #[test]
    fn one_block_equals_dense_exactly() {
        let inp = random_input(11, 5, 11, 3);
        assert_eq!(blocked_attention(&inp).unwrap(), dense_attention(&inp).unwrap());
    }

    #[test]
    fn block_sizes_agree_at_f32() {
        for b in [1, 2, 3, 5, 8] {
            let mut inp = random_input(8, 4, b, 42 + b as u64);
            inp.block = b;
            let inp = cast(&inp);
            let err = max_abs_diff(&blocked_attention(&inp).unwrap(), &dense_attention(&inp).unwrap());
            assert!(err <= 1e-6, "B={b}: {err}");
        }
    }

    #[test]
    fn dominant_logit_selects_value_row() {
        let l = 8;
        // keys are one-hot; query i puts a +50 logit on key (3i mod L)
        let targets: Vec<usize> = (0..l).map(|i| (i * 3) % l).collect();
        let mut k = Array2::zeros((l, l));
        for j in 0..l {
            k[[j, j]] = 1.0;
        }
        let mut q = Array2::zeros((l, l));
        for (i, &t) in targets.iter().enumerate() {
            q[[i, t]] = 50.0;
        }
        let v = Array2::from_shape_fn((l, l), |(j, c)| (j * 10 + c) as f64);
        let inp = AttentionInput { q, k, v: v.clone(), block: 3, scale: false };
        let s = blocked_attention(&cast(&inp)).unwrap();
        for (i, &t) in targets.iter().enumerate() {
            for c in 0..l {
                assert!((s[[i, c]] as f64 - v[[t, c]]).abs() <= 1e-6 * v[[t, c]].abs().max(1.0));
            }
        }
    }

    #[test]
    fn rows_of_implied_weights_sum_to_one() {
        let l = 7;
        let mut inp = random_input(l, l, 3, 11);
        inp.v = Array2::eye(l);
        let p = blocked_attention(&inp).unwrap();
        for r in p.axis_iter(Axis(0)) {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_order_and_shapes_rejected() {
        let inp = random_input(6, 2, 2, 1);
        assert!(blocked_attention_ordered(&inp, &[0, 0, 1]).is_err());
        assert!(blocked_attention_ordered(&inp, &[0, 1]).is_err());
        let mut bad = inp.clone();
        bad.block = 7;
        assert!(dense_attention(&bad).is_err());
    }

    #[test]
    fn softmax_counts() {
        assert_eq!(softmax_op_counts(197, 197, 64).rescale, 0);
        assert_eq!(softmax_op_counts(1, 1, 4).exp, 1);
        assert_eq!(softmax_op_counts(8, 2, 4).rescale, 3 * 4);
    }

    #[test]
    fn rescale_count_matches_trace() {
        // count running-max updates on an increasing logit row (worst case)
        for (l, b) in [(8u64, 2u64), (10, 3), (5, 5)] {
            let row: Vec<f64> = (0..l).map(|x| x as f64).collect();
            let mut m = f64::NEG_INFINITY;
            let mut rescales = 0;
            for chunk in row.chunks(b as usize) {
                let local = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m.is_finite() && local > m {
                    rescales += 1;
                }
                m = m.max(local);
            }
            assert_eq!(softmax_op_counts(l, b, 1).rescale, rescales);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn blocked_equals_dense(l in 1usize..24, dh in 1usize..9, b in 1usize..24, seed in any::<u64>()) {
            let b = b.min(l);
            let inp = random_input(l, dh, b, seed);
            let err64 = max_abs_diff(&blocked_attention(&inp).unwrap(), &dense_attention(&inp).unwrap());
            prop_assert!(err64 <= 1e-12);
            let inp32 = cast(&inp);
            let err32 = max_abs_diff(&blocked_attention(&inp32).unwrap(), &dense_attention(&inp32).unwrap());
            prop_assert!(err32 <= 1e-6);
        }

        #[test]
        fn visitation_order_is_irrelevant(l in 2usize..20, b in 1usize..6, seed in any::<u64>(), rot in 0usize..8) {
            let b = b.min(l);
            let inp = random_input(l, 3, b, seed);
            let n = l.div_ceil(b);
            let mut order: Vec<usize> = (0..n).rev().collect();
            order.rotate_left(rot % n);
            let a = blocked_attention_ordered(&inp, &order).unwrap();
            let d = blocked_attention(&inp).unwrap();
            prop_assert!(max_abs_diff(&a, &d) <= 1e-12);
        }
    }
}
