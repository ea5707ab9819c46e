// Flat-slice numeric kernels shared by the eager functions and the tape.

use super::Scalar;

/// `a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    out
}

/// `a[k×m]ᵀ · b[k×n]`, accumulated into `out[m×n]`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

pub fn transpose<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Writes the masked softmax of `logits` into `out`. Returns false when no
/// position is allowed.
pub fn masked_softmax_row<T: Scalar>(logits: &[T], allow: &[bool], out: &mut [T]) -> bool {
    let mut max = T::neg_infinity();
    for (&l, &a) in logits.iter().zip(allow) {
        if a && l > max {
            max = l;
        }
    }
    if !allow.iter().any(|a| *a) {
        return false;
    }
    if max == T::neg_infinity() {
        // every allowed logit is NaN or -inf; let the loss report it
        for (o, &a) in out.iter_mut().zip(allow) {
            *o = if a { T::nan() } else { T::zero() };
        }
        return true;
    }
    let mut sum = T::zero();
    for ((o, &l), &a) in out.iter_mut().zip(logits).zip(allow) {
        *o = if a { (l - max).exp() } else { T::zero() };
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
    true
}

/// Returns the standardised row and `1/sqrt(var + eps)`.
pub fn normalize_row<T: Scalar>(x: &[T], eps: T) -> (Vec<T>, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().fold(T::zero(), |s, v| s + *v) / n;
    let var = x.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / n;
    let inv = T::one() / (var + eps).sqrt();
    (x.iter().map(|v| (*v - mean) * inv).collect(), inv)
}

pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let sum = x.iter().fold(T::zero(), |s, v| s + (*v - max).exp());
    max + sum.ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU, as in the original BERT code.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
