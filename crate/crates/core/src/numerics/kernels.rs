//! Raw row-major matrix kernels shared by forward and backward passes.

/// out[n×q] += a[n×p] · b[p×q]
pub fn mm_acc(a: &[f64], b: &[f64], n: usize, p: usize, q: usize, out: &mut [f64]) {
    for i in 0..n {
        let row = &mut out[i * q..(i + 1) * q];
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * q..(k + 1) * q];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// out[n×m] += a[n×p] · b[m×p]ᵀ
pub fn mm_nt_acc(a: &[f64], b: &[f64], n: usize, p: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..m {
            let brow = &b[j * p..(j + 1) * p];
            out[i * m + j] += dot(arow, brow);
        }
    }
}

/// out[p×q] += a[n×p]ᵀ · b[n×q]
pub fn mm_tn_acc(a: &[f64], b: &[f64], n: usize, p: usize, q: usize, out: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * q..(i + 1) * q];
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * q..(k + 1) * q];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest `f64` below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1) even where `f64` would
/// round to an endpoint.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_kernels_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut c = [0.0; 4];
        mm_acc(&a, &b, 2, 3, 2, &mut c);
        assert_eq!(c, [0.5, 7.0, 2.0, 16.0]);
        // b transposed as a 2x3 matrix
        let bt = [1.0, -1.0, 0.5, 0.0, 2.0, 1.0];
        let mut c2 = [0.0; 4];
        mm_nt_acc(&a, &bt, 2, 3, 2, &mut c2);
        assert_eq!(c, c2);
        // aᵀ as 3x2, so (aᵀ)ᵀ·b' == a·b'
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        mm_tn_acc(&at, &b, 3, 2, 2, &mut c3);
        assert_eq!(c, c3);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) > 0.0);
        assert!(sigmoid(800.0) < 1.0);
    }
}
