/// `c = beta * c + op(a) * op(b)` for row-major matrices, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`. `trans_a`/`trans_b` read the stored matrix
/// transposed (stored shapes are then `k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    // A single row or a rank-one update: with one row or one inner index the
    // stored operand is contiguous whether or not it is transposed.
    if m == 1 {
        row_times_matrix(k, n, a, b, trans_b, beta, c);
        return;
    }
    if k == 1 {
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(b) {
                *cj = scaled(beta, *cj) + ai * bj;
            }
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index dgemm touches given the
    // strides computed from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn scaled(beta: f64, c: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        beta * c
    }
}

fn row_times_matrix(k: usize, n: usize, a: &[f64], b: &[f64], trans_b: bool, beta: f64, c: &mut [f64]) {
    if trans_b {
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = scaled(beta, *cj) + dot(a, &b[j * k..(j + 1) * k]);
        }
        return;
    }
    for cj in c.iter_mut() {
        *cj = scaled(beta, *cj);
    }
    for (p, &ap) in a.iter().enumerate() {
        if ap == 0.0 {
            continue;
        }
        for (cj, &bj) in c.iter_mut().zip(&b[p * n..(p + 1) * n]) {
            *cj += ap * bj;
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let split = x.len() / 4 * 4;
    for (xs, ys) in x[..split].chunks_exact(4).zip(y[..split].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let tail: f64 = x[split..].iter().zip(&y[split..]).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
