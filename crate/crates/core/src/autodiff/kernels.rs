//! Shape rules and numeric kernels shared by forward and backward passes.

/// Right-aligned broadcast of two shapes; `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// For every flat index of `out`, the flat index of `src` it reads from.
/// `None` when the shapes hold the same number of elements in the same layout.
pub fn broadcast_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    let n_out: usize = out.iter().product();
    let n_src: usize = src.iter().product();
    if n_src == n_out {
        return None;
    }
    if n_src == 1 {
        return Some(vec![0; n_out]);
    }
    let rank = out.len();
    // Source strides aligned to the output rank, zero on broadcast axes.
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let d = dim_from_right(src, rank - 1 - i);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    let mut map = Vec::with_capacity(n_out);
    let mut idx = vec![0usize; rank];
    for _ in 0..n_out {
        let mut s = 0;
        for i in 0..rank {
            s += idx[i] * strides[i];
        }
        map.push(s);
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < out[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Some(map)
}

/// Sums `grad` (laid out as `out`) back onto the source shape.
pub fn reduce_to(grad: &[f64], src_len: usize, map: &Option<Vec<usize>>) -> Vec<f64> {
    match map {
        None => grad.to_vec(),
        Some(map) => {
            let mut acc = vec![0.0; src_len];
            for (g, &j) in grad.iter().zip(map) {
                acc[j] += g;
            }
            acc
        }
    }
}

pub fn gather(src: &[f64], map: &Option<Vec<usize>>, n: usize) -> Vec<f64> {
    match map {
        None => src.to_vec(),
        Some(map) => {
            debug_assert_eq!(map.len(), n);
            map.iter().map(|&j| src[j]).collect()
        }
    }
}

/// `[n × k] · [k × m]`. Each output row depends only on the matching input row.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `dC · Bᵀ` for `dC: [n × m]`, `B: [k × m]`.
pub fn matmul_grad_lhs(dc: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut da = vec![0.0; n * k];
    for i in 0..n {
        let drow = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (x, y) in drow.iter().zip(brow) {
                s += x * y;
            }
            da[i * k + p] = s;
        }
    }
    da
}

/// `Aᵀ · dC` for `A: [n × k]`, `dC: [n × m]`.
pub fn matmul_grad_rhs(a: &[f64], dc: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * m];
    for i in 0..n {
        let drow = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out = &mut db[p * m..(p + 1) * m];
            for (o, d) in out.iter_mut().zip(drow) {
                *o += aip * d;
            }
        }
    }
    db
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

/// Correctly rounded sum of `xs` (Shewchuk partials). The result does not
/// depend on the order of the terms.
pub fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round the partials to a single double, as in Python's math.fsum.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}
