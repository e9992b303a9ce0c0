//! Dynamic time warping over scalar sequences.
//!
//! Local cost `|a_i - b_j|`, steps (1,0), (0,1), (1,1), both endpoints
//! anchored. The reported distance is the accumulated cost divided by
//! `a.len() + b.len()`.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("DTW requires non-empty sequences")]
pub struct EmptySequence;

/// Minimum accumulated cost over all monotone alignments, unnormalized.
pub fn dtw_cost(a: &[f64], b: &[f64]) -> Result<f64, EmptySequence> {
    if a.is_empty() || b.is_empty() {
        return Err(EmptySequence);
    }
    // single rolling row over b
    let m = b.len();
    let mut row = vec![0.0; m];
    let mut acc = 0.0;
    for (j, &bj) in b.iter().enumerate() {
        acc += (a[0] - bj).abs();
        row[j] = acc;
    }
    for &ai in &a[1..] {
        let mut diag = row[0];
        row[0] += (ai - b[0]).abs();
        for j in 1..m {
            let up = row[j];
            let best = diag.min(up).min(row[j - 1]);
            diag = up;
            row[j] = best + (ai - b[j]).abs();
        }
    }
    Ok(row[m - 1])
}

/// Length-normalized DTW distance.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, EmptySequence> {
    Ok(dtw_cost(a, b)? / (a.len() + b.len()) as f64)
}

/// An optimal warping path with its normalized distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub distance: f64,
    pub cost: f64,
    /// Matched index pairs from (0,0) to (n-1, m-1).
    pub path: Vec<(usize, usize)>,
}

/// Full-matrix DTW with backtracking. Ties prefer the diagonal step.
pub fn dtw_alignment(a: &[f64], b: &[f64]) -> Result<Alignment, EmptySequence> {
    if a.is_empty() || b.is_empty() {
        return Err(EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let local = (a[i] - b[j]).abs();
            let prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[at(0, j - 1)],
                (_, 0) => acc[at(i - 1, 0)],
                _ => acc[at(i - 1, j - 1)]
                    .min(acc[at(i - 1, j)])
                    .min(acc[at(i, j - 1)]),
            };
            acc[at(i, j)] = prev + local;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let d = acc[at(i - 1, j - 1)];
                let u = acc[at(i - 1, j)];
                let l = acc[at(i, j - 1)];
                if d <= u && d <= l {
                    (i - 1, j - 1)
                } else if u <= l {
                    (i - 1, j)
                } else {
                    (i, j - 1)
                }
            }
        };
        path.push((i, j));
    }
    path.reverse();
    let cost = acc[at(n - 1, m - 1)];
    Ok(Alignment {
        distance: cost / (n + m) as f64,
        cost,
        path,
    })
}
