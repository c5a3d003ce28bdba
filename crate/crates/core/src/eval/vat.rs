//! Visual assessment of clustering tendency (VAT) and its minimax-path
//! refinement (iVAT).

use super::distance::DissimilarityMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VatResult {
    pub permutation: Vec<usize>,
    pub reordered: DissimilarityMatrix,
    pub ivat: Option<DissimilarityMatrix>,
}

/// VAT visit order: start at the lower-indexed member of the most
/// dissimilar pair, then keep appending the unvisited sample closest to
/// the visited set (Prim's order). Ties go to the lowest index.
pub fn vat_order(d: &DissimilarityMatrix) -> Vec<usize> {
    let n = d.n();
    if n == 0 {
        return Vec::new();
    }
    let mut start = 0;
    let mut widest = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if d.get(i, j) > widest {
                widest = d.get(i, j);
                start = i;
            }
        }
    }
    let mut visited = vec![false; n];
    let mut reach = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    loop {
        visited[current] = true;
        order.push(current);
        if order.len() == n {
            break;
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if visited[j] {
                continue;
            }
            reach[j] = reach[j].min(d.get(current, j));
            if next == usize::MAX || reach[j] < reach[next] {
                next = j;
            }
        }
        current = next;
    }
    order
}

/// Minimax path distances of a VAT-ordered matrix, by the ordered recursion:
/// row `r` links to its nearest earlier sample `j`, and its distance to any
/// other earlier sample `k` is `max(d[r][j], d'[j][k])`.
pub fn ivat_transform(ordered: &DissimilarityMatrix) -> DissimilarityMatrix {
    let n = ordered.n();
    let mut out = vec![0.0; n * n];
    for r in 1..n {
        let mut j = 0;
        for k in 1..r {
            if ordered.get(r, k) < ordered.get(r, j) {
                j = k;
            }
        }
        let link = ordered.get(r, j);
        out[r * n + j] = link;
        for k in 0..r {
            if k != j {
                out[r * n + k] = link.max(out[j * n + k]);
            }
        }
    }
    for r in 0..n {
        for k in 0..r {
            out[k * n + r] = out[r * n + k];
        }
    }
    DissimilarityMatrix::new(n, out).expect("minimax of a valid matrix is valid")
}

/// VAT ordering plus the reordered matrix, and iVAT when requested.
pub fn vat(d: &DissimilarityMatrix, with_ivat: bool) -> Result<VatResult> {
    if d.n() == 0 {
        return Err(Error::Shape("VAT needs at least one sample".into()));
    }
    let permutation = vat_order(d);
    let reordered = d.permuted(&permutation)?;
    let ivat = with_ivat.then(|| ivat_transform(&reordered));
    Ok(VatResult {
        permutation,
        reordered,
        ivat,
    })
}
