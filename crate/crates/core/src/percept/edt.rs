//! Exact squared Euclidean distance transform (lower envelope of parabolas,
//! one pass along x and one along y).

/// Squared distance in cells from every cell to the nearest `true` cell,
/// row-major with `nx` columns. Cells with no site anywhere get `f64::INFINITY`.
pub fn edt_sq(sites: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    assert_eq!(sites.len(), nx * ny, "site mask does not match grid shape");
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut scratch = Scratch::new(nx.max(ny));
    for row in grid.chunks_exact_mut(nx) {
        scratch.transform(row);
    }
    let mut column = vec![0.0; ny];
    for x in 0..nx {
        for (y, c) in column.iter_mut().enumerate() {
            *c = grid[y * nx + x];
        }
        scratch.transform(&mut column);
        for (y, c) in column.iter().enumerate() {
            grid[y * nx + x] = *c;
        }
    }
    grid
}

struct Scratch {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
    out: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
            out: vec![0.0; n],
        }
    }

    /// In-place 1D transform `d(p) = min_q f(q) + (p - q)^2`. Infinite
    /// entries are skipped rather than added as parabolas.
    fn transform(&mut self, f: &mut [f64]) {
        let n = f.len();
        self.vertices.clear();
        self.bounds.clear();
        for q in (0..n).filter(|&q| f[q].is_finite()) {
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let s = ((f[q] + (q * q) as f64) - (f[v] + (v * v) as f64)) / (2.0 * (q as f64 - v as f64));
                if s <= *self.bounds.last().unwrap() {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.vertices.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.vertices.is_empty() {
            return;
        }
        let mut k = 0;
        for p in 0..n {
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < p as f64 {
                k += 1;
            }
            let q = self.vertices[k];
            let d = p as f64 - q as f64;
            self.out[p] = f[q] + d * d;
        }
        f.copy_from_slice(&self.out[..n]);
    }
}

#[cfg(test)]
fn brute_force_sq(sites: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let pts: Vec<(i64, i64)> = (0..nx * ny)
        .filter(|&i| sites[i])
        .map(|i| ((i % nx) as i64, (i / nx) as i64))
        .collect();
    (0..nx * ny)
        .map(|i| {
            let (x, y) = ((i % nx) as i64, (i / nx) as i64);
            pts.iter()
                .map(|&(px, py)| ((px - x).pow(2) + (py - y).pow(2)) as f64)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_site() {
        let mut sites = vec![false; 25];
        sites[12] = true;
        let d = edt_sq(&sites, 5, 5);
        assert_eq!(d[0], 8.0);
        assert_eq!(d[12], 0.0);
        assert_eq!(d[14], 4.0);
    }

    #[test]
    fn no_sites_is_infinite() {
        assert!(edt_sq(&[false; 12], 4, 3).iter().all(|v| v.is_infinite()));
    }

    proptest! {
        #[test]
        fn matches_brute_force(nx in 1usize..24, ny in 1usize..24, density in 0.0f64..0.3, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<bool> = (0..nx * ny).map(|_| rng.random_bool(density)).collect();
            prop_assert_eq!(edt_sq(&sites, nx, ny), brute_force_sq(&sites, nx, ny));
        }
    }
}
