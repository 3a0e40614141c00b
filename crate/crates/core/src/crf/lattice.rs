//! Permutohedral lattice for high-dimensional Gaussian filtering
//! (Adams, Baek & Davis, 2010), as used by dense CRF inference.
//!
//! Features must be pre-scaled so that the target kernel is
//! `exp(−|f_i − f_j|² / 2)`.

use std::collections::HashMap;

pub struct Lattice<const D: usize> {
    n: usize,
    /// Per pixel, the D+1 enclosing simplex vertices and their weights.
    offsets: Vec<u32>,
    weights: Vec<f32>,
    n_points: usize,
    /// Per blur direction, the two neighbors of every lattice point
    /// (`u32::MAX` when absent).
    neighbors: Vec<Vec<[u32; 2]>>,
}

impl<const D: usize> Lattice<D> {
    pub fn new(features: &[[f32; D]]) -> Self {
        let d = D;
        let n = features.len();
        let inv_std = (2.0f64 / 3.0).sqrt() * (d + 1) as f64;
        let scale: Vec<f64> = (0..d).map(|i| inv_std / (((i + 2) * (i + 1)) as f64).sqrt()).collect();
        let down = 1.0 / (d + 1) as f64;

        let mut table: HashMap<[i32; D], u32> = HashMap::with_capacity(n);
        let mut keys: Vec<[i32; D]> = Vec::new();
        let mut offsets = vec![0u32; n * (d + 1)];
        let mut weights = vec![0f32; n * (d + 1)];

        let mut elevated = vec![0f64; d + 1];
        let mut rem0 = vec![0i32; d + 1];
        let mut rank = vec![0i32; d + 1];
        let mut bary = vec![0f64; d + 2];
        for (p, f) in features.iter().enumerate() {
            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f[j - 1] as f64 * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            let mut sum = 0i32;
            for i in 0..=d {
                let v = elevated[i] * down;
                let up = v.ceil() * (d + 1) as f64;
                let dn = v.floor() * (d + 1) as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - dn { up as i32 } else { dn as i32 };
                sum += rem0[i];
            }
            sum /= (d + 1) as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..=d {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            let dp1 = (d + 1) as i32;
            if sum > 0 {
                for i in 0..=d {
                    if rank[i] >= dp1 - sum {
                        rank[i] -= dp1 - sum;
                        rem0[i] -= dp1;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..=d {
                    if rank[i] < -sum {
                        rank[i] += dp1 + sum;
                        rem0[i] += dp1;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..=d {
                let v = (elevated[i] - rem0[i] as f64) * down;
                bary[d - rank[i] as usize] += v;
                bary[d + 1 - rank[i] as usize] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for k in 0..=d {
                let mut key = [0i32; D];
                for i in 0..d {
                    key[i] = rem0[i] + if rank[i] as usize <= d - k { k as i32 } else { k as i32 - dp1 };
                }
                let idx = *table.entry(key).or_insert_with(|| {
                    keys.push(key);
                    (keys.len() - 1) as u32
                });
                offsets[p * (d + 1) + k] = idx;
                weights[p * (d + 1) + k] = bary[k] as f32;
            }
        }

        let neighbors = (0..=d)
            .map(|j| {
                keys.iter()
                    .map(|key| {
                        let mut n1 = [0i32; D];
                        let mut n2 = [0i32; D];
                        for k in 0..d {
                            n1[k] = key[k] - 1;
                            n2[k] = key[k] + 1;
                        }
                        if j < d {
                            n1[j] = key[j] + d as i32;
                            n2[j] = key[j] - d as i32;
                        }
                        let look = |k: &[i32; D]| table.get(k).copied().unwrap_or(u32::MAX);
                        [look(&n1), look(&n2)]
                    })
                    .collect()
            })
            .collect();

        Self {
            n,
            offsets,
            weights,
            n_points: keys.len(),
            neighbors,
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Approximates `Σ_j exp(−|f_i − f_j|²/2) v_j` over all j, self included.
    pub fn filter(&self, v: &[f64]) -> Vec<f64> {
        let d = D;
        assert_eq!(v.len(), self.n);
        let mut vals = vec![0f64; self.n_points];
        for p in 0..self.n {
            for k in 0..=d {
                let i = p * (d + 1) + k;
                vals[self.offsets[i] as usize] += self.weights[i] as f64 * v[p];
            }
        }
        let mut next = vec![0f64; self.n_points];
        for nb in &self.neighbors {
            for (i, [a, b]) in nb.iter().enumerate() {
                let va = if *a == u32::MAX { 0.0 } else { vals[*a as usize] };
                let vb = if *b == u32::MAX { 0.0 } else { vals[*b as usize] };
                next[i] = vals[i] + 0.5 * (va + vb);
            }
            std::mem::swap(&mut vals, &mut next);
        }
        let alpha = 1.0 / (1.0 + 0.5f64.powi(d as i32));
        (0..self.n)
            .map(|p| {
                (0..=d)
                    .map(|k| {
                        let i = p * (d + 1) + k;
                        self.weights[i] as f64 * vals[self.offsets[i] as usize]
                    })
                    .sum::<f64>()
                    * alpha
            })
            .collect()
    }
}
