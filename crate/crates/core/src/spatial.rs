//! Uniform hash grid over 3D points for radius and k-nearest-neighbor
//! queries. Cells are cubes of a fixed edge length; a radius query visits
//! only the cells overlapping the query ball.

use nalgebra::Vector3;
use std::collections::HashMap;

pub type CellKey = (i64, i64, i64);

pub fn cell_of(p: &Vector3<f64>, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

pub struct PointGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl PointGrid {
    pub fn build(points: Vec<Vector3<f64>>, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let mut cells: HashMap<CellKey, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell)).or_default().push(i as u32);
        }
        Self { cell, cells, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: u32) -> &Vector3<f64> {
        &self.points[index as usize]
    }

    /// Indices of all points within `radius` of `center` (inclusive).
    pub fn within(&self, center: &Vector3<f64>, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |i, _| out.push(i));
        out
    }

    /// Visits `(index, distance)` for every point within `radius` of `center`.
    pub fn for_each_within<F: FnMut(u32, f64)>(
        &self,
        center: &Vector3<f64>,
        radius: f64,
        mut f: F,
    ) {
        let r2 = radius * radius;
        let lo = cell_of(&(center - Vector3::repeat(radius)), self.cell);
        let hi = cell_of(&(center + Vector3::repeat(radius)), self.cell);
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                for cz in lo.2..=hi.2 {
                    let Some(members) = self.cells.get(&(cx, cy, cz)) else {
                        continue;
                    };
                    for &i in members {
                        let d2 = (self.points[i as usize] - center).norm_squared();
                        if d2 <= r2 {
                            f(i, d2.sqrt());
                        }
                    }
                }
            }
        }
    }

    /// Nearest point to `center` within `radius`, ties broken by index.
    pub fn nearest_within(&self, center: &Vector3<f64>, radius: f64) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        self.for_each_within(center, radius, |i, d| {
            let better = match best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && i < bi),
            };
            if better {
                best = Some((i, d));
            }
        });
        best
    }

    /// The `k` nearest points to `center`, excluding `exclude` if given.
    /// Expands the search ring until `k` hits are confirmed closer than the
    /// scanned radius. Results sorted by `(distance, index)`.
    pub fn k_nearest(&self, center: &Vector3<f64>, k: usize, exclude: Option<u32>) -> Vec<(u32, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut radius = self.cell;
        loop {
            let mut hits: Vec<(u32, f64)> = Vec::new();
            self.for_each_within(center, radius, |i, d| {
                if Some(i) != exclude {
                    hits.push((i, d));
                }
            });
            hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if hits.len() >= k && hits[k - 1].1 <= radius {
                hits.truncate(k);
                return hits;
            }
            let exhausted = hits.len()
                >= self.points.len() - usize::from(exclude.is_some());
            if exhausted {
                hits.truncate(k);
                return hits;
            }
            radius *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let pts = random_points(500, 11);
        let grid = PointGrid::build(pts.clone(), 0.23);
        let center = Vector3::new(0.1, -0.2, 0.05);
        for radius in [0.05, 0.3, 1.0] {
            let mut got = grid.within(&center, radius);
            got.sort_unstable();
            let expect: Vec<u32> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - center).norm() <= radius)
                .map(|(i, _)| i as u32)
                .collect();
            assert_eq!(got, expect, "radius {radius}");
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = random_points(300, 7);
        let grid = PointGrid::build(pts.clone(), 0.1);
        let center = Vector3::new(0.4, 0.4, -0.3);
        for k in [1, 5, 40] {
            let got = grid.k_nearest(&center, k, None);
            let mut all: Vec<(u32, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i as u32, (p - center).norm()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            let got_idx: Vec<u32> = got.iter().map(|(i, _)| *i).collect();
            let expect_idx: Vec<u32> = all.iter().map(|(i, _)| *i).collect();
            assert_eq!(got_idx, expect_idx, "k {k}");
        }
    }

    #[test]
    fn k_nearest_larger_than_cloud() {
        let pts = random_points(5, 3);
        let grid = PointGrid::build(pts, 0.5);
        let got = grid.k_nearest(&Vector3::zeros(), 10, None);
        assert_eq!(got.len(), 5);
    }
}
