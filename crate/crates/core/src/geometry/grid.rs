//! Uniform voxel hash for radius and k-nearest-neighbour queries.

use std::collections::HashMap;

use nalgebra::Point3;

type Cell = (i64, i64, i64);

pub struct SpatialGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> SpatialGrid<'a> {
    pub fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = key(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn for_each_in_cube(&self, center: Cell, ring: i64, mut f: impl FnMut(usize)) {
        for x in (center.0 - ring).max(self.lo.0)..=(center.0 + ring).min(self.hi.0) {
            for y in (center.1 - ring).max(self.lo.1)..=(center.1 + ring).min(self.hi.1) {
                for z in (center.2 - ring).max(self.lo.2)..=(center.2 + ring).min(self.hi.2) {
                    if let Some(idx) = self.cells.get(&(x, y, z)) {
                        idx.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// Indices within `radius` (inclusive) of `query`, ascending.
    pub fn within(&self, query: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let ring = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        self.for_each_in_cube(key(query, self.cell), ring, |i| {
            if (self.points[i] - query).norm_squared() <= r2 {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }

    /// The `k` nearest indices (including a coincident query point), nearest first;
    /// ties are broken by index.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<usize> {
        let n = self.points.len();
        if n == 0 || k == 0 {
            return Vec::new();
        }
        let center = key(query, self.cell);
        let span = [
            (center.0 - self.lo.0).abs().max((self.hi.0 - center.0).abs()),
            (center.1 - self.lo.1).abs().max((self.hi.1 - center.1).abs()),
            (center.2 - self.lo.2).abs().max((self.hi.2 - center.2).abs()),
        ];
        let max_ring = span.into_iter().max().unwrap_or(0);
        let mut ring = 1;
        loop {
            let mut cand: Vec<(f64, usize)> = Vec::new();
            self.for_each_in_cube(center, ring, |i| {
                cand.push(((self.points[i] - query).norm_squared(), i))
            });
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // every point within ring * cell lies inside the searched cube
            let reach = ring as f64 * self.cell;
            let done = ring >= max_ring || (cand.len() >= k && cand[k - 1].0 <= reach * reach);
            if done {
                return cand.into_iter().take(k).map(|(_, i)| i).collect();
            }
            ring += 1;
        }
    }
}

fn key(p: &Point3<f64>, cell: f64) -> Cell {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
