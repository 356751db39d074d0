//! Uniform cell grid over a torus for fixed-radius neighbour queries.

use crate::model::{toroidal_distance, Position, ToroidalWorld};

/// Immutable bucket grid. Items are stored in compressed-row form: one
/// contiguous slice per cell.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cols: usize,
    rows: usize,
    cell_w: f64,
    cell_h: f64,
    starts: Vec<u32>,
    items: Vec<(usize, Position)>,
}

impl SpatialGrid {
    /// Builds a grid whose cells are at least `min_cell` on each side.
    pub fn build<I>(world: &ToroidalWorld, min_cell: f64, points: I) -> Self
    where
        I: IntoIterator<Item = (usize, Position)>,
    {
        let cols = ((world.width() / min_cell).floor() as usize).clamp(1, 4096);
        let rows = ((world.height() / min_cell).floor() as usize).clamp(1, 4096);
        let cell_w = world.width() / cols as f64;
        let cell_h = world.height() / rows as f64;

        let points: Vec<(usize, Position)> = points.into_iter().collect();
        let cell_of = |p: Position| {
            let c = ((p.x / cell_w) as usize).min(cols - 1);
            let r = ((p.y / cell_h) as usize).min(rows - 1);
            r * cols + c
        };

        let mut counts = vec![0u32; cols * rows + 1];
        for &(_, p) in &points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut items = vec![(0usize, Position::default()); points.len()];
        for (idx, p) in points {
            let cell = cell_of(p);
            items[cursor[cell] as usize] = (idx, p);
            cursor[cell] += 1;
        }
        Self {
            cols,
            rows,
            cell_w,
            cell_h,
            starts,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Calls `f(index, position)` for every stored point whose toroidal
    /// distance to `center` is `<= radius`. Each point is visited once.
    pub fn for_each_within<F>(&self, world: &ToroidalWorld, center: Position, radius: f64, mut f: F)
    where
        F: FnMut(usize, Position),
    {
        let col_range = axis_cells(center.x, radius, self.cell_w, self.cols);
        let row_range = axis_cells(center.y, radius, self.cell_h, self.rows);
        for r in row_range.iter() {
            for c in col_range.iter() {
                let cell = r * self.cols + c;
                let (lo, hi) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
                for &(idx, p) in &self.items[lo..hi] {
                    if toroidal_distance(world, center, p) <= radius {
                        f(idx, p);
                    }
                }
            }
        }
    }
}

/// Cell indices along one axis that may hold points within `radius` of `v`:
/// `count` consecutive cells from `first`, modulo `n`.
struct AxisCells {
    first: isize,
    count: usize,
    n: usize,
}

impl AxisCells {
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |k| (self.first + k as isize).rem_euclid(self.n as isize) as usize)
    }
}

fn axis_cells(v: f64, radius: f64, cell: f64, n: usize) -> AxisCells {
    let home = ((v / cell) as isize).min(n as isize - 1);
    let reach = (radius / cell).ceil() as isize;
    let count = 2 * reach + 1;
    if count as usize >= n {
        AxisCells { first: 0, count: n, n }
    } else {
        AxisCells {
            first: home - reach,
            count: count as usize,
            n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_world_visits_each_point_once() {
        let world = ToroidalWorld::new(10.0, 10.0);
        let grid = SpatialGrid::build(
            &world,
            50.0,
            [(0, Position::new(1.0, 1.0)), (1, Position::new(9.0, 9.0))],
        );
        let mut seen = vec![];
        grid.for_each_within(&world, Position::new(0.5, 0.5), 100.0, |i, _| seen.push(i));
        seen.sort();
        assert_eq!(seen, vec![0, 1]);
    }

    #[test]
    fn query_wraps_across_the_seam() {
        let world = ToroidalWorld::new(1000.0, 1000.0);
        let grid = SpatialGrid::build(
            &world,
            100.0,
            [(0, Position::new(995.0, 500.0)), (1, Position::new(500.0, 500.0))],
        );
        let mut seen = vec![];
        grid.for_each_within(&world, Position::new(3.0, 500.0), 10.0, |i, _| seen.push(i));
        assert_eq!(seen, vec![0]);
    }
}
