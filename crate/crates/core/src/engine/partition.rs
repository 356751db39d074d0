//! Static vertical stripes of equal width.

/// Splits `[0, width)` into `lps` half-open stripes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partition {
    lps: usize,
    width: f64,
}

impl Partition {
    pub fn new(lps: usize, width: f64) -> Self {
        assert!(lps >= 1, "at least one logical process");
        assert!(width > 0.0);
        Self { lps, width }
    }

    pub fn len(&self) -> usize {
        self.lps
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stripe_width(&self) -> f64 {
        self.width / self.lps as f64
    }

    /// Stripe owning a wrapped x coordinate.
    pub fn stripe_of(&self, x: f64) -> usize {
        let k = (x * self.lps as f64 / self.width).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.lps - 1)
        }
    }

    /// `[x0, x1)` of stripe `lp`.
    pub fn bounds(&self, lp: usize) -> (f64, f64) {
        let n = self.lps as f64;
        (lp as f64 * self.width / n, (lp + 1) as f64 * self.width / n)
    }

    /// Every stripe that may hold a point within `radius` of x, on the
    /// circle of circumference `width`. Errs on the side of inclusion.
    pub fn reachable(&self, x: f64, radius: f64) -> Vec<usize> {
        let slack = 1e-9 * self.width;
        if 2.0 * (radius + slack) >= self.width || self.lps == 1 {
            return (0..self.lps).collect();
        }
        let n = self.lps as f64;
        let lo = ((x - radius - slack) * n / self.width).floor() as i64;
        let hi = ((x + radius + slack) * n / self.width).floor() as i64;
        let mut out: Vec<usize> = (lo..=hi)
            .map(|k| k.rem_euclid(self.lps as i64) as usize)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
